//! Bandwidth and lag selection by interpolation-based cross-validation.
//!
//! The pool is the set of responses whose covariate can be linearly
//! interpolated, restricted to those nearest an actual covariate observation
//! so the interpolated value is trustworthy. Subjects are split into folds;
//! every candidate is fitted on each training fold and scored on the pool
//! cases of the held-out subjects.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_design, BandwidthGrid, BandwidthPolicy, RegressionSpec};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::longitudinal::{
    bandwidth_for_inclusion, default_bandwidth, inclusion_for_bandwidth, linear_interp_align_lagged, AsyncDataset,
};
use crate::numeric::{derive_seed, seeded_rng};
use crate::sampler::fit;

/// Stream index reserved for shuffling subjects into folds.
const FOLD_STREAM: u64 = u64::MAX;

/// One held-out response used to score candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCase {
    pub subject: String,
    pub response_time: f64,
    pub response: f64,
    pub features: Vec<f64>,
    /// Distance from the interpolation target to the nearest covariate time.
    pub distance: f64,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSearchReport {
    pub lag: f64,
    pub grid: Vec<f64>,
    /// Pair-inclusion fraction of each grid bandwidth.
    pub inclusion: Vec<f64>,
    /// `Σ (Ŷ - Y)² / D` over the pool; infinite when a fit failed.
    pub statistics: Vec<f64>,
    /// Grid index preferred by each distance-ordered group, nearest first.
    pub group_winners: Vec<usize>,
    pub votes: Vec<usize>,
    pub chosen_index: usize,
    pub chosen: f64,
    pub pool: Vec<PoolCase>,
    /// Held-out and training subjects of every fold.
    pub held_out: Vec<Vec<String>>,
    pub training: Vec<Vec<String>>,
    /// Fit failures by grid index.
    pub failures: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSearchReport {
    pub grid: Vec<f64>,
    /// Bandwidth used at each lag (absent for alignment methods).
    pub bandwidths: Vec<Option<f64>>,
    pub statistics: Vec<f64>,
    pub chosen_index: usize,
    pub chosen: f64,
}

struct CrossValidation {
    pool: Vec<PoolCase>,
    held_out: Vec<Vec<String>>,
    training_data: Vec<Option<AsyncDataset>>,
}

impl CrossValidation {
    fn new(dataset: &AsyncDataset, spec: &RegressionSpec, lag: f64) -> Result<Self> {
        let mut candidates = linear_interp_align_lagged(dataset, lag, spec.layout());
        if candidates.is_empty() {
            return Err(Error::EmptyDesign(
                "no response can be interpolated for the cross-validation pool".into(),
            ));
        }
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
        let keep = ((spec.search.pool_fraction * candidates.len() as f64).ceil() as usize).clamp(1, candidates.len());
        candidates.truncate(keep);

        let mut ids: Vec<&str> = dataset.subjects().iter().map(|s| s.id()).collect();
        ids.shuffle(&mut seeded_rng(derive_seed(spec.sampler.seed, FOLD_STREAM)));
        let k = spec.search.folds.min(ids.len());
        let mut held_out = vec![Vec::new(); k];
        for (i, id) in ids.iter().enumerate() {
            held_out[i % k].push(id.to_string());
        }
        let fold_of = |id: &str| {
            held_out
                .iter()
                .position(|f| f.iter().any(|s| s == id))
                .expect("every subject has a fold")
        };
        let pool: Vec<PoolCase> = candidates
            .into_iter()
            .map(|(case, distance)| PoolCase {
                fold: fold_of(&case.subject),
                subject: case.subject,
                response_time: case.response_time,
                response: case.response,
                features: case.features,
                distance,
            })
            .collect();
        let mut training_data = Vec::with_capacity(k);
        for fold in &held_out {
            let needed = pool.iter().any(|c| fold.contains(&c.subject));
            training_data.push(if needed {
                let out: HashSet<&str> = fold.iter().map(String::as_str).collect();
                Some(dataset.filter(|s| !out.contains(s.id()))?)
            } else {
                None
            });
        }
        Ok(CrossValidation {
            pool,
            held_out,
            training_data,
        })
    }

    /// Squared errors at every pool case for bandwidth `h`.
    fn squared_errors(&self, spec: &RegressionSpec, h: f64, lag: f64, seed_base: u64) -> Result<Vec<f64>> {
        let mut errors = vec![f64::NAN; self.pool.len()];
        let per_fold: Vec<Result<Vec<(usize, f64)>>> = self
            .training_data
            .par_iter()
            .enumerate()
            .map(|(fold, train)| {
                let Some(train) = train else {
                    return Ok(Vec::new());
                };
                let idx: Vec<usize> = (0..self.pool.len()).filter(|&i| self.pool[i].fold == fold).collect();
                let design = build_design(train, spec.variant, h, lag)?;
                let (x, y, w) = design.arrays()?;
                let config = spec.search_sampler_config(derive_seed(seed_base, fold as u64));
                let model = fit(&x, &y, &w, &config)?;
                let mut query = FeatureMatrix::with_cols(x.cols());
                for &i in &idx {
                    query.push_row(&self.pool[i].features)?;
                }
                let pred = model.predict_mean(&query)?;
                Ok(idx
                    .iter()
                    .zip(pred)
                    .map(|(&i, p)| (i, (p - self.pool[i].response).powi(2)))
                    .collect())
            })
            .collect();
        for fold in per_fold {
            for (i, e) in fold? {
                errors[i] = e;
            }
        }
        Ok(errors)
    }

    fn training_subjects(&self) -> Vec<Vec<String>> {
        self.training_data
            .iter()
            .map(|d| {
                d.as_ref()
                    .map_or_else(Vec::new, |d| d.subjects().iter().map(|s| s.id().to_string()).collect())
            })
            .collect()
    }
}

/// Index of the smallest score; ties go to the smaller bandwidth.
fn best_index(scores: &[f64], grid: &[f64]) -> usize {
    (0..scores.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(grid[a].total_cmp(&grid[b])))
        .expect("nonempty grid")
}

/// Grid-searches the bandwidth at `lag` by cross-validation with
/// distance-group voting.
pub fn bandwidth_search(
    dataset: &AsyncDataset,
    grid: &BandwidthGrid,
    spec: &RegressionSpec,
    lag: f64,
) -> Result<BandwidthSearchReport> {
    spec.search.validate()?;
    let hs = grid.resolve(dataset, lag)?;
    search_absolute(dataset, &hs, spec, lag)
}

fn search_absolute(
    dataset: &AsyncDataset,
    grid: &[f64],
    spec: &RegressionSpec,
    lag: f64,
) -> Result<BandwidthSearchReport> {
    let cv = CrossValidation::new(dataset, spec, lag)?;
    let d = cv.pool.len();
    let outcomes: Vec<Result<Vec<f64>>> = grid
        .par_iter()
        .enumerate()
        .map(|(g, &h)| cv.squared_errors(spec, h, lag, derive_seed(spec.sampler.seed, g as u64)))
        .collect();
    let mut errors = Vec::with_capacity(grid.len());
    let mut failures = Vec::with_capacity(grid.len());
    for outcome in outcomes {
        match outcome {
            Ok(e) => {
                errors.push(e);
                failures.push(None);
            }
            Err(err) => {
                errors.push(vec![f64::INFINITY; d]);
                failures.push(Some(err.to_string()));
            }
        }
    }
    if failures.iter().all(Option::is_some) {
        return Err(Error::numeric(format!(
            "every bandwidth candidate failed: {}",
            failures[0].as_deref().unwrap_or_default()
        )));
    }
    let statistics: Vec<f64> = errors.iter().map(|e| e.iter().sum::<f64>() / d as f64).collect();

    let groups = if d < spec.search.groups { 1 } else { spec.search.groups };
    let mut votes = vec![0usize; grid.len()];
    let mut group_winners = Vec::with_capacity(groups);
    for k in 0..groups {
        let (lo, hi) = (k * d / groups, (k + 1) * d / groups);
        let scores: Vec<f64> = errors.iter().map(|e| e[lo..hi].iter().sum::<f64>()).collect();
        let winner = best_index(&scores, grid);
        votes[winner] += groups - k;
        group_winners.push(winner);
    }
    let chosen_index = (0..grid.len())
        .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(grid[b].total_cmp(&grid[a])))
        .expect("nonempty grid");
    Ok(BandwidthSearchReport {
        lag,
        grid: grid.to_vec(),
        inclusion: grid.iter().map(|&h| inclusion_for_bandwidth(dataset, lag, h)).collect(),
        statistics,
        group_winners,
        votes,
        chosen_index,
        chosen: grid[chosen_index],
        training: cv.training_subjects(),
        held_out: cv.held_out,
        pool: cv.pool,
        failures,
    })
}

/// Picks the lag whose cross-validation statistic is smallest. At each lag
/// the bandwidth follows the bandwidth policy of `spec`, and the pool interpolates the
/// covariate at the lagged time.
pub fn lag_search(dataset: &AsyncDataset, grid: &[f64], spec: &RegressionSpec) -> Result<LagSearchReport> {
    if grid.is_empty() || grid.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("lag grid must be nonempty and finite"));
    }
    spec.search.validate()?;
    let mut bandwidths = Vec::with_capacity(grid.len());
    let mut statistics = Vec::with_capacity(grid.len());
    for &lag in grid {
        let hs = if spec.method().uses_kernel() {
            match &spec.bandwidth {
                BandwidthPolicy::Default => vec![default_bandwidth(dataset, lag)?],
                BandwidthPolicy::Fixed(h) => vec![*h],
                BandwidthPolicy::Inclusion(f) => vec![bandwidth_for_inclusion(dataset, lag, *f)?],
                BandwidthPolicy::Searched(g) => g.resolve(dataset, lag)?,
            }
        } else {
            vec![1.0]
        };
        let report = search_absolute(dataset, &hs, spec, lag)?;
        bandwidths.push(spec.method().uses_kernel().then_some(report.chosen));
        statistics.push(report.statistics[report.chosen_index]);
    }
    let chosen_index = (0..grid.len())
        .min_by(|&a, &b| statistics[a].total_cmp(&statistics[b]).then(a.cmp(&b)))
        .expect("nonempty grid");
    Ok(LagSearchReport {
        grid: grid.to_vec(),
        bandwidths,
        statistics,
        chosen_index,
        chosen: grid[chosen_index],
    })
}
