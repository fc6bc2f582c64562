use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{Chain, ChainState};
use super::priors::{calibrate_hyperparams, FeatureScaling, Priors, ResponseScale};
use super::SamplerConfig;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::{quantile_sorted, seeded_rng};
use crate::soft_tree::{Node, SoftTree};

/// One retained chain state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub trees: Vec<SoftTree>,
    pub sigma: f64,
    pub split_probs: Vec<f64>,
}

/// Retained posterior states plus what is needed to map new inputs and
/// outputs between the original and the internal scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub config: SamplerConfig,
    pub priors: Priors,
    pub response: ResponseScale,
    pub scaling: FeatureScaling,
    pub draws: Vec<Draw>,
    /// `σ` after every iteration, burn-in included, on the original scale.
    pub sigma_trace: Vec<f64>,
}

/// Pointwise posterior summary on the original response scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub levels: Vec<f64>,
    /// `bands[k][i]` is the `levels[k]` quantile at row `i`.
    pub bands: Vec<Vec<f64>>,
}

/// Fits the weighted ensemble and keeps every `thin`-th post-burn-in state.
pub fn fit(
    features: &FeatureMatrix,
    responses: &[f64],
    weights: &[f64],
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    fit_observed(features, responses, weights, config, |_, _| {})
}

/// As [`fit`], calling `observe(iteration, state)` after every sweep.
pub fn fit_observed(
    features: &FeatureMatrix,
    responses: &[f64],
    weights: &[f64],
    config: &SamplerConfig,
    mut observe: impl FnMut(usize, &ChainState),
) -> Result<PosteriorDraws> {
    config.validate()?;
    let n = features.rows();
    if responses.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: responses.len().max(weights.len()),
        });
    }
    if features.cols() == 0 {
        return Err(Error::invalid("design has no features"));
    }
    if responses.iter().any(|y| !y.is_finite()) {
        return Err(Error::invalid("non-finite response"));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("case weights must be positive and finite"));
    }
    let calibration = calibrate_hyperparams(responses, weights, config)?;
    let scaling = FeatureScaling::fit(features);
    let scaled = scaling.apply(features)?;
    let y: Vec<f64> = responses.iter().map(|&v| calibration.response.forward(v)).collect();
    let mut chain = Chain::new(
        scaled,
        y,
        weights.to_vec(),
        scaling.splittable(),
        calibration.priors,
        calibration.sigma_hat,
        config,
    )?;
    let mut rng = seeded_rng(config.seed);
    let mut draws = Vec::with_capacity(config.retained());
    let mut sigma_trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        chain.iterate(&mut rng)?;
        let state = chain.state();
        observe(it, state);
        sigma_trace.push(state.sigma * calibration.response.range);
        if it >= config.burn_in && (it - config.burn_in + 1).is_multiple_of(config.thin) {
            draws.push(Draw {
                trees: state.trees.clone(),
                sigma: state.sigma,
                split_probs: state.split_probs.clone(),
            });
        }
    }
    Ok(PosteriorDraws {
        config: config.clone(),
        priors: calibration.priors,
        response: calibration.response,
        scaling,
        draws,
        sigma_trace,
    })
}

impl PosteriorDraws {
    pub fn feature_dim(&self) -> usize {
        self.scaling.dim()
    }

    /// Posterior draws of `f` per row, on the original response scale:
    /// `out[i][k]` is draw `k` at row `i`.
    pub fn predict_draws(&self, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        let scaled = self.scaling.apply(features)?;
        let max_nodes = self
            .draws
            .iter()
            .flat_map(|d| d.trees.iter().map(SoftTree::num_nodes))
            .max()
            .unwrap_or(1);
        let leaf_values: Vec<Vec<Vec<f64>>> = self
            .draws
            .iter()
            .map(|d| d.trees.iter().map(SoftTree::leaf_values).collect())
            .collect();
        Ok((0..scaled.rows())
            .into_par_iter()
            .map(|i| {
                let x = scaled.row(i);
                let mut mass = vec![0.0; max_nodes];
                let mut probs = vec![0.0; max_nodes];
                self.draws
                    .iter()
                    .zip(&leaf_values)
                    .map(|(draw, values)| {
                        let f: f64 = draw
                            .trees
                            .iter()
                            .zip(values)
                            .map(|(tree, v)| tree_value(tree, v, x, &mut mass, &mut probs))
                            .sum();
                        self.response.inverse(f)
                    })
                    .collect()
            })
            .collect())
    }

    pub fn predict_mean(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self
            .predict_draws(features)?
            .iter()
            .map(|row| crate::numeric::mean(row))
            .collect())
    }

    /// Posterior mean and quantile bands at `levels` (each in `[0, 1]`).
    pub fn predict(&self, features: &FeatureMatrix, levels: &[f64]) -> Result<Prediction> {
        if levels.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::invalid("quantile levels must lie in [0, 1]"));
        }
        if self.draws.is_empty() {
            return Err(Error::invalid("no retained posterior draws"));
        }
        let per_row = self.predict_draws(features)?;
        let mut mean = Vec::with_capacity(per_row.len());
        let mut bands = vec![Vec::with_capacity(per_row.len()); levels.len()];
        for mut row in per_row {
            mean.push(crate::numeric::mean(&row));
            row.sort_by(f64::total_cmp);
            for (band, &q) in bands.iter_mut().zip(levels) {
                band.push(quantile_sorted(&row, q));
            }
        }
        Ok(Prediction {
            mean,
            levels: levels.to_vec(),
            bands,
        })
    }

    /// Posterior mean of the split probabilities.
    pub fn mean_split_probs(&self) -> Vec<f64> {
        let d = self.feature_dim();
        let mut acc = vec![0.0; d];
        for draw in &self.draws {
            for (a, p) in acc.iter_mut().zip(&draw.split_probs) {
                *a += p;
            }
        }
        acc.iter().map(|a| a / self.draws.len().max(1) as f64).collect()
    }

    /// Mean number of leaves per tree across retained draws.
    pub fn mean_leaves(&self) -> f64 {
        let total: usize = self
            .draws
            .iter()
            .flat_map(|d| d.trees.iter().map(|t| t.num_leaves()))
            .sum();
        total as f64 / (self.draws.len() * self.config.trees).max(1) as f64
    }
}

fn tree_value(tree: &SoftTree, values: &[f64], x: &[f64], mass: &mut [f64], probs: &mut [f64]) -> f64 {
    if let [Node::Leaf { value }] = tree.nodes() {
        return *value;
    }
    let b = values.len();
    tree.leaf_probs_into(x, mass, &mut probs[..b]);
    probs[..b].iter().zip(values).map(|(p, v)| p * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = seeded_rng(seed);
        let rows: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let y = rows
            .iter()
            .map(|r| (2.0 * std::f64::consts::PI * r[1]).sin() - 2.0 * r[0] + 0.1 * (rng.random::<f64>() - 0.5))
            .collect();
        (FeatureMatrix::from_rows(2, &rows).unwrap(), y)
    }

    fn quick() -> SamplerConfig {
        SamplerConfig {
            trees: 10,
            iterations: 120,
            burn_in: 20,
            thin: 2,
            ..SamplerConfig::soft()
        }
    }

    #[test]
    fn retains_the_configured_count() {
        let (x, y) = toy(30, 1);
        let d = fit(&x, &y, &vec![1.0; 30], &quick()).unwrap();
        assert_eq!(d.draws.len(), 50);
        assert_eq!(d.sigma_trace.len(), 120);
    }

    #[test]
    fn fits_a_smooth_surface() {
        let (x, y) = toy(200, 2);
        let config = SamplerConfig {
            trees: 20,
            iterations: 400,
            burn_in: 100,
            thin: 1,
            ..SamplerConfig::soft()
        };
        let d = fit(&x, &y, &vec![1.0; 200], &config).unwrap();
        let (xt, _) = toy(100, 3);
        let pred = d.predict_mean(&xt).unwrap();
        let rmse = (xt
            .iter_rows()
            .zip(&pred)
            .map(|(r, p)| ((2.0 * std::f64::consts::PI * r[1]).sin() - 2.0 * r[0] - p).powi(2))
            .sum::<f64>()
            / 100.0)
            .sqrt();
        assert!(rmse < 0.3, "rmse {rmse}");
    }

    #[test]
    fn bands_are_ordered_and_mean_is_linear() {
        let (x, y) = toy(40, 4);
        let d = fit(&x, &y, &vec![1.0; 40], &quick()).unwrap();
        let p = d.predict(&x, &[0.05, 0.5, 0.95]).unwrap();
        for i in 0..40 {
            assert!(p.bands[0][i] <= p.bands[1][i] && p.bands[1][i] <= p.bands[2][i]);
        }
        let per_draw = d.predict_draws(&x).unwrap();
        for i in 0..40 {
            let avg = per_draw[i].iter().sum::<f64>() / per_draw[i].len() as f64;
            assert!((avg - p.mean[i]).abs() < 1e-12);
        }
        // Cached chain fits and direct evaluation agree.
        let direct: f64 = d.draws[0]
            .trees
            .iter()
            .map(|t| t.predict(d.scaling.apply(&x).unwrap().row(0)))
            .sum();
        assert!((d.response.inverse(direct) - per_draw[0][0]).abs() < 1e-12);
    }

    #[test]
    fn identical_draws_give_zero_width_bands() {
        let (x, y) = toy(20, 5);
        let mut d = fit(&x, &y, &[1.0; 20], &quick()).unwrap();
        let first = d.draws[0].clone();
        d.draws.iter_mut().for_each(|dr| *dr = first.clone());
        let p = d.predict(&x, &[0.05, 0.95]).unwrap();
        for i in 0..20 {
            assert_eq!(p.bands[0][i], p.bands[1][i]);
        }
    }

    #[test]
    fn hard_mode_is_piecewise_constant() {
        let (x, y) = toy(40, 6);
        let config = SamplerConfig {
            trees: 5,
            iterations: 60,
            burn_in: 10,
            ..SamplerConfig::hard()
        };
        let d = fit(&x, &y, &vec![1.0; 40], &config).unwrap();
        for draw in &d.draws {
            for tree in &draw.trees {
                assert_eq!(tree.softness(), crate::soft_tree::HARD_SOFTNESS);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y) = toy(10, 7);
        let mut w = vec![1.0; 10];
        assert!(fit(&x, &y[..9], &w, &quick()).is_err());
        w[3] = 0.0;
        assert!(fit(&x, &y, &w, &quick()).is_err());
        assert!(fit(&x, &[1.0; 10], &[1.0; 10], &quick()).is_err());
        let xd = FeatureMatrix::from_rows(3, &[[0.0; 3]; 10]).unwrap();
        assert!(fit(&x, &y, &[1.0; 10], &quick()).unwrap().predict_mean(&xd).is_err());
    }

    #[test]
    fn seed_determines_output() {
        let (x, y) = toy(25, 8);
        let a = fit(&x, &y, &[1.0; 25], &quick()).unwrap();
        let b = fit(&x, &y, &[1.0; 25], &quick()).unwrap();
        assert_eq!(a, b);
        let c = fit(&x, &y, &[1.0; 25], &SamplerConfig { seed: 1, ..quick() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn integer_weights_replicate_the_chain() {
        let (x, y) = toy(30, 9);
        let w: Vec<f64> = (0..30).map(|i| (i % 3 + 1) as f64).collect();
        let mut rows = Vec::new();
        let mut ry = Vec::new();
        for i in 0..30 {
            for _ in 0..w[i] as usize {
                rows.push(x.row(i).to_vec());
                ry.push(y[i]);
            }
        }
        let rx = FeatureMatrix::from_rows(2, &rows).unwrap();
        let config = SamplerConfig {
            burn_in: 0,
            thin: 1,
            iterations: 60,
            ..quick()
        };
        let weighted = fit(&x, &y, &w, &config).unwrap();
        let replicated = fit(&rx, &ry, &vec![1.0; ry.len()], &config).unwrap();
        assert_eq!(weighted.draws, replicated.draws);
        assert_eq!(weighted.sigma_trace, replicated.sigma_trace);
    }
}
