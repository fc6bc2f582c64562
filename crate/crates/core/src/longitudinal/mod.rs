//! Asynchronous longitudinal observations.
//!
//! Each subject carries a response trajectory `(t_ij, Y_ij)` and a covariate
//! trajectory `(s_ik, X_ik)` observed at unrelated times. The pairing routines
//! turn those into [`WeightedCase`] rows that any weighted regressor can
//! consume: every response is combined with every covariate observation whose
//! time lies inside the kernel support, weighted by the Epanechnikov profile.

mod align;
mod io;
mod pairing;

pub use align::{linear_interp_align, linear_interp_align_lagged, locf_align, locf_align_lagged};
pub use io::{load_csv, read_csv, save_csv, write_csv};
pub use pairing::{
    bandwidth_for_count, bandwidth_for_inclusion, build_pairs, default_bandwidth, inclusion_for_bandwidth,
    kernel_weight, pair_distances, BANDWIDTH_INFLATION,
};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject's response and covariate observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    id: String,
    response_times: Vec<f64>,
    response_values: Vec<f64>,
    covariate_times: Vec<f64>,
    /// Row `k` holds the `p` covariates observed at `covariate_times[k]`.
    covariate_values: Vec<Vec<f64>>,
}

impl SubjectSeries {
    pub fn new(
        id: impl Into<String>,
        response_times: Vec<f64>,
        response_values: Vec<f64>,
        covariate_times: Vec<f64>,
        covariate_values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let id = id.into();
        if response_times.is_empty() || covariate_times.is_empty() {
            return Err(Error::invalid(format!(
                "subject {id}: needs at least one response and one covariate observation"
            )));
        }
        if response_times.len() != response_values.len() {
            return Err(Error::invalid(format!(
                "subject {id}: {} response times but {} values",
                response_times.len(),
                response_values.len()
            )));
        }
        if covariate_times.len() != covariate_values.len() {
            return Err(Error::invalid(format!(
                "subject {id}: {} covariate times but {} value rows",
                covariate_times.len(),
                covariate_values.len()
            )));
        }
        check_increasing(&id, "response", &response_times)?;
        check_increasing(&id, "covariate", &covariate_times)?;
        let p = covariate_values[0].len();
        if p == 0 {
            return Err(Error::invalid(format!("subject {id}: covariate dimension is zero")));
        }
        for row in &covariate_values {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("subject {id}: non-finite covariate")));
            }
        }
        if response_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("subject {id}: non-finite response")));
        }
        Ok(SubjectSeries {
            id,
            response_times,
            response_values,
            covariate_times,
            covariate_values,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn response_times(&self) -> &[f64] {
        &self.response_times
    }

    pub fn response_values(&self) -> &[f64] {
        &self.response_values
    }

    pub fn covariate_times(&self) -> &[f64] {
        &self.covariate_times
    }

    pub fn covariate_values(&self) -> &[Vec<f64>] {
        &self.covariate_values
    }

    /// Number of response observations, `L_i`.
    pub fn num_responses(&self) -> usize {
        self.response_times.len()
    }

    /// Number of covariate observations, `M_i`.
    pub fn num_covariates(&self) -> usize {
        self.covariate_times.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_values[0].len()
    }
}

fn check_increasing(id: &str, what: &str, times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("subject {id}: non-finite {what} time")));
    }
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "subject {id}: {what} times not strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// A collection of subjects sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncDataset {
    subjects: Vec<SubjectSeries>,
    p: usize,
}

impl AsyncDataset {
    pub fn new(subjects: Vec<SubjectSeries>) -> Result<Self> {
        let Some(first) = subjects.first() else {
            return Err(Error::invalid("dataset has no subjects"));
        };
        let p = first.covariate_dim();
        let mut seen = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if s.covariate_dim() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: s.covariate_dim(),
                });
            }
            if !seen.insert(s.id()) {
                return Err(Error::invalid(format!("duplicate subject id {}", s.id())));
            }
        }
        Ok(AsyncDataset { subjects, p })
    }

    pub fn subjects(&self) -> &[SubjectSeries] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.p
    }

    /// `Σ L_i`.
    pub fn total_responses(&self) -> usize {
        self.subjects.iter().map(SubjectSeries::num_responses).sum()
    }

    /// `Σ L_i · M_i`, the size of the full response/covariate cross product.
    pub fn total_pairs(&self) -> usize {
        self.subjects
            .iter()
            .map(|s| s.num_responses() * s.num_covariates())
            .sum()
    }

    /// Dataset restricted to the subjects selected by `keep` (order preserved).
    pub fn filter(&self, mut keep: impl FnMut(&SubjectSeries) -> bool) -> Result<AsyncDataset> {
        let subjects: Vec<_> = self.subjects.iter().filter(|s| keep(s)).cloned().collect();
        AsyncDataset::new(subjects)
    }
}

/// Feature layout for paired cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    /// `(X, t)`: the covariate time only enters through the weight.
    Single,
    /// `(X, t, s)`: the covariate time is an extra feature.
    Double,
}

impl Layout {
    pub fn feature_dim(self, p: usize) -> usize {
        match self {
            Layout::Single => p + 1,
            Layout::Double => p + 2,
        }
    }

    pub fn feature_names(self, p: usize) -> Vec<String> {
        let mut names: Vec<String> = (1..=p).map(|i| format!("x{i}")).collect();
        names.push("t".to_string());
        if self == Layout::Double {
            names.push("s".to_string());
        }
        names
    }

    pub fn tag(self) -> &'static str {
        match self {
            Layout::Single => "ST",
            Layout::Double => "DT",
        }
    }

    /// Assembles a feature row from a covariate vector and the two times.
    pub fn features(self, x: &[f64], t: f64, s: f64) -> Vec<f64> {
        let mut row = Vec::with_capacity(x.len() + 2);
        row.extend_from_slice(x);
        row.push(t);
        if self == Layout::Double {
            row.push(s);
        }
        row
    }
}

/// Kernel bandwidth and covariate lag used when pairing observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: f64,
    lag: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64, lag: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || bandwidth.is_nan() {
            return Err(Error::InvalidBandwidth(bandwidth));
        }
        if !lag.is_finite() {
            return Err(Error::invalid(format!("lag must be finite, got {lag}")));
        }
        Ok(KernelSpec { bandwidth, lag })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn lag(&self) -> f64 {
        self.lag
    }
}

/// One training row produced by pairing or alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCase {
    pub features: Vec<f64>,
    pub response: f64,
    pub weight: f64,
    pub subject: String,
    pub response_time: f64,
    pub covariate_time: f64,
    /// `|t_ij - s_ik|` for paired cases, the distance to the nearest
    /// covariate observation for interpolated ones.
    pub distance: f64,
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn subject(id: &str, t: &[f64], y: &[f64], s: &[f64], x: &[f64]) -> SubjectSeries {
        SubjectSeries::new(
            id,
            t.to_vec(),
            y.to_vec(),
            s.to_vec(),
            x.iter().map(|&v| vec![v]).collect(),
        )
        .unwrap()
    }

    pub fn dataset(subjects: Vec<SubjectSeries>) -> AsyncDataset {
        AsyncDataset::new(subjects).unwrap()
    }
}
