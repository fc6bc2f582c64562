use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::SamplerConfig;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::DoubleSum;
use crate::soft_tree::LeafPrior;

/// Hyperparameters of the tree, leaf, noise, sparsity and softness priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Split probability at depth `d` is `alpha / (1 + d)^beta`.
    pub alpha: f64,
    pub beta: f64,
    /// Prior sd of a single leaf value on the scaled response.
    pub sigma_mu: f64,
    /// `σ² ~ ν λ / χ²_ν`.
    pub nu: f64,
    pub lambda: f64,
    pub dirichlet_a: f64,
    /// Mean of the exponential prior on per-tree softness.
    pub softness_mean: f64,
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.alpha < 1.0
            && self.beta >= 0.0
            && self.sigma_mu > 0.0
            && self.nu > 0.0
            && self.lambda > 0.0
            && self.dirichlet_a > 0.0
            && self.softness_mean > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid prior hyperparameters {self:?}")))
        }
    }

    pub fn split_prob(&self, depth: usize) -> f64 {
        self.alpha / (1.0 + depth as f64).powf(self.beta)
    }

    /// Leaf prior for an ensemble of `trees` trees. The ensemble-level scale
    /// is `σ_μ √m`, so each leaf has variance `σ_μ²`.
    pub fn leaf_prior(&self, trees: usize) -> LeafPrior {
        LeafPrior {
            scale: self.sigma_mu * (trees as f64).sqrt(),
            trees,
        }
    }
}

/// Affine map from the original response onto `[-0.5, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseScale {
    pub center: f64,
    pub range: f64,
}

impl ResponseScale {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let (lo, hi) = min_max(values.iter().copied());
        if !(hi > lo) {
            return Err(Error::invalid("response is constant; nothing to calibrate against"));
        }
        Ok(ResponseScale {
            center: 0.5 * (lo + hi),
            range: hi - lo,
        })
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.center) / self.range
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.center + self.range * z
    }
}

/// Per-feature min-max scaling onto `[0, 1]`. Constant features map to 0 and
/// are never split on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl FeatureScaling {
    pub fn fit(features: &FeatureMatrix) -> Self {
        let (min, range) = (0..features.cols())
            .map(|j| {
                let (lo, hi) = min_max(features.column(j));
                (lo, hi - lo)
            })
            .unzip();
        FeatureScaling { min, range }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn splittable(&self) -> Vec<bool> {
        self.range.iter().map(|&r| r > 0.0).collect()
    }

    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: features.cols(),
            });
        }
        let mut out = features.clone();
        out.map_in_place(|j, v| {
            if self.range[j] > 0.0 {
                (v - self.min[j]) / self.range[j]
            } else {
                0.0
            }
        });
        Ok(out)
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Priors plus the response map they were derived under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub priors: Priors,
    pub response: ResponseScale,
    /// Weighted sd of the scaled response.
    pub sigma_hat: f64,
}

/// Derives data-dependent hyperparameters: the response is mapped onto
/// `[-0.5, 0.5]`, `σ_μ = 0.5 / (k √m)`, and `λ` puts prior probability `q` on
/// `σ` falling below the weighted sd of the scaled response.
pub fn calibrate_hyperparams(responses: &[f64], weights: &[f64], config: &SamplerConfig) -> Result<Calibration> {
    if responses.len() < 2 {
        return Err(Error::EmptyDesign(format!(
            "need at least 2 cases to calibrate, found {}",
            responses.len()
        )));
    }
    if weights.len() != responses.len() {
        return Err(Error::DimensionMismatch {
            expected: responses.len(),
            found: weights.len(),
        });
    }
    let response = ResponseScale::fit(responses)?;
    let mut sw = DoubleSum::ZERO;
    let mut swy = DoubleSum::ZERO;
    for (&y, &w) in responses.iter().zip(weights) {
        sw.add(w);
        swy.add_scaled(w, response.forward(y));
    }
    let mean = swy.value() / sw.value();
    let mut ss = DoubleSum::ZERO;
    for (&y, &w) in responses.iter().zip(weights) {
        let d = response.forward(y) - mean;
        ss.add_scaled(w, d * d);
    }
    let sigma_hat = (ss.value() / sw.value()).sqrt();
    let nu = config.nu;
    let chi = ChiSquared::new(nu).map_err(|e| Error::invalid(format!("ν: {e}")))?;
    let lambda = sigma_hat * sigma_hat * chi.inverse_cdf(1.0 - config.sigma_quantile) / nu;
    let priors = Priors {
        alpha: config.alpha,
        beta: config.beta,
        sigma_mu: 0.5 / (config.k * (config.trees as f64).sqrt()),
        nu,
        lambda,
        dirichlet_a: config.dirichlet_a,
        softness_mean: config.softness_mean,
    };
    priors.validate()?;
    Ok(Calibration {
        priors,
        response,
        sigma_hat,
    })
}
