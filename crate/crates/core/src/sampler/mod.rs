//! Bayesian backfitting for weighted soft-tree ensembles.

mod chain;
mod draws;
mod moves;
mod priors;

pub use chain::{sample_sigma, update_split_probs, Chain, ChainState};
pub use draws::{fit, fit_observed, Draw, PosteriorDraws, Prediction};
pub use moves::{log_tree_prior, mh_accept, propose_move, structure_step, MoveKind, MoveProbs, Proposal, SplitSpace};
pub use priors::{calibrate_hyperparams, Calibration, FeatureScaling, Priors, ResponseScale};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeMode {
    /// Logistic gates with a sampled per-tree softness.
    Soft,
    /// Gates fixed at [`crate::soft_tree::HARD_SOFTNESS`]; step-function trees.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub trees: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub moves: MoveProbs,
    pub seed: u64,
    pub mode: TreeMode,
    pub alpha: f64,
    pub beta: f64,
    /// Leaf shrinkage: `σ_μ = 0.5 / (k √m)`.
    pub k: f64,
    pub nu: f64,
    /// Prior probability that `σ` lies below the calibration sd.
    pub sigma_quantile: f64,
    pub dirichlet_a: f64,
    pub softness_mean: f64,
    /// Random-walk sd of the log-softness proposal.
    pub softness_step: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::soft()
    }
}

impl SamplerConfig {
    pub fn soft() -> Self {
        SamplerConfig {
            trees: 50,
            iterations: 2500,
            burn_in: 500,
            thin: 1,
            moves: MoveProbs::default(),
            seed: 0,
            mode: TreeMode::Soft,
            alpha: 0.95,
            beta: 2.0,
            k: 2.0,
            nu: 3.0,
            sigma_quantile: 0.9,
            dirichlet_a: 1.0,
            softness_mean: 0.1,
            softness_step: 0.5,
        }
    }

    pub fn hard() -> Self {
        SamplerConfig {
            trees: 200,
            mode: TreeMode::Hard,
            ..SamplerConfig::soft()
        }
    }

    /// Number of states a run keeps.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        self.moves.validate()?;
        if self.trees == 0 || self.thin == 0 {
            return Err(Error::invalid("tree count and thinning must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.sigma_quantile > 0.0 && self.sigma_quantile < 1.0) {
            return Err(Error::invalid("sigma quantile must lie in (0, 1)"));
        }
        if !(self.k > 0.0 && self.softness_step > 0.0) {
            return Err(Error::invalid("k and the softness step must be positive"));
        }
        Ok(())
    }
}
