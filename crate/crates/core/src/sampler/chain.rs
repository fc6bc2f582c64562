use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::moves::{mh_accept, structure_step, SplitSpace};
use super::{Priors, SamplerConfig, TreeMode};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::DoubleSum;
use crate::soft_tree::{leaf_probability_matrix, LeafPosterior, LeafPrior, LeafStats, SoftTree, HARD_SOFTNESS};

/// Everything a Gibbs sweep updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub trees: Vec<SoftTree>,
    pub sigma: f64,
    pub split_probs: Vec<f64>,
}

/// Draws `σ` given residuals: `σ² ~ InvGamma((ν + ΣW)/2, (νλ + ΣW r²)/2)`.
/// With no data this is a draw from the `νλ/χ²_ν` prior.
pub fn sample_sigma<R: Rng + ?Sized>(residuals: &[f64], weights: &[f64], priors: &Priors, rng: &mut R) -> Result<f64> {
    let mut sw = DoubleSum::ZERO;
    let mut ss = DoubleSum::ZERO;
    for (&r, &w) in residuals.iter().zip(weights) {
        sw.add(w);
        ss.add_scaled(w, r * r);
    }
    sigma_from_sums(sw.value(), ss.value(), priors, rng)
}

fn sigma_from_sums<R: Rng + ?Sized>(total_weight: f64, weighted_sq: f64, priors: &Priors, rng: &mut R) -> Result<f64> {
    let shape = 0.5 * (priors.nu + total_weight);
    let rate = 0.5 * (priors.nu * priors.lambda + weighted_sq);
    let g = Gamma::new(shape, 1.0).map_err(|e| Error::numeric(format!("σ update: {e}")))?;
    let sigma = (rate / g.sample(rng)).sqrt();
    if sigma.is_finite() && sigma > 0.0 {
        Ok(sigma)
    } else {
        Err(Error::numeric(format!("σ draw degenerated to {sigma}")))
    }
}

/// `ln G` for `G ~ Gamma(shape, 1)`, stable for small shapes via
/// `G = G' U^{1/shape}` with `G' ~ Gamma(shape + 1, 1)`.
fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random();
        g.ln() + u.ln() / shape
    }
}

/// Draws split probabilities from `Dirichlet(a/d + c_1, ..., a/d + c_d)`.
pub fn update_split_probs<R: Rng + ?Sized>(counts: &[usize], a: f64, rng: &mut R) -> Vec<f64> {
    let base = a / counts.len() as f64;
    let logs: Vec<f64> = counts.iter().map(|&c| log_gamma_draw(base + c as f64, rng)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Single MCMC chain over prepared (scaled) data.
#[derive(Debug, Clone)]
pub struct Chain {
    features: FeatureMatrix,
    responses: Vec<f64>,
    weights: Vec<f64>,
    total_weight: f64,
    splittable: Vec<bool>,
    priors: Priors,
    leaf_prior: LeafPrior,
    config: SamplerConfig,
    state: ChainState,
    /// Per tree: `n × b` leaf probabilities, their Gram statistics, and fits.
    phi: Vec<Vec<f64>>,
    gram: Vec<LeafStats>,
    fitted: Vec<Vec<f64>>,
    total: Vec<f64>,
    residual: Vec<f64>,
}

impl Chain {
    /// Starts every tree as a zero-valued leaf. `features` must already be
    /// scaled to `[0, 1]` and `responses` to the calibration scale.
    pub fn new(
        features: FeatureMatrix,
        responses: Vec<f64>,
        weights: Vec<f64>,
        splittable: Vec<bool>,
        priors: Priors,
        initial_sigma: f64,
        config: &SamplerConfig,
    ) -> Result<Self> {
        let n = features.rows();
        if responses.len() != n || weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: responses.len().max(weights.len()),
            });
        }
        if splittable.len() != features.cols() {
            return Err(Error::DimensionMismatch {
                expected: features.cols(),
                found: splittable.len(),
            });
        }
        if !(initial_sigma > 0.0) {
            return Err(Error::invalid("initial σ must be positive"));
        }
        let d = features.cols();
        let softness = match config.mode {
            TreeMode::Soft => priors.softness_mean,
            TreeMode::Hard => HARD_SOFTNESS,
        };
        let m = config.trees;
        let phi0 = vec![1.0; n];
        let gram0 = LeafStats::accumulate(&phi0, 1, &vec![0.0; n], &weights);
        let mut total_weight = DoubleSum::ZERO;
        weights.iter().for_each(|&w| total_weight.add(w));
        Ok(Chain {
            total_weight: total_weight.value(),
            leaf_prior: priors.leaf_prior(m),
            state: ChainState {
                trees: vec![SoftTree::leaf(0.0, softness); m],
                sigma: initial_sigma,
                split_probs: vec![1.0 / d as f64; d],
            },
            phi: vec![phi0; m],
            gram: vec![gram0; m],
            fitted: vec![vec![0.0; n]; m],
            total: vec![0.0; n],
            residual: vec![0.0; n],
            features,
            responses,
            weights,
            splittable,
            priors,
            config: config.clone(),
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    /// Current ensemble fit on the scaled response.
    pub fn fitted_total(&self) -> &[f64] {
        &self.total
    }

    /// Fit of tree `j` at every case.
    pub fn tree_fit(&self, j: usize) -> &[f64] {
        &self.fitted[j]
    }

    /// Backfitting residuals of tree `j`: response minus all other trees.
    pub fn partial_residuals(&self, j: usize) -> Vec<f64> {
        (0..self.responses.len())
            .map(|i| self.responses[i] - self.total[i] + self.fitted[j][i])
            .collect()
    }

    fn load_residuals(&mut self, j: usize) {
        for i in 0..self.responses.len() {
            self.residual[i] = self.responses[i] - self.total[i] + self.fitted[j][i];
        }
    }

    fn set_tree_fit(&mut self, j: usize, leaf_values: &[f64]) {
        let b = leaf_values.len();
        for (i, row) in self.phi[j].chunks_exact(b).enumerate() {
            let g: f64 = row.iter().zip(leaf_values).map(|(p, v)| p * v).sum();
            self.total[i] += g - self.fitted[j][i];
            self.fitted[j][i] = g;
        }
    }

    /// One Gibbs sweep: each tree's structure and leaves, then `σ`, the
    /// split probabilities and the per-tree softness.
    pub fn iterate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.refresh_total();
        for j in 0..self.config.trees {
            self.update_tree(j, rng)?;
        }
        self.update_sigma(rng)?;
        if self.config.mode == TreeMode::Soft {
            let mut counts = vec![0; self.features.cols()];
            self.state.trees.iter().for_each(|t| t.split_counts(&mut counts));
            self.state.split_probs = update_split_probs(&counts, self.priors.dirichlet_a, rng);
            for j in 0..self.config.trees {
                self.update_softness(j, rng)?;
            }
        }
        Ok(())
    }

    /// Recomputes the ensemble fit from the per-tree fits in a fixed order.
    fn refresh_total(&mut self) {
        for i in 0..self.total.len() {
            self.total[i] = self.fitted.iter().map(|g| g[i]).sum();
        }
    }

    fn update_tree<R: Rng + ?Sized>(&mut self, j: usize, rng: &mut R) -> Result<()> {
        self.load_residuals(j);
        let sigma = self.state.sigma;
        let stats = self.gram[j].with_residuals(&self.phi[j], &self.residual, &self.weights);
        let posterior = LeafPosterior::new(&stats, sigma, &self.leaf_prior)?;
        let loglik = posterior.log_marginal(&stats, sigma, &self.leaf_prior);

        let space = SplitSpace {
            probs: &self.state.split_probs,
            splittable: &self.splittable,
        };
        let (features, residual, weights, leaf_prior) =
            (&self.features, &self.residual, &self.weights, &self.leaf_prior);
        let accepted = structure_step(
            &self.state.trees[j],
            loglik,
            space,
            &self.priors,
            &self.config.moves,
            |candidate| {
                let phi = leaf_probability_matrix(candidate, features);
                let stats = LeafStats::accumulate(&phi, candidate.num_leaves(), residual, weights);
                let post = LeafPosterior::new(&stats, sigma, leaf_prior).ok()?;
                let ll = post.log_marginal(&stats, sigma, leaf_prior);
                ll.is_finite().then_some((ll, (phi, stats, post)))
            },
            rng,
        );
        let posterior = match accepted {
            Some((tree, (phi, stats, post))) => {
                self.state.trees[j] = tree;
                self.phi[j] = phi;
                self.gram[j] = stats;
                post
            }
            None => posterior,
        };
        let values = posterior.sample(rng);
        self.state.trees[j].set_leaf_values(&values);
        self.set_tree_fit(j, &values);
        Ok(())
    }

    fn update_sigma<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let mut ss = DoubleSum::ZERO;
        for ((&y, &f), &w) in self.responses.iter().zip(&self.total).zip(&self.weights) {
            let r = y - f;
            ss.add_scaled(w, r * r);
        }
        self.state.sigma = sigma_from_sums(self.total_weight, ss.value(), &self.priors, rng)?;
        Ok(())
    }

    /// Random-walk MH on `ln τ` for tree `j`, holding its leaf values fixed.
    fn update_softness<R: Rng + ?Sized>(&mut self, j: usize, rng: &mut R) -> Result<()> {
        let z: f64 = rng.sample(StandardNormal);
        let tau = self.state.trees[j].softness();
        let proposed = tau * (self.config.softness_step * z).exp();
        if self.state.trees[j].num_leaves() == 1 || !(proposed > 0.0 && proposed.is_finite()) {
            mh_accept(f64::NAN, rng);
            return Ok(());
        }
        self.load_residuals(j);
        let values = self.state.trees[j].leaf_values();
        let mut candidate = self.state.trees[j].clone();
        candidate.set_softness(proposed);
        let phi = leaf_probability_matrix(&candidate, &self.features);
        let b = values.len();
        let mut sse_old = DoubleSum::ZERO;
        let mut sse_new = DoubleSum::ZERO;
        for (i, row) in phi.chunks_exact(b).enumerate() {
            let w = self.weights[i];
            let r_old = self.residual[i] - self.fitted[j][i];
            let g: f64 = row.iter().zip(&values).map(|(p, v)| p * v).sum();
            let r_new = self.residual[i] - g;
            sse_old.add_scaled(w, r_old * r_old);
            sse_new.add_scaled(w, r_new * r_new);
        }
        let var = self.state.sigma * self.state.sigma;
        let log_ratio = -(sse_new.value() - sse_old.value()) / (2.0 * var)
            - (proposed - tau) / self.priors.softness_mean
            + proposed.ln()
            - tau.ln();
        if mh_accept(log_ratio, rng) {
            self.gram[j] = LeafStats::accumulate(&phi, b, &self.residual, &self.weights);
            self.phi[j] = phi;
            self.state.trees[j] = candidate;
            self.set_tree_fit(j, &values);
        }
        Ok(())
    }
}
