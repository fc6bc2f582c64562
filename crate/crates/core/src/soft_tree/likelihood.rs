//! Closed-form leaf integration for a single soft tree.
//!
//! Residuals `R_i` with case weights `W_i` are modelled as
//! `Π_i N(R_i | φ_iᵀμ, σ²)^{W_i}`, leaf values as `μ ~ N(0, (σ_μ²/m) I)`.
//! Integrating `μ` out gives a Gaussian marginal determined by the leaf
//! precision `P = (m/σ_μ²) I + Σ W_i φ_i φ_iᵀ / σ²` and the score
//! `r = Σ W_i R_i φ_i / σ²`: the leaf posterior is `N(P⁻¹ r, P⁻¹)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::SoftTree;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::{DoubleSum, SplitWeight};

/// Gaussian prior on leaf values: variance `scale² / trees`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafPrior {
    pub scale: f64,
    pub trees: usize,
}

impl LeafPrior {
    pub fn precision(&self) -> f64 {
        self.trees as f64 / (self.scale * self.scale)
    }
}

/// Row-major `n × b` matrix of leaf probabilities for every row of `features`.
pub fn leaf_probability_matrix(tree: &SoftTree, features: &FeatureMatrix) -> Vec<f64> {
    let b = tree.num_leaves();
    let mut phi = vec![0.0; features.rows() * b];
    let mut mass = vec![0.0; tree.num_nodes()];
    for (i, row) in features.iter_rows().enumerate() {
        tree.leaf_probs_into(row, &mut mass, &mut phi[i * b..(i + 1) * b]);
    }
    phi
}

/// Weighted sufficient statistics of residuals against leaf probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafStats {
    leaves: usize,
    /// `Σ W φ φᵀ`, full symmetric `b × b`, row-major.
    gram: Vec<f64>,
    /// `Σ W R φ`.
    score: Vec<f64>,
    /// `Σ W R²`.
    weighted_sq: f64,
    /// `Σ W`.
    total_weight: f64,
}

impl LeafStats {
    pub fn accumulate(phi: &[f64], leaves: usize, residuals: &[f64], weights: &[f64]) -> Self {
        let mut gram = vec![DoubleSum::ZERO; leaves * (leaves + 1) / 2];
        let mut score = vec![DoubleSum::ZERO; leaves];
        let mut sq = DoubleSum::ZERO;
        let mut total = DoubleSum::ZERO;
        for ((row, &r), &w) in phi.chunks_exact(leaves).zip(residuals).zip(weights) {
            total.add(w);
            let ws = SplitWeight::new(w);
            sq.add_split(ws, r * r);
            let mut k = 0;
            for a in 0..leaves {
                let pa = row[a];
                if pa == 0.0 {
                    k += leaves - a;
                    continue;
                }
                score[a].add_split(ws, r * pa);
                for &pb in &row[a..] {
                    let prod = pa * pb;
                    if prod != 0.0 {
                        gram[k].add_split(ws, prod);
                    }
                    k += 1;
                }
            }
        }
        Self::from_sums(leaves, &gram, &score, sq, total)
    }

    /// Statistics whose Gram part is reused from an earlier pass over the
    /// same leaf probabilities; only the residual-dependent parts are summed.
    pub fn with_residuals(&self, phi: &[f64], residuals: &[f64], weights: &[f64]) -> Self {
        let leaves = self.leaves;
        let mut score = vec![DoubleSum::ZERO; leaves];
        let mut sq = DoubleSum::ZERO;
        for ((row, &r), &w) in phi.chunks_exact(leaves).zip(residuals).zip(weights) {
            let ws = SplitWeight::new(w);
            sq.add_split(ws, r * r);
            for (acc, &pa) in score.iter_mut().zip(row) {
                if pa != 0.0 {
                    acc.add_split(ws, r * pa);
                }
            }
        }
        LeafStats {
            leaves,
            gram: self.gram.clone(),
            score: score.iter().map(DoubleSum::value).collect(),
            weighted_sq: sq.value(),
            total_weight: self.total_weight,
        }
    }

    fn from_sums(leaves: usize, gram: &[DoubleSum], score: &[DoubleSum], sq: DoubleSum, total: DoubleSum) -> Self {
        let mut full = vec![0.0; leaves * leaves];
        let mut k = 0;
        for a in 0..leaves {
            for b in a..leaves {
                let v = gram[k].value();
                full[a * leaves + b] = v;
                full[b * leaves + a] = v;
                k += 1;
            }
        }
        LeafStats {
            leaves,
            gram: full,
            score: score.iter().map(DoubleSum::value).collect(),
            weighted_sq: sq.value(),
            total_weight: total.value(),
        }
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn weighted_sq(&self) -> f64 {
        self.weighted_sq
    }
}

/// Gaussian posterior of the leaf values of one tree.
#[derive(Debug, Clone)]
pub struct LeafPosterior {
    /// Lower Cholesky factor of the posterior precision.
    chol: DMatrix<f64>,
    mean: DVector<f64>,
    log_det_precision: f64,
    /// `rᵀ P⁻¹ r`.
    quad: f64,
}

impl LeafPosterior {
    pub fn new(stats: &LeafStats, sigma: f64, prior: &LeafPrior) -> Result<Self> {
        let b = stats.leaves;
        let inv_var = 1.0 / (sigma * sigma);
        let prior_precision = prior.precision();
        let precision = DMatrix::from_fn(b, b, |i, j| {
            let data = stats.gram[i * b + j] * inv_var;
            if i == j {
                data + prior_precision
            } else {
                data
            }
        });
        let chol = precision
            .cholesky()
            .ok_or_else(|| Error::numeric("leaf precision matrix is not positive definite"))?;
        let l = chol.l();
        let log_det_precision = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det_precision.is_finite() {
            return Err(Error::numeric("degenerate leaf precision"));
        }
        let score = DVector::from_iterator(b, stats.score.iter().map(|s| s * inv_var));
        let mean = chol.solve(&score);
        let quad = score.dot(&mean);
        Ok(LeafPosterior {
            chol: l,
            mean,
            log_det_precision,
            quad,
        })
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Posterior covariance `P⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let b = self.mean.len();
        let l_inv = self
            .chol
            .clone()
            .solve_lower_triangular(&DMatrix::identity(b, b))
            .expect("Cholesky factor has a positive diagonal");
        l_inv.transpose() * l_inv
    }

    /// Log marginal likelihood of the residuals behind `stats`.
    pub fn log_marginal(&self, stats: &LeafStats, sigma: f64, prior: &LeafPrior) -> f64 {
        let b = stats.leaves as f64;
        let var = sigma * sigma;
        -0.5 * stats.total_weight * (2.0 * std::f64::consts::PI * var).ln() - stats.weighted_sq / (2.0 * var)
            + 0.5 * b * prior.precision().ln()
            - 0.5 * self.log_det_precision
            + 0.5 * self.quad
    }

    /// Draws leaf values from `N(P⁻¹ r, P⁻¹)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.mean.len();
        let z = DVector::from_iterator(b, (0..b).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // Lᵀ u = z gives u ~ N(0, (L Lᵀ)⁻¹).
        let u = self
            .chol
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        (self.mean.clone() + u).iter().copied().collect()
    }
}

fn check_inputs(
    features: &FeatureMatrix,
    residuals: &[f64],
    weights: &[f64],
    sigma: f64,
    prior: &LeafPrior,
) -> Result<()> {
    let n = features.rows();
    if residuals.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: residuals.len().max(weights.len()),
        });
    }
    if !(sigma > 0.0) || !(prior.scale > 0.0) || prior.trees == 0 {
        return Err(Error::invalid("σ, σ_μ and the tree count must be positive"));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid("case weights must be positive and finite"));
    }
    Ok(())
}

/// Log marginal likelihood of weighted residuals under `tree`'s structure
/// with leaf values integrated out.
pub fn weighted_marginal_loglik(
    tree: &SoftTree,
    features: &FeatureMatrix,
    residuals: &[f64],
    weights: &[f64],
    sigma: f64,
    prior: &LeafPrior,
) -> Result<f64> {
    check_inputs(features, residuals, weights, sigma, prior)?;
    let phi = leaf_probability_matrix(tree, features);
    let stats = LeafStats::accumulate(&phi, tree.num_leaves(), residuals, weights);
    let post = LeafPosterior::new(&stats, sigma, prior)?;
    Ok(post.log_marginal(&stats, sigma, prior))
}

/// Draws the leaf values of `tree` from their conditional posterior.
pub fn sample_leaf_values<R: Rng + ?Sized>(
    tree: &mut SoftTree,
    features: &FeatureMatrix,
    residuals: &[f64],
    weights: &[f64],
    sigma: f64,
    prior: &LeafPrior,
    rng: &mut R,
) -> Result<()> {
    check_inputs(features, residuals, weights, sigma, prior)?;
    let phi = leaf_probability_matrix(tree, features);
    let stats = LeafStats::accumulate(&phi, tree.num_leaves(), residuals, weights);
    let values = LeafPosterior::new(&stats, sigma, prior)?.sample(rng);
    tree.set_leaf_values(&values);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::{random_tree, stump};
    use super::*;
    use crate::numeric::seeded_rng;
    use rand::Rng;

    /// log N(y | 0, Σ) by dense Cholesky.
    fn mvn_logpdf(y: &DVector<f64>, cov: DMatrix<f64>) -> f64 {
        let n = y.len() as f64;
        let chol = cov.cholesky().expect("SPD");
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let alpha = chol.solve(y);
        -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + y.dot(&alpha))
    }

    /// Marginal of `R ~ N(Φμ, diag(σ²/W))`, `μ ~ N(0, v I)` from the joint
    /// covariance `Φ v Φᵀ + diag(σ²/W)`, converted to the power-likelihood
    /// normalisation `Π N(R_i | ·, σ²)^{W_i}`.
    fn dense_oracle(phi: &DMatrix<f64>, r: &[f64], w: &[f64], sigma: f64, leaf_var: f64) -> f64 {
        let n = r.len();
        let mut cov = phi * phi.transpose() * leaf_var;
        for i in 0..n {
            cov[(i, i)] += sigma * sigma / w[i];
        }
        let hetero = mvn_logpdf(&DVector::from_column_slice(r), cov);
        let two_pi_var = (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        hetero
            + w.iter()
                .map(|&wi| -0.5 * wi.ln() - 0.5 * (wi - 1.0) * two_pi_var)
                .sum::<f64>()
    }

    fn rows(rng: &mut impl Rng, n: usize, d: usize) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        FeatureMatrix::from_rows(d, &rows).unwrap()
    }

    #[test]
    fn matches_dense_gaussian_oracle() {
        let mut rng = seeded_rng(5);
        for _ in 0..100 {
            let tau = rng.random_range(0.05..0.5);
            let tree = random_tree(&mut rng, 2, 3, tau);
            let n = rng.random_range(1..=10);
            let x = rows(&mut rng, n, 2);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=1.0)).collect();
            let sigma = rng.random_range(0.2..2.0);
            let prior = LeafPrior {
                scale: rng.random_range(0.1..1.0),
                trees: rng.random_range(1..60),
            };
            let got = weighted_marginal_loglik(&tree, &x, &r, &w, sigma, &prior).unwrap();
            let phi = leaf_probability_matrix(&tree, &x);
            let phi = DMatrix::from_row_slice(n, tree.num_leaves(), &phi);
            let want = dense_oracle(&phi, &r, &w, sigma, 1.0 / prior.precision());
            assert!(((got - want) / want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn integer_weights_equal_replication() {
        let mut rng = seeded_rng(6);
        for _ in 0..50 {
            let tree = random_tree(&mut rng, 2, 4, 0.2);
            let n = rng.random_range(1..=12);
            let x = rows(&mut rng, n, 2);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(1..=3) as f64).collect();
            let prior = LeafPrior { scale: 0.5, trees: 20 };
            let weighted = weighted_marginal_loglik(&tree, &x, &r, &w, 0.7, &prior).unwrap();

            let mut rep_rows = Vec::new();
            let mut rep_r = Vec::new();
            for i in 0..n {
                for _ in 0..w[i] as usize {
                    rep_rows.push(x.row(i).to_vec());
                    rep_r.push(r[i]);
                }
            }
            let rep_x = FeatureMatrix::from_rows(2, &rep_rows).unwrap();
            let ones = vec![1.0; rep_r.len()];
            let replicated = weighted_marginal_loglik(&tree, &rep_x, &rep_r, &ones, 0.7, &prior).unwrap();
            assert!((weighted - replicated).abs() < 1e-10);
        }
    }

    #[test]
    fn collapsed_prior_gives_zero_mean_likelihood() {
        let tree = SoftTree::leaf(0.0, 0.1);
        let x = FeatureMatrix::from_rows(1, &[[0.1], [0.5], [0.9]]).unwrap();
        let r = [0.3, -0.2, 0.8];
        let w = [0.5, 1.0, 0.25];
        let sigma = 0.9;
        let prior = LeafPrior { scale: 1e-9, trees: 1 };
        let got = weighted_marginal_loglik(&tree, &x, &r, &w, sigma, &prior).unwrap();
        let want: f64 = r
            .iter()
            .zip(&w)
            .map(|(ri, wi)| {
                wi * (-0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - ri * ri / (2.0 * sigma * sigma))
            })
            .sum();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn invariant_under_leaf_reordering() {
        // Mirroring a stump (swap children, flip the feature) permutes leaves.
        let x = FeatureMatrix::from_rows(1, &[[0.1], [0.4], [0.45], [0.8]]).unwrap();
        let mirrored: Vec<Vec<f64>> = x.iter_rows().map(|r| vec![1.0 - r[0]]).collect();
        let xm = FeatureMatrix::from_rows(1, &mirrored).unwrap();
        let r = [0.5, -0.1, 0.2, 1.0];
        let w = [1.0, 0.3, 0.7, 0.9];
        let prior = LeafPrior { scale: 0.5, trees: 10 };
        let a = weighted_marginal_loglik(&stump(0, 0.5, 0.1, 0.0, 0.0), &x, &r, &w, 0.5, &prior).unwrap();
        let b = weighted_marginal_loglik(&stump(0, 0.5, 0.1, 0.0, 0.0), &xm, &r, &w, 0.5, &prior).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let tree = SoftTree::leaf(0.0, 0.1);
        let x = FeatureMatrix::from_rows(1, &[[0.1]]).unwrap();
        let prior = LeafPrior { scale: 0.5, trees: 10 };
        assert!(weighted_marginal_loglik(&tree, &x, &[0.1], &[0.0], 1.0, &prior).is_err());
        assert!(weighted_marginal_loglik(&tree, &x, &[0.1, 0.2], &[1.0], 1.0, &prior).is_err());
        assert!(weighted_marginal_loglik(&tree, &x, &[0.1], &[1.0], 0.0, &prior).is_err());
    }

    #[test]
    fn leaf_draws_collapse_with_tight_prior() {
        let mut tree = stump(0, 0.5, 0.1, 0.0, 0.0);
        let x = FeatureMatrix::from_rows(1, &[[0.1], [0.9]]).unwrap();
        let prior = LeafPrior { scale: 1e-8, trees: 1 };
        sample_leaf_values(
            &mut tree,
            &x,
            &[5.0, -5.0],
            &[1.0, 1.0],
            1.0,
            &prior,
            &mut seeded_rng(1),
        )
        .unwrap();
        assert!(tree.leaf_values().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn leaf_draws_reproducible() {
        let x = FeatureMatrix::from_rows(1, &[[0.1], [0.9], [0.4]]).unwrap();
        let prior = LeafPrior { scale: 0.5, trees: 5 };
        let draw = |seed| {
            let mut tree = stump(0, 0.5, 0.1, 0.0, 0.0);
            sample_leaf_values(
                &mut tree,
                &x,
                &[1.0, -1.0, 0.2],
                &[1.0, 0.5, 1.0],
                0.8,
                &prior,
                &mut seeded_rng(seed),
            )
            .unwrap();
            tree.leaf_values()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn leaf_draw_moments() {
        let x = FeatureMatrix::from_rows(1, &[[0.1], [0.3], [0.55], [0.9], [0.7]]).unwrap();
        let tree = random_tree(&mut seeded_rng(9), 1, 3, 0.15);
        let r = [0.4, -0.3, 0.1, 0.9, 0.2];
        let w = [1.0, 0.4, 0.8, 0.6, 1.0];
        let prior = LeafPrior { scale: 0.6, trees: 4 };
        let phi = leaf_probability_matrix(&tree, &x);
        let stats = LeafStats::accumulate(&phi, tree.num_leaves(), &r, &w);
        let post = LeafPosterior::new(&stats, 0.5, &prior).unwrap();
        let cov = post.covariance();
        let b = tree.num_leaves();
        let draws = 100_000;
        let mut rng = seeded_rng(10);
        let mut sum = vec![0.0; b];
        let mut sum_sq = vec![0.0; b * b];
        for _ in 0..draws {
            let mu = post.sample(&mut rng);
            for i in 0..b {
                sum[i] += mu[i];
                for j in 0..b {
                    sum_sq[i * b + j] += mu[i] * mu[j];
                }
            }
        }
        let nd = draws as f64;
        for i in 0..b {
            let m = sum[i] / nd;
            let se = (cov[(i, i)] / nd).sqrt();
            assert!((m - post.mean()[i]).abs() < 3.0 * se, "mean {i}");
            for j in 0..b {
                let c = sum_sq[i * b + j] / nd - m * (sum[j] / nd);
                // Var of a product-moment estimate: (Σii Σjj + Σij²)/n.
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / nd).sqrt();
                assert!((c - cov[(i, j)]).abs() < 3.0 * se, "cov {i},{j}");
            }
        }
    }
}
