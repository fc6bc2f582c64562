//! Synthetic asynchronous longitudinal data.
//!
//! Each subject gets `1 + Poisson(λ)` response times and, independently,
//! `1 + Poisson(λ)` covariate times, all uniform on `(0, 1)`. The covariate is
//! a Gaussian process with correlation `e^{-|Δ|}` (optionally plus
//! `5 sin(10πt)`), the error a Gaussian process with covariance `2^{-|Δ|}`,
//! and `Y(t) = α(t) + β X(t - lag) + ε(t)`. Training subjects keep only the
//! asynchronous observations; test subjects keep synchronous tuples together
//! with the noiseless truth.

mod experiment;

pub use experiment::{run_experiment, ExperimentReport, ExperimentRow, MethodSetup};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::longitudinal::{AsyncDataset, SubjectSeries};
use crate::numeric::seeded_rng;

/// Response surfaces `α(t) + β x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResponseFn {
    /// `sin 2πt`, β = −2.
    F1,
    /// `√t`, β = −2.
    F2,
    /// `0.4t + 0.5`, β = −2.
    F3,
    /// `sin 2πt`, β = −20.
    F4,
    /// `10 sin 2πt`, β = −20, lag 0.26.
    F5,
}

impl ResponseFn {
    pub const ALL: [ResponseFn; 5] = [
        ResponseFn::F1,
        ResponseFn::F2,
        ResponseFn::F3,
        ResponseFn::F4,
        ResponseFn::F5,
    ];

    pub fn alpha(self, t: f64) -> f64 {
        match self {
            ResponseFn::F1 | ResponseFn::F4 => (2.0 * PI * t).sin(),
            ResponseFn::F2 => t.sqrt(),
            ResponseFn::F3 => 0.4 * t + 0.5,
            ResponseFn::F5 => 10.0 * (2.0 * PI * t).sin(),
        }
    }

    pub fn default_beta(self) -> f64 {
        match self {
            ResponseFn::F1 | ResponseFn::F2 | ResponseFn::F3 => -2.0,
            ResponseFn::F4 | ResponseFn::F5 => -20.0,
        }
    }

    pub fn default_lag(self) -> f64 {
        match self {
            ResponseFn::F5 => 0.26,
            _ => 0.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ResponseFn::F1 => "f1",
            ResponseFn::F2 => "f2",
            ResponseFn::F3 => "f3",
            ResponseFn::F4 => "f4",
            ResponseFn::F5 => "f5",
        }
    }
}

impl fmt::Display for ResponseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ResponseFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResponseFn::ALL
            .into_iter()
            .find(|f| f.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown response function {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateMode {
    /// Zero-mean Gaussian process.
    Gp,
    /// Gaussian process plus `5 sin(10πt)`.
    GpSine,
}

impl CovariateMode {
    fn mean(self, t: f64) -> f64 {
        match self {
            CovariateMode::Gp => 0.0,
            CovariateMode::GpSine => 5.0 * (10.0 * PI * t).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub subjects: usize,
    pub intensity: f64,
    pub train_fraction: f64,
    pub function: ResponseFn,
    pub beta: f64,
    pub lag: f64,
    pub covariate: CovariateMode,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(function: ResponseFn, subjects: usize, seed: u64) -> Self {
        SimConfig {
            subjects,
            intensity: 5.0,
            train_fraction: 0.7,
            function,
            beta: function.default_beta(),
            lag: function.default_lag(),
            covariate: CovariateMode::Gp,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::invalid("need at least 2 subjects"));
        }
        if !(self.intensity > 0.0 && self.intensity.is_finite()) {
            return Err(Error::invalid("intensity must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train fraction must lie in (0, 1)"));
        }
        let train = self.train_count();
        if train == 0 || train == self.subjects {
            return Err(Error::invalid("train fraction leaves an empty train or test set"));
        }
        if !self.beta.is_finite() || !self.lag.is_finite() {
            return Err(Error::invalid("β and lag must be finite"));
        }
        Ok(())
    }

    pub fn train_count(&self) -> usize {
        (self.train_fraction * self.subjects as f64).round() as usize
    }

    /// Noiseless response at covariate value `x` and time `t`.
    pub fn truth(&self, x: f64, t: f64) -> f64 {
        self.function.alpha(t) + self.beta * x
    }
}

/// A synchronous test observation: the covariate at `t - lag`, the response
/// time, the noiseless truth and the noisy response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub subject: String,
    pub x: f64,
    pub t: f64,
    pub f_true: f64,
    pub y: f64,
}

/// Generation-time record of every response, train and test alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub subject: String,
    pub t: f64,
    pub alpha: f64,
    pub x_lagged: f64,
    pub epsilon: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub config: SimConfig,
    pub train: AsyncDataset,
    pub test: Vec<TestCase>,
    pub audit: Vec<AuditRecord>,
}

impl SimDataset {
    pub fn test_queries(&self) -> Vec<(Vec<f64>, f64)> {
        self.test.iter().map(|c| (vec![c.x], c.t)).collect()
    }

    pub fn test_truth(&self) -> Vec<f64> {
        self.test.iter().map(|c| c.f_true).collect()
    }
}

/// `1 + Poisson(intensity)` uniform times on `(0, 1)`, sorted.
pub fn sample_times<R: Rng + ?Sized>(intensity: f64, rng: &mut R) -> Result<Vec<f64>> {
    let poisson = Poisson::new(intensity).map_err(|e| Error::invalid(format!("intensity: {e}")))?;
    let count = 1 + poisson.sample(rng) as usize;
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>()).collect();
    times.sort_by(f64::total_cmp);
    Ok(times)
}

pub fn covariate_kernel(dt: f64) -> f64 {
    (-dt.abs()).exp()
}

pub fn error_kernel(dt: f64) -> f64 {
    2f64.powf(-dt.abs())
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Zero-mean Gaussian-process draw at `times` with stationary covariance
/// `kernel(|Δt|)`. Near-singular covariances get a growing diagonal jitter.
pub fn sample_gp<R: Rng + ?Sized>(times: &[f64], kernel: impl Fn(f64) -> f64, rng: &mut R) -> Result<Vec<f64>> {
    let n = times.len();
    let cov = DMatrix::from_fn(n, n, |i, j| kernel(times[i] - times[j]));
    let mut jitter = 0.0;
    let chol = loop {
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            break c;
        }
        jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::numeric("Gaussian-process covariance is not positive definite"));
        }
    };
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok((chol.l() * z).iter().copied().collect())
}

/// Draws one subject: response times, covariate times, the covariate path on
/// their union with the lagged response times, and the error path.
fn simulate_subject<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SubjectDraw> {
    let t = sample_times(config.intensity, rng)?;
    let s = sample_times(config.intensity, rng)?;
    let mut grid: Vec<f64> = s.iter().copied().chain(t.iter().map(|v| v - config.lag)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let path = sample_gp(&grid, covariate_kernel, rng)?;
    let at = |time: f64| {
        let k = grid
            .binary_search_by(|g| g.total_cmp(&time))
            .expect("time is on the grid");
        path[k] + config.covariate.mean(time)
    };
    let x_obs: Vec<f64> = s.iter().map(|&v| at(v)).collect();
    let x_lagged: Vec<f64> = t.iter().map(|&v| at(v - config.lag)).collect();
    let eps = sample_gp(&t, error_kernel, rng)?;
    Ok(SubjectDraw {
        t,
        s,
        x_obs,
        x_lagged,
        eps,
    })
}

struct SubjectDraw {
    t: Vec<f64>,
    s: Vec<f64>,
    x_obs: Vec<f64>,
    x_lagged: Vec<f64>,
    eps: Vec<f64>,
}

/// Generates a full train/test split for `config`.
pub fn generate_dataset(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let mut rng = seeded_rng(config.seed);
    let n_train = config.train_count();
    let width = config.subjects.to_string().len();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::new();
    let mut audit = Vec::new();
    for i in 0..config.subjects {
        let id = format!("s{:0width$}", i + 1);
        let draw = simulate_subject(config, &mut rng)?;
        let mut y = Vec::with_capacity(draw.t.len());
        for k in 0..draw.t.len() {
            let alpha = config.function.alpha(draw.t[k]);
            let value = alpha + config.beta * draw.x_lagged[k] + draw.eps[k];
            y.push(value);
            audit.push(AuditRecord {
                subject: id.clone(),
                t: draw.t[k],
                alpha,
                x_lagged: draw.x_lagged[k],
                epsilon: draw.eps[k],
                y: value,
            });
        }
        if i < n_train {
            let x = draw.x_obs.iter().map(|&v| vec![v]).collect();
            train.push(SubjectSeries::new(id, draw.t, y, draw.s, x)?);
        } else {
            for k in 0..draw.t.len() {
                test.push(TestCase {
                    subject: id.clone(),
                    x: draw.x_lagged[k],
                    t: draw.t[k],
                    f_true: config.truth(draw.x_lagged[k], draw.t[k]),
                    y: y[k],
                });
            }
        }
    }
    Ok(SimDataset {
        config: config.clone(),
        train: AsyncDataset::new(train)?,
        test,
        audit,
    })
}

/// Root-mean-square error of predictions against noiseless truths.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::invalid("RMSE of an empty set"));
    }
    let sq: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sq / truths.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_function_values() {
        let f3 = SimConfig::new(ResponseFn::F3, 10, 0);
        assert!((f3.truth(0.0, 0.5) - 0.7).abs() < 1e-15);
        let f1 = SimConfig::new(ResponseFn::F1, 10, 0);
        assert!((f1.truth(1.0, 0.25) + 1.0).abs() < 1e-15);
        let f5 = SimConfig::new(ResponseFn::F5, 10, 0);
        assert_eq!((f5.beta, f5.lag), (-20.0, 0.26));
        assert_eq!("F4".parse::<ResponseFn>().unwrap(), ResponseFn::F4);
    }

    #[test]
    fn times_are_sorted_in_unit_interval() {
        let mut rng = seeded_rng(1);
        for _ in 0..1000 {
            let t = sample_times(5.0, &mut rng).unwrap();
            assert!(!t.is_empty());
            assert!(t.windows(2).all(|w| w[0] <= w[1]));
            assert!(t.iter().all(|&v| (0.0..1.0).contains(&v)));
        }
    }

    #[test]
    fn mean_count_is_intensity_plus_one() {
        let mut rng = seeded_rng(2);
        let draws = 100_000;
        let total: usize = (0..draws).map(|_| sample_times(5.0, &mut rng).unwrap().len()).sum();
        // Var(1 + Poisson(5)) = 5.
        let se = (5.0f64 / draws as f64).sqrt();
        assert!((total as f64 / draws as f64 - 6.0).abs() < 3.0 * se);
    }

    #[test]
    fn single_time_gp_is_standard_normal() {
        let mut rng = seeded_rng(3);
        let draws = 20_000;
        let v: Vec<f64> = (0..draws)
            .map(|_| sample_gp(&[0.4], covariate_kernel, &mut rng).unwrap()[0])
            .collect();
        let m = v.iter().sum::<f64>() / draws as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / draws as f64;
        assert!(m.abs() < 3.0 / (draws as f64).sqrt());
        // sd of the sample variance of a standard normal is √(2/n).
        assert!((var - 1.0).abs() < 3.0 * (2.0 / draws as f64).sqrt());
    }

    #[test]
    fn kernels_at_unit_lag() {
        assert_eq!(error_kernel(1.0), 0.5);
        assert_eq!(error_kernel(-1.0), 0.5);
        assert!((covariate_kernel(1.0) - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn duplicate_times_need_jitter() {
        let mut rng = seeded_rng(4);
        let v = sample_gp(&[0.3, 0.3], covariate_kernel, &mut rng).unwrap();
        assert!((v[0] - v[1]).abs() < 1e-3);
    }

    #[test]
    fn decomposition_recovers_errors() {
        let config = SimConfig::new(ResponseFn::F5, 20, 5);
        let sim = generate_dataset(&config).unwrap();
        for rec in &sim.audit {
            assert!((rec.y - rec.alpha - config.beta * rec.x_lagged - rec.epsilon).abs() < 1e-12);
        }
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let config = SimConfig::new(ResponseFn::F1, 30, 6);
        let sim = generate_dataset(&config).unwrap();
        assert_eq!(sim.train.len(), 21);
        let train: Vec<&str> = sim.train.subjects().iter().map(|s| s.id()).collect();
        let mut test: Vec<&str> = sim.test.iter().map(|c| c.subject.as_str()).collect();
        test.dedup();
        assert_eq!(test.len(), 9);
        assert!(test.iter().all(|t| !train.contains(t)));
        for c in &sim.test {
            assert_eq!(c.f_true, config.truth(c.x, c.t));
        }
    }

    #[test]
    fn lag_uses_shifted_covariate() {
        let config = SimConfig::new(ResponseFn::F5, 4, 7);
        let sim = generate_dataset(&config).unwrap();
        let train_ids: Vec<&str> = sim.train.subjects().iter().map(|s| s.id()).collect();
        // Zero-lag regeneration with the same seed shifts the covariate path.
        let unlagged = generate_dataset(&SimConfig {
            lag: 0.0,
            ..config.clone()
        })
        .unwrap();
        assert_ne!(sim.audit[0].x_lagged, unlagged.audit[0].x_lagged);
        assert_eq!(train_ids.len(), 3);
    }

    #[test]
    fn deterministic_per_seed() {
        let config = SimConfig::new(ResponseFn::F2, 10, 8);
        assert_eq!(generate_dataset(&config).unwrap(), generate_dataset(&config).unwrap());
    }

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.5, 2.5], &[1.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }
}
