//! Fitting regressions on asynchronous longitudinal data.
//!
//! A [`RegressionSpec`] names the estimator, the feature layout and how the
//! bandwidth and covariate lag are chosen. [`fit_async`] resolves those
//! choices, builds the training design and runs the sampler.

mod search;

pub use search::{bandwidth_search, lag_search, BandwidthSearchReport, LagSearchReport, PoolCase};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::longitudinal::{
    bandwidth_for_inclusion, build_pairs, default_bandwidth, inclusion_for_bandwidth, linear_interp_align_lagged,
    locf_align_lagged, AsyncDataset, KernelSpec, Layout, WeightedCase,
};
use crate::sampler::{fit, PosteriorDraws, SamplerConfig, TreeMode};

/// Estimators sharing the tree engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Kernel-weighted pairs, soft trees.
    Wsb,
    /// Last observation carried forward, soft trees.
    LocfS,
    /// Last observation carried forward, hard trees.
    LocfB,
    /// Linearly interpolated covariate, soft trees.
    Li,
    /// Kernel-selected pairs with unit weights, soft trees.
    Nwt,
    /// Kernel-weighted pairs, hard trees.
    Wtstd,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Wsb,
        Method::LocfS,
        Method::LocfB,
        Method::Li,
        Method::Nwt,
        Method::Wtstd,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Wsb => "wsb",
            Method::LocfS => "locf-s",
            Method::LocfB => "locf-b",
            Method::Li => "li",
            Method::Nwt => "nwt",
            Method::Wtstd => "wtstd",
        }
    }

    /// Whether the design is built from kernel pairs and needs a bandwidth.
    pub fn uses_kernel(self) -> bool {
        matches!(self, Method::Wsb | Method::Nwt | Method::Wtstd)
    }

    pub fn tree_mode(self) -> TreeMode {
        match self {
            Method::LocfB | Method::Wtstd => TreeMode::Hard,
            _ => TreeMode::Soft,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// A method plus feature layout, written `wsb-st`, `wsb-dt`, `li`, ...
/// Methods without a suffix use the single-trajectory layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodVariant {
    pub method: Method,
    pub layout: Layout,
}

impl MethodVariant {
    pub fn new(method: Method, layout: Layout) -> Self {
        MethodVariant { method, layout }
    }

    pub fn tag(&self) -> String {
        match (self.method.uses_kernel(), self.layout) {
            (true, layout) => format!("{}-{}", self.method.tag(), layout.tag().to_ascii_lowercase()),
            (false, Layout::Single) => self.method.tag().to_string(),
            (false, Layout::Double) => format!("{}-dt", self.method.tag()),
        }
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for MethodVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (base, layout) = if let Some(b) = lower.strip_suffix("-st") {
            (b, Layout::Single)
        } else if let Some(b) = lower.strip_suffix("-dt") {
            (b, Layout::Double)
        } else {
            (lower.as_str(), Layout::Single)
        };
        Ok(MethodVariant::new(base.parse()?, layout))
    }
}

/// Candidate bandwidths, either as fractions of all pairs or absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BandwidthGrid {
    Inclusion(Vec<f64>),
    Absolute(Vec<f64>),
}

impl BandwidthGrid {
    pub fn len(&self) -> usize {
        match self {
            BandwidthGrid::Inclusion(v) | BandwidthGrid::Absolute(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Absolute bandwidths on `dataset` at `lag`.
    pub fn resolve(&self, dataset: &AsyncDataset, lag: f64) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::invalid("bandwidth grid is empty"));
        }
        match self {
            BandwidthGrid::Inclusion(fracs) => fracs
                .iter()
                .map(|&f| bandwidth_for_inclusion(dataset, lag, f))
                .collect(),
            BandwidthGrid::Absolute(hs) => hs
                .iter()
                .map(|&h| {
                    if h > 0.0 && h.is_finite() {
                        Ok(h)
                    } else {
                        Err(Error::InvalidBandwidth(h))
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BandwidthPolicy {
    /// Admit the `Σ L_i` closest pairs.
    Default,
    Fixed(f64),
    /// Admit this fraction of all pairs.
    Inclusion(f64),
    Searched(BandwidthGrid),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LagPolicy {
    None,
    Fixed(f64),
    Searched(Vec<f64>),
}

/// Cross-validation settings for the bandwidth and lag searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub folds: usize,
    /// Fraction of interpolable responses, nearest first, used as the pool.
    pub pool_fraction: f64,
    /// Distance-ordered voting groups.
    pub groups: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Tree count for CV fits; the method's own when unset.
    pub trees: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            folds: 10,
            pool_fraction: 0.084,
            groups: 5,
            iterations: 1000,
            burn_in: 200,
            trees: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 || self.groups == 0 {
            return Err(Error::invalid("need at least 2 folds and 1 voting group"));
        }
        if !(self.pool_fraction > 0.0 && self.pool_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "pool fraction must lie in (0, 1], got {}",
                self.pool_fraction
            )));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::invalid("search burn-in must be below its iteration count"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub variant: MethodVariant,
    pub bandwidth: BandwidthPolicy,
    pub lag: LagPolicy,
    /// Soft-tree sampler settings; hard-tree methods switch mode and use
    /// `hard_trees` trees.
    pub sampler: SamplerConfig,
    pub hard_trees: usize,
    pub search: SearchConfig,
}

impl RegressionSpec {
    pub fn new(variant: MethodVariant) -> Self {
        RegressionSpec {
            variant,
            bandwidth: BandwidthPolicy::Default,
            lag: LagPolicy::None,
            sampler: SamplerConfig::soft(),
            hard_trees: SamplerConfig::hard().trees,
            search: SearchConfig::default(),
        }
    }

    pub fn method(&self) -> Method {
        self.variant.method
    }

    pub fn layout(&self) -> Layout {
        self.variant.layout
    }

    /// Sampler settings for this method.
    pub fn sampler_config(&self) -> SamplerConfig {
        match self.method().tree_mode() {
            TreeMode::Soft => SamplerConfig {
                mode: TreeMode::Soft,
                ..self.sampler.clone()
            },
            TreeMode::Hard => SamplerConfig {
                mode: TreeMode::Hard,
                trees: self.hard_trees,
                ..self.sampler.clone()
            },
        }
    }

    /// Sampler settings for cross-validation fits.
    pub fn search_sampler_config(&self, seed: u64) -> SamplerConfig {
        let base = self.sampler_config();
        SamplerConfig {
            iterations: self.search.iterations,
            burn_in: self.search.burn_in,
            thin: 1,
            trees: self.search.trees.unwrap_or(base.trees),
            seed,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler_config().validate()?;
        self.search.validate()?;
        match &self.bandwidth {
            BandwidthPolicy::Fixed(h) if !(*h > 0.0 && h.is_finite()) => return Err(Error::InvalidBandwidth(*h)),
            BandwidthPolicy::Inclusion(f) if !(*f > 0.0 && *f <= 1.0) => {
                return Err(Error::invalid(format!(
                    "inclusion fraction must lie in (0, 1], got {f}"
                )))
            }
            BandwidthPolicy::Searched(grid) if grid.is_empty() => {
                return Err(Error::invalid("bandwidth grid is empty"))
            }
            _ => {}
        }
        match &self.lag {
            LagPolicy::Fixed(l) if !l.is_finite() => Err(Error::invalid("lag must be finite")),
            LagPolicy::Searched(grid) if grid.is_empty() || grid.iter().any(|l| !l.is_finite()) => {
                Err(Error::invalid("lag grid must be nonempty and finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Training rows for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub cases: Vec<WeightedCase>,
    pub layout: Layout,
    pub covariate_dim: usize,
}

impl Design {
    pub fn feature_dim(&self) -> usize {
        self.layout.feature_dim(self.covariate_dim)
    }

    /// Features, responses and weights as parallel arrays.
    pub fn arrays(&self) -> Result<(FeatureMatrix, Vec<f64>, Vec<f64>)> {
        let mut x = FeatureMatrix::with_cols(self.feature_dim());
        for case in &self.cases {
            x.push_row(&case.features)?;
        }
        Ok((
            x,
            self.cases.iter().map(|c| c.response).collect(),
            self.cases.iter().map(|c| c.weight).collect(),
        ))
    }
}

/// Builds the training design of `variant` at bandwidth `h` (ignored by
/// alignment methods) and covariate lag `lag`.
pub fn build_design(dataset: &AsyncDataset, variant: MethodVariant, bandwidth: f64, lag: f64) -> Result<Design> {
    let layout = variant.layout;
    let cases = match variant.method {
        Method::Wsb | Method::Wtstd => build_pairs(dataset, &KernelSpec::new(bandwidth, lag)?, layout),
        Method::Nwt => {
            let mut cases = build_pairs(dataset, &KernelSpec::new(bandwidth, lag)?, layout);
            cases.iter_mut().for_each(|c| c.weight = 1.0);
            cases
        }
        Method::LocfS | Method::LocfB => locf_align_lagged(dataset, lag, layout),
        Method::Li => linear_interp_align_lagged(dataset, lag, layout)
            .into_iter()
            .map(|(c, _)| c)
            .collect(),
    };
    if cases.is_empty() {
        return Err(Error::EmptyDesign(format!("{variant} produced no training cases")));
    }
    Ok(Design {
        cases,
        layout,
        covariate_dim: dataset.covariate_dim(),
    })
}

/// Fitted model plus the choices made along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct AsyncFit {
    pub spec: RegressionSpec,
    pub model: PosteriorDraws,
    pub lag: f64,
    /// Bandwidth and its pair-inclusion fraction, for kernel methods.
    pub bandwidth: Option<f64>,
    pub inclusion: Option<f64>,
    pub design_size: usize,
    pub bandwidth_report: Option<BandwidthSearchReport>,
    pub lag_report: Option<LagSearchReport>,
}

impl AsyncFit {
    /// Feature row for a synchronous query `(X, t)`; the double-trajectory
    /// layout places the covariate at `t - lag`.
    pub fn query_features(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.spec.layout().features(x, t, t - self.lag)
    }

    /// Posterior mean at synchronous queries.
    pub fn predict_synchronous(&self, queries: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
        let mut x = FeatureMatrix::with_cols(self.spec.layout().feature_dim(self.model_covariate_dim()));
        for (cov, t) in queries {
            x.push_row(&self.query_features(cov, *t))?;
        }
        self.model.predict_mean(&x)
    }

    fn model_covariate_dim(&self) -> usize {
        match self.spec.layout() {
            Layout::Single => self.model.feature_dim() - 1,
            Layout::Double => self.model.feature_dim() - 2,
        }
    }
}

/// Resolves the bandwidth policy at `lag`, running a search when asked.
pub fn resolve_bandwidth(
    dataset: &AsyncDataset,
    spec: &RegressionSpec,
    lag: f64,
) -> Result<(f64, Option<BandwidthSearchReport>)> {
    match &spec.bandwidth {
        BandwidthPolicy::Default => Ok((default_bandwidth(dataset, lag)?, None)),
        BandwidthPolicy::Fixed(h) => Ok((*h, None)),
        BandwidthPolicy::Inclusion(f) => Ok((bandwidth_for_inclusion(dataset, lag, *f)?, None)),
        BandwidthPolicy::Searched(grid) => {
            let report = bandwidth_search(dataset, grid, spec, lag)?;
            Ok((report.chosen, Some(report)))
        }
    }
}

/// Resolves lag and bandwidth, builds the design and fits the model.
pub fn fit_async(dataset: &AsyncDataset, spec: &RegressionSpec) -> Result<AsyncFit> {
    spec.validate()?;
    let (lag, lag_report) = match &spec.lag {
        LagPolicy::None => (0.0, None),
        LagPolicy::Fixed(l) => (*l, None),
        LagPolicy::Searched(grid) => {
            let report = lag_search(dataset, grid, spec)?;
            (report.chosen, Some(report))
        }
    };
    let (bandwidth, bandwidth_report) = if spec.method().uses_kernel() {
        let (h, report) = resolve_bandwidth(dataset, spec, lag)?;
        (Some(h), report)
    } else {
        (None, None)
    };
    let design = build_design(dataset, spec.variant, bandwidth.unwrap_or(1.0), lag)?;
    let (x, y, w) = design.arrays()?;
    let model = fit(&x, &y, &w, &spec.sampler_config())?;
    Ok(AsyncFit {
        spec: spec.clone(),
        model,
        lag,
        inclusion: bandwidth.map(|h| inclusion_for_bandwidth(dataset, lag, h)),
        bandwidth,
        design_size: design.cases.len(),
        bandwidth_report,
        lag_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::longitudinal::fixtures::{dataset, subject};

    fn sync_data() -> AsyncDataset {
        dataset(vec![
            subject(
                "a",
                &[0.1, 0.4, 0.8],
                &[1.0, 2.0, 3.0],
                &[0.1, 0.4, 0.8],
                &[0.5, 0.7, 0.2],
            ),
            subject("b", &[0.2, 0.5], &[0.0, 1.5], &[0.2, 0.5], &[0.9, 0.1]),
        ])
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        let v: MethodVariant = "wsb-dt".parse().unwrap();
        assert_eq!(v, MethodVariant::new(Method::Wsb, Layout::Double));
        assert_eq!(v.tag(), "wsb-dt");
        assert_eq!("LOCF-B".parse::<MethodVariant>().unwrap().tag(), "locf-b");
        assert!("bart".parse::<MethodVariant>().is_err());
    }

    #[test]
    fn tiny_bandwidth_on_synchronous_data_matches_locf() {
        let d = sync_data();
        let h = default_bandwidth(&d, 0.0).unwrap();
        let wsb = build_design(&d, MethodVariant::new(Method::Wsb, Layout::Single), h, 0.0).unwrap();
        let locf = build_design(&d, MethodVariant::new(Method::LocfS, Layout::Single), h, 0.0).unwrap();
        assert_eq!(wsb.cases.len(), locf.cases.len());
        for (a, b) in wsb.cases.iter().zip(&locf.cases) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.response, b.response);
            assert_eq!(a.weight, 1.0);
        }
    }

    #[test]
    fn nwt_weights_are_unit() {
        let d = sync_data();
        let design = build_design(&d, MethodVariant::new(Method::Nwt, Layout::Single), 0.5, 0.0).unwrap();
        assert!(design.cases.len() > d.total_responses());
        assert!(design.cases.iter().all(|c| c.weight == 1.0));
    }

    #[test]
    fn layout_dimensions() {
        let d = sync_data();
        let st = build_design(&d, MethodVariant::new(Method::Wsb, Layout::Single), 0.5, 0.0).unwrap();
        let dt = build_design(&d, MethodVariant::new(Method::Wsb, Layout::Double), 0.5, 0.0).unwrap();
        assert_eq!(st.feature_dim(), 2);
        assert_eq!(dt.feature_dim(), 3);
        assert_eq!(dt.arrays().unwrap().0.cols(), 3);
    }

    #[test]
    fn empty_design_is_an_error() {
        let d = dataset(vec![subject("a", &[0.1], &[1.0], &[0.5], &[1.0])]);
        assert!(matches!(
            build_design(&d, MethodVariant::new(Method::LocfS, Layout::Single), 1.0, 0.0),
            Err(Error::EmptyDesign(_))
        ));
    }

    #[test]
    fn hard_methods_switch_mode() {
        let spec = RegressionSpec::new("locf-b".parse().unwrap());
        let c = spec.sampler_config();
        assert_eq!(c.mode, TreeMode::Hard);
        assert_eq!(c.trees, 200);
        assert_eq!(
            RegressionSpec::new("wsb-st".parse().unwrap()).sampler_config().mode,
            TreeMode::Soft
        );
    }

    #[test]
    fn default_policy_uses_rank_rule() {
        let d = sync_data();
        let mut spec = RegressionSpec::new("wsb-st".parse().unwrap());
        spec.sampler = SamplerConfig {
            trees: 5,
            iterations: 30,
            burn_in: 10,
            ..SamplerConfig::soft()
        };
        let f = fit_async(&d, &spec).unwrap();
        assert_eq!(f.bandwidth, Some(default_bandwidth(&d, 0.0).unwrap()));
        assert_eq!(f.design_size, d.total_responses());
        let preds = f.predict_synchronous(&[(vec![0.5], 0.3)]).unwrap();
        assert!(preds[0].is_finite());
    }

    #[test]
    fn spec_validation() {
        let mut spec = RegressionSpec::new("wsb-st".parse().unwrap());
        spec.bandwidth = BandwidthPolicy::Searched(BandwidthGrid::Inclusion(vec![]));
        assert!(spec.validate().is_err());
        spec.bandwidth = BandwidthPolicy::Fixed(-1.0);
        assert!(spec.validate().is_err());
        spec.bandwidth = BandwidthPolicy::Default;
        spec.lag = LagPolicy::Searched(vec![]);
        assert!(spec.validate().is_err());
    }
}
