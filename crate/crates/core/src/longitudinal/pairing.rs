use super::{AsyncDataset, KernelSpec, Layout, WeightedCase};
use crate::error::{Error, Result};

/// Relative inflation applied to a rank-statistic distance so that the pair
/// at the cutoff lands strictly inside the kernel support.
pub const BANDWIDTH_INFLATION: f64 = 1e-9;

/// Epanechnikov-profile weight `(1 - (dt/h)^2)_+`.
pub fn kernel_weight(dt: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidBandwidth(h));
    }
    Ok(weight_unchecked(dt, h))
}

#[inline]
fn weight_unchecked(dt: f64, h: f64) -> f64 {
    let u = dt / h;
    (1.0 - u * u).max(0.0)
}

/// Pairs every response with every covariate observation inside the kernel
/// support. Zero-weight pairs are dropped.
pub fn build_pairs(dataset: &AsyncDataset, spec: &KernelSpec, layout: Layout) -> Vec<WeightedCase> {
    let h = spec.bandwidth();
    let lag = spec.lag();
    let mut cases = Vec::new();
    for subject in dataset.subjects() {
        for (&t, &y) in subject.response_times().iter().zip(subject.response_values()) {
            for (&s, x) in subject.covariate_times().iter().zip(subject.covariate_values()) {
                let w = weight_unchecked(t - s - lag, h);
                if w > 0.0 {
                    cases.push(WeightedCase {
                        features: layout.features(x, t, s),
                        response: y,
                        weight: w,
                        subject: subject.id().to_string(),
                        response_time: t,
                        covariate_time: s,
                        distance: (t - s).abs(),
                    });
                }
            }
        }
    }
    cases
}

/// All `|t_ij - s_ik - lag|`, sorted ascending.
pub fn pair_distances(dataset: &AsyncDataset, lag: f64) -> Vec<f64> {
    let mut d = Vec::with_capacity(dataset.total_pairs());
    for subject in dataset.subjects() {
        for &t in subject.response_times() {
            for &s in subject.covariate_times() {
                d.push((t - s - lag).abs());
            }
        }
    }
    d.sort_by(f64::total_cmp);
    d
}

/// Bandwidth admitting the `count` closest pairs (ties at the cutoff are all
/// admitted). When `count` covers every pair the bandwidth covers them all.
pub fn bandwidth_for_count(dataset: &AsyncDataset, lag: f64, count: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot derive a bandwidth from an empty dataset"));
    }
    if count == 0 {
        return Err(Error::invalid("bandwidth must admit at least one pair"));
    }
    let distances = pair_distances(dataset, lag);
    let cutoff = distances[count.min(distances.len()) - 1];
    if cutoff > 0.0 {
        return Ok(cutoff * (1.0 + BANDWIDTH_INFLATION));
    }
    // Only exact coincidences survive: stay below the nearest nonzero distance.
    match distances.iter().find(|&&d| d > 0.0) {
        Some(&nearest) => Ok(nearest * BANDWIDTH_INFLATION),
        None => Ok(1.0),
    }
}

/// Bandwidth admitting the closest `Σ L_i` pairs, the sample size an LOCF
/// alignment would produce.
pub fn default_bandwidth(dataset: &AsyncDataset, lag: f64) -> Result<f64> {
    bandwidth_for_count(dataset, lag, dataset.total_responses())
}

/// Bandwidth admitting the closest `fraction` of all pairs.
pub fn bandwidth_for_inclusion(dataset: &AsyncDataset, lag: f64, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "inclusion fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let total = dataset.total_pairs();
    let count = ((fraction * total as f64).round() as usize).clamp(1, total.max(1));
    bandwidth_for_count(dataset, lag, count)
}

/// Fraction of all pairs that receive positive weight at bandwidth `h`.
pub fn inclusion_for_bandwidth(dataset: &AsyncDataset, lag: f64, h: f64) -> f64 {
    let distances = pair_distances(dataset, lag);
    if distances.is_empty() {
        return 0.0;
    }
    distances.partition_point(|&d| d < h) as f64 / distances.len() as f64
}
