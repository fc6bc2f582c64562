use super::{AsyncDataset, Layout, WeightedCase};

/// Last observation carried forward: each response is paired with the most
/// recent covariate observed at or before it. Responses preceding every
/// covariate observation are dropped.
pub fn locf_align(dataset: &AsyncDataset) -> Vec<WeightedCase> {
    locf_align_lagged(dataset, 0.0, Layout::Single)
}

/// LOCF against the lagged target time `t - lag`.
pub fn locf_align_lagged(dataset: &AsyncDataset, lag: f64, layout: Layout) -> Vec<WeightedCase> {
    let mut cases = Vec::new();
    for subject in dataset.subjects() {
        let s = subject.covariate_times();
        for (&t, &y) in subject.response_times().iter().zip(subject.response_values()) {
            let target = t - lag;
            let after = s.partition_point(|&v| v <= target);
            if after == 0 {
                continue;
            }
            let k = after - 1;
            cases.push(WeightedCase {
                features: layout.features(&subject.covariate_values()[k], t, s[k]),
                response: y,
                weight: 1.0,
                subject: subject.id().to_string(),
                response_time: t,
                covariate_time: s[k],
                distance: (t - s[k]).abs(),
            });
        }
    }
    cases
}

/// Linear interpolation of the covariate at each response time. Only
/// responses bracketed by covariate observations are kept; the second tuple
/// element is the distance to the nearest covariate observation.
pub fn linear_interp_align(dataset: &AsyncDataset) -> Vec<(WeightedCase, f64)> {
    linear_interp_align_lagged(dataset, 0.0, Layout::Single)
}

/// Interpolates the covariate at `t - lag`. The covariate-time feature of a
/// double-trajectory row is set to the interpolation target itself.
pub fn linear_interp_align_lagged(dataset: &AsyncDataset, lag: f64, layout: Layout) -> Vec<(WeightedCase, f64)> {
    let mut out = Vec::new();
    for subject in dataset.subjects() {
        let s = subject.covariate_times();
        let x = subject.covariate_values();
        for (&t, &y) in subject.response_times().iter().zip(subject.response_values()) {
            let target = t - lag;
            let Some(value) = interpolate(s, x, target) else {
                continue;
            };
            let nearest = s.iter().map(|&sk| (target - sk).abs()).fold(f64::INFINITY, f64::min);
            out.push((
                WeightedCase {
                    features: layout.features(&value, t, target),
                    response: y,
                    weight: 1.0,
                    subject: subject.id().to_string(),
                    response_time: t,
                    covariate_time: target,
                    distance: nearest,
                },
                nearest,
            ));
        }
    }
    out
}

fn interpolate(times: &[f64], values: &[Vec<f64>], target: f64) -> Option<Vec<f64>> {
    let after = times.partition_point(|&v| v < target);
    if after < times.len() && times[after] == target {
        return Some(values[after].clone());
    }
    if after == 0 || after == times.len() {
        return None;
    }
    let (k0, k1) = (after - 1, after);
    let frac = (target - times[k0]) / (times[k1] - times[k0]);
    Some(
        values[k0]
            .iter()
            .zip(&values[k1])
            .map(|(a, b)| a + frac * (b - a))
            .collect(),
    )
}
