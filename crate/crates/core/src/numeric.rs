//! Small numerical helpers shared across modules.
//!
//! Every data reduction in the sampler goes through [`DoubleSum`], a
//! double-double accumulator fed by error-free transformations. Weighted sums
//! with integer weights then agree with sums over the replicated data to the
//! last bit, which the weighted marginal likelihood and the σ update rely on.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPLITTER: f64 = 134_217_729.0; // 2^27 + 1

#[inline(always)]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline(always)]
fn split(a: f64) -> (f64, f64) {
    let c = SPLITTER * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

/// Exact product `a * b = p + e` (Dekker), valid while no overflow occurs.
#[inline(always)]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    let err = ((ah * bh - p) + ah * bl + al * bh) + al * bl;
    (p, err)
}

/// A multiplier with its Dekker split precomputed, for repeated exact
/// products against the same weight.
#[derive(Debug, Clone, Copy)]
pub struct SplitWeight {
    value: f64,
    hi: f64,
    lo: f64,
}

impl SplitWeight {
    #[inline(always)]
    pub fn new(value: f64) -> Self {
        let (hi, lo) = split(value);
        SplitWeight { value, hi, lo }
    }
}

/// Sum carried in roughly twice the working precision.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleSum {
    hi: f64,
    lo: f64,
}

impl DoubleSum {
    pub const ZERO: DoubleSum = DoubleSum { hi: 0.0, lo: 0.0 };

    #[inline(always)]
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        self.hi = s;
        self.lo += e;
    }

    /// Adds `weight * x` without rounding the product first.
    #[inline(always)]
    pub fn add_scaled(&mut self, weight: f64, x: f64) {
        let (p, pe) = two_prod(weight, x);
        let (s, e) = two_sum(self.hi, p);
        self.hi = s;
        self.lo += e + pe;
    }

    /// Same result as [`DoubleSum::add_scaled`] with a pre-split weight.
    #[inline(always)]
    pub fn add_split(&mut self, weight: SplitWeight, x: f64) {
        let p = weight.value * x;
        let (xh, xl) = split(x);
        let pe = ((weight.hi * xh - p) + weight.hi * xl + weight.lo * xh) + weight.lo * xl;
        let (s, e) = two_sum(self.hi, p);
        self.hi = s;
        self.lo += e + pe;
    }

    #[inline(always)]
    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Quantile with linear interpolation between order statistics
/// (the "type 7" rule). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    let mut acc = DoubleSum::ZERO;
    for &v in values {
        acc.add(v);
    }
    acc.value() / values.len() as f64
}

/// Derives an independent seed for stream `index` under `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

/// Seeded generator used by every stochastic routine in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
