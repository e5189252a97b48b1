//! Log-domain numerics shared by the message-passing code paths.

use ndarray::{ArrayD, Axis};

/// Stand-in for `ln 0`. Large enough in magnitude that `exp(LOG_ZERO)`
/// underflows to exactly zero, small enough that sums of a few thousand of
/// them stay finite.
pub const LOG_ZERO: f64 = -1.0e4;

/// Clamps a log value from below at [`LOG_ZERO`]. NaN passes through.
#[inline]
pub fn clamp_log(x: f64) -> f64 {
    if x < LOG_ZERO {
        LOG_ZERO
    } else {
        x
    }
}

/// Max-shifted `ln Σ exp(v_j)`. Returns `-inf` for an empty slice or when
/// every entry is `-inf`.
pub fn lse(values: &[f64]) -> f64 {
    lse_iter(values.iter().copied())
}

pub(crate) fn lse_iter<I>(values: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Shifts `values` in place so that their logsumexp is zero.
pub fn log_normalize_in_place(values: &mut [f64]) {
    let z = lse(values);
    for v in values.iter_mut() {
        *v -= z;
    }
}

pub fn log_normalized(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    log_normalize_in_place(&mut out);
    out
}

/// Logsumexp over every axis except `keep`; the result has one entry per
/// index along `keep`.
pub fn lse_keep_axis(tensor: &ArrayD<f64>, keep: usize) -> Vec<f64> {
    let n = tensor.shape()[keep];
    (0..n)
        .map(|s| {
            let view = tensor.index_axis(Axis(keep), s);
            lse_iter(view.iter().copied())
        })
        .collect()
}

/// Adds `v[s]` to every entry of `tensor` whose index along `axis` is `s`.
pub fn add_along_axis(tensor: &mut ArrayD<f64>, v: &[f64], axis: usize) {
    debug_assert_eq!(tensor.shape()[axis], v.len());
    for (s, &x) in v.iter().enumerate() {
        let mut view = tensor.index_axis_mut(Axis(axis), s);
        view += x;
    }
}

/// `p ln p` for a log-probability `log_p`, using the `0 ln 0 = 0` limit.
#[inline]
pub fn plogp(log_p: f64) -> f64 {
    let p = log_p.exp();
    if p == 0.0 {
        0.0
    } else {
        p * log_p
    }
}
