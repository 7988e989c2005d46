//! Small helpers for arithmetic on extended-real log values.
//!
//! `f64::NEG_INFINITY` stands for probability (or belief) zero throughout the
//! crate. Nothing here ever produces `+inf` from finite inputs.

/// `log(sum(exp(x)))` with a max shift.
///
/// Returns `-inf` for an empty input or when every term is `-inf`.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = iter.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log weights into a probability vector (a softmax).
///
/// Returns `None` when every weight is `-inf`.
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let total = log_sum_exp(log_weights.iter().copied());
    if total == f64::NEG_INFINITY || total.is_nan() {
        return None;
    }
    let mut probs: Vec<f64> = log_weights.iter().map(|w| (w - total).exp()).collect();
    // Re-normalize to absorb the rounding in `total`.
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Some(probs)
}
