//! Small numeric helpers shared by the model, losses and decoder.

/// Stand-in for log(0) that keeps arithmetic NaN-free.
pub const LOG_ZERO: f64 = -1e30;

/// log(exp(a) + exp(b)) treating values at or below [`LOG_ZERO`] as zero
/// probability.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a <= LOG_ZERO {
        return b;
    }
    if b <= LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// In-place log-softmax of one row of logits.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let lse = log_sum_exp(row);
    for v in row {
        *v -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_matches_direct() {
        let (a, b) = (0.3f64.ln(), 0.2f64.ln());
        assert!((log_add(a, b) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(log_add(LOG_ZERO, b), b);
        assert_eq!(log_add(a, LOG_ZERO), a);
    }

    #[test]
    fn log_softmax_normalises() {
        let mut row = vec![1000.0, 1001.0, -5.0];
        log_softmax_in_place(&mut row);
        let total: f64 = row.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| v.is_finite()));
    }
}
