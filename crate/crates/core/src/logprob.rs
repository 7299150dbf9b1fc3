//! Base-2 log-domain arithmetic.

pub const LOG_ZERO: f64 = f64::NEG_INFINITY;
pub const LOG_ONE: f64 = 0.0;

#[inline]
pub fn log2_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == LOG_ZERO {
        return hi;
    }
    hi + (lo - hi).exp2().ln_1p() * std::f64::consts::LOG2_E
}

/// Linear ratio in [0, 1] to log2; 0 maps to negative infinity.
#[inline]
pub fn ratio_to_log(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        LOG_ZERO
    } else {
        ratio.log2()
    }
}

pub fn log2_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().fold(LOG_ZERO, log2_add)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_matches_linear() {
        let s = log2_add(0.25f64.log2(), 0.5f64.log2());
        assert!((s.exp2() - 0.75).abs() < 1e-15);
        assert_eq!(log2_add(LOG_ZERO, -3.0), -3.0);
        assert_eq!(log2_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
    }

    #[test]
    fn tiny_values_do_not_underflow() {
        let s = log2_add(-5000.0, -5000.0);
        assert!((s + 4999.0).abs() < 1e-12);
    }

    #[test]
    fn zero_ratio_disables() {
        assert_eq!(ratio_to_log(0.0), LOG_ZERO);
        assert_eq!(ratio_to_log(1.0), 0.0);
    }
}
