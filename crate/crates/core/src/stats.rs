//! Small numeric helpers.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli-logit log-likelihood of one observation.
pub fn bernoulli_logit_ll(y: bool, eta: f64) -> f64 {
    if y {
        -softplus(-eta)
    } else {
        -softplus(eta)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Linear-interpolation quantile (type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Draws from N(mean, sd²) truncated to (lower, upper) by inverse CDF.
pub fn truncated_normal(mean: f64, sd: f64, lower: f64, upper: f64, u: f64) -> f64 {
    let n = std_normal();
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    // Work in the tail where the CDF keeps precision.
    if a > 0.0 {
        let sa = n.sf(a);
        let sb = n.sf(b);
        let s = sa - u * (sa - sb);
        let z = -n.inverse_cdf(s.clamp(f64::MIN_POSITIVE, 1.0));
        return mean + sd * z.clamp(a, b);
    }
    let fa = n.cdf(a);
    let fb = n.cdf(b);
    let p = fa + u * (fb - fa);
    let z = n.inverse_cdf(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
    mean + sd * z.clamp(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_logit_roundtrip() {
        for x in [-30.0, -2.0, 0.0, 0.5, 8.0] {
            assert!((logit(expit(x)) - x).abs() < 1e-9);
        }
        assert_eq!(expit(0.0), 0.5);
        assert!(expit(-800.0) >= 0.0 && expit(800.0) <= 1.0);
    }

    #[test]
    fn softplus_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn truncated_stays_in_bounds() {
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let x = truncated_normal(0.3, 1.2, 0.0, f64::INFINITY, u);
            assert!(x >= 0.0);
            let y = truncated_normal(-0.3, 1.0, f64::NEG_INFINITY, 0.0, u);
            assert!(y <= 0.0);
            let far = truncated_normal(-10.0, 1.0, 0.0, f64::INFINITY, u);
            assert!(far >= 0.0 && far.is_finite());
        }
    }

    #[test]
    fn quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 3.0);
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 5.0);
        assert_eq!(quantile_sorted(&xs, 0.25), 2.0);
    }
}
