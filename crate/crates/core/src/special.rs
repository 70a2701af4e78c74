//! Standard-normal helpers that stay accurate far into the tails.
//!
//! Every quantity here is available in natural-log form because the prior
//! hyperparameters of the large designs live around `1e-60` and the tail
//! masses of interest around `exp(-4000)`.

use libm::{erf, erfc};

/// `ln Γ(x)` for `x > 0`.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
pub const LN_2: f64 = std::f64::consts::LN_2;

/// Above this the continued fraction for the Mills ratio converges in a few dozen terms.
const MILLS_CF_THRESHOLD: f64 = 30.0;

#[inline]
pub fn std_normal_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    std_normal_ln_pdf(z).exp()
}

/// `ln Q(z)` where `Q(z) = P(Z > z)`.
pub fn ln_sf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z < MILLS_CF_THRESHOLD {
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        std_normal_ln_pdf(z) + mills_ratio(z).ln()
    }
}

/// `Q(z)`; underflows to zero beyond `z ≈ 38`.
pub fn sf(z: f64) -> f64 {
    if z < MILLS_CF_THRESHOLD {
        0.5 * erfc(z / std::f64::consts::SQRT_2)
    } else {
        ln_sf(z).exp()
    }
}

/// `P(0 < Z < z)` for `z ≥ 0`, accurate for tiny `z` where `0.5 - Q(z)` cancels.
pub fn half_central(z: f64) -> f64 {
    0.5 * erf(z / std::f64::consts::SQRT_2)
}

/// `ln P(0 < Z < z)`, usable when `z` itself is only known through `ln z`.
pub fn ln_half_central_from_ln(ln_z: f64) -> f64 {
    if ln_z < -20.0 {
        // erf(x) = 2x/√π (1 - x²/3 + …); the correction is below 1e-17 here
        ln_z - LN_SQRT_2PI
    } else {
        half_central(ln_z.exp()).ln()
    }
}

/// Mills ratio `Q(z)/φ(z)` by backward evaluation of Laplace's continued fraction.
fn mills_ratio(z: f64) -> f64 {
    let mut t = z;
    for k in (1..=80).rev() {
        t = z + k as f64 / t;
    }
    1.0 / t
}

/// Inverse survival function from a log-probability: the `z` with `ln Q(z) = ln_p`.
pub fn isf_from_ln(ln_p: f64) -> f64 {
    if ln_p >= 0.0 {
        return f64::NEG_INFINITY;
    }
    if ln_p == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    if ln_p > -LN_2 {
        // upper half: Q(z) > 1/2 ⇔ z < 0
        let q = -ln_p.exp_m1();
        return -isf_from_ln(q.ln());
    }
    // ln Q is concave and decreasing, so Newton converges monotonically from either start
    let mut z = if ln_p < -2.0 {
        let a = -2.0 * ln_p;
        (a - a.ln() - 2.0 * LN_SQRT_2PI).max(0.0).sqrt()
    } else {
        0.0
    };
    for _ in 0..100 {
        let lq = ln_sf(z);
        let f = lq - ln_p;
        // d/dz ln Q(z) = -φ(z)/Q(z)
        let slope = -(std_normal_ln_pdf(z) - lq).exp();
        let step = f / slope;
        z -= step;
        if step.abs() <= 1e-15 * z.abs().max(1.0) {
            break;
        }
    }
    z
}

pub fn isf(p: f64) -> f64 {
    isf_from_ln(p.ln())
}

/// `ln(e^a + e^b)` without overflow.
#[inline]
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn ln_sum_exp(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, ln_add_exp)
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn survival_matches_erfc_across_the_switch() {
        for &z in &[0.0, 1.0, 5.0, 8.0, 20.0, 29.9] {
            let direct = (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln();
            assert_relative_eq!(ln_sf(z), direct, max_relative = 1e-13);
        }
        // both sides of the threshold agree
        let below = (0.5 * erfc(30.0 / std::f64::consts::SQRT_2)).ln();
        assert_relative_eq!(std_normal_ln_pdf(30.0) + mills_ratio(30.0).ln(), below, max_relative = 1e-12);
    }

    #[test]
    fn far_tail_follows_asymptotic_series() {
        // Q(z) ~ φ(z)/z (1 - 1/z² + 3/z⁴)
        let z: f64 = 100.0;
        let approx = std_normal_ln_pdf(z) - z.ln() + (1.0 - 1.0 / (z * z) + 3.0 / z.powi(4)).ln();
        assert_relative_eq!(ln_sf(z), approx, max_relative = 1e-12);
    }

    #[test]
    fn q_of_eight() {
        assert_relative_eq!(2.0 * sf(8.0), 1.244_192_114_854_357e-15, max_relative = 1e-12);
    }

    #[test]
    fn inverse_survival_round_trips() {
        for &ln_p in &[-0.1, -0.7, -1.0, -10.0, -36.04, -200.0, -5000.0] {
            let z = isf_from_ln(ln_p);
            assert_relative_eq!(ln_sf(z), ln_p, max_relative = 1e-12);
        }
        assert_relative_eq!(isf(0.5), 0.0, epsilon = 1e-14);
        assert_relative_eq!(isf(0.975), -1.959_963_984_540_054, max_relative = 1e-12);
    }

    #[test]
    fn epsilon_quantile() {
        let z = isf(f64::EPSILON);
        assert!((z - 8.125).abs() < 1e-2, "{z}");
    }

    #[test]
    fn central_mass_for_tiny_arguments() {
        let z = 1e-59;
        assert_relative_eq!(half_central(z), z / (2.0 * std::f64::consts::PI).sqrt(), max_relative = 1e-13);
        assert_relative_eq!(ln_half_central_from_ln(z.ln()), half_central(z).ln(), max_relative = 1e-13);
        assert_relative_eq!(ln_half_central_from_ln(0.5f64.ln()), half_central(0.5).ln(), max_relative = 1e-14);
    }

    #[test]
    fn softplus_pair() {
        for &x in &[-40.0, -4.6, 0.0, 3.0, 50.0] {
            assert_relative_eq!(softplus_inv(softplus(x)), x, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn binomial() {
        assert_relative_eq!(ln_binomial(3, 1), 3f64.ln(), max_relative = 1e-13);
        assert_eq!(ln_binomial(7, 7), 0.0);
        assert_relative_eq!(ln_binomial(10, 3), 120f64.ln(), max_relative = 1e-12);
    }
}
