//! Binomial coefficients and gamma-function helpers.

pub use statrs::function::gamma::{gamma, ln_gamma};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// ζ(2), …, ζ(12).
const ZETA: [f64; 11] = [
    1.644_934_066_848_226_4,
    1.202_056_903_159_594_3,
    1.082_323_233_711_138_2,
    1.036_927_755_143_369_9,
    1.017_343_061_984_449_1,
    1.008_349_277_381_922_8,
    1.004_077_356_197_944_3,
    1.002_008_392_826_082_2,
    1.000_994_575_127_818_1,
    1.000_494_188_604_119_5,
    1.000_246_086_553_308_1,
];

/// ln Γ(1 - x), accurate in absolute terms near x = 0 where ln Γ(1 - x) ≈ γ x.
pub fn ln_gamma_1m(x: f64) -> f64 {
    if x.abs() >= 0.05 {
        return ln_gamma(1.0 - x);
    }
    // ln Γ(1 - x) = γ x + Σ_{k>=2} ζ(k) x^k / k
    let mut acc = EULER_GAMMA * x;
    let mut pow = x;
    for k in 2..=24 {
        pow *= x;
        let zeta = ZETA
            .get(k - 2)
            .copied()
            .unwrap_or_else(|| 1.0 + 2f64.powi(-(k as i32)) + 3f64.powi(-(k as i32)));
        acc += zeta * pow / k as f64;
    }
    acc
}

/// Exact C(n, k) in 128-bit arithmetic, `None` on overflow.
pub fn binomial_exact(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication.
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// ln C(n, k); `-inf` when k > n.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if let Some(c) = binomial_exact(n, k) {
        if c < (1u128 << 53) {
            return (c as f64).ln();
        }
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// C(n, k) as a float (exact up to 2^53).
pub fn binomial(n: u64, k: u64) -> f64 {
    match binomial_exact(n, k) {
        Some(c) => c as f64,
        None => ln_binomial(n, k).exp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_binomials() {
        assert_eq!(binomial_exact(5, 2), Some(10));
        assert_eq!(binomial_exact(5, 0), Some(1));
        assert_eq!(binomial_exact(3, 4), Some(0));
        assert_eq!(binomial_exact(60, 30), Some(118_264_581_564_861_424));
        assert_eq!(binomial(0, 0), 1.0);
    }

    #[test]
    fn pascal_rule_holds() {
        for n in 1..=90u64 {
            for k in 1..n {
                let lhs = binomial_exact(n, k).unwrap();
                let rhs = binomial_exact(n - 1, k - 1).unwrap() + binomial_exact(n - 1, k).unwrap();
                assert_eq!(lhs, rhs, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn ln_binomial_large() {
        let direct = ln_binomial(5000, 4);
        let expected = (5000.0f64 * 4999.0 * 4998.0 * 4997.0 / 24.0).ln();
        assert!((direct - expected).abs() < 1e-12);
        assert!(ln_binomial(100_000, 50_000).is_finite());
    }

    #[test]
    fn ln_gamma_near_one() {
        for x in [-0.049, -0.01, 1e-3, 0.03, 0.0499] {
            assert!((ln_gamma_1m(x) - ln_gamma(1.0 - x)).abs() < 1e-14, "{x}");
        }
        assert_eq!(ln_gamma_1m(0.0), 0.0);
        let x = 2e-9;
        assert!((ln_gamma_1m(x) / x - (EULER_GAMMA + 1.644_934_066_848_226_4 * x / 2.0)).abs() < 1e-15);
        assert_eq!(ln_gamma_1m(0.4), ln_gamma(0.6));
    }

    #[test]
    fn gamma_reference_values() {
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert!((gamma(0.6) - 1.489_192_248_812_817).abs() < 1e-13);
        assert!((gamma(5.0) - 24.0).abs() < 1e-11);
        // Gamma'(1) = -gamma
        let h = 1e-6;
        let d = (gamma(1.0 + h) - gamma(1.0 - h)) / (2.0 * h);
        assert!((d + EULER_GAMMA).abs() < 1e-8);
    }
}
