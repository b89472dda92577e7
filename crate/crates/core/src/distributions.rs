//! Generalized extreme value law, sampling laws, contamination schemes and
//! closed-form order-statistic oracles.
//!
//! All ξ-dependent formulas switch to their Gumbel limits when
//! `|ξ| < XI_ZERO_TOL`; elsewhere they are written with `expm1`/`ln_1p` so the
//! two branches meet continuously.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::sample::{ObservationSample, Provenance};
use crate::special::{binomial, ln_gamma, ln_gamma_1m, EULER_GAMMA};

/// Below this magnitude the shape parameter is treated as exactly zero.
pub const XI_ZERO_TOL: f64 = 1e-9;

/// Shape ξ, location μ and scale σ of a generalized extreme value law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub xi: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl GevParams {
    pub fn new(xi: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !(xi.is_finite() && mu.is_finite() && sigma.is_finite()) {
            return Err(Error::invalid("GEV parameters must be finite"));
        }
        if sigma <= 0.0 {
            return Err(Error::invalid(format!("GEV scale must be positive, got {sigma}")));
        }
        Ok(Self { xi, mu, sigma })
    }

    /// GEV with μ = 0, σ = 1.
    pub fn standard(xi: f64) -> Self {
        Self {
            xi,
            mu: 0.0,
            sigma: 1.0,
        }
    }

    pub fn is_gumbel(&self) -> bool {
        self.xi.abs() < XI_ZERO_TOL
    }

    /// Finite upper end of the support (ξ < 0 only).
    pub fn upper_endpoint(&self) -> Option<f64> {
        (self.xi < 0.0 && !self.is_gumbel()).then(|| self.mu - self.sigma / self.xi)
    }

    /// Finite lower end of the support (ξ > 0 only).
    pub fn lower_endpoint(&self) -> Option<f64> {
        (self.xi > 0.0 && !self.is_gumbel()).then(|| self.mu - self.sigma / self.xi)
    }

    /// Law of the maximum of `j` i.i.d. copies (GEV is max-stable).
    pub fn max_of(&self, j: u32) -> Self {
        let lj = (j as f64).ln();
        if self.is_gumbel() {
            return Self {
                mu: self.mu + self.sigma * lj,
                ..*self
            };
        }
        Self {
            xi: self.xi,
            mu: self.mu + self.sigma * (self.xi * lj).exp_m1() / self.xi,
            sigma: self.sigma * (self.xi * lj).exp(),
        }
    }

    pub fn mean(&self) -> Result<f64> {
        gev_pwm_theta(1, self)
    }

    /// Variance, finite only for ξ < 1/2.
    pub fn variance(&self) -> Result<f64> {
        let xi = self.xi;
        if xi >= 0.5 {
            return Err(Error::invalid(format!("GEV variance is infinite for xi = {xi} >= 1/2")));
        }
        let s2 = self.sigma * self.sigma;
        if self.is_gumbel() {
            return Ok(s2 * PI * PI / 6.0);
        }
        // Γ(1-2ξ) - Γ(1-ξ)² = Γ(1-ξ)² · expm1(lnΓ(1-2ξ) - 2 lnΓ(1-ξ))
        let lg1 = ln_gamma(1.0 - xi);
        let d = if xi.abs() < 1e-3 {
            // lnΓ(1-x) = γx + Σ ζ(k) x^k / k, so the difference starts at ξ².
            const ZETA3: f64 = 1.202_056_903_159_594_3;
            let zeta4 = PI.powi(4) / 90.0;
            PI * PI / 6.0 * xi * xi + 2.0 * ZETA3 * xi.powi(3) + 3.5 * zeta4 * xi.powi(4)
        } else {
            ln_gamma(1.0 - 2.0 * xi) - 2.0 * lg1
        };
        Ok(s2 * (2.0 * lg1).exp() * d.exp_m1() / (xi * xi))
    }
}

/// Distribution function of the GEV law.
pub fn gev_cdf(x: f64, p: &GevParams) -> f64 {
    let z = (x - p.mu) / p.sigma;
    if p.is_gumbel() {
        return (-(-z).exp()).exp();
    }
    let t = p.xi * z;
    if t <= -1.0 {
        // outside the support: below the lower endpoint (ξ > 0) or above the upper one (ξ < 0)
        return if p.xi > 0.0 { 0.0 } else { 1.0 };
    }
    (-(-t.ln_1p() / p.xi).exp()).exp()
}

/// Quantile function of the GEV law.
pub fn gev_quantile(prob: f64, p: &GevParams) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::invalid(format!("probability must lie in (0, 1), got {prob}")));
    }
    Ok(quantile_unchecked(prob, p))
}

fn quantile_unchecked(prob: f64, p: &GevParams) -> f64 {
    let y = -(-prob.ln()).ln();
    if p.is_gumbel() {
        return p.mu + p.sigma * y;
    }
    // ((-ln p)^(-ξ) - 1) / ξ = expm1(ξ y) / ξ
    p.mu + p.sigma * (p.xi * y).exp_m1() / p.xi
}

/// `n` i.i.d. GEV draws by inversion.
pub fn gev_sample(stream: &RandomStream, p: &GevParams, n: usize) -> Result<ObservationSample> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut rng = stream.rng();
    let values = (0..n)
        .map(|_| quantile_unchecked(rng.sample(Open01), p))
        .collect();
    ObservationSample::new(values)
}

/// θ_j = E(max(X_1, …, X_j)) in closed form; requires ξ < 1.
pub fn gev_pwm_theta(j: u32, p: &GevParams) -> Result<f64> {
    if j == 0 {
        return Err(Error::invalid("theta_j needs j >= 1"));
    }
    if p.xi >= 1.0 {
        return Err(Error::invalid(format!("GEV mean does not exist for xi = {} >= 1", p.xi)));
    }
    let lj = (j as f64).ln();
    let standard = if p.is_gumbel() {
        EULER_GAMMA + lj
    } else {
        (p.xi * lj + ln_gamma_1m(p.xi)).exp_m1() / p.xi
    };
    Ok(p.mu + p.sigma * standard)
}

/// E(X_(k:m)) for a GEV sample, expanded over the θ_j of maxima.
pub fn gev_order_stat_mean(k: u32, m: u32, p: &GevParams) -> Result<f64> {
    check_order(k, m)?;
    order_stat_moment_from_maxima(k, m, |j| gev_pwm_theta(j, p))
}

/// E(X_(k:m)^r) = k C(m,k) Σ_l C(m-k,l) (-1)^l E(max_{k+l}^r) / (k+l).
fn order_stat_moment_from_maxima(
    k: u32,
    m: u32,
    max_moment: impl Fn(u32) -> Result<f64>,
) -> Result<f64> {
    let mut acc = 0.0;
    for l in 0..=(m - k) {
        let j = k + l;
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binomial((m - k) as u64, l as u64) * max_moment(j)? / j as f64;
    }
    Ok(k as f64 * binomial(m as u64, k as u64) * acc)
}

fn check_order(k: u32, m: u32) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::invalid(format!("need 1 <= k <= m, got k = {k}, m = {m}")));
    }
    Ok(())
}

/// Sampling laws used by the experiments and the oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    Uniform01,
    Exponential1,
    Gumbel01,
    Gev(GevParams),
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Uniform draws (with replacement) from a fixed finite population.
    Population(Arc<[f64]>),
}

impl Law {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Law::Uniform01 => rng.random::<f64>(),
            Law::Exponential1 => Exp1.sample(rng),
            Law::Gumbel01 => quantile_unchecked(rng.sample(Open01), &GevParams::standard(0.0)),
            Law::Gev(p) => quantile_unchecked(rng.sample(Open01), p),
            Law::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Law::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Law::Population(pop) => pop[rng.random_range(0..pop.len())],
        }
    }

    pub fn sample(&self, stream: &RandomStream, n: usize) -> Result<ObservationSample> {
        let mut rng = stream.rng();
        ObservationSample::new((0..n).map(|_| self.draw(&mut rng)).collect())
    }

    /// Parse `uniform01`, `exponential1`, `gumbel01`, `gev:<xi>` or `population:<N>` (= {1..N}).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "uniform01" => return Ok(Law::Uniform01),
            "exponential1" => return Ok(Law::Exponential1),
            "gumbel01" => return Ok(Law::Gumbel01),
            _ => {}
        }
        if let Some(xi) = s.strip_prefix("gev:") {
            let xi: f64 = xi
                .parse()
                .map_err(|_| Error::invalid(format!("bad shape in {s:?}")))?;
            return Ok(Law::Gev(GevParams::new(xi, 0.0, 1.0)?));
        }
        if let Some(size) = s.strip_prefix("population:") {
            let size: usize = size
                .parse()
                .map_err(|_| Error::invalid(format!("bad population size in {s:?}")))?;
            if size == 0 {
                return Err(Error::invalid("population must be nonempty"));
            }
            return Ok(Law::Population((1..=size).map(|v| v as f64).collect()));
        }
        Err(Error::invalid(format!(
            "unknown distribution {s:?} (expected uniform01, exponential1, gumbel01, gev:<xi>, population:<N>)"
        )))
    }
}

/// Exact mean and variance of an order statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderStatMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Exact moments of X_(k:m) for an i.i.d. m-sample from `law`.
///
/// Supported laws: `Uniform01` (Beta(k, m-k+1)), `Exponential1` (Rényi
/// representation) and `Gumbel01` (alternating expansion over maxima, m <= 20).
pub fn order_stat_oracle(law: &Law, k: u32, m: u32) -> Result<OrderStatMoments> {
    check_order(k, m)?;
    let (kf, mf) = (k as f64, m as f64);
    match law {
        Law::Uniform01 => Ok(OrderStatMoments {
            mean: kf / (mf + 1.0),
            variance: kf * (mf - kf + 1.0) / ((mf + 1.0).powi(2) * (mf + 2.0)),
        }),
        Law::Exponential1 => {
            // X_(k:m) = Σ_{i=m-k+1}^{m} E_i / i
            let (mut mean, mut var) = (0.0, 0.0);
            for i in (m - k + 1)..=m {
                mean += 1.0 / i as f64;
                var += 1.0 / (i as f64).powi(2);
            }
            Ok(OrderStatMoments {
                mean,
                variance: var,
            })
        }
        Law::Gumbel01 => {
            if m > 20 {
                return Err(Error::invalid("Gumbel order-statistic oracle limited to m <= 20"));
            }
            let first = order_stat_moment_from_maxima(k, m, |j| Ok(EULER_GAMMA + (j as f64).ln()))?;
            let second = order_stat_moment_from_maxima(k, m, |j| {
                let mu = EULER_GAMMA + (j as f64).ln();
                Ok(mu * mu + PI * PI / 6.0)
            })?;
            Ok(OrderStatMoments {
                mean: first,
                variance: second - first * first,
            })
        }
        other => Err(Error::invalid(format!(
            "order-statistic oracle does not support {other:?}"
        ))),
    }
}

/// v_1 = var(E[X_(k:m) | X_1]) for uniform(0,1) samples.
///
/// Conditionally on X_1 = x, the order statistic equals x, the k-th of the
/// other m-1 points (when it falls below x) or their (k-1)-th (when it falls
/// above x). The resulting polynomial is squared and integrated numerically.
pub fn uniform_order_stat_v1(k: u32, m: u32) -> Result<f64> {
    check_order(k, m)?;
    if m == 1 {
        return Ok(1.0 / 12.0);
    }
    use statrs::function::beta::beta_reg;
    let (kf, mf) = (k as f64, m as f64);
    let c = binomial((m - 1) as u64, (k - 1) as u64);
    let h = |x: f64| -> f64 {
        let mut v = x * c * x.powi(k as i32 - 1) * (1.0 - x).powi((m - k) as i32);
        if k < m {
            v += kf / mf * beta_reg(kf + 1.0, mf - kf, x);
        }
        if k > 1 {
            v += (kf - 1.0) / mf * (1.0 - beta_reg(kf, mf - kf + 1.0, x));
        }
        v
    };
    let mean = kf / (mf + 1.0);
    // composite Simpson on [0, 1]; the integrand is a polynomial of degree <= 2m
    const N: usize = 4000;
    let step = 1.0 / N as f64;
    let mut acc = 0.0;
    for i in 0..=N {
        let x = i as f64 * step;
        let w = if i == 0 || i == N {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = h(x) - mean;
        acc += w * d * d;
    }
    Ok(acc * step / 3.0)
}

/// Where outliers sit in a contaminated sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Uniformly random positions.
    #[default]
    Shuffled,
    /// Inliers first, then all outliers in one consecutive run.
    Consecutive,
}

impl std::str::FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffled" => Ok(Placement::Shuffled),
            "consecutive" => Ok(Placement::Consecutive),
            _ => Err(Error::invalid(format!("unknown placement {s:?}"))),
        }
    }
}

/// n_I GEV inliers contaminated by n_O outliers whose law depends on ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationScheme {
    pub inliers: GevParams,
    pub n_inliers: usize,
    pub n_outliers: usize,
}

impl ContaminationScheme {
    pub fn new(inliers: GevParams, n_inliers: usize, n_outliers: usize) -> Result<Self> {
        if n_inliers == 0 {
            return Err(Error::invalid("a contamination scheme needs at least one inlier"));
        }
        Ok(Self {
            inliers,
            n_inliers,
            n_outliers,
        })
    }

    pub fn n_total(&self) -> usize {
        self.n_inliers + self.n_outliers
    }

    /// Uniform[0, 20 - 1/ξ] for ξ < 0, otherwise N(q_ξ(1 - 1e-4), 1) with the
    /// standard-GEV quantile. Normal draws are not truncated.
    pub fn outlier_law(&self) -> Law {
        let xi = self.inliers.xi;
        if xi < 0.0 && xi.abs() >= XI_ZERO_TOL {
            Law::Uniform {
                lo: 0.0,
                hi: 20.0 - 1.0 / xi,
            }
        } else {
            Law::Normal {
                mean: quantile_unchecked(1.0 - 1e-4, &GevParams::standard(xi)),
                sd: 1.0,
            }
        }
    }
}

/// Draw a tagged contaminated sample.
pub fn contaminate(
    stream: &RandomStream,
    scheme: &ContaminationScheme,
    placement: Placement,
) -> ObservationSample {
    let mut rng = stream.rng();
    let outlier_law = scheme.outlier_law();
    let mut pairs: Vec<(f64, Provenance)> = Vec::with_capacity(scheme.n_total());
    for _ in 0..scheme.n_inliers {
        pairs.push((quantile_unchecked(rng.sample(Open01), &scheme.inliers), Provenance::Inlier));
    }
    for _ in 0..scheme.n_outliers {
        pairs.push((outlier_law.draw(&mut rng), Provenance::Outlier));
    }
    if placement == Placement::Shuffled {
        pairs.shuffle(&mut rng);
    }
    let (values, tags) = pairs.into_iter().unzip();
    ObservationSample::with_tags(values, tags).expect("GEV and outlier draws are finite")
}

/// Simple random sample without replacement, in uniformly random order.
pub fn cna_sample(stream: &RandomStream, population: &[f64], n: usize) -> Result<ObservationSample> {
    if n == 0 || n > population.len() {
        return Err(Error::invalid(format!(
            "cannot draw {n} values without replacement from a population of {}",
            population.len()
        )));
    }
    let mut pool = population.to_vec();
    let mut rng = stream.rng();
    let (chosen, _) = pool.partial_shuffle(&mut rng, n);
    ObservationSample::new(chosen.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gumbel() -> GevParams {
        GevParams::standard(0.0)
    }

    #[test]
    fn params_validation() {
        assert!(GevParams::new(0.1, 0.0, 0.0).is_err());
        assert!(GevParams::new(0.1, 0.0, -1.0).is_err());
        assert!(GevParams::new(f64::NAN, 0.0, 1.0).is_err());
        assert!(GevParams::new(0.1, 2.0, 3.0).is_ok());
    }

    #[test]
    fn cdf_examples() {
        assert_abs_diff_eq!(gev_cdf(0.0, &gumbel()), (-1.0f64).exp(), epsilon = 1e-15);
        // -ln(-ln 0.95) = 2.970195...
        assert_abs_diff_eq!(gev_cdf(2.9702, &gumbel()), 0.95, epsilon = 1e-4);
        let p = GevParams::standard(-0.4);
        for x in [2.5, 2.6, 10.0] {
            assert_eq!(gev_cdf(x, &p), 1.0);
        }
        let p = GevParams::standard(0.4);
        assert_eq!(gev_cdf(-2.5, &p), 0.0);
        assert_eq!(gev_cdf(-3.0, &p), 0.0);
    }

    #[test]
    fn cdf_is_monotone() {
        for xi in [-0.4, 0.0, 0.4] {
            let p = GevParams::new(xi, 1.0, 2.0).unwrap();
            let mut prev = 0.0;
            for i in -400..400 {
                let c = gev_cdf(i as f64 * 0.05, &p);
                assert!((0.0..=1.0).contains(&c));
                assert!(c >= prev);
                prev = c;
            }
        }
    }

    #[test]
    fn quantile_examples() {
        assert_abs_diff_eq!(
            gev_quantile(0.95, &gumbel()).unwrap(),
            -(-(0.95f64).ln()).ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(gev_quantile(0.95, &gumbel()).unwrap(), 2.9702, epsilon = 1e-4);
        assert_abs_diff_eq!(gev_quantile((-1.0f64).exp(), &gumbel()).unwrap(), 0.0, epsilon = 1e-15);
        let direct = ((-(0.9999f64).ln()).powf(-0.4) - 1.0) / 0.4;
        assert_abs_diff_eq!(
            gev_quantile(0.9999, &GevParams::standard(0.4)).unwrap(),
            direct,
            epsilon = 1e-11
        );
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(gev_quantile(bad, &gumbel()).is_err());
        }
    }

    #[test]
    fn inversion_round_trip() {
        for xi in [-0.4, 0.0, 0.4] {
            let p = GevParams::standard(xi);
            for i in 1..100 {
                let prob = i as f64 / 100.0;
                let q = gev_quantile(prob, &p).unwrap();
                assert!((gev_cdf(q, &p) - prob).abs() < 1e-10, "xi={xi} p={prob}");
            }
        }
    }

    #[test]
    fn continuity_at_zero_shape() {
        for i in 1..100 {
            let prob = i as f64 / 100.0;
            let q0 = gev_quantile(prob, &gumbel()).unwrap();
            for xi in [1e-8, -1e-8] {
                let q = gev_quantile(prob, &GevParams::standard(xi)).unwrap();
                assert!((q - q0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let s = RandomStream::new(11, 2);
        let p = GevParams::standard(-0.4);
        let a = gev_sample(&s, &p, 500).unwrap();
        let b = gev_sample(&s, &p, 500).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| v <= 2.5));
        assert!(gev_sample(&s, &p, 0).is_err());
    }

    #[test]
    fn gumbel_sample_mean() {
        let s = gev_sample(&RandomStream::new(2024, 0), &gumbel(), 1_000_000).unwrap();
        let mean = s.values().iter().sum::<f64>() / s.len() as f64;
        assert!((mean - EULER_GAMMA).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn pwm_theta_examples() {
        assert_abs_diff_eq!(gev_pwm_theta(1, &gumbel()).unwrap(), 0.577_216, epsilon = 1e-6);
        let d = gev_pwm_theta(2, &gumbel()).unwrap() - gev_pwm_theta(1, &gumbel()).unwrap();
        assert_abs_diff_eq!(d, std::f64::consts::LN_2, epsilon = 1e-15);
        let p = GevParams::standard(0.4);
        let t: Vec<f64> = [1, 2, 4].iter().map(|&j| gev_pwm_theta(j, &p).unwrap()).collect();
        assert_abs_diff_eq!((t[2] - t[1]) / (t[1] - t[0]), 1.319_507_910_772_894, epsilon = 1e-12);
        assert!(gev_pwm_theta(1, &GevParams::standard(1.0)).is_err());
        assert!(gev_pwm_theta(0, &gumbel()).is_err());
    }

    #[test]
    fn pwm_ratio_identity() {
        for xi in [-0.4, -0.1, 0.1, 0.4] {
            let p = GevParams::new(xi, 0.3, 1.7).unwrap();
            let t = |j| gev_pwm_theta(j, &p).unwrap();
            let ratio = (t(4) - t(2)) / (t(2) - t(1));
            assert!((ratio - 2f64.powf(xi)).abs() < 1e-12, "xi={xi}");
        }
    }

    #[test]
    fn pwm_theta_matches_max_law_mean() {
        for xi in [-0.3, 0.0, 0.25] {
            let p = GevParams::new(xi, -1.0, 2.0).unwrap();
            for j in 1..6 {
                let direct = gev_pwm_theta(j, &p).unwrap();
                let via_max = gev_pwm_theta(1, &p.max_of(j)).unwrap();
                assert_abs_diff_eq!(direct, via_max, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gev_variance_limits() {
        assert_abs_diff_eq!(gumbel().variance().unwrap(), PI * PI / 6.0, epsilon = 1e-15);
        // series branch and direct branch agree near the switch point
        let a = GevParams::standard(0.999e-3).variance().unwrap();
        let b = GevParams::standard(1.001e-3).variance().unwrap();
        assert!((a - b).abs() < 1e-5);
        let near = GevParams::standard(1e-7).variance().unwrap();
        assert!((near - PI * PI / 6.0).abs() < 1e-5);
        // Γ(0.2) - Γ(0.6)^2 over 0.16
        let g = crate::special::gamma;
        let expected = (g(0.2) - g(0.6).powi(2)) / 0.16;
        assert_abs_diff_eq!(GevParams::standard(0.4).variance().unwrap(), expected, epsilon = 1e-10);
        assert!(GevParams::standard(0.5).variance().is_err());
    }

    #[test]
    fn order_stat_oracle_examples() {
        let u = order_stat_oracle(&Law::Uniform01, 2, 3).unwrap();
        assert_abs_diff_eq!(u.mean, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(u.variance, 1.0 / 20.0, epsilon = 1e-15);
        let e = order_stat_oracle(&Law::Exponential1, 4, 4).unwrap();
        assert_abs_diff_eq!(e.mean, 25.0 / 12.0, epsilon = 1e-15);
        let u = order_stat_oracle(&Law::Uniform01, 1, 1).unwrap();
        assert_abs_diff_eq!(u.variance, 1.0 / 12.0, epsilon = 1e-15);
        assert!(order_stat_oracle(&Law::Normal { mean: 0.0, sd: 1.0 }, 1, 2).is_err());
        assert!(order_stat_oracle(&Law::Uniform01, 3, 2).is_err());
    }

    #[test]
    fn gumbel_oracle_matches_closed_forms() {
        // max of j Gumbels is Gumbel(ln j, 1)
        for m in 1..6 {
            let o = order_stat_oracle(&Law::Gumbel01, m, m).unwrap();
            assert_abs_diff_eq!(o.mean, EULER_GAMMA + (m as f64).ln(), epsilon = 1e-12);
            assert_abs_diff_eq!(o.variance, PI * PI / 6.0, epsilon = 1e-11);
        }
        // min of 2 Gumbels: E = γ - ln 2 ... via 2θ_1 - θ_2
        let o = order_stat_oracle(&Law::Gumbel01, 1, 2).unwrap();
        assert_abs_diff_eq!(o.mean, EULER_GAMMA - std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn gumbel_oracle_matches_monte_carlo() {
        let mut rng = RandomStream::new(5, 5).rng();
        let reps = 200_000;
        let (k, m) = (2usize, 4usize);
        let draws: Vec<f64> = (0..reps)
            .map(|_| {
                let mut xs: Vec<f64> = (0..m).map(|_| Law::Gumbel01.draw(&mut rng)).collect();
                xs.sort_by(f64::total_cmp);
                xs[k - 1]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let o = order_stat_oracle(&Law::Gumbel01, k as u32, m as u32).unwrap();
        let se = (o.variance / reps as f64).sqrt();
        assert!((mean - o.mean).abs() < 4.0 * se);
        assert!((var - o.variance).abs() < 0.02 * o.variance);
    }

    #[test]
    fn gev_order_stat_mean_consistency() {
        let p = GevParams::standard(0.2);
        for m in 1..5 {
            assert_abs_diff_eq!(
                gev_order_stat_mean(m, m, &p).unwrap(),
                gev_pwm_theta(m, &p).unwrap(),
                epsilon = 1e-12
            );
        }
        // Σ_k E X_(k:m) = m E X
        let total: f64 = (1..=4).map(|k| gev_order_stat_mean(k, 4, &p).unwrap()).sum();
        assert_abs_diff_eq!(total, 4.0 * gev_pwm_theta(1, &p).unwrap(), epsilon = 1e-11);
        assert_abs_diff_eq!(
            gev_order_stat_mean(3, 4, &p).unwrap(),
            4.0 * gev_pwm_theta(3, &p).unwrap() - 3.0 * gev_pwm_theta(4, &p).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn uniform_v1_hand_values() {
        // h(x) = (1 + x^2)/2 for the max of two: v_1 = 1/45
        assert_abs_diff_eq!(uniform_order_stat_v1(2, 2).unwrap(), 1.0 / 45.0, epsilon = 1e-12);
        // h(x) = x^2 - 2x^3/3 + 1/3 for the median of three: v_1 = 17/1260
        assert_abs_diff_eq!(uniform_order_stat_v1(2, 3).unwrap(), 17.0 / 1260.0, epsilon = 1e-12);
        assert_abs_diff_eq!(uniform_order_stat_v1(1, 1).unwrap(), 1.0 / 12.0, epsilon = 1e-15);
        // symmetry: X_(k:m) and 1 - X_(m-k+1:m) share v_1
        for m in 2..6 {
            for k in 1..=m {
                let a = uniform_order_stat_v1(k, m).unwrap();
                let b = uniform_order_stat_v1(m - k + 1, m).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                // Hoeffding ordering v_1 <= v_m / m
                let vm = order_stat_oracle(&Law::Uniform01, k, m).unwrap().variance;
                assert!(a <= vm / m as f64 + 1e-14);
            }
        }
    }

    #[test]
    fn contamination_counts_and_laws() {
        let scheme = ContaminationScheme::new(GevParams::standard(-0.4), 180, 20).unwrap();
        assert_eq!(
            scheme.outlier_law(),
            Law::Uniform {
                lo: 0.0,
                hi: 22.5
            }
        );
        let s = contaminate(&RandomStream::new(1, 1), &scheme, Placement::Shuffled);
        assert_eq!(s.len(), 200);
        assert_eq!(s.count(Provenance::Outlier), 20);
        let tags = s.tags().unwrap();
        for (v, t) in s.values().iter().zip(tags) {
            match t {
                Provenance::Inlier => assert!(*v <= 2.5),
                Provenance::Outlier => assert!((0.0..=22.5).contains(v)),
            }
        }

        let clean = ContaminationScheme::new(GevParams::standard(0.4), 50, 0).unwrap();
        let s = contaminate(&RandomStream::new(1, 2), &clean, Placement::Shuffled);
        assert_eq!(s.count(Provenance::Inlier), 50);

        let heavy = ContaminationScheme::new(GevParams::standard(0.4), 10, 3).unwrap();
        match heavy.outlier_law() {
            Law::Normal { mean, sd } => {
                let direct = ((-(1.0f64 - 1e-4).ln()).powf(-0.4) - 1.0) / 0.4;
                assert_abs_diff_eq!(mean, direct, epsilon = 1e-10);
                assert_eq!(sd, 1.0);
            }
            l => panic!("unexpected law {l:?}"),
        }
    }

    #[test]
    fn consecutive_placement_keeps_outliers_last() {
        let scheme = ContaminationScheme::new(GevParams::standard(0.0), 30, 5).unwrap();
        let s = contaminate(&RandomStream::new(3, 3), &scheme, Placement::Consecutive);
        let tags = s.tags().unwrap();
        assert!(tags[..30].iter().all(|&t| t == Provenance::Inlier));
        assert!(tags[30..].iter().all(|&t| t == Provenance::Outlier));
    }

    #[test]
    fn cna_sample_properties() {
        let pop: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let full = cna_sample(&RandomStream::new(9, 0), &pop, 10).unwrap();
        let mut sorted = full.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, pop);
        assert!(cna_sample(&RandomStream::new(9, 0), &pop, 11).is_err());
        let a = cna_sample(&RandomStream::new(9, 4), &pop, 5).unwrap();
        let b = cna_sample(&RandomStream::new(9, 4), &pop, 5).unwrap();
        assert_eq!(a, b);

        let reps = 100_000;
        let total: f64 = (0..reps)
            .map(|r| {
                let s = cna_sample(&RandomStream::new(77, r), &pop, 5).unwrap();
                s.values().iter().sum::<f64>() / 5.0
            })
            .sum();
        assert!((total / reps as f64 - 4.5).abs() < 0.03);
    }

    #[test]
    fn law_parsing() {
        assert_eq!(Law::parse("uniform01").unwrap(), Law::Uniform01);
        assert_eq!(Law::parse("gev:0.4").unwrap(), Law::Gev(GevParams::standard(0.4)));
        match Law::parse("population:3").unwrap() {
            Law::Population(p) => assert_eq!(&*p, &[1.0, 2.0, 3.0]),
            l => panic!("{l:?}"),
        }
        assert!(Law::parse("cauchy").is_err());
        assert!(Law::parse("population:0").is_err());
    }
}
