//! Variance bounds, median-of-means deviation radii and variance-proxy estimation.
//!
//! Throughout, `L` stands for ⌈ln(1/δ)⌉, the block count used by the estimator.

use std::f64::consts::{E, LN_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::Law;
use crate::error::{Error, Result};
use crate::estimators::{blocks_for_delta, KernelSpec};
use crate::rng::RandomStream;
use crate::special::{binomial, ln_binomial};

/// Whether the sample may contain up to K/4 adversarial points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    Clean,
    Contaminated,
}

impl Regime {
    /// Leading constant of the radius: 2e clean, 16e²/(3√3) contaminated.
    pub fn constant(self) -> f64 {
        match self {
            Regime::Clean => 2.0 * E,
            Regime::Contaminated => 16.0 * E * E / (3.0 * 3f64.sqrt()),
        }
    }
}

/// Ratio between the contaminated and clean radii, 8e/(3√3).
pub fn contamination_factor() -> f64 {
    8.0 * E / (3.0 * 3f64.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusFlavor {
    SubGaussian,
    SubGamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProxySource {
    ClosedForm,
    MonteCarlo {
        reps: usize,
        inner_reps: usize,
        master_seed: u64,
        stream_index: u64,
    },
}

/// v_k = var(E[Ψ(X_1..X_m) | X_1..X_k]) for k = 1..=m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProxies {
    v: Vec<f64>,
    /// Monte Carlo standard errors, when estimated.
    std_errors: Option<Vec<f64>>,
    source: ProxySource,
    /// 1-based indices whose raw estimate was negative and clamped to zero.
    clamped: Vec<usize>,
}

impl VarianceProxies {
    /// Known values v_1..v_m.
    pub fn closed_form(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::invalid("need at least one variance proxy"));
        }
        if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::invalid(format!("variance proxies must be finite and >= 0, got {x}")));
        }
        Ok(Self {
            v,
            std_errors: None,
            source: ProxySource::ClosedForm,
            clamped: Vec::new(),
        })
    }

    /// v_1 = … = v_m = v; only consistent with the ordering when m = 1.
    pub fn flat(m: usize, v: f64) -> Result<Self> {
        Self::closed_form(vec![v; m])
    }

    pub fn m(&self) -> usize {
        self.v.len()
    }

    /// v_k, 1-based.
    pub fn get(&self, k: usize) -> f64 {
        self.v[k - 1]
    }

    pub fn v_m(&self) -> f64 {
        *self.v.last().expect("non-empty")
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn std_errors(&self) -> Option<&[f64]> {
        self.std_errors.as_deref()
    }

    pub fn source(&self) -> &ProxySource {
        &self.source
    }

    pub fn clamped(&self) -> &[usize] {
        &self.clamped
    }

    /// Check v_k/k <= v_l/l for k <= l, allowing `slack` standard errors when estimated.
    pub fn hoeffding_ordered(&self, slack: f64) -> bool {
        let se = |k: usize| self.std_errors.as_ref().map_or(0.0, |s| s[k - 1]);
        (1..=self.m()).all(|k| {
            (k..=self.m()).all(|l| {
                let gap = self.get(k) / k as f64 - self.get(l) / l as f64;
                gap <= slack * (se(k) / k as f64 + se(l) / l as f64) + 1e-15
            })
        })
    }
}

fn check_indices(n: usize, m: usize, q: usize) -> Result<()> {
    if q == 0 || q > m || m > n {
        return Err(Error::invalid(format!("need 1 <= q <= m <= n, got q = {q}, m = {m}, n = {n}")));
    }
    Ok(())
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::invalid(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(())
}

/// C(m-1, q-1) m^q v_m / n^q.
pub fn variance_bound_general(n: usize, m: usize, q: usize, v_m: f64) -> Result<f64> {
    check_indices(n, m, q)?;
    check_positive("v_m", v_m)?;
    let (mf, nf, qf) = (m as f64, n as f64, q as f64);
    Ok(binomial(m as u64 - 1, q as u64 - 1) * (mf / nf).powf(qf) * v_m)
}

/// C(m, q) m^q v_q / n^q + C(m-1, q) m^(q+1) v_m / n^(q+1).
pub fn variance_bound_split(n: usize, m: usize, q: usize, v_q: f64, v_m: f64) -> Result<f64> {
    check_indices(n, m, q)?;
    check_positive("v_q", v_q)?;
    check_positive("v_m", v_m)?;
    let (mf, nf, qf) = (m as f64, n as f64, q as f64);
    let ratio = mf / nf;
    Ok(binomial(m as u64, q as u64) * ratio.powf(qf) * v_q
        + binomial(m as u64 - 1, q as u64) * ratio.powf(qf + 1.0) * v_m)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// ⌈ln(1/δ)⌉ after checking δ ∈ [e^-⌊n/m⌋, 1).
fn blocks_in_range(n: usize, m: usize, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let blocks = blocks_for_delta(delta);
    let max_blocks = n / m.max(1);
    if blocks > max_blocks {
        return Err(Error::DeltaOutOfRange {
            delta,
            blocks,
            max_blocks,
        });
    }
    Ok(blocks)
}

/// Half-width t such that the median-of-means estimate is within t of θ
/// with probability at least 1 - δ.
///
/// Sub-Gaussian: c √(C(m-1,q-1) (2m)^q v_m L^q / n^q).
/// Sub-gamma: c √(C(m,q) (2m)^q v_q L^q / n^q + C(m-1,q) (2m)^(q+1) v_m L^(q+1) / n^(q+1)),
/// except for q = 1 where the second term is 4 m³ v_m L² / n².
pub fn mom_radius(
    n: usize,
    m: usize,
    q: usize,
    delta: f64,
    proxies: &VarianceProxies,
    regime: Regime,
    flavor: RadiusFlavor,
) -> Result<f64> {
    check_indices(n, m, q)?;
    if proxies.m() != m {
        return Err(Error::invalid(format!("expected {m} variance proxies, got {}", proxies.m())));
    }
    let l = blocks_in_range(n, m, delta)? as f64;
    let (mf, nf, qf) = (m as f64, n as f64, q as f64);
    let ln_2m = (2.0 * mf).ln();
    let ln_ratio = (l / nf).ln();
    let ln_var = match flavor {
        RadiusFlavor::SubGaussian => {
            ln_binomial(m as u64 - 1, q as u64 - 1) + qf * (ln_2m + ln_ratio) + proxies.v_m().ln()
        }
        RadiusFlavor::SubGamma => {
            let first = ln_binomial(m as u64, q as u64) + qf * (ln_2m + ln_ratio) + proxies.get(q).ln();
            let second = if q == 1 {
                4f64.ln() + 3.0 * mf.ln() + 2.0 * ln_ratio + proxies.v_m().ln()
            } else {
                ln_binomial(m as u64 - 1, q as u64) + (qf + 1.0) * (ln_2m + ln_ratio) + proxies.v_m().ln()
            };
            log_sum_exp(first, second)
        }
    };
    Ok(regime.constant() * (0.5 * ln_var).exp())
}

/// Both radii for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub t1: f64,
    pub t2: f64,
    pub regime: Regime,
    pub constant: f64,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub delta: f64,
    pub blocks: usize,
    pub proxies: VarianceProxies,
}

impl BoundReport {
    pub fn best(&self) -> f64 {
        self.t1.min(self.t2)
    }
}

pub fn bound_report(
    n: usize,
    m: usize,
    q: usize,
    delta: f64,
    proxies: &VarianceProxies,
    regime: Regime,
) -> Result<BoundReport> {
    let t1 = mom_radius(n, m, q, delta, proxies, regime, RadiusFlavor::SubGaussian)?;
    let t2 = mom_radius(n, m, q, delta, proxies, regime, RadiusFlavor::SubGamma)?;
    Ok(BoundReport {
        t1,
        t2,
        regime,
        constant: regime.constant(),
        n,
        m,
        q,
        delta,
        blocks: blocks_for_delta(delta),
        proxies: proxies.clone(),
    })
}

/// Deviation width of the δ-free estimator: 4e √(2 m v* (1 + ln(1/(1-e^-1)) + ln(1/δ)) / n).
pub fn adaptive_radius(n: usize, m: usize, v_star_m: f64, delta: f64) -> Result<f64> {
    check_indices(n, m, 1)?;
    check_positive("v_star_m", v_star_m)?;
    let floor = (-((n / m) as f64)).exp() / (1.0 - (-1f64).exp());
    if !(delta >= floor && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in [{floor:e}, 1), got {delta}")));
    }
    let log_term = 1.0 - (1.0 - (-1f64).exp()).ln() - delta.ln();
    Ok(4.0 * E * (2.0 * m as f64 * v_star_m * log_term / n as f64).sqrt())
}

/// Tail-index radius at confidence 1 - 3δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XiRadius {
    /// Radius with the true ξ in the leading factor, when supplied.
    pub oracle: Option<f64>,
    /// Radius with ξ̂ substituted for ξ.
    pub plug_in: f64,
    pub confidence: f64,
}

/// c (2^ξ + 1)(2^-ξ̂ + 2^-ξ) / (ln 2 · (θ̂2 - θ̂1)) · √(8 v_max L / n).
#[allow(clippy::too_many_arguments)]
pub fn xi_radius(
    n: usize,
    delta: f64,
    v_max: f64,
    xi_hat: f64,
    theta1_hat: f64,
    theta2_hat: f64,
    theta4_hat: f64,
    xi_true: Option<f64>,
    regime: Regime,
) -> Result<XiRadius> {
    check_positive("v_max", v_max)?;
    if !xi_hat.is_finite() {
        return Err(Error::invalid("xi_hat must be finite"));
    }
    let spread = theta2_hat - theta1_hat;
    if !(spread > 0.0) {
        return Err(Error::NonIdentifiable {
            theta1: theta1_hat,
            theta2: theta2_hat,
            theta4: theta4_hat,
            ratio: (spread != 0.0).then(|| (theta4_hat - theta2_hat) / spread),
        });
    }
    let l = blocks_in_range(n, 4, delta)? as f64;
    let base = regime.constant() / (LN_2 * spread) * (8.0 * v_max * l / n as f64).sqrt();
    let radius = |xi: f64| (xi.exp2() + 1.0) * ((-xi_hat).exp2() + (-xi).exp2()) * base;
    Ok(XiRadius {
        oracle: xi_true.map(radius),
        plug_in: radius(xi_hat),
        confidence: 1.0 - 3.0 * delta,
    })
}

/// ln of (p/a)^(aK) ((1-p)/(1-a))^((1-a)K).
pub fn ln_bernoulli_tail(k: u64, a: f64, p: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("need 0 < a < 1 and 0 < p < 1, got a = {a}, p = {p}")));
    }
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let kf = k as f64;
    Ok(kf * (a * (p.ln() - a.ln()) + (1.0 - a) * ((-p).ln_1p() - (-a).ln_1p())))
}

/// Chernoff bound on P(Y_1 + … + Y_K >= aK) for independent Bernoulli(p') with p' <= p.
pub fn bernoulli_tail(k: u64, a: f64, p: f64) -> Result<f64> {
    ln_bernoulli_tail(k, a, p).map(f64::exp)
}

/// var(U_n) = Σ_c C(m,c) C(n-m, m-c) / C(n,m) · v_c.
pub fn exact_u_statistic_variance(n: usize, proxies: &VarianceProxies) -> Result<f64> {
    let m = proxies.m();
    if m > n {
        return Err(Error::InsufficientSample { n, required: m });
    }
    let ln_total = ln_binomial(n as u64, m as u64);
    Ok((1..=m)
        .filter(|&c| n - m >= m - c)
        .map(|c| {
            let w = ln_binomial(m as u64, c as u64) + ln_binomial((n - m) as u64, (m - c) as u64) - ln_total;
            w.exp() * proxies.get(c)
        })
        .sum())
}

fn sample_mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Per outer draw: mean of the inner kernel values and their sample variance.
fn nested_cell(law: &Law, kernel: &KernelSpec, k: usize, inner_reps: usize, stream: &RandomStream) -> (f64, f64) {
    let m = kernel.arity();
    let mut rng = stream.rng();
    let prefix: Vec<f64> = (0..k).map(|_| law.draw(&mut rng)).collect();
    let mut buf = vec![0.0; m];
    let vals: Vec<f64> = (0..inner_reps)
        .map(|_| {
            buf[..k].copy_from_slice(&prefix);
            for slot in &mut buf[k..] {
                *slot = law.draw(&mut rng);
            }
            kernel.evaluate_in_place(&mut buf)
        })
        .collect();
    sample_mean_var(&vals)
}

/// Monte Carlo estimate of v_1..v_m under `law`.
///
/// v_m is the sample variance of Ψ over `reps` fresh m-tuples. For k < m each of
/// `reps` outer draws fixes X_1..X_k and averages Ψ over `inner_reps`
/// completions; the variance of those averages minus the mean within-cell
/// variance over `inner_reps` estimates v_k. Negative estimates are clamped to
/// zero with a warning.
pub fn estimate_variance_proxies(
    law: &Law,
    kernel: &KernelSpec,
    reps: usize,
    inner_reps: usize,
    stream: &RandomStream,
) -> Result<VarianceProxies> {
    if reps < 2 || inner_reps < 2 {
        return Err(Error::invalid(format!(
            "need reps >= 2 and inner_reps >= 2, got {reps} and {inner_reps}"
        )));
    }
    let m = kernel.arity();
    let mut v = Vec::with_capacity(m);
    let mut se = Vec::with_capacity(m);
    let mut clamped = Vec::new();
    for k in 1..=m {
        let level = stream.child(k as u64);
        let (est, err) = if k == m {
            let psi: Vec<f64> = (0..reps as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = level.child(r).rng();
                    let mut buf: Vec<f64> = (0..m).map(|_| law.draw(&mut rng)).collect();
                    kernel.evaluate_in_place(&mut buf)
                })
                .collect();
            let (mean, var) = sample_mean_var(&psi);
            let sq: Vec<f64> = psi.iter().map(|x| (x - mean).powi(2)).collect();
            (var, (sample_mean_var(&sq).1 / reps as f64).sqrt())
        } else {
            let cells: Vec<(f64, f64)> = (0..reps as u64)
                .into_par_iter()
                .map(|r| nested_cell(law, kernel, k, inner_reps, &level.child(r)))
                .collect();
            let means: Vec<f64> = cells.iter().map(|c| c.0).collect();
            let (grand, between) = sample_mean_var(&means);
            let within = cells.iter().map(|c| c.1).sum::<f64>() / reps as f64;
            let terms: Vec<f64> = cells
                .iter()
                .map(|(a, s2)| (a - grand).powi(2) - s2 / inner_reps as f64)
                .collect();
            (between - within / inner_reps as f64, (sample_mean_var(&terms).1 / reps as f64).sqrt())
        };
        if est < 0.0 {
            log::warn!("variance proxy v_{k} estimated at {est:e}, clamped to 0");
            clamped.push(k);
        }
        v.push(est.max(0.0));
        se.push(err);
    }
    Ok(VarianceProxies {
        v,
        std_errors: Some(se),
        source: ProxySource::MonteCarlo {
            reps,
            inner_reps,
            master_seed: stream.master_seed,
            stream_index: stream.stream_index,
        },
        clamped,
    })
}

/// Exact v_1, v_m for drawing m distinct units from a finite population (m <= 2).
///
/// v_2 is the variance of Ψ over unordered pairs; v_1 is the variance over
/// units i of the mean of Ψ(x_i, x_j) over j ≠ i.
pub fn finite_population_proxies(population: &[f64], kernel: &KernelSpec) -> Result<(f64, VarianceProxies)> {
    let n = population.len();
    let m = kernel.arity();
    if m > 2 {
        return Err(Error::invalid("exact finite-population proxies are implemented for m <= 2"));
    }
    if n < 2 * m {
        return Err(Error::InsufficientSample { n, required: 2 * m });
    }
    if m == 1 {
        let vals: Vec<f64> = population.iter().map(|&x| kernel.evaluate(&[x])).collect();
        let (mean, _) = sample_mean_var(&vals);
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        return Ok((mean, VarianceProxies::closed_form(vec![var])?));
    }
    let mut row_sums = vec![0.0; n];
    let (mut total, mut total_sq) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let psi = kernel.evaluate(&[population[i], population[j]]);
            row_sums[i] += psi;
            row_sums[j] += psi;
            total += psi;
            total_sq += psi * psi;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let theta = total / pairs;
    let v2 = (total_sq / pairs - theta * theta).max(0.0);
    let v1 = row_sums
        .iter()
        .map(|s| (s / (n - 1) as f64 - theta).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok((theta, VarianceProxies::closed_form(vec![v1, v2])?))
}
