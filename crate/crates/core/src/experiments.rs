//! Monte Carlo experiments: the contamination grid comparing median-of-means
//! with full-sample estimates, and empirical coverage of the deviation radii.

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    finite_population_proxies, mom_radius, xi_radius, RadiusFlavor, Regime, VarianceProxies,
};
use crate::distributions::{
    cna_sample, contaminate, gev_order_stat_mean, gev_pwm_theta, gev_quantile, order_stat_oracle,
    uniform_order_stat_v1, ContaminationScheme, GevParams, Law, Placement,
};
use crate::error::{Error, Result};
use crate::estimators::{
    linear_combination_pwm, mom_estimate, mom_on_partition, partition_blocks, KernelSpec, MomConfig,
};
use crate::rng::RandomStream;
use crate::tail_index::{estimate_xi, GevFit, XiMethod};

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "theta_3_4")]
    Theta34,
    #[serde(rename = "theta_4_4")]
    Theta44,
    #[serde(rename = "xi")]
    Xi,
    #[serde(rename = "q95")]
    Q95,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Theta34, Target::Theta44, Target::Xi, Target::Q95];

    pub fn label(self) -> &'static str {
        match self {
            Target::Theta34 => "theta_3_4",
            Target::Theta44 => "theta_4_4",
            Target::Xi => "xi",
            Target::Q95 => "q95",
        }
    }

    /// Population value under GEV(ξ, 0, 1).
    pub fn truth(self, xi: f64) -> Result<f64> {
        let p = GevParams::standard(xi);
        match self {
            Target::Theta34 => gev_order_stat_mean(3, 4, &p),
            Target::Theta44 => gev_pwm_theta(4, &p),
            Target::Xi => Ok(xi),
            Target::Q95 => gev_quantile(0.95, &p),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown target {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MM")]
    MedianOfMeans,
    #[serde(rename = "LC")]
    LinearCombination,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::MedianOfMeans, Method::LinearCombination];

    pub fn label(self) -> &'static str {
        match self {
            Method::MedianOfMeans => "MM",
            Method::LinearCombination => "LC",
        }
    }

    fn xi_method(self) -> XiMethod {
        match self {
            Method::MedianOfMeans => XiMethod::Mom,
            Method::LinearCombination => XiMethod::LinearCombination,
        }
    }
}

/// The contamination grid: GEV(ξ, 0, 1) inliers plus `n_outliers` outliers, total size fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub xis: Vec<f64>,
    pub n_outliers: Vec<usize>,
    pub n_total: usize,
    pub reps: usize,
    pub delta: f64,
    pub master_seed: u64,
    pub targets: Vec<Target>,
    pub placement: Placement,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            xis: vec![-0.4, 0.0, 0.4],
            n_outliers: vec![0, 5, 15, 20],
            n_total: 200,
            reps: 1000,
            delta: 0.05,
            master_seed: 0,
            targets: Target::ALL.to_vec(),
            placement: Placement::Consecutive,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.xis.is_empty() || self.n_outliers.is_empty() || self.targets.is_empty() {
            return Err(Error::invalid("grid has an empty axis"));
        }
        if let Some(x) = self.xis.iter().find(|x| !(x.is_finite() && **x < 0.5)) {
            return Err(Error::invalid(format!("xi = {x} outside (-inf, 0.5)")));
        }
        let max_out = *self.n_outliers.iter().max().expect("non-empty");
        if self.n_total <= max_out {
            return Err(Error::invalid(format!(
                "n_total = {} must exceed the largest outlier count {max_out}",
                self.n_total
            )));
        }
        MomConfig::new(self.delta)?.validate(self.n_total, 4)
    }

    pub fn cells(&self) -> usize {
        self.xis.len() * self.n_outliers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// θ̂ gaps not positive, or ξ̂ >= 1 so no GEV matches the PWMs.
    NonIdentifiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Row {
    pub target: Target,
    pub method: Method,
    pub xi_true: f64,
    pub n_outliers: usize,
    pub rep: usize,
    pub estimate: Option<f64>,
    pub status: RowStatus,
}

/// Boxplot statistics of one (target, method, ξ, n_O) cell over its valid rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub target: Target,
    pub method: Method,
    pub xi_true: f64,
    pub n_outliers: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub lo_whisker: Option<f64>,
    pub hi_whisker: Option<f64>,
    pub n_valid: usize,
    pub n_noniden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Result {
    pub config: ExperimentGrid,
    pub rows: Vec<Figure1Row>,
    pub summaries: Vec<CellSummary>,
    pub software_version: String,
    pub master_seed: u64,
}

/// Quantile with linear interpolation between order statistics (type 7).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median, quartiles and Tukey whiskers (extreme points within 1.5 IQR).
pub fn boxplot_stats(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let q1 = quantile_type7(&s, 0.25);
    let med = quantile_type7(&s, 0.5);
    let q3 = quantile_type7(&s, 0.75);
    let iqr = q3 - q1;
    let lo = *s.iter().find(|&&x| x >= q1 - 1.5 * iqr).expect("q1 lies inside the data");
    let hi = *s.iter().rev().find(|&&x| x <= q3 + 1.5 * iqr).expect("q3 lies inside the data");
    Some([med, q1, q3, lo, hi])
}

fn scheme_stream(master_seed: u64, xi: f64, n_out: usize, rep: usize) -> RandomStream {
    RandomStream::derive(master_seed, &[xi.to_bits(), n_out as u64, rep as u64])
}

/// Draw of one replicate; identical for every target and method.
pub fn figure1_sample(grid: &ExperimentGrid, xi: f64, n_out: usize, rep: usize) -> Result<Vec<f64>> {
    let scheme = ContaminationScheme::new(GevParams::standard(xi), grid.n_total - n_out, n_out)?;
    let stream = scheme_stream(grid.master_seed, xi, n_out, rep);
    Ok(contaminate(&stream, &scheme, grid.placement).into_values())
}

fn estimate_target(values: &[f64], target: Target, method: Method, cfg: &MomConfig) -> Result<Option<f64>> {
    let theta = |k: usize| -> Result<f64> {
        match method {
            Method::LinearCombination => linear_combination_pwm(values, k, 4),
            Method::MedianOfMeans => {
                let partition = partition_blocks(values.len(), 4, cfg)?;
                Ok(mom_on_partition(values, &KernelSpec::order_statistic(k, 4)?, &partition)?.0)
            }
        }
    };
    let xi_est = || match estimate_xi(values, cfg.delta, method.xi_method()) {
        Ok(e) => Ok(Some(e)),
        Err(Error::NonIdentifiable { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(match target {
        Target::Theta34 => Some(theta(3)?),
        Target::Theta44 => Some(theta(4)?),
        Target::Xi => xi_est()?.map(|e| e.xi_hat),
        Target::Q95 => match xi_est()? {
            Some(e) if e.xi_hat < 1.0 => Some(GevFit::from_estimate(e)?.quantile(0.95)?),
            _ => None,
        },
    })
}

/// Every (target, method, ξ, n_O, rep) estimate plus per-cell boxplot summaries.
///
/// Work items run on the current rayon pool; output order depends only on the grid.
pub fn run_figure1(grid: &ExperimentGrid) -> Result<Figure1Result> {
    grid.validate()?;
    let cfg = MomConfig::new(grid.delta)?;
    let items: Vec<(usize, usize, usize)> = (0..grid.xis.len())
        .flat_map(|x| (0..grid.n_outliers.len()).flat_map(move |o| (0..grid.reps).map(move |r| (x, o, r))))
        .collect();
    let per_item: Vec<Vec<Figure1Row>> = items
        .par_iter()
        .map(|&(x, o, rep)| {
            let (xi, n_out) = (grid.xis[x], grid.n_outliers[o]);
            let values = figure1_sample(grid, xi, n_out, rep)?;
            let mut rows = Vec::with_capacity(grid.targets.len() * 2);
            for &target in &grid.targets {
                for method in Method::ALL {
                    let estimate = estimate_target(&values, target, method, &cfg)?;
                    rows.push(Figure1Row {
                        target,
                        method,
                        xi_true: xi,
                        n_outliers: n_out,
                        rep,
                        estimate,
                        status: if estimate.is_some() { RowStatus::Ok } else { RowStatus::NonIdentifiable },
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<Figure1Row> = per_item.into_iter().flatten().collect();
    let target_pos = |t: Target| grid.targets.iter().position(|&u| u == t).unwrap_or(usize::MAX);
    let xi_pos = |xi: f64| grid.xis.iter().position(|&u| u == xi).unwrap_or(usize::MAX);
    let out_pos = |n: usize| grid.n_outliers.iter().position(|&u| u == n).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (target_pos(r.target), r.method, xi_pos(r.xi_true), out_pos(r.n_outliers), r.rep));

    let summaries = rows
        .chunk_by(|a, b| {
            (a.target, a.method, a.xi_true.to_bits(), a.n_outliers)
                == (b.target, b.method, b.xi_true.to_bits(), b.n_outliers)
        })
        .map(|cell| {
            let valid: Vec<f64> = cell.iter().filter_map(|r| r.estimate).collect();
            let stats = boxplot_stats(&valid);
            let pick = |i: usize| stats.map(|s| s[i]);
            CellSummary {
                target: cell[0].target,
                method: cell[0].method,
                xi_true: cell[0].xi_true,
                n_outliers: cell[0].n_outliers,
                median: pick(0),
                q1: pick(1),
                q3: pick(2),
                lo_whisker: pick(3),
                hi_whisker: pick(4),
                n_valid: valid.len(),
                n_noniden: cell.len() - valid.len(),
            }
        })
        .collect();

    Ok(Figure1Result {
        config: grid.clone(),
        rows,
        summaries,
        software_version: SOFTWARE_VERSION.to_string(),
        master_seed: grid.master_seed,
    })
}

impl Figure1Result {
    pub fn summary(&self, target: Target, method: Method, xi: f64, n_out: usize) -> Option<&CellSummary> {
        self.summaries
            .iter()
            .find(|s| s.target == target && s.method == method && s.xi_true == xi && s.n_outliers == n_out)
    }

    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.rows)
    }

    pub fn write_summaries_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.summaries)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

fn write_csv<W: Write, T: Serialize>(w: W, items: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for it in items {
        wtr.serialize(it)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposition {
    /// Clean i.i.d. sample, sub-Gaussian radius, budget δ.
    P1Subgaussian,
    /// Clean i.i.d. sample, sub-gamma radius, budget δ.
    P1Subgamma,
    /// ⌊K/4⌋ blocks overwritten with a huge constant, contaminated radius, budget δ.
    P2,
    /// Tail index on GEV samples, oracle radius, budget 3δ.
    P3Xi,
    /// Sampling without replacement from a finite population, budget 2δ.
    P4Cna,
}

impl Proposition {
    pub fn label(self) -> &'static str {
        match self {
            Proposition::P1Subgaussian => "p1_subgaussian",
            Proposition::P1Subgamma => "p1_subgamma",
            Proposition::P2 => "p2",
            Proposition::P3Xi => "p3_xi",
            Proposition::P4Cna => "p4_cna",
        }
    }

    /// Multiple of δ allowed as failure probability.
    pub fn budget_multiplier(self) -> f64 {
        match self {
            Proposition::P3Xi => 3.0,
            Proposition::P4Cna => 2.0,
            _ => 1.0,
        }
    }

    /// Stream family: runs on i.i.d. draws share their samples.
    fn code(self) -> u64 {
        match self {
            Proposition::P1Subgaussian | Proposition::P1Subgamma | Proposition::P2 => 1,
            Proposition::P3Xi => 2,
            Proposition::P4Cna => 3,
        }
    }
}

impl FromStr for Proposition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Proposition::P1Subgaussian,
            Proposition::P1Subgamma,
            Proposition::P2,
            Proposition::P3Xi,
            Proposition::P4Cna,
        ]
        .into_iter()
        .find(|p| p.label() == s || (s == "p2_clean_contaminated" && *p == Proposition::P2))
        .ok_or_else(|| Error::invalid(format!("unknown proposition {s:?}")))
    }
}

/// Inputs of a coverage run. `k` and `m` select the kernel Ψ_k of arity m
/// (ignored by the tail-index run, which always uses j = 1, 2, 4).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageSpec {
    pub proposition: Proposition,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub q: usize,
    pub delta: f64,
    pub law: Law,
    pub reps: usize,
    pub seed: u64,
    /// Radius used by p2 and p4; p1 fixes it by name and p3 has its own.
    pub flavor: RadiusFlavor,
    /// Contaminated radius for p3.
    pub regime: Regime,
    /// Overwritten values in p2 are `corruption_factor` × max |x| of the clean sample.
    pub corruption_factor: f64,
}

impl CoverageSpec {
    pub fn new(proposition: Proposition, n: usize, m: usize, k: usize, delta: f64, law: Law, reps: usize, seed: u64) -> Self {
        Self {
            proposition,
            n,
            m,
            k,
            q: 1,
            delta,
            law,
            reps,
            seed,
            flavor: match proposition {
                Proposition::P1Subgamma => RadiusFlavor::SubGamma,
                _ => RadiusFlavor::SubGaussian,
            },
            regime: Regime::Clean,
            corruption_factor: 1e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageResult {
    pub proposition: Proposition,
    pub empirical_failure_rate: f64,
    pub failures: usize,
    pub reps: usize,
    pub nominal_delta: f64,
    /// δ, 2δ or 3δ.
    pub budget: f64,
    /// budget + 3 √(budget / reps).
    pub threshold: f64,
    /// The radius (median over replications for p3, where it is data-dependent).
    pub radius_used: f64,
    pub regime: Regime,
    pub truth: f64,
    /// Replications where ξ̂ was not identifiable (counted as failures).
    pub n_noniden: usize,
    /// Blocks overwritten per replication (p2).
    pub corrupted_blocks: usize,
}

impl CoverageResult {
    pub fn within_budget(&self) -> bool {
        self.empirical_failure_rate <= self.threshold
    }
}

/// Closed-form v_1..v_m for Ψ_k under `law`, when they are known.
///
/// v_m comes from the order-statistic oracle and v_1 from the uniform formula;
/// intermediate v_j are set to their ceiling j·v_m/m, which only matters for
/// degenerate radii.
fn closed_form_proxies(law: &Law, k: usize, m: usize) -> Result<VarianceProxies> {
    let v_m = order_stat_oracle(law, k as u32, m as u32)?.variance;
    let v_1 = match law {
        Law::Uniform01 => uniform_order_stat_v1(k as u32, m as u32)?,
        _ if m == 1 => v_m,
        _ => {
            return Err(Error::invalid(format!(
                "no closed-form v_1 for {law:?} with m = {m}; supply estimated proxies"
            )))
        }
    };
    let mut v: Vec<f64> = (1..=m).map(|j| j as f64 * v_m / m as f64).collect();
    v[0] = v_1;
    v[m - 1] = v_m;
    VarianceProxies::closed_form(v)
}

fn coverage_stream(spec: &CoverageSpec, rep: usize) -> RandomStream {
    RandomStream::derive(spec.seed, &[spec.proposition.code(), spec.n as u64, spec.delta.to_bits(), rep as u64])
}

/// Run `spec.reps` independent replications and count |estimate - truth| > radius.
pub fn run_coverage(spec: &CoverageSpec) -> Result<CoverageResult> {
    if spec.reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let budget = spec.proposition.budget_multiplier() * spec.delta;
    let finish = |failures: usize, radius: f64, regime: Regime, truth: f64, n_noniden: usize, corrupted: usize| {
        let rate = failures as f64 / spec.reps as f64;
        CoverageResult {
            proposition: spec.proposition,
            empirical_failure_rate: rate,
            failures,
            reps: spec.reps,
            nominal_delta: spec.delta,
            budget,
            threshold: budget + 3.0 * (budget / spec.reps as f64).sqrt(),
            radius_used: radius,
            regime,
            truth,
            n_noniden,
            corrupted_blocks: corrupted,
        }
    };

    match spec.proposition {
        Proposition::P1Subgaussian | Proposition::P1Subgamma | Proposition::P2 => {
            let kernel = KernelSpec::order_statistic(spec.k, spec.m)?;
            let truth = order_stat_oracle(&spec.law, spec.k as u32, spec.m as u32)?.mean;
            let proxies = closed_form_proxies(&spec.law, spec.k, spec.m)?;
            let (regime, flavor) = match spec.proposition {
                Proposition::P1Subgaussian => (Regime::Clean, RadiusFlavor::SubGaussian),
                Proposition::P1Subgamma => (Regime::Clean, RadiusFlavor::SubGamma),
                _ => (Regime::Contaminated, spec.flavor),
            };
            let radius = mom_radius(spec.n, spec.m, spec.q, spec.delta, &proxies, regime, flavor)?;
            let cfg = MomConfig::new(spec.delta)?;
            let corrupted = if spec.proposition == Proposition::P2 { cfg.blocks / 4 } else { 0 };
            let partition = partition_blocks(spec.n, spec.m, &cfg)?;
            let misses: Vec<bool> = (0..spec.reps)
                .into_par_iter()
                .map(|rep| {
                    let mut values = spec.law.sample(&coverage_stream(spec, rep), spec.n)?.into_values();
                    if corrupted > 0 {
                        let scale = values.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
                        for block in &partition.blocks()[..corrupted] {
                            for &i in block {
                                values[i] = spec.corruption_factor * scale;
                            }
                        }
                    }
                    let est = mom_estimate(&values, &kernel, &cfg)?.point;
                    Ok((est - truth).abs() > radius)
                })
                .collect::<Result<_>>()?;
            let failures = misses.iter().filter(|&&b| b).count();
            Ok(finish(failures, radius, regime, truth, 0, corrupted))
        }
        Proposition::P3Xi => {
            let Law::Gev(params) = &spec.law else {
                return Err(Error::invalid("tail-index coverage needs a GEV law"));
            };
            let truth = params.xi;
            let v_max = [1u32, 2, 4]
                .iter()
                .map(|&j| params.max_of(j).variance())
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            let outcomes: Vec<(bool, Option<f64>)> = (0..spec.reps)
                .into_par_iter()
                .map(|rep| {
                    let values = spec.law.sample(&coverage_stream(spec, rep), spec.n)?.into_values();
                    match estimate_xi(&values, spec.delta, XiMethod::Mom) {
                        Ok(est) => {
                            let t = est.theta_hats;
                            let r = xi_radius(
                                spec.n,
                                spec.delta,
                                v_max,
                                est.xi_hat,
                                t.theta1,
                                t.theta2,
                                t.theta4,
                                Some(truth),
                                spec.regime,
                            )?;
                            let radius = r.oracle.expect("true xi supplied");
                            Ok(((est.xi_hat - truth).abs() >= radius, Some(radius)))
                        }
                        Err(Error::NonIdentifiable { .. }) => Ok((true, None)),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?;
            let failures = outcomes.iter().filter(|o| o.0).count();
            let n_noniden = outcomes.iter().filter(|o| o.1.is_none()).count();
            let mut radii: Vec<f64> = outcomes.iter().filter_map(|o| o.1).collect();
            radii.sort_unstable_by(f64::total_cmp);
            let radius = if radii.is_empty() { f64::NAN } else { quantile_type7(&radii, 0.5) };
            Ok(finish(failures, radius, spec.regime, truth, n_noniden, 0))
        }
        Proposition::P4Cna => {
            let Law::Population(pop) = &spec.law else {
                return Err(Error::invalid("CNA coverage needs a finite population"));
            };
            if spec.k != spec.m {
                return Err(Error::invalid("CNA coverage uses the non-decreasing kernel max (k = m)"));
            }
            let kernel = KernelSpec::order_statistic(spec.k, spec.m)?;
            let (truth, proxies) = finite_population_proxies(pop, &kernel)?;
            let radius = mom_radius(spec.n, spec.m, 1, spec.delta, &proxies, Regime::Clean, spec.flavor)?;
            let cfg = MomConfig::new(spec.delta)?;
            let pop: Arc<[f64]> = pop.clone();
            let misses: Vec<bool> = (0..spec.reps)
                .into_par_iter()
                .map(|rep| {
                    let s = cna_sample(&coverage_stream(spec, rep), &pop, spec.n)?;
                    let est = mom_estimate(s.values(), &kernel, &cfg)?.point;
                    Ok((est - truth).abs() > radius)
                })
                .collect::<Result<_>>()?;
            let failures = misses.iter().filter(|&&b| b).count();
            Ok(finish(failures, radius, Regime::Clean, truth, 0, 0))
        }
    }
}
