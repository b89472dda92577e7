//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use robust_pwm::bounds::{variance_bound_general, variance_bound_split};
use robust_pwm::distributions::{order_stat_oracle, uniform_order_stat_v1, GevParams, Law};
use robust_pwm::estimators::{
    linear_combination_pwm, mom_estimate, naive_u_statistic, partition_blocks, pwm_weight_numerators, KernelSpec,
    MomConfig, PartitionStrategy,
};
use robust_pwm::experiments::{
    run_coverage, run_figure1, CoverageResult, CoverageSpec, ExperimentGrid, Figure1Result, Method, Proposition,
    Target,
};
use robust_pwm::special::binomial_exact;
use robust_pwm::tail_index::ThetaHats;
use robust_pwm::{RandomStream, Result};

const ORACLE_TOL: f64 = 1e-10;
const IDENTITY_TOL: f64 = 1e-12;
const COVERAGE_REPS: usize = 10_000;
const XI_COVERAGE_REPS: usize = 5_000;
const LEMMA_REPS: usize = 100_000;
/// One-sided allowance on a Monte Carlo variance: 3 standard errors of a
/// sample variance, √(2 / (reps - 1)) in relative terms.
const LEMMA_MC_SIGMAS: f64 = 3.0;
const FIGURE_REPS: usize = 1000;
const FIGURE_SEED: u64 = 20_240_601;
const BREAKDOWN_TRIALS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn ok(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Harness {
    failed: Vec<usize>,
}

impl Harness {
    fn run(&mut self, id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Result<Outcome>) {
        let start = Instant::now();
        let out = f().unwrap_or_else(|e| ok(false, format!("error: {e}")));
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = out.pass && in_time;
        if !pass {
            self.failed.push(id);
        }
        let timing = if in_time {
            format!("{:.1}s", took.as_secs_f64())
        } else {
            format!("{:.1}s over limit {}s", took.as_secs_f64(), limit.as_secs())
        };
        println!(
            "{} criterion {id:>2} {name}: {} [{timing}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
}

fn oracle_equivalence() -> Result<Outcome> {
    let mut rng = RandomStream::new(1, 0).rng();
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    for n in 1..=8 {
        for m in 1..=n {
            for k in 1..=m {
                let kernel = KernelSpec::order_statistic(k, m)?;
                for _ in 0..50 {
                    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
                    let a = linear_combination_pwm(&xs, k, m)?;
                    let b = naive_u_statistic(&xs, &kernel)?;
                    worst = worst.max((a - b).abs());
                    cases += 1;
                }
            }
        }
    }
    let mut weight_sums_exact = true;
    for n in 1..=60usize {
        for m in 1..=n {
            for k in 1..=m {
                let nums = pwm_weight_numerators(n, k, m).expect("exact weights for n <= 60");
                let total: u128 = nums.iter().sum();
                weight_sums_exact &= Some(total) == binomial_exact(n as u64, m as u64);
            }
        }
    }
    Ok(ok(
        worst <= ORACLE_TOL && weight_sums_exact,
        format!("{cases} samples, max |LC - naive| = {worst:.2e}, weight sums exact for n <= 60: {weight_sums_exact}"),
    ))
}

fn identity_recovery() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for xi in [-0.4, -0.1, 0.0, 0.1, 0.4] {
        for (mu, sigma) in [(0.0, 1.0), (2.5, 0.7)] {
            let hats = ThetaHats::from_params(&GevParams::new(xi, mu, sigma)?)?;
            worst = worst.max((hats.xi()? - xi).abs());
        }
    }
    Ok(ok(worst <= IDENTITY_TOL, format!("max |xi(theta) - xi| = {worst:.2e}")))
}

fn coverage_line(r: &CoverageResult, label: &str) -> String {
    format!(
        "{label}: rate {:.4} <= {:.4} ({}/{})",
        r.empirical_failure_rate, r.threshold, r.failures, r.reps
    )
}

fn coverage_cells(props: &[Proposition], deltas: &[f64]) -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for &prop in props {
        for &delta in deltas {
            let spec = CoverageSpec::new(prop, 300, 3, 2, delta, Law::Uniform01, COVERAGE_REPS, 31);
            let r = run_coverage(&spec)?;
            pass &= r.within_budget();
            let label = format!("{} d={delta:.3e} K/4={}", prop.label(), r.corrupted_blocks);
            parts.push(coverage_line(&r, &label));
        }
    }
    Ok(ok(pass, parts.join("; ")))
}

fn xi_coverage() -> Result<Outcome> {
    let law = Law::Gev(GevParams::standard(0.4));
    let spec = CoverageSpec::new(Proposition::P3Xi, 2000, 4, 1, 0.05, law, XI_COVERAGE_REPS, 32);
    let r = run_coverage(&spec)?;
    let line = coverage_line(&r, "p3 gev:0.4");
    Ok(ok(
        r.within_budget(),
        format!("{line}, non-identifiable {}, median radius {:.4}", r.n_noniden, r.radius_used),
    ))
}

fn cna_coverage() -> Result<Outcome> {
    let law = Law::parse("population:1000")?;
    let spec = CoverageSpec::new(Proposition::P4Cna, 300, 2, 2, 0.05, law, COVERAGE_REPS, 33);
    let r = run_coverage(&spec)?;
    Ok(ok(r.within_budget(), coverage_line(&r, "p4 max of 2")))
}

fn lemma1_validity() -> Result<Outcome> {
    let kernels: Vec<(usize, usize)> = (1..=4).flat_map(|m| (1..=m).map(move |k| (k, m))).collect();
    let allowance = 1.0 + LEMMA_MC_SIGMAS * (2.0 / (LEMMA_REPS as f64 - 1.0)).sqrt();
    let mut pass = true;
    let mut worst_general = 0.0f64;
    let mut worst_split = 0.0f64;
    for n in [20usize, 100] {
        let draws: Vec<Vec<f64>> = (0..LEMMA_REPS)
            .into_par_iter()
            .map(|rep| {
                let xs = Law::Uniform01.sample(&RandomStream::derive(34, &[n as u64, rep as u64]), n)?;
                kernels
                    .iter()
                    .map(|&(k, m)| linear_combination_pwm(xs.values(), k, m))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        for (j, &(k, m)) in kernels.iter().enumerate() {
            let us: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let mean = us.iter().sum::<f64>() / us.len() as f64;
            let var = us.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (us.len() as f64 - 1.0);
            let v_m = order_stat_oracle(&Law::Uniform01, k as u32, m as u32)?.variance;
            let v_1 = uniform_order_stat_v1(k as u32, m as u32)?;
            let general = variance_bound_general(n, m, 1, v_m)?;
            let split = variance_bound_split(n, m, 1, v_1, v_m)?;
            worst_general = worst_general.max(var / general);
            worst_split = worst_split.max(var / split);
            pass &= var <= general * allowance && var <= split * allowance;
        }
    }
    Ok(ok(
        pass,
        format!(
            "{} kernels x n in {{20, 100}}, max var/general = {worst_general:.4}, max var/split = {worst_split:.4}, allowance {allowance:.4}",
            kernels.len()
        ),
    ))
}

fn figure_grid() -> ExperimentGrid {
    ExperimentGrid {
        reps: FIGURE_REPS,
        master_seed: FIGURE_SEED,
        ..ExperimentGrid::default()
    }
}

fn figure1_reproduction(result: &Figure1Result) -> Result<Outcome> {
    let grid = &result.config;
    let n_out = *grid.n_outliers.iter().max().expect("nonempty grid");
    let mut pass = true;
    let mut losses = Vec::new();
    for &target in &grid.targets {
        for &xi in &grid.xis {
            let truth = target.truth(xi)?;
            let err = |method| {
                result
                    .summary(target, method, xi, n_out)
                    .and_then(|s| s.median)
                    .map(|med| (med - truth).abs())
            };
            match (err(Method::MedianOfMeans), err(Method::LinearCombination)) {
                (Some(mm), Some(lc)) if mm < lc => {}
                (mm, lc) => {
                    pass = false;
                    losses.push(format!("{} xi={xi}: mm {mm:?} lc {lc:?}", target.label()));
                }
            }
        }
    }

    let k1 = ExperimentGrid {
        delta: (-1f64).exp(),
        n_outliers: vec![0],
        targets: vec![Target::Theta34, Target::Theta44],
        ..figure_grid()
    };
    let k1_result = run_figure1(&k1)?;
    let pick = |method| {
        k1_result
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.target, r.xi_true.to_bits(), r.rep, r.estimate.map(f64::to_bits)))
            .collect::<Vec<_>>()
    };
    let mm = pick(Method::MedianOfMeans);
    let identical = !mm.is_empty() && mm == pick(Method::LinearCombination);
    pass &= identical;
    let detail = if losses.is_empty() {
        format!("MM closer than LC at n_O={n_out} in all {} cells", grid.targets.len() * grid.xis.len())
    } else {
        format!("MM not closer in: {}", losses.join(", "))
    };
    Ok(ok(pass, format!("{detail}; K=1 MM == LC bitwise over {} rows: {identical}", mm.len())))
}

fn csv_bytes(result: &Figure1Result) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut rows = Vec::new();
    result.write_rows_csv(&mut rows)?;
    let mut summaries = Vec::new();
    result.write_summaries_csv(&mut summaries)?;
    Ok((rows, summaries))
}

fn reproducibility(reference: &Figure1Result) -> Result<Outcome> {
    let expected = csv_bytes(reference)?;
    let mut pass = true;
    for threads in [1usize, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        let again = pool.install(|| run_figure1(&figure_grid()))?;
        pass &= csv_bytes(&again)? == expected;
    }
    Ok(ok(
        pass,
        format!("rows {} bytes, summaries {} bytes, identical for 1 and 4 threads: {pass}", expected.0.len(), expected.1.len()),
    ))
}

fn breakdown() -> Result<Outcome> {
    let mut rng = RandomStream::new(35, 0).rng();
    let mut pass = true;
    let mut worst_slack = f64::INFINITY;
    for trial in 0..BREAKDOWN_TRIALS {
        let m = rng.random_range(1..=4usize);
        let k = rng.random_range(1..=m);
        let blocks = rng.random_range(4..=16usize);
        let n = blocks * m + rng.random_range(0..(blocks * m * 4));
        let mut config = MomConfig::with_blocks(blocks)?;
        if rng.random_bool(0.5) {
            config = config.with_strategy(PartitionStrategy::Shuffled { seed: trial as u64 });
        }
        let kernel = KernelSpec::order_statistic(k, m)?;
        let clean: Vec<f64> = Law::Exponential1
            .sample(&RandomStream::derive(35, &[trial as u64]), n)?
            .into_values();
        let partition = partition_blocks(n, m, &config)?;
        let n_bad = blocks / 4;
        let mut ids: Vec<usize> = (0..blocks).collect();
        for i in 0..n_bad {
            let j = rng.random_range(i..blocks);
            ids.swap(i, j);
        }
        let (bad, good) = ids.split_at(n_bad);
        let mut dirty = clean.clone();
        for &b in bad {
            let value = if rng.random_bool(0.5) { 1e12 } else { -1e12 };
            for &i in &partition.blocks()[b] {
                dirty[i] = value * rng.random_range(0.5..2.0);
            }
        }
        let before = mom_estimate(&clean, &kernel, &config)?;
        let after = mom_estimate(&dirty, &kernel, &config)?;
        let untouched: Vec<f64> = good.iter().map(|&b| before.block_estimates[b]).collect();
        let lo = untouched.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = untouched.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = (after.point - before.point).abs();
        worst_slack = worst_slack.min((hi - lo) - shift);
        pass &= shift <= hi - lo;
    }
    Ok(ok(
        pass,
        format!("{BREAKDOWN_TRIALS} trials, min (untouched range - shift) = {worst_slack:.3e}"),
    ))
}

fn main() {
    let mut h = Harness { failed: Vec::new() };
    let secs = Duration::from_secs;
    h.run(1, "oracle equivalence", secs(10), oracle_equivalence);
    h.run(2, "identity recovery", secs(1), identity_recovery);
    h.run(3, "clean coverage", secs(120), || {
        coverage_cells(&[Proposition::P1Subgaussian, Proposition::P1Subgamma], &[0.3, 0.1, 0.05])
    });
    h.run(4, "contaminated coverage", secs(120), || {
        coverage_cells(&[Proposition::P2], &[0.3, 0.1, 0.05, (-8f64).exp()])
    });
    h.run(5, "tail-index coverage", secs(300), xi_coverage);
    h.run(6, "sampling without replacement coverage", secs(120), cna_coverage);
    h.run(7, "variance bound validity", secs(120), lemma1_validity);

    let start = Instant::now();
    let reference = run_figure1(&figure_grid());
    let grid_time = start.elapsed();
    match reference {
        Ok(reference) => {
            h.run(8, "contamination study", secs(600).saturating_sub(grid_time), || {
                figure1_reproduction(&reference)
            });
            h.run(9, "reproducibility", secs(1200), || reproducibility(&reference));
        }
        Err(e) => {
            for id in [8, 9] {
                h.run(id, "contamination study", secs(600), || Ok(ok(false, format!("grid failed: {e}"))));
            }
        }
    }
    h.run(10, "breakdown", secs(10), breakdown);

    if !h.failed.is_empty() {
        eprintln!("failed criteria: {:?}", h.failed);
        std::process::exit(1);
    }
}
