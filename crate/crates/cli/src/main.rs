use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use robust_pwm::bounds::{
    adaptive_radius, bernoulli_tail, bound_report, variance_bound_general, variance_bound_split,
    xi_radius, RadiusFlavor, Regime, VarianceProxies,
};
use robust_pwm::distributions::{Law, Placement};
use robust_pwm::estimators::{adaptive_estimate, mom_estimate, KernelSpec, MomConfig};
use robust_pwm::experiments::{run_coverage, run_figure1, CoverageSpec, ExperimentGrid, Proposition, Target};
use robust_pwm::tail_index::{fit_gev, XiMethod};
use robust_pwm::{Error, ObservationSample};

#[derive(Parser)]
#[command(name = "robust-pwm", version, about = "Robust median-of-means PWM and tail-index estimation")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Confidence level δ; the estimators use K = ⌈ln(1/δ)⌉ blocks.
    #[arg(long, global = true, default_value_t = 0.05)]
    delta: f64,

    /// Output file (a directory for `simulate`). Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "ROBUST_PWM_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Point estimates from a data file.
    #[command(subcommand)]
    Estimate(EstimateCmd),
    /// Monte Carlo experiments.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Empirical coverage of the deviation radii.
    #[command(subcommand)]
    Verify(VerifyCmd),
    /// Closed-form bounds.
    #[command(subcommand)]
    Bound(BoundCmd),
}

#[derive(Args)]
struct InputArgs {
    /// Newline-delimited numbers, or a CSV with a single `value` column.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Subcommand)]
enum EstimateCmd {
    /// Median-of-means estimate of θ_{k:m} = E X_(k:m).
    Pwm {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
        /// v_m, enables the sub-Gaussian radius.
        #[arg(long)]
        vm: Option<f64>,
        /// v_1, enables the sub-gamma radius (requires --vm).
        #[arg(long)]
        v1: Option<f64>,
        /// Upper bound on v_m: also report the δ-free estimate.
        #[arg(long)]
        vstar: Option<f64>,
        /// Radius constant for up to K/4 outliers.
        #[arg(long)]
        contaminated: bool,
    },
    /// Tail index ξ of a GEV sample.
    Xi {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "mom")]
        method: XiMethod,
        /// max(v_1, v_2, v_4): also report the plug-in radius.
        #[arg(long)]
        vmax: Option<f64>,
        #[arg(long)]
        contaminated: bool,
    },
    /// Plug-in GEV quantile.
    Quantile {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 0.95)]
        prob: f64,
        #[arg(long, default_value = "mom")]
        method: XiMethod,
    },
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Contaminated GEV grid: median-of-means against full-sample estimates.
    Figure1 {
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [-0.4, 0.0, 0.4], allow_hyphen_values = true)]
        xis: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 5, 15, 20])]
        n_outliers: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        n_total: usize,
        #[arg(long, value_delimiter = ',', default_value = "theta_3_4,theta_4_4,xi,q95")]
        targets: Vec<Target>,
        #[arg(long, default_value = "consecutive")]
        placement: Placement,
    },
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Failure rate of a radius over independent replications.
    Coverage {
        /// p1_subgaussian, p1_subgamma, p2, p3_xi or p4_cna.
        #[arg(long)]
        prop: Proposition,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// uniform01, exponential1, gumbel01, gev:<xi> or population:<N>.
        #[arg(long, default_value = "uniform01")]
        dist: String,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Use the sub-gamma radius where the proposition allows a choice.
        #[arg(long)]
        sub_gamma: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BoundKind {
    /// Clean median-of-means radii.
    P1,
    /// Radii with up to K/4 outliers.
    P2,
    /// Tail-index radius.
    P3,
    /// Variance bounds of the U-statistic.
    Lemma1,
    /// Bernoulli tail bound.
    Lemma2,
    /// Width of the δ-free estimator.
    Adaptive,
}

#[derive(Subcommand)]
enum BoundCmd {
    Eval {
        #[arg(long, value_enum)]
        prop: BoundKind,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 1)]
        q: usize,
        #[arg(long)]
        vm: Option<f64>,
        #[arg(long)]
        v1: Option<f64>,
        /// v_q; defaults to its ceiling q·v_m/m.
        #[arg(long)]
        vq: Option<f64>,
        #[arg(long)]
        vmax: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        xi_hat: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        theta1: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        theta2: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        theta4: Option<f64>,
        #[arg(long)]
        contaminated: bool,
        /// Number of Bernoulli variables.
        #[arg(long = "blocks")]
        blocks: Option<u64>,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type CmdResult<T> = Result<T, Failure>;

fn need<T>(v: Option<T>, flag: &str) -> CmdResult<T> {
    v.ok_or_else(|| Failure::Usage(format!("missing required flag --{flag}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> CmdResult<()> {
    let pool = rayon_pool(cli.jobs)?;
    pool.install(|| match &cli.command {
        Command::Estimate(cmd) => estimate(&cli, cmd),
        Command::Simulate(cmd) => simulate(&cli, cmd),
        Command::Verify(cmd) => verify(&cli, cmd),
        Command::Bound(cmd) => bound(&cli, cmd),
    })
}

fn rayon_pool(jobs: usize) -> CmdResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Usage(format!("--jobs {jobs}: {e}")))
}

fn read_sample(input: &InputArgs) -> CmdResult<ObservationSample> {
    let s = ObservationSample::from_path(&input.input).map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", input.input.display()))),
        other => other,
    })?;
    Ok(s)
}

fn estimate(cli: &Cli, cmd: &EstimateCmd) -> CmdResult<()> {
    let report = match cmd {
        EstimateCmd::Pwm {
            input,
            k,
            m,
            vm,
            v1,
            vstar,
            contaminated,
        } => {
            let sample = read_sample(input)?;
            let kernel = KernelSpec::order_statistic(*k, *m)?;
            let cfg = MomConfig::new(cli.delta)?;
            let est = mom_estimate(sample.values(), &kernel, &cfg)?;
            let mut out = json!({
                "estimate": est.point,
                "k": k,
                "m": m,
                "n": sample.len(),
                "delta": cli.delta,
                "blocks": cfg.blocks,
                "block_estimates": est.block_estimates,
            });
            if let Some(vm) = vm {
                let mut v: Vec<f64> = (1..=*m).map(|j| j as f64 * vm / *m as f64).collect();
                if let Some(v1) = v1 {
                    v[0] = *v1;
                }
                let proxies = VarianceProxies::closed_form(v)?;
                let regime = if *contaminated { Regime::Contaminated } else { Regime::Clean };
                let b = bound_report(sample.len(), *m, 1, cli.delta, &proxies, regime)?;
                out["radius_sub_gaussian"] = json!(b.t1);
                if v1.is_some() || *m == 1 {
                    out["radius_sub_gamma"] = json!(b.t2);
                }
            } else if v1.is_some() {
                return Err(Failure::Usage("--v1 needs --vm".into()));
            }
            if let Some(vstar) = vstar {
                let a = adaptive_estimate(sample.values(), &kernel, *vstar)?;
                out["adaptive_estimate"] = json!(a.point);
                out["adaptive_k_hat"] = json!(a.k_hat);
            }
            out
        }
        EstimateCmd::Xi {
            input,
            method,
            vmax,
            contaminated,
        } => {
            let sample = read_sample(input)?;
            let fit = fit_gev(sample.values(), cli.delta, *method);
            let est = match &fit {
                Ok(f) => f.source.clone(),
                Err(_) => robust_pwm::tail_index::estimate_xi(sample.values(), cli.delta, *method)?,
            };
            let mut out = json!({
                "xi": est.xi_hat,
                "method": method.label(),
                "blocks": est.blocks,
                "delta": cli.delta,
                "theta1": est.theta_hats.theta1,
                "theta2": est.theta_hats.theta2,
                "theta4": est.theta_hats.theta4,
            });
            if let Ok(f) = &fit {
                out["mu"] = json!(f.params.mu);
                out["sigma"] = json!(f.params.sigma);
            }
            if let Some(vmax) = vmax {
                let regime = if *contaminated { Regime::Contaminated } else { Regime::Clean };
                let t = est.theta_hats;
                let r = xi_radius(sample.len(), cli.delta, *vmax, est.xi_hat, t.theta1, t.theta2, t.theta4, None, regime)?;
                out["radius_plug_in"] = json!(r.plug_in);
                out["confidence"] = json!(r.confidence);
            }
            out
        }
        EstimateCmd::Quantile { input, prob, method } => {
            let sample = read_sample(input)?;
            let fit = fit_gev(sample.values(), cli.delta, *method)?;
            json!({
                "quantile": fit.quantile(*prob)?,
                "prob": prob,
                "method": method.label(),
                "xi": fit.params.xi,
                "mu": fit.params.mu,
                "sigma": fit.params.sigma,
            })
        }
    };
    emit(cli, &report)
}

fn simulate(cli: &Cli, cmd: &SimulateCmd) -> CmdResult<()> {
    let SimulateCmd::Figure1 {
        reps,
        xis,
        n_outliers,
        n_total,
        targets,
        placement,
    } = cmd;
    let grid = ExperimentGrid {
        xis: xis.clone(),
        n_outliers: n_outliers.clone(),
        n_total: *n_total,
        reps: *reps,
        delta: cli.delta,
        master_seed: cli.seed,
        targets: targets.clone(),
        placement: *placement,
    };
    let result = run_figure1(&grid)?;
    match (&cli.out, cli.format) {
        (Some(dir), fmt) => {
            fs::create_dir_all(dir)?;
            if fmt == Format::Json {
                result.write_json(BufWriter::new(fs::File::create(dir.join("figure1.json"))?))?;
            } else {
                result.write_rows_csv(BufWriter::new(fs::File::create(dir.join("figure1_rows.csv"))?))?;
                result.write_summaries_csv(BufWriter::new(fs::File::create(dir.join("figure1_summary.csv"))?))?;
            }
        }
        (None, Format::Json) => result.write_json(io::stdout().lock())?,
        (None, Format::Csv) => result.write_summaries_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn verify(cli: &Cli, cmd: &VerifyCmd) -> CmdResult<()> {
    let VerifyCmd::Coverage {
        prop,
        n,
        m,
        k,
        dist,
        reps,
        sub_gamma,
    } = cmd;
    let law = Law::parse(dist)?;
    let mut spec = CoverageSpec::new(*prop, *n, *m, *k, cli.delta, law, *reps, cli.seed);
    if *sub_gamma {
        spec.flavor = RadiusFlavor::SubGamma;
    }
    let r = run_coverage(&spec)?;
    let report = json!({
        "proposition": prop.label(),
        "empirical_failure_rate": r.empirical_failure_rate,
        "failures": r.failures,
        "reps": r.reps,
        "nominal_delta": r.nominal_delta,
        "budget": r.budget,
        "threshold": r.threshold,
        "within_budget": r.within_budget(),
        "radius_used": r.radius_used,
        "regime": r.regime,
        "truth": r.truth,
        "n_noniden": r.n_noniden,
        "corrupted_blocks": r.corrupted_blocks,
    });
    emit(cli, &report)
}

fn bound(cli: &Cli, cmd: &BoundCmd) -> CmdResult<()> {
    let BoundCmd::Eval {
        prop,
        n,
        m,
        q,
        vm,
        v1,
        vq,
        vmax,
        xi_hat,
        xi,
        theta1,
        theta2,
        theta4,
        contaminated,
        blocks,
        a,
        p,
    } = cmd;
    let regime = if *contaminated || *prop == BoundKind::P2 { Regime::Contaminated } else { Regime::Clean };
    let report = match prop {
        BoundKind::P1 | BoundKind::P2 => {
            let (n, m, vm) = (need(*n, "n")?, need(*m, "m")?, need(*vm, "vm")?);
            if *q == 0 || *q > m {
                return Err(Failure::Usage(format!("--q must lie in [1, {m}]")));
            }
            let mut v: Vec<f64> = (1..=m).map(|j| j as f64 * vm / m as f64).collect();
            if let Some(v1) = v1 {
                v[0] = *v1;
            }
            if let Some(vq) = vq {
                v[q - 1] = *vq;
            }
            v[m - 1] = vm;
            let b = bound_report(n, m, *q, cli.delta, &VarianceProxies::closed_form(v)?, regime)?;
            json!({
                "t1": b.t1,
                "t2": b.t2,
                "constant": b.constant,
                "blocks": b.blocks,
                "regime": b.regime,
                "confidence": 1.0 - cli.delta,
            })
        }
        BoundKind::P3 => {
            let r = xi_radius(
                need(*n, "n")?,
                cli.delta,
                need(*vmax, "vmax")?,
                need(*xi_hat, "xi-hat")?,
                need(*theta1, "theta1")?,
                need(*theta2, "theta2")?,
                theta4.unwrap_or(f64::NAN),
                *xi,
                regime,
            )?;
            json!({
                "radius_plug_in": r.plug_in,
                "radius_oracle": r.oracle,
                "confidence": r.confidence,
            })
        }
        BoundKind::Lemma1 => {
            let (n, m, vm) = (need(*n, "n")?, need(*m, "m")?, need(*vm, "vm")?);
            let mut out = json!({ "general": variance_bound_general(n, m, *q, vm)? });
            let vq = vq.or(if *q == 1 { *v1 } else { None });
            if let Some(vq) = vq {
                out["split"] = json!(variance_bound_split(n, m, *q, vq, vm)?);
            }
            out
        }
        BoundKind::Lemma2 => json!({
            "bound": bernoulli_tail(need(*blocks, "blocks")?, need(*a, "a")?, need(*p, "p")?)?,
        }),
        BoundKind::Adaptive => json!({
            "radius": adaptive_radius(need(*n, "n")?, need(*m, "m")?, need(*vm, "vm")?, cli.delta)?,
            "confidence": 1.0 - cli.delta,
        }),
    };
    emit(cli, &report)
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}_{}", i + 1), v, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn write_report<W: Write>(mut w: W, format: Format, report: &Value) -> io::Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, report)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut rows = Vec::new();
            flatten("", report, &mut rows);
            writeln!(w, "field,value")?;
            for (k, v) in rows {
                writeln!(w, "{k},{v}")?;
            }
        }
    }
    w.flush()
}

fn emit(cli: &Cli, report: &Value) -> CmdResult<()> {
    match &cli.out {
        Some(path) => write_report(BufWriter::new(create_file(path)?), cli.format, report)?,
        None => write_report(io::stdout().lock(), cli.format, report)?,
    }
    Ok(())
}

fn create_file(path: &Path) -> io::Result<fs::File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::File::create(path)
}
