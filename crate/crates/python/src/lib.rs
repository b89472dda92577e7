//! Python bindings for `robust-pwm`, importable as `robust_pwm`.

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use robust_pwm::bounds::{self, RadiusFlavor, Regime, VarianceProxies};
use robust_pwm::distributions::{self, Law, Placement};
use robust_pwm::estimators::{self, KernelSpec, MomConfig, PartitionStrategy};
use robust_pwm::experiments::{self, CoverageSpec, ExperimentGrid, Proposition, Target};
use robust_pwm::tail_index::{self, XiMethod};
use robust_pwm::{Error, RandomStream};

create_exception!(robust_pwm, NonIdentifiableError, PyValueError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NonIdentifiable { .. } => NonIdentifiableError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn regime(contaminated: bool) -> Regime {
    if contaminated {
        Regime::Contaminated
    } else {
        Regime::Clean
    }
}

fn flavor(name: &str) -> PyResult<RadiusFlavor> {
    match name {
        "sub_gaussian" | "subgaussian" => Ok(RadiusFlavor::SubGaussian),
        "sub_gamma" | "subgamma" => Ok(RadiusFlavor::SubGamma),
        _ => Err(PyValueError::new_err(format!("unknown radius flavor {name:?}"))),
    }
}

/// Round-trip through JSON so nested results arrive as plain dicts and lists.
fn to_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

/// Shape, location and scale of a GEV law.
#[pyclass(name = "GevParams", module = "robust_pwm", frozen)]
struct PyGevParams(distributions::GevParams);

#[pymethods]
impl PyGevParams {
    #[new]
    #[pyo3(signature = (xi, mu = 0.0, sigma = 1.0))]
    fn new(xi: f64, mu: f64, sigma: f64) -> PyResult<Self> {
        distributions::GevParams::new(xi, mu, sigma).map(Self).map_err(to_py)
    }

    #[getter]
    fn xi(&self) -> f64 {
        self.0.xi
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    fn cdf(&self, x: f64) -> f64 {
        distributions::gev_cdf(x, &self.0)
    }

    fn quantile(&self, prob: f64) -> PyResult<f64> {
        distributions::gev_quantile(prob, &self.0).map_err(to_py)
    }

    /// θ_j = E max of j draws.
    fn pwm(&self, j: u32) -> PyResult<f64> {
        distributions::gev_pwm_theta(j, &self.0).map_err(to_py)
    }

    /// E of the k-th smallest of m draws.
    fn order_stat_mean(&self, k: u32, m: u32) -> PyResult<f64> {
        distributions::gev_order_stat_mean(k, m, &self.0).map_err(to_py)
    }

    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        let s = distributions::gev_sample(&RandomStream::new(seed, 0), &self.0, n).map_err(to_py)?;
        Ok(s.into_values())
    }

    fn __repr__(&self) -> String {
        format!("GevParams(xi={}, mu={}, sigma={})", self.0.xi, self.0.mu, self.0.sigma)
    }
}

/// Median-of-means estimate with its block values.
#[pyclass(name = "Estimate", module = "robust_pwm", frozen, get_all)]
struct PyEstimate {
    point: f64,
    block_estimates: Vec<f64>,
    block_sizes: Vec<usize>,
    blocks: usize,
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!("Estimate(point={}, blocks={})", self.point, self.blocks)
    }
}

#[pyclass(name = "XiEstimate", module = "robust_pwm", frozen, get_all)]
struct PyXiEstimate {
    xi_hat: f64,
    theta1: f64,
    theta2: f64,
    theta4: f64,
    blocks: usize,
    method: String,
}

#[pymethods]
impl PyXiEstimate {
    fn __repr__(&self) -> String {
        format!("XiEstimate(xi_hat={}, method={:?}, blocks={})", self.xi_hat, self.method, self.blocks)
    }
}

/// Linear-combination form of the U-statistic for E X_(k:m).
#[pyfunction]
fn linear_combination_pwm(values: Vec<f64>, k: usize, m: usize) -> PyResult<f64> {
    estimators::linear_combination_pwm(&values, k, m).map_err(to_py)
}

/// Same statistic by enumerating every m-subset.
#[pyfunction]
fn naive_u_statistic(values: Vec<f64>, k: usize, m: usize) -> PyResult<f64> {
    let kernel = KernelSpec::order_statistic(k, m).map_err(to_py)?;
    estimators::naive_u_statistic(&values, &kernel).map_err(to_py)
}

#[pyfunction]
fn pwm_weights(n: usize, k: usize, m: usize) -> PyResult<Vec<f64>> {
    estimators::pwm_weights(n, k, m).map_err(to_py)
}

#[pyfunction]
fn blocks_for_delta(delta: f64) -> usize {
    estimators::blocks_for_delta(delta)
}

#[pyfunction]
fn median(values: Vec<f64>) -> PyResult<f64> {
    estimators::lower_median(&values).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (values, k, m, delta = 0.05, blocks = None, shuffle_seed = None))]
fn mom_estimate(
    values: Vec<f64>,
    k: usize,
    m: usize,
    delta: f64,
    blocks: Option<usize>,
    shuffle_seed: Option<u64>,
) -> PyResult<PyEstimate> {
    let kernel = KernelSpec::order_statistic(k, m).map_err(to_py)?;
    let mut config = match blocks {
        Some(b) => MomConfig::with_blocks(b),
        None => MomConfig::new(delta),
    }
    .map_err(to_py)?;
    if let Some(seed) = shuffle_seed {
        config = config.with_strategy(PartitionStrategy::Shuffled { seed });
    }
    let r = estimators::mom_estimate(&values, &kernel, &config).map_err(to_py)?;
    Ok(PyEstimate {
        point: r.point,
        blocks: r.block_estimates.len(),
        block_sizes: r.partition.sizes(),
        block_estimates: r.block_estimates,
    })
}

/// δ-free estimate; returns (point, k_hat, lower, upper).
#[pyfunction]
fn adaptive_estimate(values: Vec<f64>, k: usize, m: usize, v_star: f64) -> PyResult<(f64, usize, f64, f64)> {
    let kernel = KernelSpec::order_statistic(k, m).map_err(to_py)?;
    let a = estimators::adaptive_estimate(&values, &kernel, v_star).map_err(to_py)?;
    Ok((a.point, a.k_hat, a.lower, a.upper))
}

/// Deviation radius; `proxies` holds v_1..v_m.
#[pyfunction]
#[pyo3(signature = (n, m, delta, proxies, q = 1, contaminated = false, flavor = "sub_gaussian"))]
fn mom_radius(
    n: usize,
    m: usize,
    delta: f64,
    proxies: Vec<f64>,
    q: usize,
    contaminated: bool,
    flavor: &str,
) -> PyResult<f64> {
    let proxies = VarianceProxies::closed_form(proxies).map_err(to_py)?;
    bounds::mom_radius(n, m, q, delta, &proxies, regime(contaminated), self::flavor(flavor)?).map_err(to_py)
}

#[pyfunction]
fn variance_bound_general(n: usize, m: usize, q: usize, v_m: f64) -> PyResult<f64> {
    bounds::variance_bound_general(n, m, q, v_m).map_err(to_py)
}

#[pyfunction]
fn variance_bound_split(n: usize, m: usize, q: usize, v_q: f64, v_m: f64) -> PyResult<f64> {
    bounds::variance_bound_split(n, m, q, v_q, v_m).map_err(to_py)
}

#[pyfunction]
fn adaptive_radius(n: usize, m: usize, v_star: f64, delta: f64) -> PyResult<f64> {
    bounds::adaptive_radius(n, m, v_star, delta).map_err(to_py)
}

#[pyfunction]
fn bernoulli_tail(k: u64, a: f64, p: f64) -> PyResult<f64> {
    bounds::bernoulli_tail(k, a, p).map_err(to_py)
}

/// Tail-index radius; returns (plug_in, oracle or None).
#[pyfunction]
#[pyo3(signature = (n, delta, v_max, xi_hat, theta1, theta2, theta4, xi_true = None, contaminated = false))]
#[allow(clippy::too_many_arguments)]
fn xi_radius(
    n: usize,
    delta: f64,
    v_max: f64,
    xi_hat: f64,
    theta1: f64,
    theta2: f64,
    theta4: f64,
    xi_true: Option<f64>,
    contaminated: bool,
) -> PyResult<(f64, Option<f64>)> {
    let r = bounds::xi_radius(n, delta, v_max, xi_hat, theta1, theta2, theta4, xi_true, regime(contaminated))
        .map_err(to_py)?;
    Ok((r.plug_in, r.oracle))
}

#[pyfunction]
#[pyo3(signature = (values, delta = 0.05, method = "mom"))]
fn estimate_xi(values: Vec<f64>, delta: f64, method: &str) -> PyResult<PyXiEstimate> {
    let method: XiMethod = parse(method)?;
    let e = tail_index::estimate_xi(&values, delta, method).map_err(to_py)?;
    Ok(PyXiEstimate {
        xi_hat: e.xi_hat,
        theta1: e.theta_hats.theta1,
        theta2: e.theta_hats.theta2,
        theta4: e.theta_hats.theta4,
        blocks: e.blocks,
        method: method.label().to_string(),
    })
}

#[pyfunction]
#[pyo3(signature = (values, delta = 0.05, method = "mom"))]
fn fit_gev(values: Vec<f64>, delta: f64, method: &str) -> PyResult<PyGevParams> {
    let fit = tail_index::fit_gev(&values, delta, parse(method)?).map_err(to_py)?;
    Ok(PyGevParams(fit.params))
}

#[pyfunction]
#[pyo3(signature = (values, prob = 0.95, delta = 0.05, method = "mom"))]
fn estimate_quantile(values: Vec<f64>, prob: f64, delta: f64, method: &str) -> PyResult<f64> {
    tail_index::estimate_quantile(&values, prob, delta, parse(method)?).map_err(to_py)
}

/// Draw n values from a named law (`uniform01`, `gev:<xi>`, `population:<N>`, ...).
#[pyfunction]
fn sample(law: &str, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let law = Law::parse(law).map_err(to_py)?;
    Ok(law.sample(&RandomStream::new(seed, 0), n).map_err(to_py)?.into_values())
}

/// Empirical failure rate of a radius; returns a dict.
#[pyfunction]
#[pyo3(signature = (proposition, n, law, m = 1, k = 1, delta = 0.05, reps = 1000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn run_coverage(
    py: Python<'_>,
    proposition: &str,
    n: usize,
    law: &str,
    m: usize,
    k: usize,
    delta: f64,
    reps: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let prop: Proposition = parse(proposition)?;
    let law = Law::parse(law).map_err(to_py)?;
    let spec = CoverageSpec::new(prop, n, m, k, delta, law, reps, seed);
    let result = py.detach(|| experiments::run_coverage(&spec)).map_err(to_py)?;
    let obj = to_object(py, &result)?;
    obj.bind(py).set_item("within_budget", result.within_budget())?;
    Ok(obj)
}

/// Contamination study; returns the list of per-cell summaries as dicts.
#[pyfunction]
#[pyo3(signature = (reps = 1000, seed = 0, delta = 0.05, xis = None, n_outliers = None, targets = None, placement = "consecutive"))]
fn run_figure1(
    py: Python<'_>,
    reps: usize,
    seed: u64,
    delta: f64,
    xis: Option<Vec<f64>>,
    n_outliers: Option<Vec<usize>>,
    targets: Option<Vec<String>>,
    placement: &str,
) -> PyResult<Py<PyAny>> {
    let mut grid = ExperimentGrid {
        reps,
        master_seed: seed,
        delta,
        placement: parse::<Placement>(placement)?,
        ..ExperimentGrid::default()
    };
    if let Some(x) = xis {
        grid.xis = x;
    }
    if let Some(o) = n_outliers {
        grid.n_outliers = o;
    }
    if let Some(t) = targets {
        grid.targets = t.iter().map(|s| parse::<Target>(s)).collect::<PyResult<_>>()?;
    }
    let result = py.detach(|| experiments::run_figure1(&grid)).map_err(to_py)?;
    to_object(py, &result.summaries)
}

#[pymodule]
#[pyo3(name = "robust_pwm")]
fn robust_pwm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NonIdentifiableError", m.py().get_type::<NonIdentifiableError>())?;
    m.add_class::<PyGevParams>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyXiEstimate>()?;
    m.add_function(wrap_pyfunction!(linear_combination_pwm, m)?)?;
    m.add_function(wrap_pyfunction!(naive_u_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(pwm_weights, m)?)?;
    m.add_function(wrap_pyfunction!(blocks_for_delta, m)?)?;
    m.add_function(wrap_pyfunction!(median, m)?)?;
    m.add_function(wrap_pyfunction!(mom_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(mom_radius, m)?)?;
    m.add_function(wrap_pyfunction!(variance_bound_general, m)?)?;
    m.add_function(wrap_pyfunction!(variance_bound_split, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_radius, m)?)?;
    m.add_function(wrap_pyfunction!(bernoulli_tail, m)?)?;
    m.add_function(wrap_pyfunction!(xi_radius, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_xi, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gev, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(run_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(run_figure1, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
