//! U-statistics, block partitions and median-of-means estimators.
//!
//! For order-statistic kernels the U-statistic over all m-subsets collapses to
//! a weighted sum of the sorted sample,
//!
//! ```text
//! T_{k:m} = Σ_i C(n-i, m-k) C(i-1, k-1) X_(i:n) / C(n, m)
//! ```
//!
//! which is what [`linear_combination_pwm`] evaluates. General kernels go
//! through explicit subset enumeration in [`naive_u_statistic`].

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::special::binomial_exact;

/// Largest C(n, m) that [`naive_u_statistic`] will enumerate by default.
pub const DEFAULT_SUBSET_CAP: u128 = 1_000_000;

/// Up to this sample size PWM weights use exact 128-bit integer arithmetic.
pub const EXACT_WEIGHT_MAX_N: usize = 60;

/// A symmetric real function of m real arguments.
pub type KernelFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelForm {
    /// Ψ_k: the k-th smallest of the m arguments (1-based).
    OrderStatistic(usize),
    /// Caller-supplied symmetric kernel.
    General(KernelFn),
}

impl fmt::Debug for KernelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelForm::OrderStatistic(k) => write!(f, "OrderStatistic({k})"),
            KernelForm::General(_) => f.write_str("General(<fn>)"),
        }
    }
}

/// A symmetric m-ary kernel with its declared degeneracy order q.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    arity: usize,
    form: KernelForm,
    degeneracy: usize,
}

impl KernelSpec {
    /// Ψ_k of arity m, always non-degenerate.
    pub fn order_statistic(k: usize, m: usize) -> Result<Self> {
        if k == 0 || k > m {
            return Err(Error::invalid(format!("need 1 <= k <= m, got k = {k}, m = {m}")));
        }
        Ok(Self {
            arity: m,
            form: KernelForm::OrderStatistic(k),
            degeneracy: 1,
        })
    }

    /// Symmetry of `f` is the caller's contract.
    pub fn general(m: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("kernel arity must be at least 1"));
        }
        Ok(Self {
            arity: m,
            form: KernelForm::General(Arc::new(f)),
            degeneracy: 1,
        })
    }

    /// Declare the degeneracy order q (1 <= q <= m). Order-statistic kernels stay at 1.
    pub fn with_degeneracy(mut self, q: usize) -> Result<Self> {
        if q == 0 || q > self.arity {
            return Err(Error::invalid(format!(
                "degeneracy order must lie in [1, {}], got {q}",
                self.arity
            )));
        }
        if matches!(self.form, KernelForm::OrderStatistic(_)) && q != 1 {
            return Err(Error::invalid("order-statistic kernels are non-degenerate (q = 1)"));
        }
        self.degeneracy = q;
        Ok(self)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn degeneracy(&self) -> usize {
        self.degeneracy
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    /// Evaluate on exactly `arity` values.
    pub fn evaluate(&self, xs: &[f64]) -> f64 {
        debug_assert_eq!(xs.len(), self.arity);
        match &self.form {
            KernelForm::OrderStatistic(_) => self.evaluate_in_place(&mut xs.to_vec()),
            KernelForm::General(f) => f(xs),
        }
    }

    /// Like [`evaluate`](Self::evaluate) but may reorder `xs`.
    pub fn evaluate_in_place(&self, xs: &mut [f64]) -> f64 {
        match &self.form {
            KernelForm::OrderStatistic(k) => *xs.select_nth_unstable_by(k - 1, f64::total_cmp).1,
            KernelForm::General(f) => f(xs),
        }
    }
}

fn check_pwm_indices(n: usize, k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::invalid(format!("need 1 <= k <= m, got k = {k}, m = {m}")));
    }
    if m > n {
        return Err(Error::InsufficientSample { n, required: m });
    }
    Ok(())
}

/// Integer numerators C(n-i, m-k) C(i-1, k-1), i = 1..n, when they fit in 128 bits.
pub fn pwm_weight_numerators(n: usize, k: usize, m: usize) -> Option<Vec<u128>> {
    (1..=n)
        .map(|i| {
            let a = binomial_exact((n - i) as u64, (m - k) as u64)?;
            let b = binomial_exact((i - 1) as u64, (k - 1) as u64)?;
            a.checked_mul(b)
        })
        .collect()
}

/// Weights of the sorted sample in T_{k:m}; they sum to one.
///
/// Exact integer ratios for n <= 60. Beyond that the nonzero run
/// i = k..=n-m+k is built from the ratio of consecutive weights in log space
/// and normalised, which never forms C(n, m) itself.
pub fn pwm_weights(n: usize, k: usize, m: usize) -> Result<Vec<f64>> {
    check_pwm_indices(n, k, m)?;
    if n <= EXACT_WEIGHT_MAX_N {
        let nums = pwm_weight_numerators(n, k, m).expect("n <= 60 fits in u128");
        let den = binomial_exact(n as u64, m as u64).expect("n <= 60 fits in u128") as f64;
        return Ok(nums.into_iter().map(|c| c as f64 / den).collect());
    }
    let (first, last) = (k, n - m + k);
    let mut logs = Vec::with_capacity(last - first + 1);
    let mut acc = 0.0f64;
    logs.push(acc);
    for i in first..last {
        // w_{i+1} / w_i = (n-i-m+k)/(n-i) * i/(i-k+1)
        let (nf, i_f, mf, kf) = (n as f64, i as f64, m as f64, k as f64);
        acc += (nf - i_f - mf + kf).ln() - (nf - i_f).ln() + i_f.ln() - (i_f - kf + 1.0).ln();
        logs.push(acc);
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    let mut w = vec![0.0; n];
    for (slot, r) in w[first - 1..last].iter_mut().zip(&raw) {
        *slot = r / total;
    }
    Ok(w)
}

/// T_{k:m} on an already sorted slice.
pub(crate) fn linear_combination_sorted(sorted: &[f64], k: usize, m: usize) -> Result<f64> {
    let w = pwm_weights(sorted.len(), k, m)?;
    Ok(w.iter().zip(sorted).map(|(w, x)| w * x).sum())
}

/// The U-statistic of Ψ_k over all m-subsets, computed from the order statistics.
pub fn linear_combination_pwm(values: &[f64], k: usize, m: usize) -> Result<f64> {
    check_pwm_indices(values.len(), k, m)?;
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    linear_combination_sorted(&sorted, k, m)
}

/// Average of the kernel over every m-subset, by enumeration.
pub fn naive_u_statistic(values: &[f64], kernel: &KernelSpec) -> Result<f64> {
    naive_u_statistic_capped(values, kernel, DEFAULT_SUBSET_CAP)
}

pub fn naive_u_statistic_capped(values: &[f64], kernel: &KernelSpec, cap: u128) -> Result<f64> {
    let (n, m) = (values.len(), kernel.arity());
    if m > n {
        return Err(Error::InsufficientSample { n, required: m });
    }
    let subsets = binomial_exact(n as u64, m as u64).unwrap_or(u128::MAX);
    if subsets > cap {
        return Err(Error::TooManySubsets { subsets, cap });
    }
    let mut idx: Vec<usize> = (0..m).collect();
    let mut buf = vec![0.0; m];
    let mut total = 0.0;
    loop {
        for (b, &i) in buf.iter_mut().zip(&idx) {
            *b = values[i];
        }
        total += kernel.evaluate_in_place(&mut buf);
        // next combination in lexicographic order
        let mut pos = m;
        while pos > 0 && idx[pos - 1] == n - m + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        idx[pos - 1] += 1;
        for j in pos..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(total / subsets as f64)
}

/// U-statistic of `kernel` over a block: closed form for Ψ_k, enumeration otherwise.
pub fn u_statistic(values: &[f64], kernel: &KernelSpec) -> Result<f64> {
    match kernel.form() {
        KernelForm::OrderStatistic(k) => linear_combination_pwm(values, *k, kernel.arity()),
        KernelForm::General(_) => naive_u_statistic(values, kernel),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Indices in their original order.
    #[default]
    Contiguous,
    /// Indices permuted with the given seed before cutting.
    Shuffled { seed: u64 },
}

/// K = ⌈ln(1/δ)⌉.
///
/// Values of ln(1/δ) within 1e-6 of an integer j are taken as j, so that
/// δ = e^-j (or a 7-digit rendering of it) gives K = j.
pub fn blocks_for_delta(delta: f64) -> usize {
    let x = (1.0 / delta).ln();
    let r = x.round();
    let k = if (x - r).abs() < 1e-6 { r } else { x.ceil() };
    (k as usize).max(1)
}

/// Error level δ, the derived block count K and the partition strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomConfig {
    pub delta: f64,
    pub blocks: usize,
    pub strategy: PartitionStrategy,
}

impl MomConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self {
            delta,
            blocks: blocks_for_delta(delta),
            strategy: PartitionStrategy::Contiguous,
        })
    }

    /// Configuration with δ = e^-K.
    pub fn with_blocks(blocks: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::invalid("need at least one block"));
        }
        Ok(Self {
            delta: (-(blocks as f64)).exp(),
            blocks,
            strategy: PartitionStrategy::Contiguous,
        })
    }

    pub fn with_strategy(mut self, strategy: PartitionStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    /// Check δ ∈ [e^-⌊n/m⌋, 1), i.e. 1 <= K <= ⌊n/m⌋.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let max_blocks = if m == 0 { 0 } else { n / m };
        if self.blocks == 0 || self.blocks > max_blocks {
            return Err(Error::DeltaOutOfRange {
                delta: self.delta,
                blocks: self.blocks,
                max_blocks,
            });
        }
        Ok(())
    }
}

/// K disjoint index blocks covering 0..n.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
}

impl BlockPartition {
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Values of block `j` gathered from `values`.
    pub fn gather(&self, j: usize, values: &[f64]) -> Vec<f64> {
        self.blocks[j].iter().map(|&i| values[i]).collect()
    }

    /// Block index of each observation.
    pub fn owner(&self, n: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; n];
        for (j, b) in self.blocks.iter().enumerate() {
            for &i in b {
                owner[i] = j;
            }
        }
        owner
    }
}

/// Cut 0..n into K blocks of size ⌊n/K⌋ or ⌊n/K⌋ + 1; the first n mod K blocks
/// take the extra element. Requires K <= ⌊n/m⌋.
pub fn partition_blocks(n: usize, m: usize, config: &MomConfig) -> Result<BlockPartition> {
    config.validate(n, m)?;
    let mut order: Vec<usize> = (0..n).collect();
    if let PartitionStrategy::Shuffled { seed } = config.strategy {
        order.shuffle(&mut RandomStream::new(seed, 0).rng());
    }
    let k = config.blocks;
    let (base, extra) = (n / k, n % k);
    let mut blocks = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let len = base + usize::from(j < extra);
        blocks.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(BlockPartition { blocks })
}

/// The smallest z among `values` with #{z_j <= z} >= K/2 and #{z_j >= z} >= K/2.
///
/// This is the lower middle element for even K, never an average.
pub fn lower_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of an empty list"));
    }
    let mut s = values.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let k = s.len();
    for &z in &s {
        let le = s.partition_point(|v| *v <= z);
        let ge = k - s.partition_point(|v| *v < z);
        if 2 * le >= k && 2 * ge >= k {
            return Ok(z);
        }
    }
    unreachable!("the lower middle element always satisfies both counts")
}

/// Output of [`mom_estimate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub point: f64,
    pub block_estimates: Vec<f64>,
    pub config: MomConfig,
    pub partition: BlockPartition,
}

/// Per-block U-statistics on a fixed partition, and their median.
pub fn mom_on_partition(
    values: &[f64],
    kernel: &KernelSpec,
    partition: &BlockPartition,
) -> Result<(f64, Vec<f64>)> {
    let block_estimates = (0..partition.len())
        .map(|j| u_statistic(&partition.gather(j, values), kernel))
        .collect::<Result<Vec<_>>>()?;
    Ok((lower_median(&block_estimates)?, block_estimates))
}

/// Median-of-means estimate of E Ψ(X_1, …, X_m).
pub fn mom_estimate(values: &[f64], kernel: &KernelSpec, config: &MomConfig) -> Result<EstimateReport> {
    let n = values.len();
    if n < kernel.arity() {
        return Err(Error::InsufficientSample {
            n,
            required: kernel.arity(),
        });
    }
    let partition = partition_blocks(n, kernel.arity(), config)?;
    let (point, block_estimates) = mom_on_partition(values, kernel, &partition)?;
    Ok(EstimateReport {
        point,
        block_estimates,
        config: *config,
        partition,
    })
}

/// Output of [`adaptive_estimate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveEstimate {
    pub point: f64,
    /// 1-based index of the first interval in the nonempty tail intersection.
    pub k_hat: usize,
    pub lower: f64,
    pub upper: f64,
    /// Î_k for k = 1..=⌊n/m⌋.
    pub intervals: Vec<(f64, f64)>,
}

/// Smallest 1-based k such that ∩_{j>=k} I_j is nonempty, with that intersection.
pub fn nested_tail_intersection(intervals: &[(f64, f64)]) -> Option<(usize, f64, f64)> {
    let mut best = None;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (i, &(a, b)) in intervals.iter().enumerate().rev() {
        lo = lo.max(a);
        hi = hi.min(b);
        if lo > hi {
            break;
        }
        best = Some((i + 1, lo, hi));
    }
    best
}

/// δ-free estimator: MoM estimates at δ = e^-k for every admissible k, each
/// widened to a confidence interval of half-width 2e √(2 m v* k / n); returns
/// the midpoint of the longest nonempty tail intersection.
pub fn adaptive_estimate(values: &[f64], kernel: &KernelSpec, v_star_m: f64) -> Result<AdaptiveEstimate> {
    if !(v_star_m > 0.0 && v_star_m.is_finite()) {
        return Err(Error::invalid(format!("variance bound must be positive, got {v_star_m}")));
    }
    let (n, m) = (values.len(), kernel.arity());
    if n < m {
        return Err(Error::InsufficientSample { n, required: m });
    }
    let e = std::f64::consts::E;
    let intervals = (1..=n / m)
        .map(|k| {
            let cfg = MomConfig::with_blocks(k)?;
            let point = mom_estimate(values, kernel, &cfg)?.point;
            let half = 2.0 * e * (2.0 * m as f64 * v_star_m * k as f64 / n as f64).sqrt();
            Ok((point - half, point + half))
        })
        .collect::<Result<Vec<_>>>()?;
    let (k_hat, lower, upper) =
        nested_tail_intersection(&intervals).expect("the last interval alone is nonempty");
    Ok(AdaptiveEstimate {
        point: 0.5 * (lower + upper),
        k_hat,
        lower,
        upper,
        intervals,
    })
}
