//! Posterior-accuracy diagnostics: grid-quadrature densities and the
//! divergences between them, the threshold-exceedance measure of a
//! surrogate, and summary statistics of realized chains.

use alloc::vec::Vec;

use thiserror::Error;

use crate::bayes::{log_posterior, log_posterior_exact, BayesError, InverseProblem};
use crate::linalg::norm_inf;
use crate::mcmc::Chain;
use crate::models::{EvalKind, ModelError};
use crate::surrogate::{PcSurrogate, SurrogateError};

const HISTOGRAM_BINS: usize = 50;
const CREDIBLE_LEVEL: f64 = 0.95;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("grids must have 1 to 3 axes, got {0}")]
    Dimension(usize),
    #[error("axis {0} must be strictly increasing with at least two finite nodes")]
    BadAxis(usize),
    #[error("density array has {got} entries, grid has {expected}")]
    DensityShape { expected: usize, got: usize },
    #[error("log density is invalid at node {0}")]
    BadDensity(usize),
    #[error("density does not normalize (shifted mass {0})")]
    NotNormalizable(f64),
    #[error("grids do not match")]
    GridMismatch,
    #[error("approximate density has mass where the exact density vanishes (node {0})")]
    AbsoluteContinuity(usize),
    #[error("no samples supplied")]
    EmptySamples,
    #[error("sample {index} has {got} entries, expected at least {expected}")]
    SampleDimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("threshold {0} must be non-negative and finite")]
    BadThreshold(f64),
    #[error("burn-in fraction {0} must be in [0, 1)")]
    BadBurnIn(f64),
    #[error("chain is empty")]
    EmptyChain,
    #[error("histogram needs {0}")]
    BadHistogram(&'static str),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Evenly spaced axis with inclusive endpoints.
pub fn uniform_axis(lo: f64, hi: f64, nodes: usize) -> Vec<f64> {
    let h = (hi - lo) / (nodes - 1) as f64;
    (0..nodes)
        .map(|i| if i == nodes - 1 { hi } else { lo + i as f64 * h })
        .collect()
}

fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    (0..n)
        .map(|i| {
            let left = if i == 0 { axis[0] } else { axis[i - 1] };
            let right = if i == n - 1 { axis[n - 1] } else { axis[i + 1] };
            0.5 * (right - left)
        })
        .collect()
}

/// A normalized posterior density tabulated on a tensor grid of up to
/// three axes. Values are stored with the first axis fastest; the
/// normalizer comes from trapezoidal quadrature over the grid.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    axes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    log_density: Vec<f64>,
    log_normalizer: f64,
}

impl GridPosterior {
    pub fn new(axes: Vec<Vec<f64>>, log_density: Vec<f64>) -> Result<Self, DiagnosticsError> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(DiagnosticsError::Dimension(axes.len()));
        }
        for (k, axis) in axes.iter().enumerate() {
            let increasing = axis.windows(2).all(|w| w[0] < w[1]);
            if axis.len() < 2 || !increasing || axis.iter().any(|x| !x.is_finite()) {
                return Err(DiagnosticsError::BadAxis(k));
            }
        }
        let expected: usize = axes.iter().map(Vec::len).product();
        if log_density.len() != expected {
            return Err(DiagnosticsError::DensityShape {
                expected,
                got: log_density.len(),
            });
        }
        if let Some(node) = log_density
            .iter()
            .position(|lp| lp.is_nan() || *lp == f64::INFINITY)
        {
            return Err(DiagnosticsError::BadDensity(node));
        }
        let weights: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid_weights(a)).collect();
        let peak = log_density
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if peak == f64::NEG_INFINITY {
            return Err(DiagnosticsError::NotNormalizable(0.0));
        }
        let mut shifted_mass = 0.0;
        for (flat, lp) in log_density.iter().enumerate() {
            shifted_mass += node_weight(&weights, flat) * libm::exp(lp - peak);
        }
        if !(shifted_mass > 0.0) || !shifted_mass.is_finite() {
            return Err(DiagnosticsError::NotNormalizable(shifted_mass));
        }
        Ok(GridPosterior {
            axes,
            weights,
            log_density,
            log_normalizer: peak + libm::log(shifted_mass),
        })
    }

    /// Tabulates a log-density function over the grid.
    pub fn from_log_density_fn<F>(axes: Vec<Vec<f64>>, mut f: F) -> Result<Self, DiagnosticsError>
    where
        F: FnMut(&[f64]) -> Result<f64, BayesError>,
    {
        let total: usize = axes.iter().map(Vec::len).product();
        if axes.is_empty() || axes.len() > 3 {
            return Err(DiagnosticsError::Dimension(axes.len()));
        }
        let mut log_density = Vec::with_capacity(total);
        let mut point = alloc::vec![0.0; axes.len()];
        for flat in 0..total {
            let mut rest = flat;
            for (k, axis) in axes.iter().enumerate() {
                point[k] = axis[rest % axis.len()];
                rest /= axis.len();
            }
            log_density.push(f(&point)?);
        }
        Self::new(axes, log_density)
    }

    /// Tabulates the problem's posterior; exact evaluations are ledgered
    /// as diagnostics, not as sampling work.
    pub fn from_problem(
        problem: &InverseProblem,
        axes: Vec<Vec<f64>>,
        use_surrogate: bool,
    ) -> Result<Self, DiagnosticsError> {
        Self::from_log_density_fn(axes, |state| {
            if use_surrogate {
                log_posterior(problem, state, true)
            } else {
                log_posterior_exact(problem, state, EvalKind::Diagnostic)
            }
        })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn len(&self) -> usize {
        self.log_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_density.is_empty()
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// Normalized density at a flat grid index (first axis fastest).
    pub fn density(&self, flat: usize) -> f64 {
        libm::exp(self.log_density[flat] - self.log_normalizer)
    }

    /// Quadrature mass of the normalized density; 1 up to roundoff.
    pub fn total_mass(&self) -> f64 {
        (0..self.len())
            .map(|flat| node_weight(&self.weights, flat) * self.density(flat))
            .sum()
    }

    /// Posterior mean by grid quadrature.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = alloc::vec![0.0; self.dims()];
        for flat in 0..self.len() {
            let mass = node_weight(&self.weights, flat) * self.density(flat);
            let mut rest = flat;
            for (k, axis) in self.axes.iter().enumerate() {
                mean[k] += mass * axis[rest % axis.len()];
                rest /= axis.len();
            }
        }
        mean
    }

    /// Marginal density along axis `k`, tabulated at that axis's nodes.
    pub fn marginal_1d(&self, k: usize) -> Vec<f64> {
        let mut marginal = alloc::vec![0.0; self.axes[k].len()];
        for flat in 0..self.len() {
            let mut rest = flat;
            let mut weight = 1.0;
            let mut node_k = 0;
            for (j, axis) in self.axes.iter().enumerate() {
                let i = rest % axis.len();
                rest /= axis.len();
                if j == k {
                    node_k = i;
                } else {
                    weight *= self.weights[j][i];
                }
            }
            marginal[node_k] += weight * self.density(flat);
        }
        marginal
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.axes == other.axes
    }
}

fn node_weight(weights: &[Vec<f64>], flat: usize) -> f64 {
    let mut rest = flat;
    let mut w = 1.0;
    for axis_weights in weights {
        w *= axis_weights[rest % axis_weights.len()];
        rest /= axis_weights.len();
    }
    w
}

/// Kullback-Leibler divergence of `approx` from `exact` by quadrature on
/// their common grid. Fails when `approx` carries mass where `exact` has
/// none, since the divergence is undefined there.
pub fn kl_divergence(
    approx: &GridPosterior,
    exact: &GridPosterior,
) -> Result<f64, DiagnosticsError> {
    if !approx.same_grid(exact) {
        return Err(DiagnosticsError::GridMismatch);
    }
    let mut sum = 0.0;
    for flat in 0..approx.len() {
        let lpa = approx.log_density[flat];
        if lpa == f64::NEG_INFINITY {
            continue;
        }
        // Support is judged in log space: a normalized density can underflow
        // to zero at nodes thousands of log-units below the peak while the
        // distribution is still absolutely continuous there.
        if exact.log_density[flat] == f64::NEG_INFINITY {
            return Err(DiagnosticsError::AbsoluteContinuity(flat));
        }
        let da = approx.density(flat);
        if da == 0.0 {
            continue;
        }
        let log_ratio =
            (lpa - approx.log_normalizer) - (exact.log_density[flat] - exact.log_normalizer);
        sum += node_weight(&approx.weights, flat) * da * log_ratio;
    }
    Ok(sum)
}

/// Hellinger distance between two grid posteriors on their common grid.
pub fn hellinger_distance(
    approx: &GridPosterior,
    exact: &GridPosterior,
) -> Result<f64, DiagnosticsError> {
    if !approx.same_grid(exact) {
        return Err(DiagnosticsError::GridMismatch);
    }
    let mut sum = 0.0;
    for flat in 0..approx.len() {
        let diff = libm::sqrt(approx.density(flat)) - libm::sqrt(exact.density(flat));
        sum += node_weight(&approx.weights, flat) * diff * diff;
    }
    Ok(libm::sqrt(0.5 * sum))
}

/// Monte-Carlo estimate of the posterior mass where the surrogate's
/// sup-norm error exceeds `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleSetEstimate {
    /// Fraction of samples whose error indicator exceeded the threshold.
    pub fraction: f64,
    /// Binomial standard error of the fraction.
    pub standard_error: f64,
    pub exceedances: usize,
    pub samples: usize,
}

/// Estimates the posterior probability of the region where the surrogate
/// errs by more than `epsilon`, from posterior samples. Each sample costs
/// one exact evaluation, ledgered as diagnostic work. Sample vectors may
/// carry trailing non-model coordinates (the noise block); only the model
/// parameters are used.
pub fn feasible_set_measure(
    problem: &InverseProblem,
    surrogate: &PcSurrogate,
    epsilon: f64,
    samples: &[Vec<f64>],
) -> Result<FeasibleSetEstimate, DiagnosticsError> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(DiagnosticsError::BadThreshold(epsilon));
    }
    if samples.is_empty() {
        return Err(DiagnosticsError::EmptySamples);
    }
    let n_z = problem.n_z();
    let mut exceedances = 0usize;
    for (index, sample) in samples.iter().enumerate() {
        if sample.len() < n_z {
            return Err(DiagnosticsError::SampleDimension {
                index,
                expected: n_z,
                got: sample.len(),
            });
        }
        let z = &sample[..n_z];
        let exact = problem.evaluator().evaluate(z, EvalKind::Diagnostic)?;
        let approx = surrogate.evaluate(z)?;
        let diff: Vec<f64> = exact.iter().zip(&approx).map(|(a, b)| a - b).collect();
        if norm_inf(&diff) > epsilon {
            exceedances += 1;
        }
    }
    let n = samples.len() as f64;
    let fraction = exceedances as f64 / n;
    Ok(FeasibleSetEstimate {
        fraction,
        standard_error: libm::sqrt(fraction * (1.0 - fraction) / n),
        exceedances,
        samples: samples.len(),
    })
}

/// Fixed-range histogram. Bin `i` covers `[edges[i], edges[i+1])`; values
/// outside the range are counted in the nearest end bin so no mass is lost.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Counts normalized to a probability density over the range.
    pub density: Vec<f64>,
}

pub fn histogram(
    values: &[f64],
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<Histogram, DiagnosticsError> {
    if bins == 0 {
        return Err(DiagnosticsError::BadHistogram("at least one bin"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(DiagnosticsError::BadHistogram("a finite range with lo < hi"));
    }
    if values.is_empty() {
        return Err(DiagnosticsError::EmptySamples);
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = alloc::vec![0u64; bins];
    for &v in values {
        let raw = ((v - lo) / width) as isize;
        let bin = raw.clamp(0, bins as isize - 1) as usize;
        counts[bin] += 1;
    }
    let total = values.len() as f64;
    let density = counts.iter().map(|&c| c as f64 / (total * width)).collect();
    Ok(Histogram {
        edges,
        counts,
        density,
    })
}

/// Total variation distance between the probability masses of two
/// histograms over the same edges.
pub fn total_variation(a: &Histogram, b: &Histogram) -> Result<f64, DiagnosticsError> {
    if a.edges != b.edges {
        return Err(DiagnosticsError::GridMismatch);
    }
    let (na, nb) = (
        a.counts.iter().sum::<u64>() as f64,
        b.counts.iter().sum::<u64>() as f64,
    );
    if na == 0.0 || nb == 0.0 {
        return Err(DiagnosticsError::EmptySamples);
    }
    let sum: f64 = a
        .counts
        .iter()
        .zip(&b.counts)
        .map(|(&ca, &cb)| (ca as f64 / na - cb as f64 / nb).abs())
        .sum();
    Ok(0.5 * sum)
}

/// Two-dimensional histogram over a coordinate pair, row-major with the
/// first coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PairHistogram {
    pub coordinates: (usize, usize),
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Post-burn-in summary of a chain.
#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub burn_in: usize,
    pub kept: usize,
    /// Over the full chain, not just the kept part.
    pub acceptance_rate: f64,
    pub means: Vec<f64>,
    pub standard_deviations: Vec<f64>,
    /// Equal-tailed intervals at `credible_level`.
    pub credible_intervals: Vec<(f64, f64)>,
    pub credible_level: f64,
    /// Effective sample sizes from autocorrelation truncated at the first
    /// non-positive even-odd pair sum.
    pub ess: Vec<f64>,
    pub marginals: Vec<Histogram>,
    pub pairwise: Vec<PairHistogram>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[sorted.len() - 1]
    }
}

fn effective_sample_size(values: &[f64]) -> f64 {
    let t = values.len();
    if t < 2 {
        return 1.0;
    }
    let n = t as f64;
    let mean = values.iter().sum::<f64>() / n;
    let autocov = |lag: usize| -> f64 {
        values[..t - lag]
            .iter()
            .zip(&values[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return 1.0;
    }
    let mut tau = -1.0;
    let mut k = 0usize;
    while 2 * k < t {
        let even = autocov(2 * k);
        let odd = if 2 * k + 1 < t { autocov(2 * k + 1) } else { 0.0 };
        let pair = (even + odd) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    if tau <= 0.0 {
        return n;
    }
    (n / tau).max(1.0)
}

pub fn chain_summary(chain: &Chain, burn_in_fraction: f64) -> Result<ChainSummary, DiagnosticsError> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(DiagnosticsError::BadBurnIn(burn_in_fraction));
    }
    if chain.is_empty() {
        return Err(DiagnosticsError::EmptyChain);
    }
    let burn_in = (burn_in_fraction * chain.len() as f64) as usize;
    let tail = &chain.states[burn_in..];
    let kept = tail.len();
    let dim = chain.dim();
    let n = kept as f64;

    let mut means = alloc::vec![0.0; dim];
    let mut standard_deviations = alloc::vec![0.0; dim];
    let mut credible_intervals = Vec::with_capacity(dim);
    let mut ess = Vec::with_capacity(dim);
    let mut marginals = Vec::with_capacity(dim);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for k in 0..dim {
        let column: Vec<f64> = tail.iter().map(|s| s[k]).collect();
        let mean = column.iter().sum::<f64>() / n;
        means[k] = mean;
        if kept > 1 {
            let ss: f64 = column.iter().map(|x| (x - mean) * (x - mean)).sum();
            standard_deviations[k] = libm::sqrt(ss / (n - 1.0));
        }
        let mut sorted = column.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let half_tail = 0.5 * (1.0 - CREDIBLE_LEVEL);
        credible_intervals.push((
            quantile(&sorted, half_tail),
            quantile(&sorted, 1.0 - half_tail),
        ));
        ess.push(effective_sample_size(&column));
        let (lo, hi) = (sorted[0], sorted[kept - 1]);
        let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        marginals.push(histogram(&column, lo, hi, HISTOGRAM_BINS)?);
        columns.push(column);
    }

    let mut pairwise = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            let xe = &marginals[i].edges;
            let ye = &marginals[j].edges;
            let (xlo, xhi) = (xe[0], xe[xe.len() - 1]);
            let (ylo, yhi) = (ye[0], ye[ye.len() - 1]);
            let xw = (xhi - xlo) / HISTOGRAM_BINS as f64;
            let yw = (yhi - ylo) / HISTOGRAM_BINS as f64;
            let mut counts = alloc::vec![0u64; HISTOGRAM_BINS * HISTOGRAM_BINS];
            for (x, y) in columns[i].iter().zip(&columns[j]) {
                let bx = (((x - xlo) / xw) as isize).clamp(0, HISTOGRAM_BINS as isize - 1) as usize;
                let by = (((y - ylo) / yw) as isize).clamp(0, HISTOGRAM_BINS as isize - 1) as usize;
                counts[by * HISTOGRAM_BINS + bx] += 1;
            }
            pairwise.push(PairHistogram {
                coordinates: (i, j),
                x_edges: marginals[i].edges.clone(),
                y_edges: marginals[j].edges.clone(),
                counts,
            });
        }
    }

    Ok(ChainSummary {
        burn_in,
        kept,
        acceptance_rate: chain.accept_rate(),
        means,
        standard_deviations,
        credible_intervals,
        credible_level: CREDIBLE_LEVEL,
        ess,
        marginals,
        pairwise,
    })
}
