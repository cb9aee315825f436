//! Forward models behind one evaluation contract, plus the bookkeeping
//! that the adaptive sampler's accounting depends on: an atomic evaluation
//! ledger (who paid for which solve) and a point cache so the same state is
//! never solved twice.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use alloc::collections::BTreeMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::LinalgError;

mod elliptic;
mod fractional;
mod toys;

pub use elliptic::{elliptic_solve, EllipticRbfModel};
pub use fractional::{fractional_solve, FractionalSourceModel, SourceUnknowns};
pub use toys::{
    analytic_toy_models, ConstantModel, ExpSumModel, LinearGaussianModel, PolynomialModel,
};

/// Bilinear interpolation of a node-centered field on the unit square.
/// `values` is row-major with x fastest, `p` nodes per side.
pub(crate) fn bilinear_sample(values: &[f64], p: usize, x: f64, y: f64) -> f64 {
    let cells = (p - 1) as f64;
    let fx = (x * cells).clamp(0.0, cells);
    let fy = (y * cells).clamp(0.0, cells);
    let ix = (fx as usize).min(p - 2);
    let iy = (fy as usize).min(p - 2);
    let tx = fx - ix as f64;
    let ty = fy - iy as f64;
    let at = |i: usize, j: usize| values[j * p + i];
    (1.0 - ty) * ((1.0 - tx) * at(ix, iy) + tx * at(ix + 1, iy))
        + ty * ((1.0 - tx) * at(ix, iy + 1) + tx * at(ix + 1, iy + 1))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter vector has {got} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("fractional order {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("permeability field non-positive (node {node}, value {value:e})")]
    NonPositiveField { node: usize, value: f64 },
    #[error("non-finite parameter at coordinate {0}")]
    NonFiniteParameter(usize),
    #[error("{what} is invalid: {why}")]
    BadConfiguration { what: &'static str, why: String },
    #[error("linear solve failed: {0}")]
    Solver(#[from] LinalgError),
}

/// How expensive one evaluation is; cheap models skip the point cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostClass {
    Cheap,
    Expensive,
}

/// A deterministic map from parameters to observations.
///
/// Implementations must be pure: the same input yields bitwise the same
/// output, with no interior mutation. That contract is what makes the point
/// cache sound and lets design batches run concurrently.
pub trait ForwardModel: Send + Sync {
    fn n_z(&self) -> usize;
    fn n_d(&self) -> usize;
    fn cost_class(&self) -> CostClass;
    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, ModelError>;

    /// The same model with its discretization refined by `factor`
    /// (synthetic-data generation); analytic models return themselves.
    fn refined(&self, factor: u32) -> Arc<dyn ForwardModel>;
}

/// What an evaluation was for. The categories let any counting convention
/// be reconstructed after the fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    /// Prior-surrogate design solves.
    Offline,
    /// Correction-batch solves during refinement.
    Refinement,
    /// Acceptance-ratio evaluations of the exact posterior.
    Ratio,
    /// Error-indicator checks.
    Indicator,
    /// Diagnostics (grid references, feasible-set estimates).
    Diagnostic,
}

/// Snapshot of the ledger at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LedgerCounts {
    pub offline: u64,
    pub refinement: u64,
    pub ratio: u64,
    pub indicator: u64,
    pub diagnostic: u64,
    pub cache_hits: u64,
}

impl LedgerCounts {
    /// Actual model solves (cache hits are free).
    pub fn total(&self) -> u64 {
        self.offline + self.refinement + self.ratio + self.indicator + self.diagnostic
    }

    pub fn online(&self) -> u64 {
        self.refinement + self.ratio + self.indicator
    }
}

/// Atomic counters for high-fidelity evaluations, by category.
#[derive(Debug, Default)]
pub struct EvalLedger {
    offline: AtomicU64,
    refinement: AtomicU64,
    ratio: AtomicU64,
    indicator: AtomicU64,
    diagnostic: AtomicU64,
    cache_hits: AtomicU64,
}

impl EvalLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, kind: EvalKind) {
        let counter = match kind {
            EvalKind::Offline => &self.offline,
            EvalKind::Refinement => &self.refinement,
            EvalKind::Ratio => &self.ratio,
            EvalKind::Indicator => &self.indicator,
            EvalKind::Diagnostic => &self.diagnostic,
        };
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_cache_hit(&self) {
        self.cache_hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> LedgerCounts {
        LedgerCounts {
            offline: self.offline.load(Ordering::Relaxed),
            refinement: self.refinement.load(Ordering::Relaxed),
            ratio: self.ratio.load(Ordering::Relaxed),
            indicator: self.indicator.load(Ordering::Relaxed),
            diagnostic: self.diagnostic.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }
}

type CacheKey = Vec<u64>;

/// A forward model wired to a ledger and an optional point cache.
///
/// Every evaluation goes through [`HfEvaluator::evaluate`] with the category
/// that motivated it; repeated evaluations of a cached point cost nothing
/// and are tallied separately. The cache key is the exact bit pattern of
/// the parameter vector, which is sound because models are pure.
pub struct HfEvaluator {
    model: Arc<dyn ForwardModel>,
    ledger: Arc<EvalLedger>,
    cache: Option<spin::Mutex<BTreeMap<CacheKey, Vec<f64>>>>,
}

impl HfEvaluator {
    /// Wraps a model; expensive models get a point cache, cheap ones skip it.
    pub fn new(model: Arc<dyn ForwardModel>) -> Self {
        let cached = model.cost_class() == CostClass::Expensive;
        Self::with_cache(model, cached)
    }

    pub fn with_cache(model: Arc<dyn ForwardModel>, cached: bool) -> Self {
        HfEvaluator {
            model,
            ledger: Arc::new(EvalLedger::new()),
            cache: cached.then(|| spin::Mutex::new(BTreeMap::new())),
        }
    }

    pub fn model(&self) -> &Arc<dyn ForwardModel> {
        &self.model
    }

    pub fn n_z(&self) -> usize {
        self.model.n_z()
    }

    pub fn n_d(&self) -> usize {
        self.model.n_d()
    }

    pub fn ledger(&self) -> LedgerCounts {
        self.ledger.snapshot()
    }

    pub fn evaluate(&self, params: &[f64], kind: EvalKind) -> Result<Vec<f64>, ModelError> {
        if let Some(cache) = &self.cache {
            let key: CacheKey = params.iter().map(|p| p.to_bits()).collect();
            if let Some(hit) = cache.lock().get(&key) {
                self.ledger.record_cache_hit();
                return Ok(hit.clone());
            }
            let out = self.model.evaluate(params)?;
            self.ledger.record(kind);
            cache.lock().insert(key, out.clone());
            Ok(out)
        } else {
            let out = self.model.evaluate(params)?;
            self.ledger.record(kind);
            Ok(out)
        }
    }
}

impl core::fmt::Debug for HfEvaluator {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("HfEvaluator")
            .field("n_z", &self.model.n_z())
            .field("n_d", &self.model.n_d())
            .field("cached", &self.cache.is_some())
            .field("ledger", &self.ledger.snapshot())
            .finish()
    }
}

/// How synthetic observations are perturbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    /// `d = G(z) + e`, `e ~ N(0, sigma^2)` i.i.d.
    Additive { sigma: f64 },
    /// `d_j = u_j + max_j |u_j| * delta * xi_j`: the largest observation
    /// dictates the noise scale.
    MaxScaled { delta: f64 },
}

/// Synthetic data plus the effective noise standard deviation that
/// generated it (for max-scaled noise this is the quantity inference
/// should use as sigma).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub data: Vec<f64>,
    pub noise_sigma: f64,
    /// Noise-free fine-discretization output, kept for provenance.
    pub clean: Vec<f64>,
}

/// Evaluates `model` on a discretization refined by `fine_factor` at the
/// true parameters and adds seeded noise. Refining the mesh for data
/// generation keeps the inversion from being tested against its own
/// discretization error.
pub fn generate_synthetic_data(
    model: &dyn ForwardModel,
    true_params: &[f64],
    noise: NoiseSpec,
    fine_factor: u32,
    seed: u64,
) -> Result<SyntheticData, ModelError> {
    let fine = model.refined(fine_factor);
    let clean = fine.evaluate(true_params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = match noise {
        NoiseSpec::Additive { sigma } => sigma,
        NoiseSpec::MaxScaled { delta } => crate::linalg::norm_inf(&clean) * delta,
    };
    let data = clean
        .iter()
        .map(|&u| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            u + sigma * xi
        })
        .collect();
    Ok(SyntheticData {
        data,
        noise_sigma: sigma,
        clean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ledger_counts_by_category() {
        let model = Arc::new(ConstantModel::new(vec![1.0, 2.0], 2));
        let eval = HfEvaluator::with_cache(model, true);
        eval.evaluate(&[0.1, 0.2], EvalKind::Offline).unwrap();
        eval.evaluate(&[0.3, 0.4], EvalKind::Ratio).unwrap();
        eval.evaluate(&[0.1, 0.2], EvalKind::Indicator).unwrap();
        let counts = eval.ledger();
        assert_eq!(counts.offline, 1);
        assert_eq!(counts.ratio, 1);
        assert_eq!(counts.indicator, 0);
        assert_eq!(counts.cache_hits, 1);
        assert_eq!(counts.total(), 2);
    }

    #[test]
    fn cache_returns_identical_output() {
        let model = Arc::new(ExpSumModel::new(3));
        let eval = HfEvaluator::with_cache(model, true);
        let z = [0.25, -0.5, 1.5];
        let a = eval.evaluate(&z, EvalKind::Ratio).unwrap();
        let b = eval.evaluate(&z, EvalKind::Diagnostic).unwrap();
        assert_eq!(a, b);
        assert_eq!(eval.ledger().total(), 1);
    }

    #[test]
    fn uncached_evaluator_always_solves() {
        let model = Arc::new(ConstantModel::new(vec![0.0], 1));
        let eval = HfEvaluator::with_cache(model, false);
        eval.evaluate(&[0.5], EvalKind::Ratio).unwrap();
        eval.evaluate(&[0.5], EvalKind::Ratio).unwrap();
        assert_eq!(eval.ledger().ratio, 2);
        assert_eq!(eval.ledger().cache_hits, 0);
    }

    #[test]
    fn synthetic_data_zero_noise_is_exact() {
        let model = ExpSumModel::new(2);
        let out = generate_synthetic_data(
            &model,
            &[0.3, 0.7],
            NoiseSpec::Additive { sigma: 0.0 },
            2,
            9,
        )
        .unwrap();
        assert_eq!(out.data, model.evaluate(&[0.3, 0.7]).unwrap());
        assert_eq!(out.noise_sigma, 0.0);
    }

    #[test]
    fn synthetic_data_is_seeded() {
        let model = ConstantModel::new(vec![1.0, -2.0, 3.0], 2);
        let spec = NoiseSpec::MaxScaled { delta: 0.05 };
        let a = generate_synthetic_data(&model, &[0.0, 0.0], spec, 1, 4).unwrap();
        let b = generate_synthetic_data(&model, &[0.0, 0.0], spec, 1, 4).unwrap();
        let c = generate_synthetic_data(&model, &[0.0, 0.0], spec, 1, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, c.data);
        // Max-scaled sigma is max|u| * delta = 3 * 0.05.
        assert!((a.noise_sigma - 0.15).abs() < 1e-15);
    }
}
