//! Priors, likelihoods, and posteriors, in exact and surrogate-backed
//! flavors, including the hierarchical treatment of unknown noise.
//!
//! All densities are handled in log space and unnormalized: samplers only
//! ever need differences. Out-of-support states map to negative infinity
//! rather than errors, and the forward model is not consulted for them.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::basis::BasisFamily;
use crate::models::{EvalKind, HfEvaluator, ModelError};
use crate::surrogate::{AffineMap, PcSurrogate, SurrogateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("noise sigma {0} must be positive and finite")]
    InvalidSigma(f64),
    #[error("state has {got} entries, problem expects {expected}")]
    StateDimension { expected: usize, got: usize },
    #[error("data has {got} entries, model produces {expected}")]
    DataDimension { expected: usize, got: usize },
    #[error("forward output has {got} entries, data has {expected}")]
    OutputDimension { expected: usize, got: usize },
    #[error("prior has {got} marginals, model has {expected} parameters")]
    PriorDimension { expected: usize, got: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(&'static str),
    #[error("invalid noise model: {0}")]
    InvalidNoise(&'static str),
    #[error("problem has no surrogate attached")]
    NoSurrogate,
    #[error("surrogate does not match the problem: {0}")]
    SurrogateMismatch(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// One independent prior marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
}

/// Independent product prior over the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    marginals: Vec<Marginal>,
}

impl PriorSpec {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self, BayesError> {
        if marginals.is_empty() {
            return Err(BayesError::InvalidPrior("no marginals"));
        }
        for m in &marginals {
            match *m {
                Marginal::Uniform { lo, hi } => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(BayesError::InvalidPrior("uniform bounds must be finite with lo < hi"));
                    }
                }
                Marginal::Gaussian { mean, sd } => {
                    if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
                        return Err(BayesError::InvalidPrior("gaussian needs finite mean and positive sd"));
                    }
                }
            }
        }
        Ok(PriorSpec { marginals })
    }

    pub fn uniform_box(lo: f64, hi: f64, dim: usize) -> Result<Self, BayesError> {
        Self::new(alloc::vec![Marginal::Uniform { lo, hi }; dim])
    }

    pub fn standard_gaussian(dim: usize) -> Result<Self, BayesError> {
        Self::new(alloc::vec![Marginal::Gaussian { mean: 0.0, sd: 1.0 }; dim])
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    /// The basis family whose weight matches every marginal, if one exists.
    pub fn basis_family(&self) -> Option<BasisFamily> {
        let mut family = None;
        for m in &self.marginals {
            let f = match m {
                Marginal::Uniform { .. } => BasisFamily::Legendre,
                Marginal::Gaussian { .. } => BasisFamily::Hermite,
            };
            match family {
                None => family = Some(f),
                Some(prev) if prev != f => return None,
                _ => {}
            }
        }
        family
    }

    /// Map from the basis's standardized coordinates to physical ones.
    pub fn affine_map(&self) -> AffineMap {
        let mut shift = Vec::with_capacity(self.dim());
        let mut scale = Vec::with_capacity(self.dim());
        for m in &self.marginals {
            match *m {
                Marginal::Uniform { lo, hi } => {
                    shift.push(0.5 * (lo + hi));
                    scale.push(0.5 * (hi - lo));
                }
                Marginal::Gaussian { mean, sd } => {
                    shift.push(mean);
                    scale.push(sd);
                }
            }
        }
        AffineMap::new(shift, scale)
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim()
            && z.iter().zip(&self.marginals).all(|(&v, m)| match *m {
                Marginal::Uniform { lo, hi } => v >= lo && v <= hi,
                Marginal::Gaussian { .. } => v.is_finite(),
            })
    }

    /// Log prior density; negative infinity outside the support.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        if !self.contains(z) {
            return f64::NEG_INFINITY;
        }
        let mut lp = 0.0;
        for (&v, m) in z.iter().zip(&self.marginals) {
            match *m {
                Marginal::Uniform { lo, hi } => lp -= libm::log(hi - lo),
                Marginal::Gaussian { mean, sd } => {
                    let t = (v - mean) / sd;
                    lp -= 0.5 * libm::log(core::f64::consts::TAU) + libm::log(sd) + 0.5 * t * t;
                }
            }
        }
        lp
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals
            .iter()
            .map(|m| match *m {
                Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
                Marginal::Gaussian { mean, sd } => {
                    let xi: f64 = StandardNormal.sample(rng);
                    mean + sd * xi
                }
            })
            .collect()
    }
}

/// Observation-noise treatment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    KnownSigma(f64),
    /// Noise variance unknown, inverse-Gamma(shape, scale) prior on it;
    /// the sampler state carries log(sigma^2) as its last coordinate.
    HierarchicalSigma { shape: f64, scale: f64 },
}

/// A Bayesian inverse problem: forward model, prior, data, noise model,
/// and optionally a surrogate standing in for the model.
#[derive(Debug)]
pub struct InverseProblem {
    evaluator: HfEvaluator,
    surrogate: Option<PcSurrogate>,
    prior: PriorSpec,
    data: Vec<f64>,
    noise: NoiseModel,
}

impl InverseProblem {
    pub fn new(
        evaluator: HfEvaluator,
        prior: PriorSpec,
        data: Vec<f64>,
        noise: NoiseModel,
    ) -> Result<Self, BayesError> {
        if prior.dim() != evaluator.n_z() {
            return Err(BayesError::PriorDimension {
                expected: evaluator.n_z(),
                got: prior.dim(),
            });
        }
        if data.len() != evaluator.n_d() {
            return Err(BayesError::DataDimension {
                expected: evaluator.n_d(),
                got: data.len(),
            });
        }
        match noise {
            NoiseModel::KnownSigma(s) => {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(BayesError::InvalidSigma(s));
                }
            }
            NoiseModel::HierarchicalSigma { shape, scale } => {
                if !(shape > 0.0) || !(scale > 0.0) {
                    return Err(BayesError::InvalidNoise("shape and scale must be positive"));
                }
            }
        }
        Ok(InverseProblem {
            evaluator,
            surrogate: None,
            prior,
            data,
            noise,
        })
    }

    pub fn with_surrogate(mut self, surrogate: PcSurrogate) -> Result<Self, BayesError> {
        self.set_surrogate(surrogate)?;
        Ok(self)
    }

    pub fn set_surrogate(&mut self, surrogate: PcSurrogate) -> Result<(), BayesError> {
        if surrogate.n_z() != self.n_z() {
            return Err(BayesError::SurrogateMismatch("parameter dimension"));
        }
        if surrogate.n_d() != self.evaluator.n_d() {
            return Err(BayesError::SurrogateMismatch("output dimension"));
        }
        if *surrogate.prior_map() != self.prior.affine_map() {
            return Err(BayesError::SurrogateMismatch("prior mapping"));
        }
        self.surrogate = Some(surrogate);
        Ok(())
    }

    pub fn evaluator(&self) -> &HfEvaluator {
        &self.evaluator
    }

    pub fn surrogate(&self) -> Option<&PcSurrogate> {
        self.surrogate.as_ref()
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn n_z(&self) -> usize {
        self.prior.dim()
    }

    /// Sampler state length: parameters, plus log(sigma^2) when the noise
    /// level is inferred.
    pub fn state_dim(&self) -> usize {
        match self.noise {
            NoiseModel::KnownSigma(_) => self.n_z(),
            NoiseModel::HierarchicalSigma { .. } => self.n_z() + 1,
        }
    }
}

/// Gaussian i.i.d. log likelihood of the problem's data given a forward
/// output: `-n_d log(sigma sqrt(2 pi)) - ||d - G||^2 / (2 sigma^2)`.
pub fn log_likelihood(
    problem: &InverseProblem,
    forward_output: &[f64],
    sigma: f64,
) -> Result<f64, BayesError> {
    Ok(-(problem.data.len() as f64)
        * (libm::log(sigma) + 0.5 * libm::log(core::f64::consts::TAU))
        - potential(problem, forward_output, sigma)?)
}

/// The misfit `||d - G||^2 / (2 sigma^2)`, i.e. the negative log likelihood
/// without its normalizer.
pub fn potential(
    problem: &InverseProblem,
    forward_output: &[f64],
    sigma: f64,
) -> Result<f64, BayesError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(BayesError::InvalidSigma(sigma));
    }
    if forward_output.len() != problem.data.len() {
        return Err(BayesError::OutputDimension {
            expected: problem.data.len(),
            got: forward_output.len(),
        });
    }
    let ss: f64 = problem
        .data
        .iter()
        .zip(forward_output)
        .map(|(d, g)| (d - g) * (d - g))
        .sum();
    Ok(ss / (2.0 * sigma * sigma))
}

/// Log posterior with the forward map supplied by the caller. Returns
/// negative infinity outside the prior support without consulting the map.
fn log_posterior_core<F>(
    problem: &InverseProblem,
    state: &[f64],
    mut forward: F,
) -> Result<f64, BayesError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, BayesError>,
{
    if state.len() != problem.state_dim() {
        return Err(BayesError::StateDimension {
            expected: problem.state_dim(),
            got: state.len(),
        });
    }
    let n_z = problem.n_z();
    let z = &state[..n_z];
    if !problem.prior.contains(z) {
        return Ok(f64::NEG_INFINITY);
    }
    let (sigma, noise_log_prior) = match problem.noise {
        NoiseModel::KnownSigma(s) => (s, 0.0),
        NoiseModel::HierarchicalSigma { shape, scale } => {
            let ell = state[n_z];
            if !ell.is_finite() {
                return Ok(f64::NEG_INFINITY);
            }
            // Inverse-Gamma on sigma^2, written in ell = log(sigma^2)
            // coordinates with the Jacobian folded in.
            let lp = shape * libm::log(scale) - libm::lgamma(shape) - shape * ell
                - scale * libm::exp(-ell);
            (libm::exp(0.5 * ell), lp)
        }
    };
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let g = forward(z)?;
    Ok(problem.prior.log_density(z) + noise_log_prior + log_likelihood(problem, &g, sigma)?)
}

/// Log posterior through the attached surrogate or the exact model.
pub fn log_posterior(
    problem: &InverseProblem,
    state: &[f64],
    use_surrogate: bool,
) -> Result<f64, BayesError> {
    if use_surrogate {
        let surrogate = problem.surrogate().ok_or(BayesError::NoSurrogate)?;
        log_posterior_with_surrogate(problem, state, surrogate)
    } else {
        log_posterior_exact(problem, state, EvalKind::Ratio)
    }
}

/// Log posterior under an explicit surrogate (the adaptive sampler swaps
/// surrogates mid-run, so the current one is an argument, not a field).
pub fn log_posterior_with_surrogate(
    problem: &InverseProblem,
    state: &[f64],
    surrogate: &PcSurrogate,
) -> Result<f64, BayesError> {
    log_posterior_core(problem, state, |z| Ok(surrogate.evaluate(z)?))
}

/// Log posterior through the high-fidelity model, ledgered under `kind`.
pub fn log_posterior_exact(
    problem: &InverseProblem,
    state: &[f64],
    kind: EvalKind,
) -> Result<f64, BayesError> {
    log_posterior_core(problem, state, |z| {
        Ok(problem.evaluator.evaluate(z, kind)?)
    })
}
