//! Random-walk Metropolis-Hastings and the adaptive multi-fidelity driver.
//!
//! The adaptive sampler alternates long stretches of cheap surrogate MH with
//! a single exact-model check per stretch. When the check exposes a surrogate
//! error above threshold, a local correction is fitted around the offending
//! point and merged into the surrogate before the step is finally decided.
//!
//! Randomness discipline: one `ChaCha8Rng` drives the chain, consuming an
//! identical draw sequence regardless of acceptance or refinement outcomes
//! (per-coordinate normals, then one uniform per decision). Each correction
//! fit gets its own seed derived from the chain seed and the event number, so
//! a run is reproducible bit for bit from `(config, seed)` alone.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::bayes::{
    log_posterior, log_posterior_exact, log_posterior_with_surrogate, BayesError, InverseProblem,
    Marginal, NoiseModel,
};
use crate::derive_seed;
use crate::linalg::norm_inf;
use crate::models::{EvalKind, HfEvaluator, LedgerCounts, ModelError};
use crate::regression::{fit_prior_surrogate, RegressionError};
use crate::surrogate::{build_multifidelity, PcSurrogate, SurrogateError};

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("invalid proposal: {0}")]
    InvalidProposal(&'static str),
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("start state has zero posterior density")]
    StartOutOfSupport,
    #[error("state has {got} entries, problem expects {expected}")]
    StateDimension { expected: usize, got: usize },
    #[error("refinement at iteration {iteration} (radius {radius}) failed")]
    RefinementFailed {
        iteration: usize,
        radius: f64,
        #[source]
        source: SurrogateError,
    },
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Gaussian random-walk proposal with per-coordinate step sizes.
///
/// The proposal is symmetric, so its density ratio cancels in the acceptance
/// probability. A zero step pins the corresponding coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSpec {
    steps: Vec<f64>,
}

impl ProposalSpec {
    pub fn new(steps: Vec<f64>) -> Result<Self, McmcError> {
        if steps.is_empty() {
            return Err(McmcError::InvalidProposal("no step sizes"));
        }
        if steps.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(McmcError::InvalidProposal(
                "step sizes must be finite and non-negative",
            ));
        }
        Ok(ProposalSpec { steps })
    }

    pub fn isotropic(dim: usize, step: f64) -> Result<Self, McmcError> {
        Self::new(alloc::vec![step; dim])
    }

    /// Step-size rule of thumb: 5% of each box width, a tenth of each
    /// Gaussian spread, and 0.1 for the log-variance coordinate.
    pub fn default_for(problem: &InverseProblem) -> Self {
        let mut steps: Vec<f64> = problem
            .prior()
            .marginals()
            .iter()
            .map(|m| match *m {
                Marginal::Uniform { lo, hi } => 0.05 * (hi - lo),
                Marginal::Gaussian { sd, .. } => 0.1 * sd,
            })
            .collect();
        if let NoiseModel::HierarchicalSigma { .. } = problem.noise() {
            steps.push(0.1);
        }
        ProposalSpec { steps }
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn dim(&self) -> usize {
        self.steps.len()
    }

    fn perturb<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Vec<f64> {
        state
            .iter()
            .zip(&self.steps)
            .map(|(&x, &s)| {
                let xi: f64 = StandardNormal.sample(rng);
                x + s * xi
            })
            .collect()
    }
}

/// Metropolis-Hastings acceptance probability in log space.
///
/// For symmetric proposals pass zero for both proposal log densities. An
/// impossible proposal is never accepted; an impossible current state is
/// always left.
pub fn mh_accept_prob(
    log_target_current: f64,
    log_target_proposed: f64,
    log_q_forward: f64,
    log_q_backward: f64,
) -> f64 {
    if log_target_proposed == f64::NEG_INFINITY {
        return 0.0;
    }
    if log_target_current == f64::NEG_INFINITY {
        return 1.0;
    }
    let delta = (log_target_proposed - log_target_current) + (log_q_backward - log_q_forward);
    if delta >= 0.0 {
        1.0
    } else {
        libm::exp(delta)
    }
}

/// One surrogate-refinement event during an adaptive run.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementEvent {
    /// Outer iteration (1-based) in which the refinement fired.
    pub iteration: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    /// Error-indicator value that triggered the refinement.
    pub err: f64,
    /// Number of exact-model evaluations spent on the correction fit.
    pub q_c: usize,
    /// Generation of the merged surrogate after this event.
    pub generation: u32,
}

/// A realized chain: states after each transition (the start is excluded),
/// aligned log posterior values, and bookkeeping.
///
/// `eval_snapshots[k]` is the evaluation ledger before transition `k`, with
/// one extra entry at the end for the final tally.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub states: Vec<Vec<f64>>,
    pub log_posteriors: Vec<f64>,
    /// Whether each transition accepted its proposal.
    pub accepted: Vec<bool>,
    pub accept_count: usize,
    pub eval_snapshots: Vec<LedgerCounts>,
    pub refinement_events: Vec<RefinementEvent>,
}

impl Chain {
    fn with_capacity(n: usize) -> Self {
        Chain {
            states: Vec::with_capacity(n),
            log_posteriors: Vec::with_capacity(n),
            accepted: Vec::with_capacity(n),
            accept_count: 0,
            eval_snapshots: Vec::with_capacity(n + 1),
            refinement_events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn accept_rate(&self) -> f64 {
        if self.states.is_empty() {
            0.0
        } else {
            self.accept_count as f64 / self.states.len() as f64
        }
    }
}

/// Configuration of the adaptive multi-fidelity sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpcConfig {
    /// Subchain length: each outer iteration takes `m - 1` surrogate steps
    /// and one exact-checked step.
    pub m: usize,
    /// Number of outer iterations.
    pub i_max: usize,
    /// Refinement threshold on the error indicator.
    pub epsilon: f64,
    /// Upper threshold: indicator values at or below it also shrink the
    /// refinement radius.
    pub epsilon0: f64,
    /// Initial refinement ball radius.
    pub radius: f64,
    /// Radius shrink factor.
    pub shrink: f64,
    /// Total order of the prior surrogate (used when none is attached).
    pub n: usize,
    /// Total order of the local corrections.
    pub n_c: usize,
    pub seed: u64,
}

impl AmpcConfig {
    pub fn new(n: usize, n_c: usize, seed: u64) -> Self {
        AmpcConfig {
            m: 5000,
            i_max: 10,
            epsilon: 1e-3,
            epsilon0: 0.1,
            radius: 0.1,
            shrink: 0.5,
            n,
            n_c,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), McmcError> {
        if self.m < 2 {
            return Err(McmcError::InvalidConfig("subchain length must be at least 2"));
        }
        if self.i_max == 0 {
            return Err(McmcError::InvalidConfig("need at least one outer iteration"));
        }
        if !(self.epsilon > 0.0) {
            return Err(McmcError::InvalidConfig("refinement threshold must be positive"));
        }
        if !(self.epsilon <= self.epsilon0) {
            return Err(McmcError::InvalidConfig(
                "refinement threshold must not exceed the upper threshold",
            ));
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(McmcError::InvalidConfig("shrink factor must be in (0, 1]"));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(McmcError::InvalidConfig("radius must be positive and finite"));
        }
        if self.n_c > self.n {
            return Err(McmcError::InvalidConfig(
                "correction order must not exceed the surrogate order",
            ));
        }
        Ok(())
    }
}

/// Output of an adaptive run: the chain plus the surrogate as it stood at
/// the end, ready for reuse or export.
#[derive(Debug)]
pub struct AmpcRun {
    pub chain: Chain,
    pub surrogate: PcSurrogate,
    pub final_radius: f64,
}

fn check_dims(problem: &InverseProblem, proposal: &ProposalSpec, start: &[f64]) -> Result<(), McmcError> {
    let expected = problem.state_dim();
    if start.len() != expected {
        return Err(McmcError::StateDimension {
            expected,
            got: start.len(),
        });
    }
    if proposal.dim() != expected {
        return Err(McmcError::InvalidProposal(
            "proposal dimension does not match the problem state",
        ));
    }
    Ok(())
}

/// Plain Metropolis-Hastings against the exact or surrogate posterior.
pub fn run_mh(
    problem: &InverseProblem,
    proposal: &ProposalSpec,
    n_steps: usize,
    start: &[f64],
    use_surrogate: bool,
    seed: u64,
) -> Result<Chain, McmcError> {
    check_dims(problem, proposal, start)?;
    let mut lp = log_posterior(problem, start, use_surrogate)?;
    if lp == f64::NEG_INFINITY {
        return Err(McmcError::StartOutOfSupport);
    }
    let evaluator = problem.evaluator();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain = Chain::with_capacity(n_steps);
    let mut current = start.to_vec();
    chain.eval_snapshots.push(evaluator.ledger());
    for _ in 0..n_steps {
        let candidate = proposal.perturb(&current, &mut rng);
        let lp_candidate = log_posterior(problem, &candidate, use_surrogate)?;
        let alpha = mh_accept_prob(lp, lp_candidate, 0.0, 0.0);
        let u: f64 = rng.gen();
        let took = u < alpha;
        if took {
            current = candidate;
            lp = lp_candidate;
            chain.accept_count += 1;
        }
        chain.states.push(current.clone());
        chain.log_posteriors.push(lp);
        chain.accepted.push(took);
        chain.eval_snapshots.push(evaluator.ledger());
    }
    Ok(chain)
}

/// Sup-norm discrepancy between the exact model and the surrogate at `y`.
/// Costs one exact evaluation, served from cache when `y` was just checked.
pub fn error_indicator(
    high: &HfEvaluator,
    low: &PcSurrogate,
    y: &[f64],
) -> Result<f64, McmcError> {
    let exact = high.evaluate(y, EvalKind::Indicator)?;
    let approx = low.evaluate(y)?;
    let diff: Vec<f64> = exact.iter().zip(&approx).map(|(a, b)| a - b).collect();
    Ok(norm_inf(&diff))
}

/// Adaptive multi-fidelity MH.
///
/// Starting from the attached surrogate (or one fitted to the prior at order
/// `config.n`), each outer iteration runs `m - 1` surrogate-MH steps, then
/// screens one proposal with the exact posterior ratio. The screening winner
/// becomes the error-indicator point; an indicator above `epsilon` triggers a
/// local correction of order `n_c` centered there, merged into the surrogate
/// before the final accept/reject of the proposal is made with the refreshed
/// surrogate ratio. Indicator values at or below `epsilon0` also shrink the
/// correction radius for subsequent events.
pub fn run_ampc(
    problem: &InverseProblem,
    config: &AmpcConfig,
    proposal: &ProposalSpec,
    start: &[f64],
) -> Result<AmpcRun, McmcError> {
    config.validate()?;
    check_dims(problem, proposal, start)?;
    let evaluator = problem.evaluator();
    let mut low = match problem.surrogate() {
        Some(s) => s.clone(),
        None => fit_prior_surrogate(
            evaluator,
            problem.prior(),
            config.n,
            derive_seed(config.seed, 0),
        )?,
    };
    let n_z = problem.n_z();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chain = Chain::with_capacity(config.m * config.i_max);
    let mut current = start.to_vec();
    let mut lp = log_posterior_with_surrogate(problem, &current, &low)?;
    if lp == f64::NEG_INFINITY {
        return Err(McmcError::StartOutOfSupport);
    }
    let mut radius = config.radius;
    chain.eval_snapshots.push(evaluator.ledger());

    for iteration in 1..=config.i_max {
        for _ in 0..config.m - 1 {
            let candidate = proposal.perturb(&current, &mut rng);
            let lp_candidate = log_posterior_with_surrogate(problem, &candidate, &low)?;
            let alpha = mh_accept_prob(lp, lp_candidate, 0.0, 0.0);
            let u: f64 = rng.gen();
            let took = u < alpha;
            if took {
                current = candidate;
                lp = lp_candidate;
                chain.accept_count += 1;
            }
            chain.states.push(current.clone());
            chain.log_posteriors.push(lp);
            chain.accepted.push(took);
            chain.eval_snapshots.push(evaluator.ledger());
        }

        // Screen one proposal with the exact posterior ratio.
        let z_star = proposal.perturb(&current, &mut rng);
        let lp_star_exact = log_posterior_exact(problem, &z_star, EvalKind::Ratio)?;
        let alpha = if lp_star_exact == f64::NEG_INFINITY {
            0.0
        } else {
            let lp_current_exact = log_posterior_exact(problem, &current, EvalKind::Ratio)?;
            mh_accept_prob(lp_current_exact, lp_star_exact, 0.0, 0.0)
        };
        let u_alpha: f64 = rng.gen();
        let y = if u_alpha < alpha { &z_star } else { &current };

        let err = error_indicator(evaluator, &low, &y[..n_z])?;
        if err > config.epsilon {
            let event_seed = derive_seed(config.seed, chain.refinement_events.len() as u64 + 1);
            let refit = build_multifidelity(&low, evaluator, config.n_c, &y[..n_z], radius, event_seed)
                .map_err(|source| McmcError::RefinementFailed {
                    iteration,
                    radius,
                    source,
                })?;
            low = refit.merged;
            chain.refinement_events.push(RefinementEvent {
                iteration,
                center: y[..n_z].to_vec(),
                radius,
                err,
                q_c: refit.correction.provenance().design_size,
                generation: low.generation(),
            });
            if err <= config.epsilon0 {
                radius *= config.shrink;
            }
        }

        // Final accept/reject with the current (possibly refreshed)
        // surrogate ratio, both sides on the same surrogate generation.
        let lp_star = log_posterior_with_surrogate(problem, &z_star, &low)?;
        let lp_current = log_posterior_with_surrogate(problem, &current, &low)?;
        let beta = mh_accept_prob(lp_current, lp_star, 0.0, 0.0);
        let u_beta: f64 = rng.gen();
        let took = u_beta < beta;
        if took {
            current = z_star;
            lp = lp_star;
            chain.accept_count += 1;
        } else {
            lp = lp_current;
        }
        chain.states.push(current.clone());
        chain.log_posteriors.push(lp);
        chain.accepted.push(took);
        chain.eval_snapshots.push(evaluator.ledger());
    }

    Ok(AmpcRun {
        chain,
        surrogate: low,
        final_radius: radius,
    })
}
