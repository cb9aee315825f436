//! Cross-module flows: synthetic data through problem assembly, surrogate
//! fitting, adaptive sampling, and diagnostics, checked against closed-form
//! oracles where one exists and against structural invariants otherwise.

use std::sync::Arc;

use ampc_core::bayes::{InverseProblem, NoiseModel, PriorSpec};
use ampc_core::diagnostics::{chain_summary, feasible_set_measure};
use ampc_core::mcmc::{run_ampc, run_mh, AmpcConfig, ProposalSpec};
use ampc_core::models::{
    generate_synthetic_data, CostClass, ForwardModel, FractionalSourceModel, HfEvaluator,
    LinearGaussianModel, ModelError, NoiseSpec,
};
use ampc_core::regression::fit_prior_surrogate;

use proptest::prelude::*;

/// `u = (exp(z1 + z2), exp(z1 - z2))`: nonlinear, outside every polynomial
/// span, and injective, so the posterior concentrates at a point instead of
/// along a ridge.
#[derive(Debug, Clone)]
struct TwoExpModel;

impl ForwardModel for TwoExpModel {
    fn n_z(&self) -> usize {
        2
    }

    fn n_d(&self) -> usize {
        2
    }

    fn cost_class(&self) -> CostClass {
        CostClass::Cheap
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, ModelError> {
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(ModelError::NonFiniteParameter(i));
        }
        Ok(vec![
            libm::exp(params[0] + params[1]),
            libm::exp(params[0] - params[1]),
        ])
    }

    fn refined(&self, _factor: u32) -> Arc<dyn ForwardModel> {
        Arc::new(self.clone())
    }
}

#[test]
fn linear_gaussian_pipeline_matches_conjugate_posterior() {
    let n = 2;
    let sigma = 0.3;
    let truth = [0.8, -0.5];
    let model = LinearGaussianModel::identity(n);
    let data = generate_synthetic_data(
        &model,
        &truth,
        NoiseSpec::Additive { sigma },
        1,
        2024,
    )
    .unwrap();

    // Identity model with a standard normal prior: the posterior factorizes
    // with mean d / (1 + sigma^2) and variance sigma^2 / (1 + sigma^2).
    let shrink = 1.0 / (1.0 + sigma * sigma);
    let post_mean: Vec<f64> = data.data.iter().map(|d| d * shrink).collect();
    let post_var = sigma * sigma * shrink;

    let prior = PriorSpec::standard_gaussian(n).unwrap();
    let mut problem = InverseProblem::new(
        HfEvaluator::new(Arc::new(model)),
        prior.clone(),
        data.data.clone(),
        NoiseModel::KnownSigma(sigma),
    )
    .unwrap();
    let low = fit_prior_surrogate(problem.evaluator(), &prior, 2, 11).unwrap();
    problem.set_surrogate(low).unwrap();

    let mut config = AmpcConfig::new(2, 1, 5);
    config.m = 2500;
    config.i_max = 8;
    let proposal = ProposalSpec::isotropic(n, 0.4).unwrap();
    let run = run_ampc(&problem, &config, &proposal, &[0.0, 0.0]).unwrap();

    // A degree-2 surrogate reproduces a linear model exactly, so the
    // adaptive loop must never spend a refinement batch.
    assert!(run.chain.refinement_events.is_empty());
    let counts = problem.evaluator().ledger();
    assert_eq!(counts.refinement, 0);

    let summary = chain_summary(&run.chain, 0.4).unwrap();
    for k in 0..n {
        let mc_err = 4.0 * post_var.sqrt() / summary.ess[k].sqrt();
        assert!(
            (summary.means[k] - post_mean[k]).abs() < mc_err.max(0.02),
            "coordinate {k}: mean {} vs analytic {}",
            summary.means[k],
            post_mean[k]
        );
        assert!((summary.standard_deviations[k] - post_var.sqrt()).abs() < 0.15 * post_var.sqrt());
    }
}

#[test]
fn source_inversion_pipeline_structure_is_consistent() {
    let model = FractionalSourceModel::new(
        ampc_core::models::SourceUnknowns::Location,
        0.8,
        17,
        0.02,
        vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)],
        vec![0.25, 0.75],
    )
    .unwrap()
    .with_amplitude(100.0);
    let data = generate_synthetic_data(
        &model,
        &[0.4, 0.6],
        NoiseSpec::Additive { sigma: 0.2 },
        2,
        77,
    )
    .unwrap();
    let prior = PriorSpec::uniform_box(0.0, 1.0, 2).unwrap();
    let problem = InverseProblem::new(
        HfEvaluator::new(Arc::new(model)),
        prior,
        data.data,
        NoiseModel::KnownSigma(0.2),
    )
    .unwrap();

    let mut config = AmpcConfig::new(2, 2, 31);
    config.m = 60;
    config.i_max = 5;
    let proposal = ProposalSpec::isotropic(2, 0.05).unwrap();
    // No surrogate attached: the run fits its own prior surrogate first.
    let run = run_ampc(&problem, &config, &proposal, &[0.5, 0.5]).unwrap();

    let chain = &run.chain;
    let n_states = config.m * config.i_max;
    assert_eq!(chain.states.len(), n_states);
    assert_eq!(chain.log_posteriors.len(), n_states);
    assert_eq!(chain.accepted.len(), n_states);
    assert_eq!(chain.eval_snapshots.len(), n_states + 1);
    assert_eq!(
        chain.accepted.iter().filter(|&&a| a).count(),
        chain.accept_count
    );
    assert!(chain.log_posteriors.iter().all(|lp| lp.is_finite()));
    assert!(chain
        .states
        .iter()
        .all(|s| s.iter().all(|&x| (0.0..=1.0).contains(&x))));

    let counts = problem.evaluator().ledger();
    let q_c = 12u64;
    assert_eq!(counts.offline, 2 * 6);
    assert_eq!(counts.refinement, q_c * chain.refinement_events.len() as u64);
    assert!(counts.ratio <= 2 * config.i_max as u64);
    assert_eq!(counts.indicator + counts.cache_hits, config.i_max as u64);
    assert_eq!(
        counts.total(),
        counts.offline + counts.refinement + counts.ratio + counts.indicator
    );

    // Ledger snapshots only ever grow, and refinement events land in
    // increasing outer iterations with the exact geometric radius.
    for pair in chain.eval_snapshots.windows(2) {
        assert!(pair[1].offline >= pair[0].offline);
        assert!(pair[1].refinement >= pair[0].refinement);
        assert!(pair[1].ratio >= pair[0].ratio);
        assert!(pair[1].indicator >= pair[0].indicator);
        assert!(pair[1].cache_hits >= pair[0].cache_hits);
    }
    let mut shrinks = 0;
    let mut last_iter = 0;
    for event in &chain.refinement_events {
        assert!(event.iteration > last_iter);
        last_iter = event.iteration;
        assert_eq!(event.radius, config.radius * config.shrink.powi(shrinks));
        assert_eq!(event.q_c, q_c as usize);
        if event.err <= config.epsilon0 {
            shrinks += 1;
        }
    }
    assert_eq!(run.final_radius, config.radius * config.shrink.powi(shrinks));
    assert_eq!(run.surrogate.generation(), chain.refinement_events.len() as u32);
}

#[test]
fn hierarchical_noise_pipeline_recovers_scale_and_location() {
    let n_z = 2;
    let n_d = 8;
    let a: Vec<f64> = vec![
        1.0, 0.2, //
        -0.4, 1.1, //
        0.7, -0.3, //
        0.5, 0.9, //
        -1.2, 0.4, //
        0.3, -0.8, //
        0.9, 0.6, //
        -0.2, -1.0,
    ];
    let model = LinearGaussianModel::new(a, vec![0.0; n_d], n_z);
    let truth = [0.3, -0.2];
    let sigma_true = 0.15;
    let data = generate_synthetic_data(
        &model,
        &truth,
        NoiseSpec::Additive { sigma: sigma_true },
        1,
        404,
    )
    .unwrap();
    let problem = InverseProblem::new(
        HfEvaluator::new(Arc::new(model)),
        PriorSpec::standard_gaussian(n_z).unwrap(),
        data.data,
        NoiseModel::HierarchicalSigma {
            shape: 1e-3,
            scale: 1e-3,
        },
    )
    .unwrap();
    assert_eq!(problem.state_dim(), n_z + 1);

    let proposal = ProposalSpec::default_for(&problem);
    let start = vec![0.0, 0.0, 0.0];
    let chain = run_mh(&problem, &proposal, 8000, &start, false, 99).unwrap();
    let summary = chain_summary(&chain, 0.4).unwrap();

    for k in 0..n_z {
        assert!(
            (summary.means[k] - truth[k]).abs() < 0.12,
            "z{k} mean {} vs truth {}",
            summary.means[k],
            truth[k]
        );
    }
    // The last coordinate carries log(sigma^2); with eight observations the
    // scale is identified only loosely, so accept a factor-of-three band.
    let sigma2_hat: f64 = {
        let tail = &chain.states[summary.burn_in..];
        tail.iter().map(|s| libm::exp(s[n_z])).sum::<f64>() / tail.len() as f64
    };
    let ratio = sigma2_hat / (sigma_true * sigma_true);
    assert!(
        (1.0 / 3.0..=3.0).contains(&ratio),
        "sigma^2 posterior mean {} vs generating {}",
        sigma2_hat,
        sigma_true * sigma_true
    );
}

#[test]
fn feasible_measure_stays_zero_for_exact_surrogate_and_flags_crude_one() {
    let n = 2;
    let sigma = 0.3;
    let model = LinearGaussianModel::identity(n);
    let data = generate_synthetic_data(&model, &[0.5, -0.1], NoiseSpec::Additive { sigma }, 1, 8)
        .unwrap();
    let prior = PriorSpec::standard_gaussian(n).unwrap();
    let mut problem = InverseProblem::new(
        HfEvaluator::new(Arc::new(model)),
        prior.clone(),
        data.data,
        NoiseModel::KnownSigma(sigma),
    )
    .unwrap();
    let exact = fit_prior_surrogate(problem.evaluator(), &prior, 1, 21).unwrap();
    problem.set_surrogate(exact.clone()).unwrap();

    let proposal = ProposalSpec::isotropic(n, 0.4).unwrap();
    let mut config = AmpcConfig::new(1, 1, 3);
    config.m = 400;
    config.i_max = 3;
    let run = run_ampc(&problem, &config, &proposal, &[0.0, 0.0]).unwrap();
    let samples: Vec<Vec<f64>> = run.chain.states.iter().rev().take(200).cloned().collect();

    // Exact surrogate: the violation measure is identically zero at every
    // generation, so the sequence across the run is (weakly) decreasing.
    let estimate = feasible_set_measure(&problem, &exact, 1e-8, &samples).unwrap();
    assert_eq!(estimate.fraction, 0.0);
    assert_eq!(estimate.exceedances, 0);
    let refreshed = feasible_set_measure(&problem, &run.surrogate, 1e-8, &samples).unwrap();
    assert!(refreshed.fraction <= estimate.fraction);

    // A surrogate fitted to the wrong data scale violates everywhere.
    let wrong = {
        let scaled = LinearGaussianModel::new(vec![3.0, 0.0, 0.0, 3.0], vec![1.0, 1.0], n);
        let scratch = HfEvaluator::new(Arc::new(scaled));
        fit_prior_surrogate(&scratch, &prior, 1, 22).unwrap()
    };
    let bad = feasible_set_measure(&problem, &wrong, 1e-3, &samples).unwrap();
    assert_eq!(bad.fraction, 1.0);
    assert!(bad.standard_error >= 0.0);
}

#[test]
fn adaptive_refinement_improves_indicator_on_nonpolynomial_model() {
    let sigma = 0.05;
    let truth = [0.3, -0.4];
    let model = TwoExpModel;
    let data =
        generate_synthetic_data(&model, &truth, NoiseSpec::Additive { sigma }, 1, 61).unwrap();
    let prior = PriorSpec::uniform_box(-1.0, 1.0, 2).unwrap();
    let mut problem = InverseProblem::new(
        HfEvaluator::new(Arc::new(model)),
        prior.clone(),
        data.data,
        NoiseModel::KnownSigma(sigma),
    )
    .unwrap();
    let low = fit_prior_surrogate(problem.evaluator(), &prior, 2, 300).unwrap();
    problem.set_surrogate(low).unwrap();

    let mut config = AmpcConfig::new(2, 2, 17);
    config.m = 300;
    config.i_max = 8;
    config.epsilon = 1e-9;
    let proposal = ProposalSpec::isotropic(2, 0.08).unwrap();
    let run = run_ampc(&problem, &config, &proposal, &[0.0, 0.0]).unwrap();

    let events = &run.chain.refinement_events;
    assert!(events.len() >= 4, "expected steady refinement, got {}", events.len());
    let first = events.first().unwrap().err;
    let last = events.last().unwrap().err;
    assert!(
        last < first,
        "indicator should improve near the mode: first {first:.3e}, last {last:.3e}"
    );
    assert!(run.surrogate.generation() as usize == events.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Structural chain invariants hold for arbitrary seeds and loop shapes.
    #[test]
    fn chain_invariants_hold_for_any_seed(
        seed in 0u64..1000,
        m in 2usize..40,
        i_max in 1usize..4,
    ) {
        let sigma = 0.2;
        let model = TwoExpModel;
        let data = generate_synthetic_data(&model, &[0.1, 0.2], NoiseSpec::Additive { sigma }, 1, 5)
            .unwrap();
        let prior = PriorSpec::uniform_box(-1.0, 1.0, 2).unwrap();
        let problem = InverseProblem::new(
            HfEvaluator::new(Arc::new(model)),
            prior,
            data.data,
            NoiseModel::KnownSigma(sigma),
        )
        .unwrap();
        let mut config = AmpcConfig::new(2, 1, seed);
        config.m = m;
        config.i_max = i_max;
        let proposal = ProposalSpec::isotropic(2, 0.2).unwrap();
        let run = run_ampc(&problem, &config, &proposal, &[0.0, 0.0]).unwrap();
        let chain = run.chain;

        prop_assert_eq!(chain.states.len(), m * i_max);
        prop_assert_eq!(chain.log_posteriors.len(), chain.states.len());
        prop_assert_eq!(chain.accepted.len(), chain.states.len());
        prop_assert_eq!(chain.eval_snapshots.len(), chain.states.len() + 1);
        prop_assert_eq!(
            chain.accepted.iter().filter(|&&a| a).count(),
            chain.accept_count
        );
        prop_assert!(chain.accept_count <= chain.states.len());
        prop_assert!(chain.states.iter().all(|s| s.iter().all(|x| x.is_finite())));

        let total = chain.eval_snapshots.last().unwrap();
        prop_assert_eq!(
            total.total(),
            total.offline + total.refinement + total.ratio + total.indicator
        );
        let mut last_iter = 0;
        for event in &chain.refinement_events {
            prop_assert!(event.iteration > last_iter);
            prop_assert!(event.iteration <= i_max);
            last_iter = event.iteration;
            prop_assert!(event.err > config.epsilon);
        }
    }
}
