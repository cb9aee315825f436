//! Command implementations. Each takes a validated [`RunConfig`], does the
//! work, and leaves a complete artifact set in the configured output
//! directory: the resolved config itself, the chain, the evaluation ledger,
//! refinement events, summary statistics, and any surrogate involved.

use std::path::{Path, PathBuf};

use serde::Serialize;

use ampc_core::bayes::NoiseModel;
use ampc_core::derive_seed;
use ampc_core::diagnostics::{chain_summary, histogram, ChainSummary, DiagnosticsError, Histogram};
use ampc_core::mcmc::{run_ampc, run_mh, Chain, McmcError, ProposalSpec};
use ampc_core::models::LedgerCounts;
use ampc_core::regression::{fit_prior_surrogate, RegressionError};
use ampc_core::surrogate::PcSurrogate;

use crate::config::{
    ConfigError, DataConfig, MethodConfig, ModelConfig, RunConfig, SyntheticNoiseConfig,
};
use crate::formats::{
    self, EventRecord, FormatError, LedgerDocument, SummaryDocument,
};

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Bayes(#[from] ampc_core::bayes::BayesError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Unsupported(String),
}

fn io_err(path: &Path, source: std::io::Error) -> RunnerError {
    RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything a finished run hands back to callers (the CLI prints from it,
/// `compare` aggregates over it); the same content is on disk in `run_dir`.
#[derive(Debug)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub method: &'static str,
    pub labels: Vec<String>,
    pub chain: Chain,
    pub summary: ChainSummary,
    pub ledger: LedgerCounts,
    pub surrogate: Option<PcSurrogate>,
    pub final_radius: Option<f64>,
}

#[derive(Serialize)]
struct DataProvenance<'a> {
    model: &'a ModelConfig,
    true_params: &'a [f64],
    noise: &'a SyntheticNoiseConfig,
    fine_factor: u32,
    seed: u64,
    /// Noise scale actually applied (max-scaled noise derives it from the
    /// clean signal).
    sigma_effective: f64,
    /// Noise-free fine-discretization observations.
    clean: &'a [f64],
}

fn write_synthetic_artifacts(
    dir: &Path,
    config: &RunConfig,
    data: &[f64],
    sigma_effective: f64,
    clean: &[f64],
) -> Result<PathBuf, RunnerError> {
    let DataConfig::Synthetic {
        true_params,
        noise,
        fine_factor,
        seed,
    } = &config.data
    else {
        return Err(RunnerError::Unsupported(
            "data generation needs a synthetic data block".into(),
        ));
    };
    let data_path = dir.join("data.csv");
    formats::write_data_csv(&data_path, data).map_err(|e| io_err(&data_path, e))?;
    formats::write_json(
        &dir.join("data_provenance.json"),
        &DataProvenance {
            model: &config.model,
            true_params,
            noise,
            fine_factor: *fine_factor,
            seed: *seed,
            sigma_effective,
            clean,
        },
    )?;
    Ok(data_path)
}

/// Generates synthetic observations and writes `data.csv` plus a provenance
/// document; a config with `data.source = "file"` can then point at it.
pub fn generate_data(config: &RunConfig) -> Result<PathBuf, RunnerError> {
    config.validate()?;
    let model = config.build_model()?;
    let resolved = config.load_data(model.as_ref())?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| io_err(&config.output_dir, e))?;
    let sigma = resolved
        .sigma_effective
        .expect("synthetic data carries its noise scale");
    let clean = resolved.clean.as_deref().expect("synthetic data keeps the clean signal");
    write_synthetic_artifacts(&config.output_dir, config, &resolved.data, sigma, clean)
}

/// Fits the prior surrogate for the configured model at the method's order
/// and writes it to `surrogate.json`, ready for `method.surrogate_file`.
pub fn build_surrogate(config: &RunConfig) -> Result<PathBuf, RunnerError> {
    config.validate()?;
    let order = match &config.method {
        MethodConfig::PriorPc { order, .. } => *order,
        MethodConfig::Ampc { order, .. } => *order,
        MethodConfig::Direct { .. } => {
            return Err(RunnerError::Unsupported(
                "method \"direct\" uses no surrogate; nothing to build".into(),
            ))
        }
    };
    let model = config.build_model()?;
    let prior = config.build_prior()?;
    let evaluator = ampc_core::models::HfEvaluator::new(model);
    let surrogate = fit_prior_surrogate(&evaluator, &prior, order, derive_seed(config.seed, 0))?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| io_err(&config.output_dir, e))?;
    let path = config.output_dir.join("surrogate.json");
    formats::write_surrogate_json(&path, &surrogate)?;
    Ok(path)
}

/// Runs the configured sampler and writes the full artifact set.
pub fn execute_run(config: &RunConfig) -> Result<RunOutput, RunnerError> {
    config.validate()?;
    let (mut problem, resolved) = config.build_problem()?;
    let proposal = match &config.proposal_steps {
        Some(steps) => ProposalSpec::new(steps.clone())?,
        None => ProposalSpec::default_for(&problem),
    };
    let start = config
        .start
        .clone()
        .unwrap_or_else(|| config.default_start(problem.prior(), problem.state_dim()));

    let (chain, surrogate, final_radius, method): (_, _, _, &'static str) = match &config.method {
        MethodConfig::Direct { n_steps } => {
            let chain = run_mh(&problem, &proposal, *n_steps, &start, false, config.seed)?;
            (chain, None, None, "direct")
        }
        MethodConfig::PriorPc {
            order,
            n_steps,
            surrogate_file,
        } => {
            let surrogate = match surrogate_file {
                Some(path) => formats::read_surrogate_json(path)?,
                None => fit_prior_surrogate(
                    problem.evaluator(),
                    problem.prior(),
                    *order,
                    derive_seed(config.seed, 0),
                )?,
            };
            let exported = surrogate.clone();
            problem.set_surrogate(surrogate)?;
            let chain = run_mh(&problem, &proposal, *n_steps, &start, true, config.seed)?;
            (chain, Some(exported), None, "prior_pc")
        }
        MethodConfig::Ampc { .. } => {
            let ampc_config = config.ampc_config().expect("method is ampc");
            let run = run_ampc(&problem, &ampc_config, &proposal, &start)?;
            (
                run.chain,
                Some(run.surrogate),
                Some(run.final_radius),
                "ampc",
            )
        }
    };

    let ledger = problem.evaluator().ledger();
    let hierarchical = matches!(problem.noise(), NoiseModel::HierarchicalSigma { .. });
    let labels = formats::state_labels(problem.n_z(), hierarchical);
    let summary = chain_summary(&chain, config.burn_in_fraction)?;

    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    formats::write_json(
        &dir.join("run_config.json"),
        &config.resolve(proposal.steps().to_vec(), start.clone()),
    )?;
    formats::write_chain_csv(&dir.join("chain.csv"), &chain, &labels)?;
    let events: Vec<EventRecord> = chain.refinement_events.iter().map(Into::into).collect();
    formats::write_json(&dir.join("events.json"), &events)?;
    formats::write_json(&dir.join("ledger.json"), &LedgerDocument::from(ledger))?;
    formats::write_json(
        &dir.join("summary.json"),
        &summary_document(method, &labels, &chain, &summary, final_radius, &surrogate),
    )?;
    formats::write_marginals_csv(&dir.join("marginals.csv"), &labels, &summary.marginals)?;
    if let Some(s) = &surrogate {
        formats::write_surrogate_json(&dir.join("surrogate.json"), s)?;
    }
    if let (DataConfig::Synthetic { .. }, Some(sigma), Some(clean)) = (
        &config.data,
        resolved.sigma_effective,
        resolved.clean.as_deref(),
    ) {
        write_synthetic_artifacts(&dir, config, &resolved.data, sigma, clean)?;
    }

    Ok(RunOutput {
        run_dir: dir,
        method,
        labels,
        chain,
        summary,
        ledger,
        surrogate,
        final_radius,
    })
}

fn summary_document(
    method: &str,
    labels: &[String],
    chain: &Chain,
    summary: &ChainSummary,
    final_radius: Option<f64>,
    surrogate: &Option<PcSurrogate>,
) -> SummaryDocument {
    SummaryDocument {
        method: method.to_string(),
        n_states: chain.len(),
        burn_in: summary.burn_in,
        kept: summary.kept,
        acceptance_rate: summary.acceptance_rate,
        labels: labels.to_vec(),
        means: summary.means.clone(),
        standard_deviations: summary.standard_deviations.clone(),
        credible_level: summary.credible_level,
        credible_intervals: summary
            .credible_intervals
            .iter()
            .map(|&(lo, hi)| [lo, hi])
            .collect(),
        effective_sample_sizes: summary.ess.clone(),
        refinement_events: chain.refinement_events.len(),
        final_radius,
        surrogate_generation: surrogate.as_ref().map(PcSurrogate::generation),
    }
}

/// Bins per coordinate when comparing posterior marginals across methods.
pub const COMPARE_BINS: usize = 101;

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub name: String,
    pub method: String,
    pub n_states: usize,
    pub acceptance_rate: f64,
    pub offline: u64,
    pub refinement: u64,
    pub ratio: u64,
    pub indicator: u64,
    pub cache_hits: u64,
    pub online: u64,
    pub total: u64,
    pub refinement_events: usize,
    /// Marginal distances against the direct-method row, maximized over
    /// coordinates; absent for the reference itself, when no direct row
    /// exists, or when the Kullback-Leibler sum is undefined.
    pub tv_marginal_max: Option<f64>,
    pub hellinger_marginal_max: Option<f64>,
    pub kl_marginal_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub reference: Option<String>,
    pub rows: Vec<CompareRow>,
}

fn kept_column(output: &RunOutput, k: usize) -> Vec<f64> {
    output.chain.states[output.summary.burn_in..]
        .iter()
        .map(|s| s[k])
        .collect()
}

fn masses(h: &Histogram) -> Vec<f64> {
    let total: u64 = h.counts.iter().sum();
    h.counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect()
}

/// Distances between two sample sets binned on the reference range.
/// Kullback-Leibler is `None` whenever the run has mass in a bin the
/// reference leaves empty.
fn marginal_distances(
    run: &[f64],
    reference: &[f64],
    lo: f64,
    hi: f64,
) -> Result<(f64, f64, Option<f64>), DiagnosticsError> {
    let hr = histogram(run, lo, hi, COMPARE_BINS)?;
    let hq = histogram(reference, lo, hi, COMPARE_BINS)?;
    let p = masses(&hr);
    let q = masses(&hq);
    let tv = 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let hell = (0.5
        * p.iter()
            .zip(&q)
            .map(|(a, b)| {
                let d = a.sqrt() - b.sqrt();
                d * d
            })
            .sum::<f64>())
    .sqrt();
    let mut kl = Some(0.0);
    for (&a, &b) in p.iter().zip(&q) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            kl = None;
            break;
        }
        kl = kl.map(|s| s + a * (a / b).ln());
    }
    Ok((tv, hell, kl))
}

/// Runs every config and tabulates evaluation counts, acceptance rates, and
/// (when a direct-method row exists to act as reference) marginal distances
/// against it. Writes `compare.json` and `compare.csv` to `out_dir`.
pub fn compare(entries: &[(String, RunConfig)], out_dir: &Path) -> Result<CompareReport, RunnerError> {
    if entries.is_empty() {
        return Err(RunnerError::Unsupported("compare needs at least one config".into()));
    }
    let mut outputs = Vec::with_capacity(entries.len());
    for (name, config) in entries {
        outputs.push((name.clone(), execute_run(config)?));
    }
    let reference_index = outputs.iter().position(|(_, o)| o.method == "direct");

    let mut rows = Vec::with_capacity(outputs.len());
    for (i, (name, output)) in outputs.iter().enumerate() {
        let mut tv_max: Option<f64> = None;
        let mut hell_max: Option<f64> = None;
        let mut kl_max: Option<f64> = None;
        if let Some(r) = reference_index {
            let (_, reference) = &outputs[r];
            if i != r && output.chain.dim() == reference.chain.dim() {
                let mut kl_defined = true;
                for k in 0..reference.chain.dim() {
                    let edges = &reference.summary.marginals[k].edges;
                    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
                    let run_col = kept_column(output, k);
                    let ref_col = kept_column(reference, k);
                    let (tv, hell, kl) = marginal_distances(&run_col, &ref_col, lo, hi)?;
                    tv_max = Some(tv_max.map_or(tv, |m: f64| m.max(tv)));
                    hell_max = Some(hell_max.map_or(hell, |m: f64| m.max(hell)));
                    match kl {
                        Some(v) if kl_defined => {
                            kl_max = Some(kl_max.map_or(v, |m: f64| m.max(v)));
                        }
                        _ => {
                            kl_defined = false;
                            kl_max = None;
                        }
                    }
                }
            }
        }
        rows.push(CompareRow {
            name: name.clone(),
            method: output.method.to_string(),
            n_states: output.chain.len(),
            acceptance_rate: output.summary.acceptance_rate,
            offline: output.ledger.offline,
            refinement: output.ledger.refinement,
            ratio: output.ledger.ratio,
            indicator: output.ledger.indicator,
            cache_hits: output.ledger.cache_hits,
            online: output.ledger.online(),
            total: output.ledger.total(),
            refinement_events: output.chain.refinement_events.len(),
            tv_marginal_max: tv_max,
            hellinger_marginal_max: hell_max,
            kl_marginal_max: kl_max,
        });
    }

    let report = CompareReport {
        reference: reference_index.map(|r| outputs[r].0.clone()),
        rows,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    formats::write_json(&out_dir.join("compare.json"), &report)?;
    let csv_path = out_dir.join("compare.csv");
    std::fs::write(&csv_path, compare_csv(&report)).map_err(|e| io_err(&csv_path, e))?;
    Ok(report)
}

fn compare_csv(report: &CompareReport) -> String {
    let mut text = String::from(
        "name,method,n_states,acceptance_rate,offline,refinement,ratio,indicator,\
         cache_hits,online,total,refinement_events,tv_marginal_max,hellinger_marginal_max,\
         kl_marginal_max\n",
    );
    let opt = |v: Option<f64>| v.map(formats::fmt_float).unwrap_or_default();
    for row in &report.rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.name,
            row.method,
            row.n_states,
            formats::fmt_float(row.acceptance_rate),
            row.offline,
            row.refinement,
            row.ratio,
            row.indicator,
            row.cache_hits,
            row.online,
            row.total,
            row.refinement_events,
            opt(row.tv_marginal_max),
            opt(row.hellinger_marginal_max),
            opt(row.kl_marginal_max),
        ));
    }
    text
}

/// Recomputes summary statistics for a finished run directory from its
/// `chain.csv` and `run_config.json`, writing `metrics.json` and refreshing
/// `marginals.csv`.
pub fn diagnose(run_dir: &Path) -> Result<ChainSummary, RunnerError> {
    let config = RunConfig::from_file(&run_dir.join("run_config.json"))?;
    let (labels, chain) = formats::read_chain_csv(&run_dir.join("chain.csv"))?;
    let summary = chain_summary(&chain, config.burn_in_fraction)?;
    let method = match &config.method {
        MethodConfig::Direct { .. } => "direct",
        MethodConfig::PriorPc { .. } => "prior_pc",
        MethodConfig::Ampc { .. } => "ampc",
    };
    formats::write_json(
        &run_dir.join("metrics.json"),
        &summary_document(method, &labels, &chain, &summary, None, &None),
    )?;
    formats::write_marginals_csv(&run_dir.join("marginals.csv"), &labels, &summary.marginals)?;
    Ok(summary)
}
