use std::error::Error as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ampc::config::RunConfig;
use ampc::formats::fmt_float;
use ampc::runner::{self, RunnerError};

#[derive(Parser)]
#[command(
    name = "ampc",
    version,
    about = "Surrogate-accelerated MCMC for Bayesian inverse problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic observations from a config's data block.
    GenerateData(ConfigArgs),
    /// Fit the prior surrogate for a config and save it.
    BuildSurrogate(ConfigArgs),
    /// Execute the configured sampler and write the full artifact set.
    Run(ConfigArgs),
    /// Run several configs and tabulate evaluation counts and marginal
    /// distances against the direct-method row.
    Compare {
        /// Run configs, one per row; rows are named by file stem.
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        /// Where compare.json and compare.csv go.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Recompute summary metrics for a finished run directory.
    Diagnose {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, RunnerError> {
        let mut config = RunConfig::from_file(&self.config)?;
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match &cli.command {
        Command::GenerateData(_) => "generate-data",
        Command::BuildSurrogate(_) => "build-surrogate",
        Command::Run(_) => "run",
        Command::Compare { .. } => "compare",
        Command::Diagnose { .. } => "diagnose",
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let mut message = err.to_string();
            let mut source = err.source();
            while let Some(s) = source {
                let text = s.to_string();
                if !message.contains(&text) {
                    message.push_str(": ");
                    message.push_str(&text);
                }
                source = s.source();
            }
            let doc = serde_json::json!({
                "error": { "command": command, "message": message }
            });
            eprintln!("{doc}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), RunnerError> {
    match command {
        Command::GenerateData(args) => {
            let config = args.load()?;
            let path = runner::generate_data(&config)?;
            println!("wrote {}", path.display());
        }
        Command::BuildSurrogate(args) => {
            let config = args.load()?;
            let path = runner::build_surrogate(&config)?;
            println!("wrote {}", path.display());
        }
        Command::Run(args) => {
            let config = args.load()?;
            let output = runner::execute_run(&config)?;
            println!(
                "method {}: {} states, acceptance rate {:.3}",
                output.method,
                output.chain.len(),
                output.summary.acceptance_rate
            );
            println!(
                "evaluations: offline {}, online {} (refinement {}, ratio {}, indicator {})",
                output.ledger.offline,
                output.ledger.online(),
                output.ledger.refinement,
                output.ledger.ratio,
                output.ledger.indicator
            );
            for (k, label) in output.labels.iter().enumerate() {
                println!(
                    "{label}: mean {}, sd {}",
                    fmt_float(output.summary.means[k]),
                    fmt_float(output.summary.standard_deviations[k])
                );
            }
            println!("artifacts in {}", output.run_dir.display());
        }
        Command::Compare { configs, out } => {
            let mut entries = Vec::with_capacity(configs.len());
            for path in &configs {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                entries.push((name, RunConfig::from_file(path)?));
            }
            let report = runner::compare(&entries, &out)?;
            for row in &report.rows {
                println!(
                    "{}: method {}, {} states, offline {}, online {}{}",
                    row.name,
                    row.method,
                    row.n_states,
                    row.offline,
                    row.online,
                    row.tv_marginal_max
                        .map(|tv| format!(", max marginal TV {tv:.4}"))
                        .unwrap_or_default()
                );
            }
            println!("report in {}", out.display());
        }
        Command::Diagnose { run_dir } => {
            let summary = runner::diagnose(&run_dir)?;
            println!(
                "{} kept of {} states after burn-in, acceptance rate {:.3}",
                summary.kept,
                summary.kept + summary.burn_in,
                summary.acceptance_rate
            );
            for (k, mean) in summary.means.iter().enumerate() {
                println!(
                    "coordinate {}: mean {}, sd {}",
                    k + 1,
                    fmt_float(*mean),
                    fmt_float(summary.standard_deviations[k])
                );
            }
            println!("metrics in {}", run_dir.display());
        }
    }
    Ok(())
}
