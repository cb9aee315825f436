//! Run configuration: a single versioned JSON document describing the model,
//! prior, noise treatment, data source, and sampling method. Command-line
//! flags may override individual fields, but the file is the artifact of
//! record; [`RunConfig::resolve`] materializes every default so the emitted
//! provenance copy re-runs bit-identically.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use ampc_core::bayes::{InverseProblem, Marginal, NoiseModel, PriorSpec};
use ampc_core::mcmc::AmpcConfig;
use ampc_core::models::{
    generate_synthetic_data, EllipticRbfModel, ExpSumModel, ForwardModel, FractionalSourceModel,
    HfEvaluator, LinearGaussianModel, NoiseSpec, PolynomialModel, SourceUnknowns, SyntheticData,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config schema version {got} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { got: u32 },
    #[error("config field `{field}`: {why}")]
    Invalid { field: &'static str, why: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Model(#[from] ampc_core::models::ModelError),
    #[error(transparent)]
    Bayes(#[from] ampc_core::bayes::BayesError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub noise: NoiseConfig,
    pub data: DataConfig,
    pub method: MethodConfig,
    /// Random-walk step per state coordinate; omitted means the prior-scaled
    /// default (5% of each uniform range, 10% of each Gaussian sd).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_steps: Option<Vec<f64>>,
    /// Initial state; omitted means the prior center (and log sigma^2 = 0
    /// when the noise scale is sampled).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
}

fn default_burn_in() -> f64 {
    0.4
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    LinearGaussian {
        /// Row-major n_d x n_z matrix.
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    Polynomial {
        n_z: usize,
        exponents: Vec<Vec<u32>>,
        coefficients: Vec<Vec<f64>>,
    },
    /// `G(z) = exp(z_1 + ... + z_n)`: cheap but outside every polynomial
    /// span, handy for demonstrating adaptive refinement.
    ExpSum { n_z: usize },
    /// Time-fractional diffusion with a Gaussian-bump source. Defaults to a
    /// 3x3 sensor grid read at t = 0.25, 0.75 when the order is known and a
    /// 5x5 grid read at t = 0.25, 0.75, 1 when the order is inferred.
    FractionalSource {
        #[serde(default = "default_unknowns")]
        unknowns: UnknownsConfig,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_mesh")]
        mesh_nodes: usize,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sensors: Option<Vec<(f64, f64)>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        times: Option<Vec<f64>>,
    },
    /// Steady Darcy flow with a nine-term log-permeability expansion.
    EllipticRbf {
        #[serde(default = "default_mesh")]
        mesh_nodes: usize,
        #[serde(default = "default_forcing")]
        forcing: f64,
    },
}

fn default_unknowns() -> UnknownsConfig {
    UnknownsConfig::Location
}

fn default_alpha() -> f64 {
    0.8
}

fn default_mesh() -> usize {
    33
}

fn default_dt() -> f64 {
    0.01
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_forcing() -> f64 {
    100.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum UnknownsConfig {
    Location,
    LocationAndOrder,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    UniformBox { lo: f64, hi: f64, dim: usize },
    StandardGaussian { dim: usize },
    Marginals { marginals: Vec<MarginalConfig> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginalConfig {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    /// Known noise scale. `sigma` may be omitted only with synthetic data,
    /// in which case the generation's effective scale is used (the
    /// max-scaled noise model determines sigma from the clean signal).
    Known {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
    },
    /// Noise variance sampled alongside the parameters under an
    /// inverse-Gamma prior.
    Hierarchical { shape: f64, scale: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    File {
        path: PathBuf,
    },
    Synthetic {
        true_params: Vec<f64>,
        noise: SyntheticNoiseConfig,
        #[serde(default = "default_fine_factor")]
        fine_factor: u32,
        seed: u64,
    },
}

fn default_fine_factor() -> u32 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticNoiseConfig {
    Additive { sigma: f64 },
    MaxScaled { delta: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Direct {
        #[serde(default = "default_n_steps")]
        n_steps: usize,
    },
    PriorPc {
        order: usize,
        #[serde(default = "default_n_steps")]
        n_steps: usize,
        /// Reuse a fitted surrogate instead of spending offline evaluations.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        surrogate_file: Option<PathBuf>,
    },
    Ampc {
        order: usize,
        correction_order: usize,
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default = "default_i_max")]
        i_max: usize,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_epsilon0")]
        epsilon0: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_shrink")]
        shrink: f64,
    },
}

fn default_n_steps() -> usize {
    50_000
}

fn default_m() -> usize {
    5_000
}

fn default_i_max() -> usize {
    10
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_epsilon0() -> f64 {
    0.1
}

fn default_radius() -> f64 {
    0.1
}

fn default_shrink() -> f64 {
    0.5
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                got: self.schema_version,
            });
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(ConfigError::Invalid {
                field: "burn_in_fraction",
                why: format!("{} is outside [0, 1)", self.burn_in_fraction),
            });
        }
        if let NoiseConfig::Known { sigma: None } = self.noise {
            if matches!(self.data, DataConfig::File { .. }) {
                return Err(ConfigError::Invalid {
                    field: "noise.sigma",
                    why: "required when data comes from a file".into(),
                });
            }
        }
        if let MethodConfig::Ampc {
            order,
            correction_order,
            ..
        } = &self.method
        {
            if correction_order > order {
                return Err(ConfigError::Invalid {
                    field: "method.correction_order",
                    why: format!("{correction_order} exceeds the surrogate order {order}"),
                });
            }
        }
        if let Some(steps) = &self.proposal_steps {
            if steps.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(ConfigError::Invalid {
                    field: "proposal_steps",
                    why: "steps must be finite and non-negative".into(),
                });
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<Arc<dyn ForwardModel>, ConfigError> {
        build_model(&self.model)
    }

    pub fn build_prior(&self) -> Result<PriorSpec, ConfigError> {
        let prior = match &self.prior {
            PriorConfig::UniformBox { lo, hi, dim } => PriorSpec::uniform_box(*lo, *hi, *dim)?,
            PriorConfig::StandardGaussian { dim } => PriorSpec::standard_gaussian(*dim)?,
            PriorConfig::Marginals { marginals } => {
                let ms = marginals
                    .iter()
                    .map(|m| match *m {
                        MarginalConfig::Uniform { lo, hi } => Marginal::Uniform { lo, hi },
                        MarginalConfig::Gaussian { mean, sd } => Marginal::Gaussian { mean, sd },
                    })
                    .collect();
                PriorSpec::new(ms)?
            }
        };
        Ok(prior)
    }

    /// Produces the observations: read from disk, or regenerate from the
    /// synthetic block (same seed, same bytes).
    pub fn load_data(&self, model: &dyn ForwardModel) -> Result<ResolvedData, ConfigError> {
        match &self.data {
            DataConfig::File { path } => {
                let values = crate::formats::read_data_csv(path).map_err(|source| {
                    ConfigError::Io {
                        path: path.clone(),
                        source,
                    }
                })?;
                Ok(ResolvedData {
                    data: values,
                    sigma_effective: None,
                    clean: None,
                })
            }
            DataConfig::Synthetic {
                true_params,
                noise,
                fine_factor,
                seed,
            } => {
                let spec = match *noise {
                    SyntheticNoiseConfig::Additive { sigma } => NoiseSpec::Additive { sigma },
                    SyntheticNoiseConfig::MaxScaled { delta } => NoiseSpec::MaxScaled { delta },
                };
                let SyntheticData {
                    data,
                    noise_sigma,
                    clean,
                } = generate_synthetic_data(model, true_params, spec, *fine_factor, *seed)?;
                Ok(ResolvedData {
                    data,
                    sigma_effective: Some(noise_sigma),
                    clean: Some(clean),
                })
            }
        }
    }

    pub fn noise_model(&self, resolved: &ResolvedData) -> Result<NoiseModel, ConfigError> {
        match self.noise {
            NoiseConfig::Known { sigma: Some(s) } => Ok(NoiseModel::KnownSigma(s)),
            NoiseConfig::Known { sigma: None } => {
                let s = resolved.sigma_effective.ok_or(ConfigError::Invalid {
                    field: "noise.sigma",
                    why: "no effective scale available to infer it from".into(),
                })?;
                Ok(NoiseModel::KnownSigma(s))
            }
            NoiseConfig::Hierarchical { shape, scale } => {
                Ok(NoiseModel::HierarchicalSigma { shape, scale })
            }
        }
    }

    /// Assembles the inverse problem this config describes.
    pub fn build_problem(&self) -> Result<(InverseProblem, ResolvedData), ConfigError> {
        let model = self.build_model()?;
        let prior = self.build_prior()?;
        let resolved = self.load_data(model.as_ref())?;
        let noise = self.noise_model(&resolved)?;
        let problem = InverseProblem::new(
            HfEvaluator::new(model),
            prior,
            resolved.data.clone(),
            noise,
        )?;
        Ok((problem, resolved))
    }

    /// The sampler configuration for an AMPC method block.
    pub fn ampc_config(&self) -> Option<AmpcConfig> {
        if let MethodConfig::Ampc {
            order,
            correction_order,
            m,
            i_max,
            epsilon,
            epsilon0,
            radius,
            shrink,
        } = self.method
        {
            let mut c = AmpcConfig::new(order, correction_order, self.seed);
            c.m = m;
            c.i_max = i_max;
            c.epsilon = epsilon;
            c.epsilon0 = epsilon0;
            c.radius = radius;
            c.shrink = shrink;
            Some(c)
        } else {
            None
        }
    }

    /// Default start: the prior center, plus a unit noise variance guess
    /// (log sigma^2 = 0) when the scale is hierarchical.
    pub fn default_start(&self, prior: &PriorSpec, state_dim: usize) -> Vec<f64> {
        let mut start = prior.affine_map().shift().to_vec();
        if state_dim > start.len() {
            start.push(0.0);
        }
        start
    }

    /// Copies the config with every optional field filled in, so the emitted
    /// provenance document is self-contained.
    pub fn resolve(&self, proposal_steps: Vec<f64>, start: Vec<f64>) -> RunConfig {
        let mut resolved = self.clone();
        resolved.proposal_steps = Some(proposal_steps);
        resolved.start = Some(start);
        resolved
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedData {
    pub data: Vec<f64>,
    /// Noise scale realized at generation time (synthetic data only).
    pub sigma_effective: Option<f64>,
    /// Noise-free fine-discretization output (synthetic data only).
    pub clean: Option<Vec<f64>>,
}

pub fn build_model(config: &ModelConfig) -> Result<Arc<dyn ForwardModel>, ConfigError> {
    match config {
        ModelConfig::LinearGaussian { matrix, offset } => {
            let n_d = matrix.len();
            if n_d == 0 || offset.len() != n_d {
                return Err(ConfigError::Invalid {
                    field: "model.matrix",
                    why: format!("{} rows vs {} offsets", n_d, offset.len()),
                });
            }
            let n_z = matrix[0].len();
            if n_z == 0 || matrix.iter().any(|row| row.len() != n_z) {
                return Err(ConfigError::Invalid {
                    field: "model.matrix",
                    why: "rows must be nonempty and equally long".into(),
                });
            }
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            Ok(Arc::new(LinearGaussianModel::new(
                flat,
                offset.clone(),
                n_z,
            )))
        }
        ModelConfig::Polynomial {
            n_z,
            exponents,
            coefficients,
        } => Ok(Arc::new(PolynomialModel::new(
            *n_z,
            exponents.clone(),
            coefficients.clone(),
        )?)),
        ModelConfig::ExpSum { n_z } => Ok(Arc::new(ExpSumModel::new(*n_z))),
        ModelConfig::FractionalSource {
            unknowns,
            alpha,
            mesh_nodes,
            dt,
            amplitude,
            sensors,
            times,
        } => {
            let kind = match unknowns {
                UnknownsConfig::Location => SourceUnknowns::Location,
                UnknownsConfig::LocationAndOrder => SourceUnknowns::LocationAndOrder,
            };
            let model = match (sensors, times) {
                (None, None) => {
                    let preset = match kind {
                        SourceUnknowns::Location => FractionalSourceModel::known_order(*alpha)?,
                        SourceUnknowns::LocationAndOrder => {
                            FractionalSourceModel::unknown_order()?
                        }
                    };
                    if preset.mesh_nodes() == *mesh_nodes && preset.dt() == *dt {
                        preset
                    } else {
                        FractionalSourceModel::new(
                            kind,
                            *alpha,
                            *mesh_nodes,
                            *dt,
                            preset.sensor_locations().to_vec(),
                            preset.sensor_times().to_vec(),
                        )?
                    }
                }
                (s, t) => {
                    let preset = match kind {
                        SourceUnknowns::Location => FractionalSourceModel::known_order(*alpha)?,
                        SourceUnknowns::LocationAndOrder => {
                            FractionalSourceModel::unknown_order()?
                        }
                    };
                    FractionalSourceModel::new(
                        kind,
                        *alpha,
                        *mesh_nodes,
                        *dt,
                        s.clone()
                            .unwrap_or_else(|| preset.sensor_locations().to_vec()),
                        t.clone().unwrap_or_else(|| preset.sensor_times().to_vec()),
                    )?
                }
            };
            Ok(Arc::new(model.with_amplitude(*amplitude)))
        }
        ModelConfig::EllipticRbf {
            mesh_nodes,
            forcing,
        } => Ok(Arc::new(
            EllipticRbfModel::default_geometry(*mesh_nodes)?.with_forcing(*forcing),
        )),
    }
}
