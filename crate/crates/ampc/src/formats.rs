//! On-disk artifacts: chain, data, and histogram CSVs plus the JSON
//! documents for surrogates, ledgers, events, and summaries.
//!
//! Every floating-point value is written with 17 significant digits, which
//! is enough for `f64::from_str` to recover the exact bit pattern, so any
//! artifact can be parsed back and compared bit for bit.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use ampc_core::basis::{BasisFamily, MultiIndexSet, INDEX_ORDERING};
use ampc_core::linalg::Matrix;
use ampc_core::mcmc::{Chain, RefinementEvent};
use ampc_core::models::LedgerCounts;
use ampc_core::surrogate::{AffineMap, PcSurrogate, Provenance};

pub const SURROGATE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {why}")]
    Malformed { path: PathBuf, why: String },
}

fn io_err(path: &Path, source: io::Error) -> FormatError {
    FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, why: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        path: path.to_path_buf(),
        why: why.into(),
    }
}

/// 17 significant digits; see the module docs.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty JSON with floats at full 17-digit precision instead of the
/// shortest round-trip form.
struct FullPrecisionPretty<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for FullPrecisionPretty<'_> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_object_value(writer)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut out = Vec::new();
    let formatter = FullPrecisionPretty {
        inner: PrettyFormatter::new(),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut out, formatter);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("JSON output is UTF-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let text = to_json_string(value).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text).map_err(|source| io_err(path, source))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Column labels for the sampled state: the model parameters, then the
/// log noise variance when that is sampled too.
pub fn state_labels(n_z: usize, hierarchical: bool) -> Vec<String> {
    let mut labels: Vec<String> = (1..=n_z).map(|i| format!("z{i}")).collect();
    if hierarchical {
        labels.push("log_sigma2".into());
    }
    labels
}

/// One row per transition: step index, state coordinates, log posterior,
/// and a 0/1 acceptance flag.
pub fn write_chain_csv(path: &Path, chain: &Chain, labels: &[String]) -> Result<(), FormatError> {
    let mut text = String::with_capacity(chain.len() * (labels.len() + 2) * 24);
    text.push_str("step");
    for label in labels {
        text.push(',');
        text.push_str(label);
    }
    text.push_str(",log_posterior,accepted\n");
    for (i, state) in chain.states.iter().enumerate() {
        text.push_str(&(i + 1).to_string());
        for &x in state {
            text.push(',');
            text.push_str(&fmt_float(x));
        }
        text.push(',');
        text.push_str(&fmt_float(chain.log_posteriors[i]));
        text.push(',');
        text.push(if chain.accepted[i] { '1' } else { '0' });
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| io_err(path, source))
}

/// Parses a chain CSV back into a [`Chain`] plus its column labels. The
/// evaluation snapshots are not part of the file; the reconstructed chain
/// carries empty ledger bookkeeping.
pub fn read_chain_csv(path: &Path) -> Result<(Vec<String>, Chain), FormatError> {
    let text = std::fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed(path, "empty file"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 4
        || columns[0] != "step"
        || columns[columns.len() - 2] != "log_posterior"
        || columns[columns.len() - 1] != "accepted"
    {
        return Err(malformed(
            path,
            "header must be step,<labels...>,log_posterior,accepted",
        ));
    }
    let labels: Vec<String> = columns[1..columns.len() - 2]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let dim = labels.len();

    let mut chain = Chain {
        states: Vec::new(),
        log_posteriors: Vec::new(),
        accepted: Vec::new(),
        accept_count: 0,
        eval_snapshots: Vec::new(),
        refinement_events: Vec::new(),
    };
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(malformed(
                path,
                format!("row {}: {} fields, expected {}", row + 2, fields.len(), dim + 3),
            ));
        }
        let parse = |s: &str| -> Result<f64, FormatError> {
            s.parse::<f64>()
                .map_err(|e| malformed(path, format!("row {}: {e}", row + 2)))
        };
        let state = fields[1..=dim]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<f64>, _>>()?;
        chain.states.push(state);
        chain.log_posteriors.push(parse(fields[dim + 1])?);
        let took = match fields[dim + 2] {
            "1" => true,
            "0" => false,
            other => {
                return Err(malformed(
                    path,
                    format!("row {}: acceptance flag {other:?}", row + 2),
                ))
            }
        };
        chain.accepted.push(took);
        if took {
            chain.accept_count += 1;
        }
    }
    chain.eval_snapshots = vec![LedgerCounts::default(); chain.len() + 1];
    Ok((labels, chain))
}

/// One observation per line under a `value` header.
pub fn write_data_csv(path: &Path, values: &[f64]) -> io::Result<()> {
    let mut text = String::with_capacity(values.len() * 24 + 8);
    text.push_str("value\n");
    for &v in values {
        text.push_str(&fmt_float(v));
        text.push('\n');
    }
    std::fs::write(path, text)
}

pub fn read_data_csv(path: &Path) -> io::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (row, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || (row == 0 && trimmed == "value") {
            continue;
        }
        let v = trimmed.parse::<f64>().map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", row + 1))
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "data file holds no values",
        ));
    }
    Ok(values)
}

/// Marginal histograms, one block of rows per coordinate.
pub fn write_marginals_csv(
    path: &Path,
    labels: &[String],
    marginals: &[ampc_core::diagnostics::Histogram],
) -> Result<(), FormatError> {
    let mut text = String::from("coordinate,bin_lo,bin_hi,count,density\n");
    for (label, hist) in labels.iter().zip(marginals) {
        for (b, &count) in hist.counts.iter().enumerate() {
            text.push_str(label);
            text.push(',');
            text.push_str(&fmt_float(hist.edges[b]));
            text.push(',');
            text.push_str(&fmt_float(hist.edges[b + 1]));
            text.push(',');
            text.push_str(&count.to_string());
            text.push(',');
            text.push_str(&fmt_float(hist.density[b]));
            text.push('\n');
        }
    }
    std::fs::write(path, text).map_err(|source| io_err(path, source))
}

/// Serialized polynomial chaos expansion. `multi_indices` are stored
/// explicitly and validated against the canonical ordering on load, so a
/// document written by a different implementation cannot silently permute
/// coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateDocument {
    pub schema_version: u32,
    pub family: String,
    pub n_z: usize,
    pub n_d: usize,
    pub order: usize,
    pub index_ordering: String,
    pub prior_shift: Vec<f64>,
    pub prior_scale: Vec<f64>,
    pub multi_indices: Vec<Vec<u32>>,
    /// Row `m` holds the `n_d` coefficients of basis term `m`.
    pub coefficients: Vec<Vec<f64>>,
    pub generation: u32,
    pub provenance: ProvenanceDocument,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceDocument {
    pub seed: u64,
    pub design_size: usize,
    pub fit_residuals: Vec<f64>,
}

impl SurrogateDocument {
    pub fn from_surrogate(surrogate: &PcSurrogate) -> Self {
        let set = surrogate.index_set();
        let coeffs = surrogate.coefficients();
        SurrogateDocument {
            schema_version: SURROGATE_SCHEMA_VERSION,
            family: surrogate.family().name().to_string(),
            n_z: surrogate.n_z(),
            n_d: surrogate.n_d(),
            order: surrogate.order(),
            index_ordering: INDEX_ORDERING.to_string(),
            prior_shift: surrogate.prior_map().shift().to_vec(),
            prior_scale: surrogate.prior_map().scale().to_vec(),
            multi_indices: set.iter().map(|m| m.to_vec()).collect(),
            coefficients: (0..coeffs.rows())
                .map(|r| (0..coeffs.cols()).map(|c| coeffs.get(r, c)).collect())
                .collect(),
            generation: surrogate.generation(),
            provenance: ProvenanceDocument {
                seed: surrogate.provenance().seed,
                design_size: surrogate.provenance().design_size,
                fit_residuals: surrogate.provenance().fit_residuals.clone(),
            },
        }
    }

    pub fn into_surrogate(self, path: &Path) -> Result<PcSurrogate, FormatError> {
        if self.schema_version != SURROGATE_SCHEMA_VERSION {
            return Err(malformed(
                path,
                format!("surrogate schema version {} unsupported", self.schema_version),
            ));
        }
        let family = BasisFamily::from_name(&self.family)
            .ok_or_else(|| malformed(path, format!("unknown basis family {:?}", self.family)))?;
        if self.index_ordering != INDEX_ORDERING {
            return Err(malformed(
                path,
                format!(
                    "index ordering {:?} (this build writes {INDEX_ORDERING:?})",
                    self.index_ordering
                ),
            ));
        }
        let set = MultiIndexSet::total_degree(self.n_z, self.order)
            .map_err(|e| malformed(path, e.to_string()))?;
        if self.multi_indices.len() != set.len()
            || self
                .multi_indices
                .iter()
                .zip(set.iter())
                .any(|(stored, canonical)| stored.as_slice() != canonical)
        {
            return Err(malformed(
                path,
                "multi-index list does not match the canonical total-degree set",
            ));
        }
        if self.coefficients.len() != set.len()
            || self.coefficients.iter().any(|row| row.len() != self.n_d)
        {
            return Err(malformed(
                path,
                format!(
                    "coefficients must be {} rows of {} entries",
                    set.len(),
                    self.n_d
                ),
            ));
        }
        if self.prior_shift.len() != self.n_z || self.prior_scale.len() != self.n_z {
            return Err(malformed(path, "prior map dimension mismatch"));
        }
        let mut coefficients = Matrix::zeros(set.len(), self.n_d);
        for (r, row) in self.coefficients.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                coefficients.set(r, c, v);
            }
        }
        let surrogate = PcSurrogate::new(
            family,
            set,
            coefficients,
            AffineMap::new(self.prior_shift, self.prior_scale),
            Provenance {
                seed: self.provenance.seed,
                design_size: self.provenance.design_size,
                fit_residuals: self.provenance.fit_residuals,
            },
        )
        .map_err(|e| malformed(path, e.to_string()))?;
        Ok(surrogate.with_generation(self.generation))
    }
}

pub fn write_surrogate_json(path: &Path, surrogate: &PcSurrogate) -> Result<(), FormatError> {
    write_json(path, &SurrogateDocument::from_surrogate(surrogate))
}

pub fn read_surrogate_json(path: &Path) -> Result<PcSurrogate, FormatError> {
    let doc: SurrogateDocument = read_json(path)?;
    doc.into_surrogate(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRecord {
    pub iteration: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub err: f64,
    pub q_c: usize,
    pub generation: u32,
}

impl From<&RefinementEvent> for EventRecord {
    fn from(e: &RefinementEvent) -> Self {
        EventRecord {
            iteration: e.iteration,
            center: e.center.clone(),
            radius: e.radius,
            err: e.err,
            q_c: e.q_c,
            generation: e.generation,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LedgerDocument {
    pub offline: u64,
    pub refinement: u64,
    pub ratio: u64,
    pub indicator: u64,
    pub diagnostic: u64,
    pub cache_hits: u64,
    /// refinement + ratio + indicator.
    pub online: u64,
    /// All actual solves; cache hits cost nothing.
    pub total: u64,
}

impl From<LedgerCounts> for LedgerDocument {
    fn from(c: LedgerCounts) -> Self {
        LedgerDocument {
            offline: c.offline,
            refinement: c.refinement,
            ratio: c.ratio,
            indicator: c.indicator,
            diagnostic: c.diagnostic,
            cache_hits: c.cache_hits,
            online: c.online(),
            total: c.total(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub method: String,
    pub n_states: usize,
    pub burn_in: usize,
    pub kept: usize,
    pub acceptance_rate: f64,
    pub labels: Vec<String>,
    pub means: Vec<f64>,
    pub standard_deviations: Vec<f64>,
    pub credible_level: f64,
    pub credible_intervals: Vec<[f64; 2]>,
    pub effective_sample_sizes: Vec<f64>,
    pub refinement_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate_generation: Option<u32>,
}
