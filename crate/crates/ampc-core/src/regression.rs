//! Weighted discrete least squares for expansion coefficients.
//!
//! Given a design with preconditioning weights and model outputs at its
//! points, solves `min ||sqrt(W)(Phi c - b)||` per output column through an
//! orthogonal factorization of the weighted basis matrix. Normal equations
//! are avoided on purpose: Chebyshev designs can reach condition numbers
//! where squaring the system costs half the available digits.

use alloc::vec::Vec;

use thiserror::Error;

use crate::basis::{basis_row_into, BasisError, BasisFamily, MultiIndexSet};
use crate::bayes::PriorSpec;
use crate::design::DesignSet;
use crate::linalg::{solve_least_squares, LinalgError, Matrix};
use crate::models::{EvalKind, HfEvaluator, ModelError};
use crate::surrogate::{PcSurrogate, Provenance};

/// Diagonal entries of the factored triangle below this fraction of the
/// largest are treated as zero when deciding rank.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("design has {points} points but the index set has {terms} terms")]
    Underdetermined { points: usize, terms: usize },
    #[error("design resolves only {rank} of {terms} basis terms")]
    RankDeficient { rank: usize, terms: usize },
    #[error("non-finite model value at design row {row}, output {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("prior marginals mix uniform and Gaussian; one basis family cannot span both")]
    MixedPrior,
    #[error("forward model failed at design point {point:?}: {source}")]
    ModelAt {
        point: Vec<f64>,
        source: ModelError,
    },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Linalg(LinalgError),
}

/// Result of one weighted least-squares fit.
#[derive(Debug, Clone)]
pub struct LsqReport {
    /// `M x n_d`, one coefficient column per output.
    pub coefficients: Matrix,
    /// Weighted residual 2-norm per output.
    pub residual_norms: Vec<f64>,
    /// Ratio of extreme diagonal magnitudes of the factored triangle.
    pub condition_estimate: f64,
    pub rank: usize,
}

/// Fits expansion coefficients to `values` (one row per design point, one
/// column per output) over the given index set.
pub fn fit_weighted_lsq(
    family: BasisFamily,
    index_set: &MultiIndexSet,
    design: &DesignSet,
    values: &Matrix,
) -> Result<LsqReport, RegressionError> {
    if design.dim() != index_set.dim() {
        return Err(RegressionError::ShapeMismatch {
            what: "design dimension",
            expected: index_set.dim(),
            got: design.dim(),
        });
    }
    let q = design.len();
    let m = index_set.len();
    if q < m {
        return Err(RegressionError::Underdetermined { points: q, terms: m });
    }
    if values.rows() != q {
        return Err(RegressionError::ShapeMismatch {
            what: "value rows",
            expected: q,
            got: values.rows(),
        });
    }
    for c in 0..values.cols() {
        for (r, v) in values.col(c).iter().enumerate() {
            if !v.is_finite() {
                return Err(RegressionError::NonFiniteValue { row: r, col: c });
            }
        }
    }

    let mut a = Matrix::zeros(q, m);
    let mut b = Matrix::zeros(q, values.cols());
    let mut row = Vec::new();
    let mut univ = Vec::new();
    for (i, (point, &w)) in design.points().zip(design.weights()).enumerate() {
        basis_row_into(family, index_set, point, &mut univ, &mut row);
        let sw = libm::sqrt(w);
        for (j, &phi) in row.iter().enumerate() {
            a.set(i, j, sw * phi);
        }
        for c in 0..values.cols() {
            b.set(i, c, sw * values.get(i, c));
        }
    }

    let ls = solve_least_squares(a, b, RANK_TOL).map_err(|e| match e {
        LinalgError::RankDeficient { rank, cols } => {
            RegressionError::RankDeficient { rank, terms: cols }
        }
        other => RegressionError::Linalg(other),
    })?;
    Ok(LsqReport {
        coefficients: ls.solution,
        residual_norms: ls.residual_norms,
        condition_estimate: ls.condition,
        rank: ls.rank,
    })
}

/// Builds the prior-based surrogate of order `n`: a `2M`-point design from
/// the prior's sampling density, one model solve per point (offline,
/// cached), and a weighted fit. The surrogate maps physical coordinates
/// through the prior's affine transform.
pub fn fit_prior_surrogate(
    model: &HfEvaluator,
    prior: &PriorSpec,
    n: usize,
    seed: u64,
) -> Result<PcSurrogate, RegressionError> {
    if prior.dim() != model.n_z() {
        return Err(RegressionError::ShapeMismatch {
            what: "prior dimension",
            expected: model.n_z(),
            got: prior.dim(),
        });
    }
    let family = prior.basis_family().ok_or(RegressionError::MixedPrior)?;
    let map = prior.affine_map();
    let index_set = MultiIndexSet::total_degree(model.n_z(), n)?;
    let design = DesignSet::for_prior(family, &index_set, 2 * index_set.len(), seed);

    let mut values = Matrix::zeros(design.len(), model.n_d());
    for (i, point) in design.points().enumerate() {
        let phys = map.to_physical(point);
        let out = model
            .evaluate(&phys, EvalKind::Offline)
            .map_err(|source| RegressionError::ModelAt {
                point: phys.clone(),
                source,
            })?;
        for (c, &v) in out.iter().enumerate() {
            values.set(i, c, v);
        }
    }

    let report = fit_weighted_lsq(family, &index_set, &design, &values)?;
    let provenance = Provenance {
        seed,
        design_size: design.len(),
        fit_residuals: report.residual_norms,
    };
    Ok(
        PcSurrogate::new(family, index_set, report.coefficients, map, provenance)
            .expect("fit output dimensions are consistent by construction"),
    )
}
