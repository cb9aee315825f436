//! Polynomial chaos surrogates and the additive multi-fidelity correction.
//!
//! A surrogate is a linear combination of orthonormal basis polynomials over
//! a total-degree index set, fitted in the standardized coordinates of its
//! prior. Refinement fits a lower-order correction to the model/surrogate
//! mismatch on a local cloud of points and folds it into the leading
//! coefficients, so successive surrogates share one index set and improve in
//! place.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::basis::{basis_row, BasisError, BasisFamily, MultiIndexSet};
use crate::design::DesignSet;
use crate::linalg::Matrix;
use crate::models::{EvalKind, HfEvaluator, ModelError};
use crate::regression::{fit_weighted_lsq, RegressionError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("point has {got} coordinates, surrogate expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coefficient matrix is {rows}x{cols}, index set needs {terms} rows")]
    CoefficientShape {
        rows: usize,
        cols: usize,
        terms: usize,
    },
    #[error("surrogates disagree on {0}, cannot merge")]
    Incompatible(&'static str),
    #[error("correction index set is not a subset of the base index set")]
    NotASubset,
    #[error("refinement radius {0} must be positive and finite")]
    InvalidRadius(f64),
    #[error("local design degenerate: coordinate {coordinate} is constant across all points")]
    DegenerateDesign { coordinate: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

/// Per-coordinate affine map between the basis's standardized coordinates
/// and the physical parameter coordinates: `phys = shift + scale * std`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl AffineMap {
    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Self {
        assert_eq!(shift.len(), scale.len());
        assert!(
            scale.iter().all(|&s| s > 0.0 && s.is_finite()),
            "scales must be positive"
        );
        AffineMap { shift, scale }
    }

    pub fn identity(dim: usize) -> Self {
        AffineMap {
            shift: alloc::vec![0.0; dim],
            scale: alloc::vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn to_standard(&self, phys: &[f64]) -> Vec<f64> {
        phys.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&p, (&b, &a))| (p - b) / a)
            .collect()
    }

    pub fn to_physical(&self, std: &[f64]) -> Vec<f64> {
        std.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&s, (&b, &a))| b + a * s)
            .collect()
    }
}

/// Where a surrogate's coefficients came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub design_size: usize,
    /// Weighted least-squares residual norm per output.
    pub fit_residuals: Vec<f64>,
}

/// A fitted polynomial chaos expansion: `G(z) ~ sum_m c_m Phi_m(std(z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcSurrogate {
    family: BasisFamily,
    index_set: MultiIndexSet,
    /// `M x n_d`, one column per output.
    coefficients: Matrix,
    prior_map: AffineMap,
    provenance: Provenance,
    generation: u32,
}

impl PcSurrogate {
    pub fn new(
        family: BasisFamily,
        index_set: MultiIndexSet,
        coefficients: Matrix,
        prior_map: AffineMap,
        provenance: Provenance,
    ) -> Result<Self, SurrogateError> {
        if coefficients.rows() != index_set.len() {
            return Err(SurrogateError::CoefficientShape {
                rows: coefficients.rows(),
                cols: coefficients.cols(),
                terms: index_set.len(),
            });
        }
        if prior_map.dim() != index_set.dim() {
            return Err(SurrogateError::DimensionMismatch {
                expected: index_set.dim(),
                got: prior_map.dim(),
            });
        }
        Ok(PcSurrogate {
            family,
            index_set,
            coefficients,
            prior_map,
            provenance,
            generation: 0,
        })
    }

    /// Stamps the merge-count bookkeeping, e.g. when a surrogate is
    /// reconstructed from a serialized form.
    pub fn with_generation(mut self, generation: u32) -> Self {
        self.generation = generation;
        self
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn coefficients(&self) -> &Matrix {
        &self.coefficients
    }

    pub fn prior_map(&self) -> &AffineMap {
        &self.prior_map
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// How many refinement merges produced this surrogate (prior fit = 0).
    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn n_z(&self) -> usize {
        self.index_set.dim()
    }

    pub fn n_d(&self) -> usize {
        self.coefficients.cols()
    }

    pub fn order(&self) -> usize {
        self.index_set.degree()
    }

    /// Evaluates the expansion at a physical-coordinate point.
    pub fn evaluate(&self, z: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        if z.len() != self.n_z() {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.n_z(),
                got: z.len(),
            });
        }
        let std = self.prior_map.to_standard(z);
        let row = basis_row(self.family, &self.index_set, &std);
        let out = (0..self.n_d())
            .map(|k| crate::linalg::dot(&row, self.coefficients.col(k)))
            .collect();
        Ok(out)
    }
}

/// Folds a lower-order correction into a surrogate: coefficients on the
/// correction's index set are summed, the rest pass through. The result's
/// generation is one past the base's.
pub fn merge(low: &PcSurrogate, correction: &PcSurrogate) -> Result<PcSurrogate, SurrogateError> {
    if low.family != correction.family {
        return Err(SurrogateError::Incompatible("basis family"));
    }
    if low.prior_map != correction.prior_map {
        return Err(SurrogateError::Incompatible("prior map"));
    }
    if low.n_d() != correction.n_d() {
        return Err(SurrogateError::Incompatible("output dimension"));
    }
    if low.n_z() != correction.n_z() || correction.order() > low.order() {
        return Err(SurrogateError::NotASubset);
    }
    // Total-degree sets in canonical order nest as prefixes, so the
    // correction's rows align with the leading rows of the base.
    debug_assert!(correction
        .index_set
        .iter()
        .enumerate()
        .all(|(m, idx)| low.index_set.index(m) == idx));
    let mut coefficients = low.coefficients.clone();
    for k in 0..correction.n_d() {
        let dst = coefficients.col_mut(k);
        for (m, &c) in correction.coefficients.col(k).iter().enumerate() {
            dst[m] += c;
        }
    }
    Ok(PcSurrogate {
        family: low.family,
        index_set: low.index_set.clone(),
        coefficients,
        prior_map: low.prior_map.clone(),
        provenance: correction.provenance.clone(),
        generation: low.generation + 1,
    })
}

/// One refinement step: the base surrogate, the local correction fitted to
/// the high-fidelity mismatch, and their merge.
#[derive(Debug, Clone)]
pub struct MultiFidelitySurrogate {
    pub low: PcSurrogate,
    pub correction: PcSurrogate,
    pub merged: PcSurrogate,
    pub generation: u32,
}

/// Fits an order-`n_c` correction to `high - low` on a local point cloud
/// and merges it into `low`.
///
/// The cloud is `Q_C = 2 * |index set|` points `center + radius * xi` with
/// `xi` uniform on the unit cube `[-1, 1]^{n_z}`, clamped to the prior box
/// when the prior is bounded. The correction is fitted in the same global
/// basis as `low` (restricted to the smaller index set), with the usual
/// design weights; that shared basis is what makes coefficientwise merging
/// meaningful.
pub fn build_multifidelity(
    low: &PcSurrogate,
    high: &HfEvaluator,
    n_c: usize,
    center: &[f64],
    radius: f64,
    seed: u64,
) -> Result<MultiFidelitySurrogate, SurrogateError> {
    let n_z = low.n_z();
    if center.len() != n_z || high.n_z() != n_z {
        return Err(SurrogateError::DimensionMismatch {
            expected: n_z,
            got: if center.len() != n_z {
                center.len()
            } else {
                high.n_z()
            },
        });
    }
    if high.n_d() != low.n_d() {
        return Err(SurrogateError::Incompatible("output dimension"));
    }
    if n_c > low.order() {
        return Err(SurrogateError::NotASubset);
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(SurrogateError::InvalidRadius(radius));
    }

    let corr_set = MultiIndexSet::total_degree(n_z, n_c)?;
    let q_c = 2 * corr_set.len();
    let bounded = low.family() == BasisFamily::Legendre;
    let map = low.prior_map();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phys = Vec::with_capacity(q_c * n_z);
    for _ in 0..q_c {
        for j in 0..n_z {
            let xi: f64 = 2.0 * rng.gen::<f64>() - 1.0;
            let mut x = center[j] + radius * xi;
            if bounded {
                let lo = map.shift()[j] - map.scale()[j];
                let hi = map.shift()[j] + map.scale()[j];
                x = x.clamp(lo, hi);
            }
            phys.push(x);
        }
    }
    for j in 0..n_z {
        let column = phys.iter().skip(j).step_by(n_z);
        let first = phys[j];
        if column.skip(1).all(|&x| x == first) {
            return Err(SurrogateError::DegenerateDesign { coordinate: j });
        }
    }

    let mut values = Matrix::zeros(q_c, low.n_d());
    let mut std_points = Vec::with_capacity(q_c * n_z);
    for (i, x) in phys.chunks_exact(n_z).enumerate() {
        let exact = high.evaluate(x, EvalKind::Refinement)?;
        let approx = low.evaluate(x)?;
        for (k, (e, a)) in exact.iter().zip(&approx).enumerate() {
            values.set(i, k, e - a);
        }
        std_points.extend(map.to_standard(x));
    }

    let design = DesignSet::from_points(low.family(), &corr_set, std_points, seed);
    let report = fit_weighted_lsq(low.family(), &corr_set, &design, &values)?;
    let correction = PcSurrogate::new(
        low.family(),
        corr_set,
        report.coefficients,
        map.clone(),
        Provenance {
            seed,
            design_size: q_c,
            fit_residuals: report.residual_norms,
        },
    )?;
    let merged = merge(low, &correction)?;
    let generation = merged.generation();
    Ok(MultiFidelitySurrogate {
        low: low.clone(),
        correction,
        merged,
        generation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ConstantModel, ForwardModel};
    use alloc::sync::Arc;
    use alloc::vec;

    fn constant_surrogate(c: &[f64], n_z: usize, family: BasisFamily) -> PcSurrogate {
        let set = MultiIndexSet::total_degree(n_z, 2).unwrap();
        let mut coeffs = Matrix::zeros(set.len(), c.len());
        for (k, &v) in c.iter().enumerate() {
            coeffs.set(0, k, v);
        }
        let map = match family {
            BasisFamily::Legendre => AffineMap::new(vec![0.5; n_z], vec![0.5; n_z]),
            BasisFamily::Hermite => AffineMap::identity(n_z),
        };
        PcSurrogate::new(
            family,
            set,
            coeffs,
            map,
            Provenance {
                seed: 0,
                design_size: 0,
                fit_residuals: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn affine_map_round_trips() {
        let map = AffineMap::new(vec![0.5, -1.0], vec![0.5, 2.0]);
        let z = [0.25, 0.75];
        let back = map.to_physical(&map.to_standard(&z));
        assert!((back[0] - z[0]).abs() < 1e-15);
        assert!((back[1] - z[1]).abs() < 1e-15);
        assert_eq!(map.to_standard(&[0.5, -1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn constant_coefficient_evaluates_constant() {
        let s = constant_surrogate(&[3.0, -1.5], 2, BasisFamily::Legendre);
        for z in [[0.1, 0.9], [0.5, 0.5], [0.0, 1.0]] {
            assert_eq!(s.evaluate(&z).unwrap(), vec![3.0, -1.5]);
        }
        assert!(matches!(
            s.evaluate(&[0.1]),
            Err(SurrogateError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn merge_adds_overlapping_coefficients() {
        let set1 = MultiIndexSet::total_degree(1, 1).unwrap();
        let set0 = MultiIndexSet::total_degree(1, 0).unwrap();
        let map = AffineMap::identity(1);
        let prov = Provenance {
            seed: 0,
            design_size: 0,
            fit_residuals: vec![],
        };
        let mut c_low = Matrix::zeros(2, 1);
        c_low.set(0, 0, 1.0);
        c_low.set(1, 0, 2.0);
        let low = PcSurrogate::new(BasisFamily::Hermite, set1, c_low, map.clone(), prov.clone())
            .unwrap();
        let mut c_corr = Matrix::zeros(1, 1);
        c_corr.set(0, 0, 3.0);
        let corr = PcSurrogate::new(BasisFamily::Hermite, set0, c_corr, map, prov).unwrap();
        let merged = merge(&low, &corr).unwrap();
        assert_eq!(merged.coefficients().col(0), &[4.0, 2.0]);
        assert_eq!(merged.generation(), 1);
        assert_eq!(merge(&merged, &corr).unwrap().generation(), 2);
        assert!(matches!(
            merge(&corr, &low),
            Err(SurrogateError::NotASubset)
        ));
    }

    #[test]
    fn merged_evaluation_is_sum_of_parts() {
        use rand::Rng;
        let set_low = MultiIndexSet::total_degree(2, 3).unwrap();
        let set_cor = MultiIndexSet::total_degree(2, 2).unwrap();
        let map = AffineMap::identity(2);
        let prov = Provenance {
            seed: 0,
            design_size: 0,
            fit_residuals: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut c_low = Matrix::zeros(set_low.len(), 2);
        let mut c_cor = Matrix::zeros(set_cor.len(), 2);
        for k in 0..2 {
            for m in 0..set_low.len() {
                c_low.set(m, k, rng.gen::<f64>() - 0.5);
            }
            for m in 0..set_cor.len() {
                c_cor.set(m, k, rng.gen::<f64>() - 0.5);
            }
        }
        let low = PcSurrogate::new(BasisFamily::Hermite, set_low, c_low, map.clone(), prov.clone())
            .unwrap();
        let cor = PcSurrogate::new(BasisFamily::Hermite, set_cor, c_cor, map, prov).unwrap();
        let merged = merge(&low, &cor).unwrap();
        for _ in 0..1000 {
            let z = [rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0];
            let want: Vec<f64> = low
                .evaluate(&z)
                .unwrap()
                .iter()
                .zip(cor.evaluate(&z).unwrap())
                .map(|(a, b)| a + b)
                .collect();
            let got = merged.evaluate(&z).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matching_model_yields_null_correction() {
        let c = [2.0, -7.0];
        let low = constant_surrogate(&c, 2, BasisFamily::Legendre);
        let high = HfEvaluator::new(Arc::new(ConstantModel::new(c.to_vec(), 2)));
        let mf = build_multifidelity(&low, &high, 1, &[0.5, 0.5], 0.1, 42).unwrap();
        for k in 0..2 {
            for &v in mf.correction.coefficients().col(k) {
                assert!(v.abs() < 1e-10, "coefficient {v}");
            }
        }
        assert_eq!(mf.generation, 1);
        let z = [0.43, 0.61];
        let lo = mf.low.evaluate(&z).unwrap();
        let me = mf.merged.evaluate(&z).unwrap();
        for (a, b) in lo.iter().zip(&me) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_offset_lands_in_zero_index() {
        let low = constant_surrogate(&[2.0], 2, BasisFamily::Legendre);
        let high = HfEvaluator::new(Arc::new(ConstantModel::new(vec![7.0], 2)));
        let mf = build_multifidelity(&low, &high, 2, &[0.5, 0.5], 0.1, 7).unwrap();
        let col = mf.correction.coefficients().col(0);
        assert!((col[0] - 5.0).abs() < 1e-10, "zero-index {}", col[0]);
        for &v in &col[1..] {
            assert!(v.abs() < 1e-10);
        }
        assert_eq!(high.ledger().refinement, 12);
        assert_eq!(mf.correction.provenance().design_size, 12);
    }

    #[test]
    fn refinement_points_stay_in_bounded_support() {
        let low = constant_surrogate(&[1.0], 2, BasisFamily::Legendre);
        let probe = Arc::new(ConstantModel::new(vec![1.0], 2));
        // Center on the box corner: clamping must keep the design usable.
        let mf = build_multifidelity(
            &low,
            &HfEvaluator::new(probe.clone() as Arc<dyn ForwardModel>),
            1,
            &[1.0, 0.0],
            0.2,
            3,
        )
        .unwrap();
        assert_eq!(mf.generation, 1);
        // A center outside the box clamps one coordinate flat.
        let err = build_multifidelity(
            &low,
            &HfEvaluator::new(probe as Arc<dyn ForwardModel>),
            1,
            &[1.5, 0.5],
            0.2,
            3,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SurrogateError::DegenerateDesign { coordinate: 0 }
        ));
    }

    #[test]
    fn invalid_radius_rejected() {
        let low = constant_surrogate(&[1.0], 2, BasisFamily::Hermite);
        let high = HfEvaluator::new(Arc::new(ConstantModel::new(vec![1.0], 2)));
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                build_multifidelity(&low, &high, 1, &[0.0, 0.0], bad, 1),
                Err(SurrogateError::InvalidRadius(_))
            ));
        }
        assert!(matches!(
            build_multifidelity(&low, &high, 3, &[0.0, 0.0], 0.1, 1),
            Err(SurrogateError::NotASubset)
        ));
    }
}
