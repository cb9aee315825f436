//! Sampling plans and preconditioning weights for discrete least squares.
//!
//! Stable least-squares recovery wants design densities matched to where
//! high-degree polynomials put their mass, not the prior itself. Two plans
//! are used:
//!
//! * uniform priors: coordinate-wise Chebyshev draws `z = cos(pi U)`, whose
//!   arcsine density is the degree-asymptotic sampling measure on `[-1,1]`;
//! * Gaussian priors: uniform draws on the Euclidean ball of radius
//!   `sqrt(2N)`, where degree-`N` Hermite polynomials concentrate.
//!
//! Each point gets the preconditioning weight
//! `w_i = M / sum_m phi_m(z_i)^2`, which equalizes the row norms of the
//! weighted Vandermonde system.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basis::{basis_row_into, BasisFamily, MultiIndexSet};

/// Q points in `[-1,1]^{n_z}` from the tensor-product Chebyshev (arcsine)
/// density, flattened row-major. Deterministic given the seed.
pub fn sample_chebyshev_design(n_z: usize, q: usize, rng_seed: u64) -> Vec<f64> {
    assert!(n_z >= 1 && q >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut points = Vec::with_capacity(q * n_z);
    for _ in 0..q {
        for _ in 0..n_z {
            let u: f64 = rng.gen();
            points.push(libm::cos(core::f64::consts::PI * u));
        }
    }
    points
}

/// Q points uniform on the Euclidean ball of radius `sqrt(2N)` in
/// `n_z` dimensions (direction uniform on the sphere, radius
/// `sqrt(2N) * U^(1/n_z)`), flattened row-major.
pub fn sample_ball_design(n_z: usize, order: usize, q: usize, rng_seed: u64) -> Vec<f64> {
    assert!(n_z >= 1 && q >= 1 && order >= 1);
    let radius = libm::sqrt(2.0 * order as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut points = Vec::with_capacity(q * n_z);
    let mut dir = Vec::with_capacity(n_z);
    for _ in 0..q {
        loop {
            dir.clear();
            for _ in 0..n_z {
                dir.push(rng.sample::<f64, _>(StandardNormal));
            }
            let norm = crate::linalg::norm2(&dir);
            if norm > 0.0 {
                let u: f64 = rng.gen();
                let r = radius * libm::pow(u, 1.0 / n_z as f64);
                points.extend(dir.iter().map(|&g| r * g / norm));
                break;
            }
        }
    }
    points
}

/// Preconditioning weights `w_i = M / sum_m phi_m(z_i)^2` for each point of
/// a row-major `Q x n_z` block. The denominator is at least `phi_0^2 = 1`,
/// so every weight is positive and at most `M`.
pub fn compute_weights(family: BasisFamily, index_set: &MultiIndexSet, points: &[f64]) -> Vec<f64> {
    let dim = index_set.dim();
    assert_eq!(points.len() % dim, 0, "point block is not Q x n_z");
    let m = index_set.len() as f64;
    let mut weights = Vec::with_capacity(points.len() / dim);
    let mut univ = Vec::new();
    let mut row = Vec::new();
    for z in points.chunks_exact(dim) {
        basis_row_into(family, index_set, z, &mut univ, &mut row);
        let s: f64 = row.iter().map(|p| p * p).sum();
        weights.push(m / s);
    }
    weights
}

/// A least-squares design: sample points with their weights, tagged with
/// the family and order the weights were computed against. Points are in
/// the standard domain of the family, not the physical parameter domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    family: BasisFamily,
    order: usize,
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    seed: u64,
}

impl DesignSet {
    /// Wraps externally generated points, computing their weights.
    pub fn from_points(
        family: BasisFamily,
        index_set: &MultiIndexSet,
        points: Vec<f64>,
        seed: u64,
    ) -> Self {
        let weights = compute_weights(family, index_set, &points);
        DesignSet {
            family,
            order: index_set.degree(),
            dim: index_set.dim(),
            points,
            weights,
            seed,
        }
    }

    /// Same points, caller-chosen weights. Test-only: lets the weighting
    /// invariance of consistent systems be checked against w = 1.
    #[cfg(test)]
    pub(crate) fn with_weights(
        family: BasisFamily,
        index_set: &MultiIndexSet,
        points: Vec<f64>,
        weights: Vec<f64>,
        seed: u64,
    ) -> Self {
        assert_eq!(points.len(), weights.len() * index_set.dim());
        DesignSet {
            family,
            order: index_set.degree(),
            dim: index_set.dim(),
            points,
            weights,
            seed,
        }
    }

    /// Samples a `q`-point design from the family's degree-matched density:
    /// Chebyshev for Legendre, the radius-`sqrt(2N)` ball for Hermite.
    pub fn for_prior(family: BasisFamily, index_set: &MultiIndexSet, q: usize, seed: u64) -> Self {
        let n_z = index_set.dim();
        let points = match family {
            BasisFamily::Legendre => sample_chebyshev_design(n_z, q, seed),
            BasisFamily::Hermite => {
                sample_ball_design(n_z, index_set.degree().max(1), q, seed)
            }
        };
        Self::from_points(family, index_set, points, seed)
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn weights_positive_and_bounded(
            dim in 1usize..4,
            degree in 0usize..5,
            seed in any::<u64>(),
        ) {
            let set = MultiIndexSet::total_degree(dim, degree).unwrap();
            let q = 2 * set.len();
            let design = DesignSet::for_prior(BasisFamily::Legendre, &set, q, seed);
            let m = set.len() as f64;
            for &w in design.weights() {
                prop_assert!(w > 0.0);
                prop_assert!(w <= m + 1e-12);
            }
        }

        #[test]
        fn ball_points_in_ball(
            dim in 1usize..5,
            order in 1usize..5,
            seed in any::<u64>(),
        ) {
            let pts = sample_ball_design(dim, order, 64, seed);
            let radius = (2.0 * order as f64).sqrt();
            for p in pts.chunks_exact(dim) {
                let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!(norm <= radius + 1e-12);
            }
        }
    }
}
