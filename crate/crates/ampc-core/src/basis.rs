//! Orthonormal polynomial families and total-degree multi-index sets.
//!
//! Two univariate families are supported, each orthonormal with respect to
//! its natural probability measure:
//!
//! * Legendre on `[-1, 1]` with density 1/2: `phi_n(z) = sqrt(2n+1) P_n(z)`.
//! * Probabilists' Hermite with standard Gaussian weight, evaluated through
//!   the normalized recurrence
//!   `phi_{n+1}(z) = (z phi_n(z) - sqrt(n) phi_{n-1}(z)) / sqrt(n+1)`.
//!
//! Multivariate basis functions are tensor products over a total-degree
//! index set `{ m : |m|_1 <= N }`, enumerated in a fixed order: ascending
//! total degree, and within one degree lexicographically descending (so
//! `(2,0)` comes before `(1,1)` before `(0,2)`). The order is stable, is
//! part of the on-disk surrogate format, and has the property that the
//! degree-`N_C` set is a prefix of the degree-`N` set for `N_C <= N`.

use alloc::vec::Vec;
use core::cmp::Ordering;
use thiserror::Error;

/// Identifier used by the surrogate file format for the index ordering
/// implemented here.
pub const INDEX_ORDERING: &str = "total-degree-grlex-desc";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisFamily {
    /// Orthonormal Legendre, for uniform priors.
    Legendre,
    /// Orthonormal probabilists' Hermite, for Gaussian priors.
    Hermite,
}

impl BasisFamily {
    pub fn name(self) -> &'static str {
        match self {
            BasisFamily::Legendre => "legendre",
            BasisFamily::Hermite => "hermite",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "legendre" => Some(BasisFamily::Legendre),
            "hermite" => Some(BasisFamily::Hermite),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BasisError {
    #[error("multi-index sets need at least one dimension")]
    ZeroDimension,
    #[error("total-degree set in dimension {dim} at degree {degree} has {terms} terms, beyond what this build can address")]
    Capacity { dim: usize, degree: usize, terms: u128 },
}

/// Number of multi-indices in the total-degree set: `C(dim + degree, dim)`.
pub fn total_degree_len(dim: usize, degree: usize) -> Result<usize, BasisError> {
    if dim == 0 {
        return Err(BasisError::ZeroDimension);
    }
    let mut c: u128 = 1;
    for k in 1..=dim as u128 {
        c = match c.checked_mul(degree as u128 + k) {
            Some(v) => v / k,
            None => {
                return Err(BasisError::Capacity {
                    dim,
                    degree,
                    terms: u128::MAX,
                })
            }
        };
    }
    usize::try_from(c).map_err(|_| BasisError::Capacity {
        dim,
        degree,
        terms: c,
    })
}

/// A total-degree multi-index set in a fixed, documented order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    dim: usize,
    degree: usize,
    /// Flattened indices, `dim` entries per term.
    flat: Vec<u32>,
}

impl MultiIndexSet {
    /// Builds `{ m in N^dim : |m|_1 <= degree }` in the crate's canonical
    /// order (see the module docs).
    pub fn total_degree(dim: usize, degree: usize) -> Result<Self, BasisError> {
        let len = total_degree_len(dim, degree)?;
        let mut flat = Vec::with_capacity(len * dim);
        let mut scratch = alloc::vec![0u32; dim];
        for grade in 0..=degree {
            push_compositions(&mut flat, &mut scratch, 0, grade as u32);
        }
        debug_assert_eq!(flat.len(), len * dim);
        Ok(MultiIndexSet { dim, degree, flat })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// The `m`-th multi-index.
    pub fn index(&self, m: usize) -> &[u32] {
        &self.flat[m * self.dim..(m + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.flat.chunks_exact(self.dim)
    }

    /// Position of a multi-index in the canonical order, if it is in range.
    pub fn position(&self, index: &[u32]) -> Option<usize> {
        if index.len() != self.dim {
            return None;
        }
        let mut lo = 0usize;
        let mut hi = self.len();
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match index_order(self.index(mid), index) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid),
            }
        }
        None
    }
}

fn push_compositions(flat: &mut Vec<u32>, scratch: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == scratch.len() {
        scratch[pos] = remaining;
        flat.extend_from_slice(scratch);
        return;
    }
    for d in (0..=remaining).rev() {
        scratch[pos] = d;
        push_compositions(flat, scratch, pos + 1, remaining - d);
    }
}

/// Canonical comparison of equal-length multi-indices: ascending total
/// degree, then lexicographically descending.
pub fn index_order(a: &[u32], b: &[u32]) -> Ordering {
    let ga: u32 = a.iter().sum();
    let gb: u32 = b.iter().sum();
    ga.cmp(&gb).then_with(|| b.cmp(a))
}

/// Evaluates `phi_0(z) ... phi_{max_degree}(z)` for one family.
pub fn eval_univariate_all(family: BasisFamily, max_degree: usize, z: f64, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(max_degree + 1);
    match family {
        BasisFamily::Legendre => {
            // Standard recurrence for P_n, scaled to unit norm afterwards:
            // (n+1) P_{n+1} = (2n+1) z P_n - n P_{n-1}.
            let mut prev = 1.0;
            let mut curr = z;
            out.push(1.0);
            if max_degree >= 1 {
                out.push(libm::sqrt(3.0) * z);
            }
            for n in 1..max_degree {
                let nf = n as f64;
                let next = ((2.0 * nf + 1.0) * z * curr - nf * prev) / (nf + 1.0);
                prev = curr;
                curr = next;
                out.push(libm::sqrt(2.0 * (nf + 1.0) + 1.0) * curr);
            }
        }
        BasisFamily::Hermite => {
            let mut prev = 0.0;
            let mut curr = 1.0;
            out.push(1.0);
            for n in 0..max_degree {
                let nf = n as f64;
                let next = (z * curr - libm::sqrt(nf) * prev) / libm::sqrt(nf + 1.0);
                prev = curr;
                curr = next;
                out.push(curr);
            }
        }
    }
}

/// Single orthonormal polynomial value `phi_degree(z)`.
pub fn eval_univariate(family: BasisFamily, degree: usize, z: f64) -> f64 {
    let mut buf = Vec::new();
    eval_univariate_all(family, degree, z, &mut buf);
    buf[degree]
}

/// Evaluates every multivariate basis function in `set` at the point `z`
/// (already in the standard domain of the family), appending into `out`.
///
/// `univ` is scratch space for the per-dimension univariate tables so hot
/// loops can reuse allocations.
pub fn basis_row_into(
    family: BasisFamily,
    set: &MultiIndexSet,
    z: &[f64],
    univ: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    assert_eq!(
        z.len(),
        set.dim(),
        "point dimension {} does not match index set dimension {}",
        z.len(),
        set.dim()
    );
    let width = set.degree() + 1;
    univ.clear();
    univ.reserve(set.dim() * width);
    let mut col = Vec::new();
    for &zi in z {
        eval_univariate_all(family, set.degree(), zi, &mut col);
        univ.extend_from_slice(&col);
    }
    out.clear();
    out.reserve(set.len());
    for idx in set.iter() {
        let mut p = 1.0;
        for (d, &k) in idx.iter().enumerate() {
            p *= univ[d * width + k as usize];
        }
        out.push(p);
    }
}

/// Allocating convenience wrapper around [`basis_row_into`].
pub fn basis_row(family: BasisFamily, set: &MultiIndexSet, z: &[f64]) -> Vec<f64> {
    let mut univ = Vec::new();
    let mut out = Vec::new();
    basis_row_into(family, set, z, &mut univ, &mut out);
    out
}
