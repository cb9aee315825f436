//! Steady Darcy flow on the unit square: recover a permeability field,
//! parameterized by Gaussian radial basis weights, from pointwise pressure
//! measurements.
//!
//! Solves `-div(kappa grad u) = f` with homogeneous Dirichlet boundary and
//! `f = forcing * sin(pi x1) sin(pi x2)` by a conservative finite-difference
//! scheme: face fluxes use harmonic-mean transmissibilities of the nodal
//! permeabilities, which keeps the operator symmetric positive definite and
//! second-order accurate. The inferred parameters are the logs of the basis
//! weights, so the solver itself always sees positive weights.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{bilinear_sample, CostClass, ForwardModel, ModelError};
use crate::linalg::BandedMatrix;

#[derive(Debug, Clone)]
pub struct EllipticRbfModel {
    centers: Vec<(f64, f64)>,
    width: f64,
    p: usize,
    sensors: Vec<(f64, f64)>,
    forcing: f64,
}

impl EllipticRbfModel {
    pub fn new(
        p: usize,
        centers: Vec<(f64, f64)>,
        width: f64,
        sensors: Vec<(f64, f64)>,
    ) -> Result<Self, ModelError> {
        if p < 3 {
            return Err(ModelError::BadConfiguration {
                what: "mesh size",
                why: alloc::format!("need at least 3 nodes per side, got {p}"),
            });
        }
        if centers.is_empty() || sensors.is_empty() {
            return Err(ModelError::BadConfiguration {
                what: "geometry",
                why: alloc::format!(
                    "{} basis centers, {} sensors; both must be nonempty",
                    centers.len(),
                    sensors.len()
                ),
            });
        }
        if !(width > 0.0) || !width.is_finite() {
            return Err(ModelError::BadConfiguration {
                what: "basis width",
                why: alloc::format!("width = {width}"),
            });
        }
        Ok(EllipticRbfModel {
            centers,
            width,
            p,
            sensors,
            forcing: 100.0,
        })
    }

    /// Nine basis centers on {0.2, 0.5, 0.8}^2 with width 0.15 and a 9x9
    /// sensor grid over [0.1, 0.9]^2 with spacing 0.1.
    pub fn default_geometry(p: usize) -> Result<Self, ModelError> {
        let coords = [0.2, 0.5, 0.8];
        let mut centers = Vec::with_capacity(9);
        for &y in &coords {
            for &x in &coords {
                centers.push((x, y));
            }
        }
        let mut sensors = Vec::with_capacity(81);
        for iy in 0..9 {
            for ix in 0..9 {
                sensors.push((0.1 + 0.1 * ix as f64, 0.1 + 0.1 * iy as f64));
            }
        }
        EllipticRbfModel::new(p, centers, 0.15, sensors)
    }

    /// Scales the forcing term; zero turns it off entirely.
    pub fn with_forcing(mut self, forcing: f64) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn mesh_nodes(&self) -> usize {
        self.p
    }

    pub fn basis_centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    pub fn basis_width(&self) -> f64 {
        self.width
    }

    pub fn sensor_locations(&self) -> &[(f64, f64)] {
        &self.sensors
    }

    /// Evaluates the radial basis expansion at every grid node, rejecting
    /// fields that are not strictly positive.
    pub fn field_at_nodes(&self, weights: &[f64]) -> Result<Vec<f64>, ModelError> {
        if weights.len() != self.centers.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.centers.len(),
                got: weights.len(),
            });
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(ModelError::NonFiniteParameter(i));
        }
        let p = self.p;
        let h = 1.0 / (p - 1) as f64;
        let inv_w2 = 1.0 / (self.width * self.width);
        let mut kappa = vec![0.0; p * p];
        for iy in 0..p {
            for ix in 0..p {
                let (x, y) = (ix as f64 * h, iy as f64 * h);
                let mut v = 0.0;
                for (&w, &(cx, cy)) in weights.iter().zip(&self.centers) {
                    let dx = x - cx;
                    let dy = y - cy;
                    v += w * libm::exp(-0.5 * (dx * dx + dy * dy) * inv_w2);
                }
                kappa[iy * p + ix] = v;
            }
        }
        if let Some(node) = kappa.iter().position(|&v| v <= 0.0) {
            return Err(ModelError::NonPositiveField {
                node,
                value: kappa[node],
            });
        }
        Ok(kappa)
    }

    /// Solves for the full node field (boundary zeros included) given the
    /// permeability at every node. Test hook for manufactured fields.
    fn solve_field(&self, kappa: &[f64]) -> Result<Vec<f64>, ModelError> {
        let p = self.p;
        let m = p - 2;
        let n = m * m;
        let h = 1.0 / (p - 1) as f64;
        let inv_h2 = 1.0 / (h * h);
        let interior = |ix: usize, iy: usize| -> Option<usize> {
            (ix >= 1 && ix <= m && iy >= 1 && iy <= m).then(|| (iy - 1) * m + (ix - 1))
        };
        let trans = |a: f64, b: f64| 2.0 * a * b / (a + b);

        let mut mat = BandedMatrix::zeros(n, m);
        for iy in 0..p {
            for ix in 0..p {
                let here = kappa[iy * p + ix];
                if ix + 1 < p {
                    let t = trans(here, kappa[iy * p + ix + 1]) * inv_h2;
                    let (a, b) = (interior(ix, iy), interior(ix + 1, iy));
                    if let Some(k) = a {
                        mat.add(k, k, t);
                    }
                    if let Some(k) = b {
                        mat.add(k, k, t);
                    }
                    if let (Some(ka), Some(kb)) = (a, b) {
                        mat.add(kb, ka, -t);
                    }
                }
                if iy + 1 < p {
                    let t = trans(here, kappa[(iy + 1) * p + ix]) * inv_h2;
                    let (a, b) = (interior(ix, iy), interior(ix, iy + 1));
                    if let Some(k) = a {
                        mat.add(k, k, t);
                    }
                    if let Some(k) = b {
                        mat.add(k, k, t);
                    }
                    if let (Some(ka), Some(kb)) = (a, b) {
                        mat.add(kb, ka, -t);
                    }
                }
            }
        }
        let factor = mat.cholesky()?;
        let mut rhs = vec![0.0; n];
        for iy in 1..=m {
            for ix in 1..=m {
                let (x, y) = (ix as f64 * h, iy as f64 * h);
                rhs[(iy - 1) * m + (ix - 1)] = self.forcing
                    * libm::sin(core::f64::consts::PI * x)
                    * libm::sin(core::f64::consts::PI * y);
            }
        }
        factor.solve_in_place(&mut rhs);
        let mut field = vec![0.0; p * p];
        for iy in 1..=m {
            for ix in 1..=m {
                field[iy * p + ix] = rhs[(iy - 1) * m + (ix - 1)];
            }
        }
        Ok(field)
    }

    fn sample_sensors(&self, field: &[f64]) -> Vec<f64> {
        self.sensors
            .iter()
            .map(|&(x, y)| bilinear_sample(field, self.p, x, y))
            .collect()
    }
}

impl ForwardModel for EllipticRbfModel {
    fn n_z(&self) -> usize {
        self.centers.len()
    }

    fn n_d(&self) -> usize {
        self.sensors.len()
    }

    fn cost_class(&self) -> CostClass {
        CostClass::Expensive
    }

    /// Parameters are the logs of the basis weights.
    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, ModelError> {
        if params.len() != self.centers.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.centers.len(),
                got: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(ModelError::NonFiniteParameter(i));
        }
        let weights: Vec<f64> = params.iter().map(|&z| libm::exp(z)).collect();
        elliptic_solve(self, &weights)
    }

    fn refined(&self, factor: u32) -> Arc<dyn ForwardModel> {
        let factor = factor.max(1) as usize;
        let refined = EllipticRbfModel::new(
            (self.p - 1) * factor + 1,
            self.centers.clone(),
            self.width,
            self.sensors.clone(),
        )
        .expect("refinement of a valid model is valid")
        .with_forcing(self.forcing);
        Arc::new(refined)
    }
}

/// Solves the flow problem for explicit (already exponentiated) basis
/// weights and returns the sensor pressures.
pub fn elliptic_solve(
    model: &EllipticRbfModel,
    kappa_weights: &[f64],
) -> Result<Vec<f64>, ModelError> {
    let kappa = model.field_at_nodes(kappa_weights)?;
    let field = model.solve_field(&kappa)?;
    Ok(model.sample_sensors(&field))
}
