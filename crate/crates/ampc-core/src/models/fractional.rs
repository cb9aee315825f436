//! Time-fractional diffusion with a localized moving-average source, used
//! for recovering the source location (and optionally the derivative order)
//! from pointwise measurements of the field.
//!
//! The governing equation on the unit square with homogeneous Neumann
//! boundary conditions and zero initial data is
//!
//! ```text
//! D_t^alpha u - laplace(u) = amplitude * e^{-t} * exp(-0.5 ||Z - x||^2 / 0.1^2)
//! ```
//!
//! where `D_t^alpha` is the Caputo derivative of order `alpha` in `(0, 1]`
//! and `Z` is the source location. Time stepping uses the L1 discretization
//! of the Caputo derivative with the diffusion term treated implicitly;
//! space uses centered second-order differences with ghost-cell Neumann
//! closure. Boundary rows are rescaled by 1/2 (edges) and 1/4 (corners),
//! which turns the one-sided boundary stencils into a symmetric positive
//! definite system solvable by a banded Cholesky factorization.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{bilinear_sample, CostClass, ForwardModel, ModelError};
use crate::linalg::{BandedCholesky, BandedMatrix};

/// Which entries of the parameter vector the model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceUnknowns {
    /// `params = [z1, z2]`: the source location; the derivative order is
    /// taken from the model.
    Location,
    /// `params = [z1, z2, alpha]`: location plus derivative order.
    LocationAndOrder,
}

#[derive(Debug, Clone)]
struct TimeStepper {
    c0: f64,
    /// L1 weights `b_j = (j+1)^{1-alpha} - j^{1-alpha}`.
    weights: Vec<f64>,
    factor: BandedCholesky,
}

#[derive(Debug, Clone)]
pub struct FractionalSourceModel {
    unknowns: SourceUnknowns,
    alpha: f64,
    p: usize,
    dt: f64,
    n_steps: usize,
    sensors: Vec<(f64, f64)>,
    times: Vec<f64>,
    amplitude: f64,
    /// Precomputed stepping data, valid only while `alpha` is fixed.
    stepper: Option<TimeStepper>,
}

const SOURCE_WIDTH: f64 = 0.1;

impl FractionalSourceModel {
    pub fn new(
        unknowns: SourceUnknowns,
        alpha: f64,
        p: usize,
        dt: f64,
        sensors: Vec<(f64, f64)>,
        times: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(ModelError::InvalidAlpha(alpha));
        }
        if p < 3 {
            return Err(ModelError::BadConfiguration {
                what: "mesh size",
                why: alloc::format!("need at least 3 nodes per side, got {p}"),
            });
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(ModelError::BadConfiguration {
                what: "time step",
                why: alloc::format!("dt = {dt}"),
            });
        }
        if sensors.is_empty() || times.is_empty() {
            return Err(ModelError::BadConfiguration {
                what: "sensors",
                why: alloc::format!(
                    "{} locations, {} times; both must be nonempty",
                    sensors.len(),
                    times.len()
                ),
            });
        }
        if sensors
            .iter()
            .any(|&(x, y)| !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y))
        {
            return Err(ModelError::BadConfiguration {
                what: "sensors",
                why: alloc::format!("locations must lie in the unit square"),
            });
        }
        let t_max = times.iter().cloned().fold(0.0, f64::max);
        if times.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(ModelError::BadConfiguration {
                what: "sensor times",
                why: alloc::format!("times must be positive and finite"),
            });
        }
        let n_steps = libm::ceil(t_max / dt - 1e-9) as usize;
        let mut model = FractionalSourceModel {
            unknowns,
            alpha,
            p,
            dt,
            n_steps,
            sensors,
            times,
            amplitude: 1.0,
            stepper: None,
        };
        if unknowns == SourceUnknowns::Location {
            model.stepper = Some(model.build_stepper(alpha)?);
        }
        Ok(model)
    }

    /// 3x3 sensor grid at {0.25, 0.5, 0.75}^2 read at t = 0.25 and 0.75,
    /// 33x33 mesh, dt = 0.01; the source location is the unknown.
    pub fn known_order(alpha: f64) -> Result<Self, ModelError> {
        let coords = [0.25, 0.5, 0.75];
        let mut sensors = Vec::with_capacity(9);
        for &y in &coords {
            for &x in &coords {
                sensors.push((x, y));
            }
        }
        FractionalSourceModel::new(
            SourceUnknowns::Location,
            alpha,
            33,
            0.01,
            sensors,
            vec![0.25, 0.75],
        )
    }

    /// 5x5 sensor grid covering the closed unit square, read at t = 0.25,
    /// 0.75, and 1; the location and the derivative order are unknown.
    pub fn unknown_order() -> Result<Self, ModelError> {
        let mut sensors = Vec::with_capacity(25);
        for iy in 0..5 {
            for ix in 0..5 {
                sensors.push((ix as f64 * 0.25, iy as f64 * 0.25));
            }
        }
        FractionalSourceModel::new(
            SourceUnknowns::LocationAndOrder,
            0.8,
            33,
            0.01,
            sensors,
            vec![0.25, 0.75, 1.0],
        )
    }

    /// Scales the source term; zero turns it off entirely.
    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn unknowns(&self) -> SourceUnknowns {
        self.unknowns
    }

    pub fn mesh_nodes(&self) -> usize {
        self.p
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sensor_locations(&self) -> &[(f64, f64)] {
        &self.sensors
    }

    pub fn sensor_times(&self) -> &[f64] {
        &self.times
    }

    fn build_stepper(&self, alpha: f64) -> Result<TimeStepper, ModelError> {
        let c0 = libm::pow(self.dt, -alpha) / libm::tgamma(2.0 - alpha);
        let weights = (0..self.n_steps)
            .map(|j| {
                if j == 0 {
                    1.0
                } else {
                    let e = 1.0 - alpha;
                    libm::pow((j + 1) as f64, e) - libm::pow(j as f64, e)
                }
            })
            .collect();
        let p = self.p;
        let n = p * p;
        let h = 1.0 / (p - 1) as f64;
        let inv_h2 = 1.0 / (h * h);
        let edge = |i: usize| if i == 0 || i == p - 1 { 0.5 } else { 1.0 };
        let mut a = BandedMatrix::zeros(n, p);
        for iy in 0..p {
            for ix in 0..p {
                let idx = iy * p + ix;
                a.add(idx, idx, c0 * edge(ix) * edge(iy));
                if ix + 1 < p {
                    let w = edge(iy) * inv_h2;
                    a.add(idx, idx, w);
                    a.add(idx + 1, idx + 1, w);
                    a.add(idx + 1, idx, -w);
                }
                if iy + 1 < p {
                    let w = edge(ix) * inv_h2;
                    a.add(idx, idx, w);
                    a.add(idx + p, idx + p, w);
                    a.add(idx + p, idx, -w);
                }
            }
        }
        let factor = a.cholesky()?;
        Ok(TimeStepper { c0, weights, factor })
    }

    /// Runs the time loop and returns the field at every step, including
    /// the zero initial state.
    fn march(&self, z1: f64, z2: f64, stepper: &TimeStepper) -> Vec<Vec<f64>> {
        let p = self.p;
        let n = p * p;
        let h = 1.0 / (p - 1) as f64;
        let edge = |i: usize| if i == 0 || i == p - 1 { 0.5 } else { 1.0 };
        let inv_w2 = 1.0 / (SOURCE_WIDTH * SOURCE_WIDTH);

        let mut source_shape = vec![0.0; n];
        if self.amplitude != 0.0 {
            for iy in 0..p {
                for ix in 0..p {
                    let dx = ix as f64 * h - z1;
                    let dy = iy as f64 * h - z2;
                    source_shape[iy * p + ix] =
                        self.amplitude * libm::exp(-0.5 * (dx * dx + dy * dy) * inv_w2);
                }
            }
        }

        let mut history: Vec<Vec<f64>> = Vec::with_capacity(self.n_steps + 1);
        history.push(vec![0.0; n]);
        let mut rhs = vec![0.0; n];
        for step in 1..=self.n_steps {
            let t = step as f64 * self.dt;
            let decay = libm::exp(-t);
            // Memory term: sum_{j=1}^{step-1} b_j (u^{step-j} - u^{step-j-1}).
            rhs.iter_mut().for_each(|r| *r = 0.0);
            for j in 1..step {
                let b = stepper.weights[j];
                let newer = &history[step - j];
                let older = &history[step - j - 1];
                for i in 0..n {
                    rhs[i] += b * (newer[i] - older[i]);
                }
            }
            let prev = &history[step - 1];
            for iy in 0..p {
                for ix in 0..p {
                    let i = iy * p + ix;
                    let raw = decay * source_shape[i] + stepper.c0 * (prev[i] - rhs[i]);
                    rhs[i] = edge(ix) * edge(iy) * raw;
                }
            }
            stepper.factor.solve_in_place(&mut rhs);
            history.push(rhs.clone());
        }
        history
    }

    fn read_sensors(&self, history: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.times.len() * self.sensors.len());
        for &t in &self.times {
            let pos = t / self.dt;
            let k0 = (libm::floor(pos) as usize).min(self.n_steps);
            let k1 = (k0 + 1).min(self.n_steps);
            let frac = (pos - k0 as f64).clamp(0.0, 1.0);
            for &(sx, sy) in &self.sensors {
                let lo = bilinear_sample(&history[k0], self.p, sx, sy);
                let hi = bilinear_sample(&history[k1], self.p, sx, sy);
                out.push((1.0 - frac) * lo + frac * hi);
            }
        }
        out
    }
}

impl ForwardModel for FractionalSourceModel {
    fn n_z(&self) -> usize {
        match self.unknowns {
            SourceUnknowns::Location => 2,
            SourceUnknowns::LocationAndOrder => 3,
        }
    }

    fn n_d(&self) -> usize {
        self.times.len() * self.sensors.len()
    }

    fn cost_class(&self) -> CostClass {
        CostClass::Expensive
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, ModelError> {
        if params.len() != self.n_z() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_z(),
                got: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(ModelError::NonFiniteParameter(i));
        }
        let history = match self.unknowns {
            SourceUnknowns::Location => {
                let stepper = self.stepper.as_ref().expect("built at construction");
                self.march(params[0], params[1], stepper)
            }
            SourceUnknowns::LocationAndOrder => {
                let alpha = params[2];
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(ModelError::InvalidAlpha(alpha));
                }
                let stepper = self.build_stepper(alpha)?;
                self.march(params[0], params[1], &stepper)
            }
        };
        Ok(self.read_sensors(&history))
    }

    fn refined(&self, factor: u32) -> Arc<dyn ForwardModel> {
        let factor = factor.max(1) as usize;
        let refined = FractionalSourceModel::new(
            self.unknowns,
            self.alpha,
            (self.p - 1) * factor + 1,
            self.dt / factor as f64,
            self.sensors.clone(),
            self.times.clone(),
        )
        .expect("refinement of a valid model is valid")
        .with_amplitude(self.amplitude);
        Arc::new(refined)
    }
}

/// Convenience wrapper matching the rest of the model constructors.
pub fn fractional_solve(
    model: &FractionalSourceModel,
    params: &[f64],
) -> Result<Vec<f64>, ModelError> {
    model.evaluate(params)
}
