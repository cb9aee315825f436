//! Cheap analytic forward models for tests, calibration runs, and the
//! closed-form oracles the samplers are validated against.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{CostClass, ForwardModel, ModelError};
use crate::linalg::{solve_least_squares, Matrix};

fn check_input(params: &[f64], n_z: usize) -> Result<(), ModelError> {
    if params.len() != n_z {
        return Err(ModelError::DimensionMismatch {
            expected: n_z,
            got: params.len(),
        });
    }
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(ModelError::NonFiniteParameter(i));
    }
    Ok(())
}

/// `G(z) = c` regardless of `z`.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    values: Vec<f64>,
    n_z: usize,
}

impl ConstantModel {
    pub fn new(values: Vec<f64>, n_z: usize) -> Self {
        ConstantModel { values, n_z }
    }
}

impl ForwardModel for ConstantModel {
    fn n_z(&self) -> usize {
        self.n_z
    }

    fn n_d(&self) -> usize {
        self.values.len()
    }

    fn cost_class(&self) -> CostClass {
        CostClass::Cheap
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_input(params, self.n_z)?;
        Ok(self.values.clone())
    }

    fn refined(&self, _factor: u32) -> Arc<dyn ForwardModel> {
        Arc::new(self.clone())
    }
}

/// `G(z) = A z + c`, the conjugate case: with a standard Gaussian prior and
/// Gaussian noise the posterior is Gaussian in closed form, which makes this
/// the reference model for sampler validation.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    /// Row-major `n_d x n_z`.
    a: Vec<f64>,
    c: Vec<f64>,
    n_z: usize,
}

impl LinearGaussianModel {
    pub fn new(a: Vec<f64>, c: Vec<f64>, n_z: usize) -> Self {
        assert_eq!(a.len(), c.len() * n_z, "A must be n_d x n_z");
        LinearGaussianModel { a, c, n_z }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        LinearGaussianModel::new(a, vec![0.0; n], n)
    }

    /// Posterior mean and covariance for a standard Gaussian prior on `z`
    /// and i.i.d. `N(0, sigma^2)` noise: precision `I + A^T A / sigma^2`,
    /// mean `Cov * A^T (d - c) / sigma^2`.
    pub fn posterior_moments(&self, sigma: f64, data: &[f64]) -> (Vec<f64>, Matrix) {
        let n_d = self.c.len();
        let n_z = self.n_z;
        assert_eq!(data.len(), n_d);
        let s2 = sigma * sigma;
        let mut precision = Matrix::zeros(n_z, n_z);
        for i in 0..n_z {
            for j in 0..n_z {
                let mut v = if i == j { 1.0 } else { 0.0 };
                for r in 0..n_d {
                    v += self.a[r * n_z + i] * self.a[r * n_z + j] / s2;
                }
                precision.set(i, j, v);
            }
        }
        let mut rhs = Matrix::zeros(n_z, n_z + 1);
        for i in 0..n_z {
            let mut v = 0.0;
            for r in 0..n_d {
                v += self.a[r * n_z + i] * (data[r] - self.c[r]) / s2;
            }
            rhs.set(i, 0, v);
            rhs.set(i, i + 1, 1.0);
        }
        let ls = solve_least_squares(precision, rhs, 1e-13)
            .expect("posterior precision matrix is SPD");
        let mean: Vec<f64> = (0..n_z).map(|i| ls.solution.get(i, 0)).collect();
        let mut cov = Matrix::zeros(n_z, n_z);
        for i in 0..n_z {
            for j in 0..n_z {
                cov.set(i, j, ls.solution.get(i, j + 1));
            }
        }
        (mean, cov)
    }
}

impl ForwardModel for LinearGaussianModel {
    fn n_z(&self) -> usize {
        self.n_z
    }

    fn n_d(&self) -> usize {
        self.c.len()
    }

    fn cost_class(&self) -> CostClass {
        CostClass::Cheap
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_input(params, self.n_z)?;
        let out = self
            .c
            .iter()
            .enumerate()
            .map(|(r, &cr)| {
                cr + params
                    .iter()
                    .enumerate()
                    .map(|(j, &z)| self.a[r * self.n_z + j] * z)
                    .sum::<f64>()
            })
            .collect();
        Ok(out)
    }

    fn refined(&self, _factor: u32) -> Arc<dyn ForwardModel> {
        Arc::new(self.clone())
    }
}

/// Multivariate polynomial in plain monomial form, `G_k(z) = sum_t
/// coeff[t][k] * prod_d z_d^{exp[t][d]}`. Evaluation does not touch the
/// orthonormal basis code, so recovery tests exercise two independent
/// evaluation paths.
#[derive(Debug, Clone)]
pub struct PolynomialModel {
    n_z: usize,
    n_d: usize,
    exponents: Vec<Vec<u32>>,
    /// One coefficient vector of length `n_d` per term.
    coefficients: Vec<Vec<f64>>,
}

impl PolynomialModel {
    pub fn new(
        n_z: usize,
        exponents: Vec<Vec<u32>>,
        coefficients: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        if exponents.len() != coefficients.len() || exponents.is_empty() {
            return Err(ModelError::BadConfiguration {
                what: "polynomial terms",
                why: alloc::format!(
                    "{} exponent rows vs {} coefficient rows",
                    exponents.len(),
                    coefficients.len()
                ),
            });
        }
        let n_d = coefficients[0].len();
        if exponents.iter().any(|e| e.len() != n_z)
            || coefficients.iter().any(|c| c.len() != n_d)
        {
            return Err(ModelError::BadConfiguration {
                what: "polynomial terms",
                why: alloc::format!("rows must be {n_z} exponents and {n_d} coefficients wide"),
            });
        }
        Ok(PolynomialModel {
            n_z,
            n_d,
            exponents,
            coefficients,
        })
    }

    pub fn total_degree(&self) -> u32 {
        self.exponents
            .iter()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }
}

impl ForwardModel for PolynomialModel {
    fn n_z(&self) -> usize {
        self.n_z
    }

    fn n_d(&self) -> usize {
        self.n_d
    }

    fn cost_class(&self) -> CostClass {
        CostClass::Cheap
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_input(params, self.n_z)?;
        let mut out = vec![0.0; self.n_d];
        for (exps, coeffs) in self.exponents.iter().zip(&self.coefficients) {
            let mut mono = 1.0;
            for (&z, &e) in params.iter().zip(exps) {
                for _ in 0..e {
                    mono *= z;
                }
            }
            for (o, &c) in out.iter_mut().zip(coeffs) {
                *o += c * mono;
            }
        }
        Ok(out)
    }

    fn refined(&self, _factor: u32) -> Arc<dyn ForwardModel> {
        Arc::new(self.clone())
    }
}

/// `G(z) = exp(sum_i z_i)`: smooth, analytic, and outside every polynomial
/// span, so surrogate error is genuinely nonzero at any order.
#[derive(Debug, Clone)]
pub struct ExpSumModel {
    n_z: usize,
}

impl ExpSumModel {
    pub fn new(n_z: usize) -> Self {
        ExpSumModel { n_z }
    }
}

impl ForwardModel for ExpSumModel {
    fn n_z(&self) -> usize {
        self.n_z
    }

    fn n_d(&self) -> usize {
        1
    }

    fn cost_class(&self) -> CostClass {
        CostClass::Cheap
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_input(params, self.n_z)?;
        Ok(vec![libm::exp(params.iter().sum())])
    }

    fn refined(&self, _factor: u32) -> Arc<dyn ForwardModel> {
        Arc::new(self.clone())
    }
}

/// Catalog of the analytic fixtures: a linear-Gaussian model with known
/// posterior, polynomials inside and outside a degree-3 span, and the
/// exponential model.
pub fn analytic_toy_models() -> Vec<(&'static str, Arc<dyn ForwardModel>)> {
    let degree3 = PolynomialModel::new(
        2,
        vec![vec![0, 0], vec![1, 0], vec![1, 1], vec![3, 0]],
        vec![vec![3.0], vec![2.0], vec![-1.0], vec![0.5]],
    )
    .expect("valid fixture");
    let degree5 = PolynomialModel::new(
        2,
        vec![vec![0, 0], vec![2, 3]],
        vec![vec![1.0], vec![1.0]],
    )
    .expect("valid fixture");
    vec![
        ("linear-identity", Arc::new(LinearGaussianModel::identity(2))),
        ("poly-degree3", Arc::new(degree3)),
        ("poly-degree5", Arc::new(degree5)),
        ("exp-sum", Arc::new(ExpSumModel::new(2))),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_model_is_identity() {
        let m = LinearGaussianModel::identity(3);
        let z = [0.1, -0.2, 0.3];
        assert_eq!(m.evaluate(&z).unwrap(), z.to_vec());
    }

    #[test]
    fn polynomial_evaluates_monomials() {
        // G(z) = 3 + 2 z1 - z1 z2 over two outputs with different weights.
        let m = PolynomialModel::new(
            2,
            vec![vec![0, 0], vec![1, 0], vec![1, 1]],
            vec![vec![3.0, 1.0], vec![2.0, 0.0], vec![-1.0, 2.0]],
        )
        .unwrap();
        let z = [0.5, -2.0];
        let out = m.evaluate(&z).unwrap();
        assert_abs_diff_eq!(out[0], 3.0 + 2.0 * 0.5 - 0.5 * -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 1.0 + 2.0 * 0.5 * -2.0, epsilon = 1e-15);
        assert_eq!(m.total_degree(), 2);
    }

    #[test]
    fn posterior_moments_match_hand_computation() {
        // 1-D: prior N(0,1), G(z) = 2z, sigma = 1, d = 3. Posterior
        // precision 1 + 4 = 5, mean = 2*3/5 = 1.2, variance 0.2.
        let m = LinearGaussianModel::new(vec![2.0], vec![0.0], 1);
        let (mean, cov) = m.posterior_moments(1.0, &[3.0]);
        assert_abs_diff_eq!(mean[0], 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(cov.get(0, 0), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = ExpSumModel::new(2);
        assert!(matches!(
            m.evaluate(&[1.0]),
            Err(ModelError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            m.evaluate(&[1.0, f64::NAN]),
            Err(ModelError::NonFiniteParameter(1))
        ));
    }

    #[test]
    fn catalog_models_have_consistent_dims() {
        for (name, model) in analytic_toy_models() {
            let z = vec![0.1; model.n_z()];
            let out = model.evaluate(&z).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(out.len(), model.n_d(), "{name}");
        }
    }
}
