use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{LogDensity, ReferenceSolution, StructuralConstants, TargetModel};
use crate::error::{Error, Result};
use crate::linalg;

/// `N(z | μ_p, Σ_p)`.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() {
            return Err(Error::arg(format!(
                "covariance is {}x{} but mean has length {}",
                covariance.nrows(),
                covariance.ncols(),
                mean.len()
            )));
        }
        let chol = linalg::spd_cholesky(covariance, "target covariance")?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = linalg::symmetrize(&chol.inverse());
        let d = mean.len() as f64;
        Ok(Self {
            mean,
            chol,
            precision,
            log_norm: -0.5 * d * (2.0 * PI).ln() - 0.5 * log_det,
        })
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl LogDensity for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, z: &DVector<f64>) -> f64 {
        let r = z - &self.mean;
        let y = self.chol.l_dirty().solve_lower_triangular(&r).expect("positive diagonal");
        self.log_norm - 0.5 * linalg::vec_sq(&y)
    }

    fn grad_log_density(&self, z: &DVector<f64>) -> DVector<f64> {
        -self.chol.solve(&(z - &self.mean))
    }

    fn neg_hessian(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.precision.clone())
    }
}

/// Gaussian target `p(z) = N(μ_p, Σ_p)`: `M = λ_max(Σ_p⁻¹)`, `μ = λ_min(Σ_p⁻¹)`,
/// MAP `μ_p`, and the exact optimum `q_{w*} = p`.
pub fn gaussian_target(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<TargetModel> {
    let density = GaussianDensity::new(mean.clone(), &covariance)?;
    let (lo, hi) = linalg::sym_eig_range(density.precision());
    let constants = StructuralConstants {
        smoothness: Some(hi),
        strong_concavity: Some(lo.min(hi)),
        map_point: Some(mean.clone()),
        residual_smoothness: Some(0.0),
    };
    let reference = ReferenceSolution {
        mean,
        covariance: linalg::symmetrize(&covariance),
        exact: true,
    };
    TargetModel::new("gaussian", Arc::new(density), constants, Some(reference))
}
