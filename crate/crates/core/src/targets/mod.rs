//! Target densities `log p(z, x)` with their gradients, structural constants
//! (smoothness `M`, strong concavity `μ`, MAP point) and reference optima.

mod data;
mod gaussian;
mod hierarchical;
mod map;
mod regression;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::{FactorSpace, VariationalParams};

pub use data::{load_labels_csv, load_matrix_csv, synthetic_linear, synthetic_logistic, SyntheticData};
pub use gaussian::{gaussian_target, GaussianDensity};
pub use hierarchical::{hierarchical_logistic_target, GroupData, HierarchicalLogistic};
pub use map::{map_point, newton_maximize, NewtonOptions};
pub use regression::{
    linear_regression_target, logistic_regression_target, GaussianPrior, LinearRegression,
    LogisticRegression,
};

/// A differentiable log-density over `R^d`.
pub trait LogDensity: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// `log p(z, x)`.
    fn log_density(&self, z: &DVector<f64>) -> f64;

    /// `∇_z log p(z, x)`.
    fn grad_log_density(&self, z: &DVector<f64>) -> DVector<f64>;

    /// `-∇²_z log p(z, x)`, when available in closed form.
    fn neg_hessian(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Smoothness and concavity constants of `log p(·, x)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructuralConstants {
    /// Lipschitz constant of `∇ log p`.
    pub smoothness: Option<f64>,
    /// Strong-concavity constant; `Some(0.0)` means concave only.
    pub strong_concavity: Option<f64>,
    /// A stationary point `z̄` of `log p`.
    pub map_point: Option<DVector<f64>>,
    /// Smoothness of the residual `log p − log q_{w*}` (zero for Gaussian posteriors).
    pub residual_smoothness: Option<f64>,
}

impl StructuralConstants {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.smoothness {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::arg(format!("smoothness constant must be positive, got {m}")));
            }
        }
        if let Some(mu) = self.strong_concavity {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::arg(format!("strong concavity must be nonnegative, got {mu}")));
            }
            if let Some(m) = self.smoothness {
                // allow round-off when the two come from the same eigen-solve
                if mu > m * (1.0 + 1e-12) {
                    return Err(Error::arg(format!("strong concavity {mu} exceeds smoothness {m}")));
                }
            }
        }
        Ok(())
    }
}

/// A minimizer `w*` of the negative ELBO, stored as a distribution so it can
/// be expressed in either factor space.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// True when `w*` is known analytically (Gaussian posteriors).
    pub exact: bool,
}

impl ReferenceSolution {
    pub fn from_params(w: &VariationalParams, exact: bool) -> Self {
        Self {
            mean: w.mean().clone(),
            covariance: w.covariance(),
            exact,
        }
    }

    /// `w*` with its factor expressed in `space`.
    pub fn params(&self, space: FactorSpace) -> Result<VariationalParams> {
        VariationalParams::from_covariance(self.mean.clone(), &self.covariance, space)
    }
}

/// A target model: density plus whatever is known about it analytically.
#[derive(Debug, Clone)]
pub struct TargetModel {
    name: String,
    density: Arc<dyn LogDensity>,
    constants: StructuralConstants,
    reference: Option<ReferenceSolution>,
}

impl TargetModel {
    pub fn new(
        name: impl Into<String>,
        density: Arc<dyn LogDensity>,
        constants: StructuralConstants,
        reference: Option<ReferenceSolution>,
    ) -> Result<Self> {
        constants.validate()?;
        let d = density.dim();
        if let Some(z) = &constants.map_point {
            if z.len() != d {
                return Err(Error::arg("map point dimension does not match the model"));
            }
        }
        if let Some(r) = &reference {
            if r.mean.len() != d || r.covariance.nrows() != d || r.covariance.ncols() != d {
                return Err(Error::arg("reference dimension does not match the model"));
            }
        }
        Ok(Self {
            name: name.into(),
            density,
            constants,
            reference,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    pub fn density(&self) -> &Arc<dyn LogDensity> {
        &self.density
    }

    pub fn log_density(&self, z: &DVector<f64>) -> f64 {
        debug_assert_eq!(z.len(), self.dim());
        self.density.log_density(z)
    }

    pub fn grad_log_density(&self, z: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(z.len(), self.dim());
        self.density.grad_log_density(z)
    }

    pub fn neg_hessian(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.density.neg_hessian(z)
    }

    pub fn constants(&self) -> &StructuralConstants {
        &self.constants
    }

    pub fn reference(&self) -> Option<&ReferenceSolution> {
        self.reference.as_ref()
    }

    /// Replace the reference solution (e.g. with one from a long optimization run).
    pub fn with_reference(mut self, reference: ReferenceSolution) -> Result<Self> {
        if reference.mean.len() != self.dim() {
            return Err(Error::arg("reference dimension does not match the model"));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    /// True when the posterior is exactly Gaussian, so the residual smoothness `K` is zero.
    pub fn has_gaussian_posterior(&self) -> bool {
        self.constants.residual_smoothness == Some(0.0)
    }
}
