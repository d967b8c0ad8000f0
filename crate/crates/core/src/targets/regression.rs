use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::map::{newton_maximize, NewtonOptions};
use super::{LogDensity, ReferenceSolution, StructuralConstants, TargetModel};
use crate::error::{Error, Result};
use crate::linalg;

/// Zero-mean Gaussian prior `N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianPrior {
    pub fn new(covariance: &DMatrix<f64>) -> Result<Self> {
        let chol = linalg::spd_cholesky(covariance, "prior covariance")?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d = covariance.nrows() as f64;
        Ok(Self {
            precision: linalg::symmetrize(&chol.inverse()),
            log_norm: -0.5 * d * (2.0 * PI).ln() - 0.5 * log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_density(&self, z: &DVector<f64>) -> f64 {
        self.log_norm - 0.5 * z.dot(&(&self.precision * z))
    }

    pub fn grad(&self, z: &DVector<f64>) -> DVector<f64> {
        -(&self.precision * z)
    }
}

/// `log σ(t)`, stable for large |t|.
pub(crate) fn log_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

/// `σ(t) = 1 / (1 + e^{-t})`.
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Bayesian linear regression `z ~ N(0, Σ)`, `x_n ~ N(zᵀa_n, σ²)`.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    design: DMatrix<f64>,
    targets: DVector<f64>,
    sigma: f64,
    prior: GaussianPrior,
    /// `Σ⁻¹ + AAᵀ/σ²`, the constant negative Hessian.
    hessian: DMatrix<f64>,
}

impl LinearRegression {
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }
}

impl LogDensity for LinearRegression {
    fn dim(&self) -> usize {
        self.design.nrows()
    }

    fn log_density(&self, z: &DVector<f64>) -> f64 {
        let resid = &self.targets - self.design.tr_mul(z);
        let n = self.targets.len() as f64;
        let s2 = self.sigma * self.sigma;
        self.prior.log_density(z) - 0.5 * linalg::vec_sq(&resid) / s2 - 0.5 * n * (2.0 * PI * s2).ln()
    }

    fn grad_log_density(&self, z: &DVector<f64>) -> DVector<f64> {
        let resid = &self.targets - self.design.tr_mul(z);
        self.prior.grad(z) + &self.design * resid / (self.sigma * self.sigma)
    }

    fn neg_hessian(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.hessian.clone())
    }
}

/// Linear regression target. `A` is `d × N` with one data point per column.
///
/// `μ = λ_min(Σ⁻¹ + AAᵀ/σ²)`, `M = λ_max(Σ⁻¹ + AAᵀ/σ²)`. The posterior is
/// Gaussian, so the reference optimum is exact.
pub fn linear_regression_target(
    design: DMatrix<f64>,
    targets: DVector<f64>,
    sigma: f64,
    prior_covariance: DMatrix<f64>,
) -> Result<TargetModel> {
    if design.ncols() != targets.len() {
        return Err(Error::arg(format!(
            "design has {} columns but there are {} targets",
            design.ncols(),
            targets.len()
        )));
    }
    if prior_covariance.nrows() != design.nrows() {
        return Err(Error::arg(format!(
            "prior covariance is {}x{} but design has {} rows",
            prior_covariance.nrows(),
            prior_covariance.ncols(),
            design.nrows()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("noise scale must be positive, got {sigma}")));
    }
    let prior = GaussianPrior::new(&prior_covariance)?;
    let s2 = sigma * sigma;
    let hessian = linalg::symmetrize(&(prior.precision() + &design * design.transpose() / s2));
    let (mu, m) = linalg::sym_eig_range(&hessian);
    let chol = linalg::spd_cholesky(&hessian, "posterior precision")?;
    let map = chol.solve(&(&design * &targets / s2));
    let posterior_cov = linalg::symmetrize(&chol.inverse());
    let model = LinearRegression {
        design,
        targets,
        sigma,
        prior,
        hessian,
    };
    let constants = StructuralConstants {
        smoothness: Some(m),
        strong_concavity: Some(mu.min(m)),
        map_point: Some(map.clone()),
        residual_smoothness: Some(0.0),
    };
    let reference = ReferenceSolution {
        mean: map,
        covariance: posterior_cov,
        exact: true,
    };
    TargetModel::new("linear_regression", Arc::new(model), constants, Some(reference))
}

/// Bayesian logistic regression `z ~ N(0, Σ)`, `p(x_n | z) = σ(x_n zᵀa_n)` with `x_n ∈ {−1, +1}`.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    design: DMatrix<f64>,
    labels: DVector<f64>,
    prior: GaussianPrior,
}

impl LogDensity for LogisticRegression {
    fn dim(&self) -> usize {
        self.design.nrows()
    }

    fn log_density(&self, z: &DVector<f64>) -> f64 {
        let margins = self.design.tr_mul(z);
        let lik: f64 = margins
            .iter()
            .zip(self.labels.iter())
            .map(|(t, x)| log_sigmoid(x * t))
            .sum();
        self.prior.log_density(z) + lik
    }

    fn grad_log_density(&self, z: &DVector<f64>) -> DVector<f64> {
        let margins = self.design.tr_mul(z);
        let weights = DVector::from_iterator(
            margins.len(),
            margins.iter().zip(self.labels.iter()).map(|(t, x)| x * sigmoid(-x * t)),
        );
        self.prior.grad(z) + &self.design * weights
    }

    fn neg_hessian(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        let margins = self.design.tr_mul(z);
        let mut h = self.prior.precision().clone();
        for (n, t) in margins.iter().enumerate() {
            let s = sigmoid(*t);
            let a = self.design.column(n);
            h += a * a.transpose() * (s * (1.0 - s));
        }
        Some(linalg::symmetrize(&h))
    }
}

/// Logistic regression target: `μ = λ_min(Σ⁻¹)`, `M = λ_max(Σ⁻¹ + ¼AAᵀ)`,
/// MAP point by Newton's method.
pub fn logistic_regression_target(
    design: DMatrix<f64>,
    labels: DVector<f64>,
    prior_covariance: DMatrix<f64>,
) -> Result<TargetModel> {
    if design.ncols() != labels.len() {
        return Err(Error::arg(format!(
            "design has {} columns but there are {} labels",
            design.ncols(),
            labels.len()
        )));
    }
    if let Some((n, x)) = labels.iter().enumerate().find(|(_, &x)| x != 1.0 && x != -1.0) {
        return Err(Error::arg(format!("label {n} is {x}, expected -1 or +1")));
    }
    if prior_covariance.nrows() != design.nrows() {
        return Err(Error::arg("prior covariance does not match the design dimension"));
    }
    let prior = GaussianPrior::new(&prior_covariance)?;
    let (mu, _) = linalg::sym_eig_range(prior.precision());
    let envelope = linalg::symmetrize(&(prior.precision() + &design * design.transpose() * 0.25));
    let (_, m) = linalg::sym_eig_range(&envelope);
    let model = LogisticRegression {
        design,
        labels,
        prior,
    };
    let opts = NewtonOptions {
        tolerance: 1e-10,
        ..NewtonOptions::default()
    };
    let map = newton_maximize(&model, DVector::zeros(model.dim()), &opts)?;
    let constants = StructuralConstants {
        smoothness: Some(m),
        strong_concavity: Some(mu.min(m)),
        map_point: Some(map),
        residual_smoothness: None,
    };
    TargetModel::new("logistic_regression", Arc::new(model), constants, None)
}
