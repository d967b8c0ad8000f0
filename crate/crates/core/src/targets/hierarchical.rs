use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::map::{newton_maximize, NewtonOptions};
use super::regression::{log_sigmoid, sigmoid, GaussianPrior};
use super::{LogDensity, StructuralConstants, TargetModel};
use crate::error::{Error, Result};
use crate::linalg;

/// Observations of one group: a `k × n_i` design (one point per column) and ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub design: DMatrix<f64>,
    pub labels: DVector<f64>,
}

/// Hierarchical logistic regression over the stacked latent `(θ, z_1, …, z_I)`:
/// `θ ~ N(0, Σ)`, `z_i ~ N(θ, Δ)`, `p(x_ij | z_i) = σ(x_ij z_iᵀ a_ij)`.
#[derive(Debug, Clone)]
pub struct HierarchicalLogistic {
    k: usize,
    groups: Vec<GroupData>,
    prior: GaussianPrior,
    /// `N(·|0, Δ)`, evaluated at `z_i − θ`.
    spread: GaussianPrior,
}

impl HierarchicalLogistic {
    pub fn theta_dim(&self) -> usize {
        self.k
    }

    pub fn groups(&self) -> &[GroupData] {
        &self.groups
    }

    fn block<'a>(&self, z: &'a DVector<f64>, b: usize) -> nalgebra::DVectorView<'a, f64> {
        z.rows(b * self.k, self.k)
    }

    /// Negative Hessian with each logistic curvature `s(1 − s)` replaced by `curvature(margin)`.
    fn assemble(&self, z: &DVector<f64>, curvature: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let k = self.k;
        let n = self.dim();
        let groups = self.groups.len() as f64;
        let sp = self.prior.precision();
        let dp = self.spread.precision();
        let mut h = DMatrix::zeros(n, n);
        h.view_mut((0, 0), (k, k)).copy_from(&(sp + dp * groups));
        for (i, g) in self.groups.iter().enumerate() {
            let off = (i + 1) * k;
            h.view_mut((0, off), (k, k)).copy_from(&(-dp));
            h.view_mut((off, 0), (k, k)).copy_from(&(-dp));
            let mut zz = dp.clone();
            let zi = self.block(z, i + 1).into_owned();
            for (j, x) in g.labels.iter().enumerate() {
                let a = g.design.column(j);
                let c = curvature(x * a.dot(&zi));
                zz += a * a.transpose() * c;
            }
            h.view_mut((off, off), (k, k)).copy_from(&zz);
        }
        linalg::symmetrize(&h)
    }
}

impl LogDensity for HierarchicalLogistic {
    fn dim(&self) -> usize {
        self.k * (self.groups.len() + 1)
    }

    fn log_density(&self, z: &DVector<f64>) -> f64 {
        let theta = self.block(z, 0).into_owned();
        let mut total = self.prior.log_density(&theta);
        for (i, g) in self.groups.iter().enumerate() {
            let zi = self.block(z, i + 1).into_owned();
            total += self.spread.log_density(&(&zi - &theta));
            let margins = g.design.tr_mul(&zi);
            total += margins
                .iter()
                .zip(g.labels.iter())
                .map(|(t, x)| log_sigmoid(x * t))
                .sum::<f64>();
        }
        total
    }

    fn grad_log_density(&self, z: &DVector<f64>) -> DVector<f64> {
        let k = self.k;
        let theta = self.block(z, 0).into_owned();
        let mut grad = DVector::zeros(self.dim());
        let mut g_theta = self.prior.grad(&theta);
        for (i, g) in self.groups.iter().enumerate() {
            let zi = self.block(z, i + 1).into_owned();
            // ∇_{z_i} log N(z_i | θ, Δ) = −Δ⁻¹(z_i − θ)
            let pull = self.spread.grad(&(&zi - &theta));
            g_theta -= &pull;
            let margins = g.design.tr_mul(&zi);
            let weights = DVector::from_iterator(
                margins.len(),
                margins.iter().zip(g.labels.iter()).map(|(t, x)| x * sigmoid(-x * t)),
            );
            let g_zi = pull + &g.design * weights;
            grad.rows_mut((i + 1) * k, k).copy_from(&g_zi);
        }
        grad.rows_mut(0, k).copy_from(&g_theta);
        grad
    }

    fn neg_hessian(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.assemble(z, |t| {
            let s = sigmoid(t);
            s * (1.0 - s)
        }))
    }
}

/// Hierarchical logistic regression target.
///
/// The stored smoothness constant is `λ_max` of the negative Hessian with every
/// logistic curvature replaced by its upper bound ¼; the true Hessian is
/// dominated by this envelope everywhere, so the constant is valid but not
/// necessarily sharp. The model is recorded as merely concave (`μ = 0`).
pub fn hierarchical_logistic_target(
    theta_dim: usize,
    groups: Vec<GroupData>,
    prior_covariance: DMatrix<f64>,
    group_covariance: DMatrix<f64>,
) -> Result<TargetModel> {
    if theta_dim == 0 {
        return Err(Error::arg("theta dimension must be positive"));
    }
    if prior_covariance.nrows() != theta_dim || group_covariance.nrows() != theta_dim {
        return Err(Error::arg(format!(
            "prior covariances must be {theta_dim}x{theta_dim}"
        )));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.design.nrows() != theta_dim {
            return Err(Error::arg(format!(
                "group {i} design has {} rows, expected {theta_dim}",
                g.design.nrows()
            )));
        }
        if g.design.ncols() != g.labels.len() {
            return Err(Error::arg(format!(
                "group {i} has {} design columns but {} labels",
                g.design.ncols(),
                g.labels.len()
            )));
        }
        if let Some((j, x)) = g.labels.iter().enumerate().find(|(_, &x)| x != 1.0 && x != -1.0) {
            return Err(Error::arg(format!("group {i} label {j} is {x}, expected -1 or +1")));
        }
    }
    let model = HierarchicalLogistic {
        k: theta_dim,
        groups,
        prior: GaussianPrior::new(&prior_covariance)?,
        spread: GaussianPrior::new(&group_covariance)?,
    };
    let origin = DVector::zeros(model.dim());
    let envelope = model.assemble(&origin, |_| 0.25);
    let (_, m) = linalg::sym_eig_range(&envelope);
    let map = newton_maximize(&model, origin, &NewtonOptions::default())?;
    let constants = StructuralConstants {
        smoothness: Some(m),
        strong_concavity: Some(0.0),
        map_point: Some(map),
        residual_smoothness: None,
    };
    TargetModel::new("hierarchical_logistic", Arc::new(model), constants, None)
}
