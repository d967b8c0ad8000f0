use nalgebra::{Cholesky, DMatrix, DVector};

use super::{LogDensity, TargetModel};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Stop once `‖∇ log p‖ ≤ tolerance`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

/// Damped Newton ascent on a concave log-density with Armijo backtracking.
pub fn newton_maximize<D: LogDensity + ?Sized>(
    density: &D,
    start: DVector<f64>,
    opts: &NewtonOptions,
) -> Result<DVector<f64>> {
    let mut z = start;
    let mut value = density.log_density(&z);
    let mut grad = density.grad_log_density(&z);
    for _ in 0..opts.max_iterations {
        if grad.norm() <= opts.tolerance {
            return Ok(z);
        }
        let h = density
            .neg_hessian(&z)
            .unwrap_or_else(|| finite_difference_neg_hessian(density, &z));
        let dir = newton_direction(&h, &grad);
        let slope = grad.dot(&dir);
        // Near the optimum the ascent of a full step falls below the
        // resolution of log p; judge such steps by the gradient instead.
        let full = &z + &dir;
        let full_value = density.log_density(&full);
        let full_grad = density.grad_log_density(&full);
        let unresolved = (full_value - value).abs() <= 1e-12 * (1.0 + value.abs());
        if full_value.is_finite() && unresolved && full_grad.norm() < grad.norm() {
            z = full;
            value = full_value;
            grad = full_grad;
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &z + &dir * t;
            let v = density.log_density(&cand);
            if v.is_finite() && v >= value + 1e-4 * t * slope {
                z = cand;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        grad = density.grad_log_density(&z);
        if !accepted {
            // no ascent possible at working precision
            break;
        }
    }
    if grad.norm() <= opts.tolerance.max(1e-8) {
        Ok(z)
    } else {
        Err(Error::Convergence {
            iterations: opts.max_iterations,
            grad_norm: grad.norm(),
        })
    }
}

/// Solve `H p = g`, adding a ridge until `H` factorizes.
fn newton_direction(h: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let n = h.nrows();
    let scale = h.diagonal().iter().map(|v| v.abs()).fold(1e-12, f64::max);
    let mut ridge = 0.0;
    for _ in 0..40 {
        let shifted = h + DMatrix::identity(n, n) * ridge;
        if let Some(ch) = Cholesky::new(shifted) {
            return ch.solve(grad);
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
    }
    grad.clone()
}

fn finite_difference_neg_hessian<D: LogDensity + ?Sized>(density: &D, z: &DVector<f64>) -> DMatrix<f64> {
    let n = z.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-5 * (1.0 + z[j].abs());
        let mut hi = z.clone();
        let mut lo = z.clone();
        hi[j] += step;
        lo[j] -= step;
        let col = (density.grad_log_density(&lo) - density.grad_log_density(&hi)) / (2.0 * step);
        h.set_column(j, &col);
    }
    linalg::symmetrize(&h)
}

/// A stationary point of `log p`: the stored one when known, else Newton from the origin.
pub fn map_point(model: &TargetModel) -> Result<DVector<f64>> {
    if let Some(z) = &model.constants().map_point {
        return Ok(z.clone());
    }
    let opts = NewtonOptions {
        tolerance: 1e-8,
        ..NewtonOptions::default()
    };
    newton_maximize(model.density().as_ref(), DVector::zeros(model.dim()), &opts)
}
