//! The negative ELBO `f = l + h` and Monte-Carlo estimates of it.
//!
//! Reported ELBO values include the full Gaussian entropy
//! `log det C + (d/2)(1 + log 2π)`, so for a normalized target the ELBO is
//! `−KL(q_w ‖ p)` and zero at the optimum. The optimizers work with the
//! entropy term `h = −log det C`, which differs only by that constant.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::Result;
use crate::estimators::{mc_scalar, McScalar};
use crate::family::VariationalParams;
use crate::rng::RngStream;
use crate::targets::TargetModel;

/// `(d/2)(1 + log 2π)`: the part of the Gaussian entropy that does not depend on `w`.
pub fn entropy_constant(d: usize) -> f64 {
    0.5 * d as f64 * (1.0 + (2.0 * PI).ln())
}

/// Differential entropy of `q_w`: `log det C + (d/2)(1 + log 2π)`.
pub fn gaussian_entropy(w: &VariationalParams) -> Result<f64> {
    Ok(w.factorize()?.log_det() + entropy_constant(w.dim()))
}

/// Monte-Carlo estimate of the free energy `l(w) = E[−log p(Cu + m)]`.
pub fn free_energy_mc(
    w: &VariationalParams,
    model: &TargetModel,
    n_samples: usize,
    stream: &RngStream,
) -> Result<McScalar> {
    mc_scalar(w.dim(), n_samples, stream, |u: &DVector<f64>| {
        Ok(-model.log_density(&(w.factor() * u + w.mean())))
    })
}

/// Monte-Carlo ELBO: `−l̂(w) + entropy(q_w)`, the standard error being that of `l̂`.
pub fn elbo_mc(w: &VariationalParams, model: &TargetModel, n_samples: usize, stream: &RngStream) -> Result<McScalar> {
    let entropy = gaussian_entropy(w)?;
    let l = free_energy_mc(w, model, n_samples, stream)?;
    Ok(McScalar {
        mean: entropy - l.mean,
        std_err: l.std_err,
        n_samples,
    })
}
