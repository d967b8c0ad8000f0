use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::build::Experiment;
use super::config::GridConfig;
use crate::error::{Error, Result};
use crate::estimators::{mc_expected_sq_norm, EstimatorKind};
use crate::family::{project_factor_space, project_w_m, FactorSpace, NonDegeneracyLevel, VariationalParams};
use crate::rng::{standard_normal, RngStream};
use crate::schedules::{QuadBound, Validity};
use crate::targets::TargetModel;

/// Absolute slack below which a measured value counts as numerically zero,
/// so an estimator whose draws cancel to rounding error still meets a zero bound.
pub const NUMERICAL_ZERO: f64 = 1e-20;

/// Standard errors allowed above the bound.
pub const SE_MULTIPLIER: f64 = 5.0;

/// Bound inflation for approximate references.
pub const APPROXIMATE_REFERENCE_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub index: usize,
    /// `‖w − w*‖²`.
    pub dist_sq: f64,
    /// Monte-Carlo `E‖g(w)‖²`.
    pub measured: f64,
    pub std_err: f64,
    /// `a‖w − w*‖² + b`.
    pub bound: f64,
    /// Allowed value minus measured value; negative means violation.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub estimator: EstimatorKind,
    pub a: f64,
    pub b: f64,
    pub validity: Validity,
    pub exact_reference: bool,
    pub envelope_scale: f64,
    pub samples_per_point: usize,
    pub points: Vec<BoundPoint>,
    pub pass: bool,
}

impl BoundReport {
    pub fn worst_margin(&self) -> f64 {
        self.points.iter().map(|p| p.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| !p.pass).count()
    }
}

/// Feasible evaluation points: `w*` first, then random mean offsets and
/// factor rescalings/perturbations of `w*`, moved into the bound's region.
pub fn bound_grid(reference: &VariationalParams, validity: Validity, grid: &GridConfig) -> Result<Vec<VariationalParams>> {
    let d = reference.dim();
    let space = reference.space();
    let level = validity.level().map(NonDegeneracyLevel::new).transpose()?;
    if level.is_some() && space != FactorSpace::Symmetric {
        return Err(Error::config("restricted bound regions are only available for symmetric factors"));
    }
    let scale_m = 1.0 + reference.mean().norm();
    let stream = RngStream::new(grid.seed);
    let mut points = vec![reference.clone()];
    for i in 1..grid.points {
        let mut rng = stream.substream(i as u64);
        let dir = standard_normal(&mut rng, d);
        let radius = if i % 7 == 0 { 0.0 } else { rng.random::<f64>() * 2.0 * scale_m };
        let m = reference.mean() + dir.normalize() * radius;
        // factor scaling log-uniform in [1/√10, √10]
        let s = ((rng.random::<f64>() - 0.5) * 10f64.ln()).exp();
        let eps = rng.random::<f64>() * 0.5;
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let c = if level.is_none() && i % 10 == 5 {
            DMatrix::zeros(d, d)
        } else {
            reference.factor() * s + project_factor_space(&g, space) * eps
        };
        let w = VariationalParams::new(m, project_factor_space(&c, space), space)?;
        points.push(match level {
            Some(l) => project_w_m(&w, l)?,
            None => w,
        });
    }
    Ok(points)
}

/// Compare Monte-Carlo `E‖g‖²` to `a‖w − w*‖² + b` over a grid.
///
/// A point passes when the measured value is at most the bound (times 1.1 for
/// an approximate reference) plus five standard errors.
pub fn check_bounds_for(
    model: &TargetModel,
    kind: EstimatorKind,
    reference: &VariationalParams,
    exact_reference: bool,
    bound: &QuadBound,
    grid: &GridConfig,
) -> Result<BoundReport> {
    let bound = bound.scaled(grid.envelope_scale);
    let points = bound_grid(reference, bound.validity, grid)?;
    let stream = RngStream::new(grid.seed).child(0xb0_0d);
    let inflate = if exact_reference { 1.0 } else { APPROXIMATE_REFERENCE_FACTOR };
    let mut out = Vec::with_capacity(points.len());
    for (i, w) in points.iter().enumerate() {
        let est = mc_expected_sq_norm(kind, w, model, grid.samples, &stream.child(i as u64))?;
        let dist_sq = w.dist_sq(reference);
        let b = bound.eval(dist_sq);
        let allowed = inflate * b + SE_MULTIPLIER * est.std_err + NUMERICAL_ZERO;
        out.push(BoundPoint {
            index: i,
            dist_sq,
            measured: est.mean,
            std_err: est.std_err,
            bound: b,
            margin: allowed - est.mean,
            pass: est.mean <= allowed,
        });
    }
    let pass = out.iter().all(|p| p.pass);
    Ok(BoundReport {
        estimator: kind,
        a: bound.a,
        b: bound.b,
        validity: bound.validity,
        exact_reference,
        envelope_scale: grid.envelope_scale,
        samples_per_point: grid.samples,
        points: out,
        pass,
    })
}

/// Noise-bound check for the experiment's estimator, using its reference and
/// the grid from the diagnostics section.
pub fn check_bounds(exp: &Experiment) -> Result<BoundReport> {
    let bound = exp.bound.as_ref().ok_or_else(|| {
        Error::config(format!(
            "no noise bound available: {}",
            exp.bound_note.clone().unwrap_or_default()
        ))
    })?;
    check_bounds_for(
        &exp.model,
        exp.spec.estimator,
        &exp.reference,
        exp.reference_exact,
        bound,
        &exp.config.diagnostics.bound_grid,
    )
}
