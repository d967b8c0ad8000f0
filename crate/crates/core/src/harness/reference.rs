use nalgebra::DVector;

use super::config::ReferenceConfig;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::family::{project_w_m, FactorSpace, NonDegeneracyLevel, VariationalParams};
use crate::linalg;
use crate::optimizers::{run_optimizer, Algorithm, AveragingSpec, Monitor, OptimizerSpec};
use crate::rng::RngStream;
use crate::schedules::{AveragingSetting, StepSchedule};
use crate::targets::{ReferenceSolution, TargetModel};

/// Laplace approximation at `map`, moved into `W_M`; falls back to `(map, I)`
/// when no Hessian is available.
fn laplace_start(model: &TargetModel, map: &DVector<f64>, level: NonDegeneracyLevel) -> Result<VariationalParams> {
    let w = match model.neg_hessian(map).and_then(|h| linalg::spd_inverse(&h, "negative Hessian").ok()) {
        Some(cov) => VariationalParams::from_covariance(map.clone(), &linalg::symmetrize(&cov), FactorSpace::Symmetric)?,
        None => VariationalParams::standard(map.clone(), FactorSpace::Symmetric),
    };
    project_w_m(&w, level)
}

/// Stand-in for `w*` when it has no closed form: Proj-SGD with the STL
/// estimator over `W_M` from the Laplace approximation, a burn-in over the
/// first half of the budget and a uniform average over the second half.
pub fn approximate_reference(
    model: &TargetModel,
    map: &DVector<f64>,
    smoothness: f64,
    config: &ReferenceConfig,
    budget: u64,
) -> Result<ReferenceSolution> {
    if budget < 2 {
        return Err(Error::config("reference budget must be at least 2 iterations"));
    }
    let level = NonDegeneracyLevel::new(smoothness)?;
    let gamma = config.stepsize.unwrap_or(0.1 / smoothness);
    let stream = RngStream::new(config.seed);
    let burn_in = budget / 2;
    let tail = budget - burn_in;
    let base = |iterations: u64, seed: u64| OptimizerSpec {
        record_every: iterations,
        minibatch: config.minibatch.max(1),
        ..OptimizerSpec::new(Algorithm::ProjSgd, EstimatorKind::Stl, StepSchedule::Constant { gamma }, iterations, seed)
            .with_level(level)
    };
    let start = laplace_start(model, map, level)?;
    let monitor = Monitor::default();
    let warm = run_optimizer(&start, model, &base(burn_in, stream.child(0).seed()), &monitor)?;
    let spec = base(tail, stream.child(1).seed()).with_averaging(AveragingSpec {
        setting: AveragingSetting::Proj,
        a: 0.0,
        gamma,
    });
    let run = run_optimizer(&warm.last, model, &spec, &monitor)?;
    let w = run.averaged.expect("averaging enabled");
    Ok(ReferenceSolution::from_params(&w, false))
}

/// A stationary point `m̂` of the residual `r = log p − log q_{w*}`, found by
/// damped Newton iterations from the mean of `w*`.
pub fn residual_stationary_point(model: &TargetModel, w_star: &VariationalParams) -> Result<DVector<f64>> {
    let precision = linalg::spd_inverse(&w_star.covariance(), "reference covariance")?;
    let grad = |z: &DVector<f64>| model.grad_log_density(z) + &precision * (z - w_star.mean());
    let mut z = w_star.mean().clone();
    let mut g = grad(&z);
    for _ in 0..100 {
        let norm = g.norm();
        if norm <= 1e-10 * (1.0 + z.norm()) {
            return Ok(z);
        }
        let h = model
            .neg_hessian(&z)
            .ok_or_else(|| Error::domain("residual stationary point needs the model's Hessian"))?;
        let jac = &precision - h;
        let step = jac
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::domain("singular residual Hessian"))?;
        let mut t = 1.0;
        loop {
            let cand = &z - &step * t;
            let gc = grad(&cand);
            if gc.norm() < norm || t < 1e-9 {
                z = cand;
                g = gc;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::Convergence {
        iterations: 100,
        grad_norm: g.norm(),
    })
}
