//! Prox-SGD over triangular factors and Proj-SGD over symmetric factors.
//!
//! * Prox-SGD (energy estimator): `w ← prox_{γh}(w − γ g_energy)`, where the
//!   prox only touches the diagonal of `C` and keeps it strictly positive.
//! * Proj-SGD (entropy or STL estimator): `w ← proj_{W_M}(w − γ g)`, where the
//!   factor is symmetrized and then its eigenvalues are clamped at `1/√M`.
//!
//! Iteration `t` draws its base samples from substream `t` of the run seed, so
//! a trajectory is a pure function of `(w⁰, model, spec)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, GradientEstimate, PreparedEstimator};
use crate::family::{
    kl_gaussian, prox_entropy, project_w_m, FactorSpace, NonDegeneracyLevel, VariationalParams,
};
use crate::linalg;
use crate::objective::elbo_mc;
use crate::record::RunRecord;
use crate::rng::{standard_normal, RngStream};
use crate::schedules::{AveragingSetting, StepSchedule};
use crate::targets::TargetModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ProxSgd,
    ProjSgd,
}

impl Algorithm {
    pub fn factor_space(&self) -> FactorSpace {
        match self {
            Algorithm::ProxSgd => FactorSpace::LowerTriangular,
            Algorithm::ProjSgd => FactorSpace::Symmetric,
        }
    }
}

/// Weighted averaging of iterates `w¹, …, wᵀ` with weights `∝ θ^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingSpec {
    pub setting: AveragingSetting,
    pub a: f64,
    pub gamma: f64,
}

impl AveragingSpec {
    pub fn theta(&self) -> f64 {
        self.setting.theta(self.a, self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub algorithm: Algorithm,
    pub estimator: EstimatorKind,
    pub schedule: StepSchedule,
    /// Non-degeneracy level `M` of the feasible set; required for Proj-SGD.
    pub level: Option<NonDegeneracyLevel>,
    pub iterations: u64,
    pub seed: u64,
    pub minibatch: usize,
    pub averaging: Option<AveragingSpec>,
    pub record_every: u64,
    pub store_iterates: bool,
}

impl OptimizerSpec {
    /// A spec with single-sample estimates, no averaging and every iteration recorded.
    pub fn new(algorithm: Algorithm, estimator: EstimatorKind, schedule: StepSchedule, iterations: u64, seed: u64) -> Self {
        Self {
            algorithm,
            estimator,
            schedule,
            level: None,
            iterations,
            seed,
            minibatch: 1,
            averaging: None,
            record_every: 1,
            store_iterates: false,
        }
    }

    pub fn with_level(mut self, level: NonDegeneracyLevel) -> Self {
        self.level = Some(level);
        self
    }

    pub fn with_averaging(mut self, averaging: AveragingSpec) -> Self {
        self.averaging = Some(averaging);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        match self.algorithm {
            Algorithm::ProxSgd => {
                if self.estimator != EstimatorKind::Energy {
                    return Err(Error::arg("Prox-SGD is paired with the energy estimator"));
                }
            }
            Algorithm::ProjSgd => {
                if self.estimator == EstimatorKind::Energy {
                    return Err(Error::arg("Proj-SGD is paired with the entropy or STL estimator"));
                }
                if self.level.is_none() {
                    return Err(Error::arg("Proj-SGD needs a non-degeneracy level"));
                }
            }
        }
        if self.iterations == 0 {
            return Err(Error::arg("iteration count must be positive"));
        }
        if self.minibatch == 0 {
            return Err(Error::arg("minibatch size must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::arg("record_every must be positive"));
        }
        if let Some(avg) = &self.averaging {
            if !(avg.a >= 0.0 && avg.gamma > 0.0 && avg.a.is_finite() && avg.gamma.is_finite()) {
                return Err(Error::arg("averaging needs a >= 0 and gamma > 0"));
            }
        }
        Ok(())
    }

    fn records_at(&self, t: u64) -> bool {
        t % self.record_every == 0 || t == self.iterations
    }
}

/// What to measure at recorded iterations besides the stepsize and gradient norm.
#[derive(Debug, Clone, Default)]
pub struct Monitor {
    /// Reference `w*` for `‖wᵗ − w*‖²`; must live in the run's factor space.
    pub reference: Option<VariationalParams>,
    /// Also report `KL(q_{wᵗ} ‖ q_{w*})` (meaningful when `w*` is exact).
    pub kl_to_reference: bool,
    /// Monte-Carlo samples for the ELBO column (0 disables it).
    pub elbo_samples: usize,
    pub elbo_seed: u64,
}

impl Monitor {
    /// Distance (and, for exact references, KL) to the model's stored reference.
    pub fn from_model(model: &TargetModel, space: FactorSpace) -> Result<Self> {
        let (reference, kl) = match model.reference() {
            Some(r) => (Some(r.params(space)?), r.exact),
            None => (None, false),
        };
        Ok(Self {
            reference,
            kl_to_reference: kl,
            elbo_samples: 0,
            elbo_seed: 0,
        })
    }

    fn record(&self, model: &TargetModel, w: &VariationalParams, t: u64, gamma: f64, g: &GradientEstimate, start: &Instant) -> Result<RunRecord> {
        let dist_sq_to_ref = self.reference.as_ref().map(|r| w.dist_sq(r));
        let kl_to_ref = match (&self.reference, self.kl_to_reference) {
            (Some(r), true) => Some(kl_gaussian(w, r)?),
            _ => None,
        };
        let (elbo_mc, elbo_se) = if self.elbo_samples >= 2 {
            let e = elbo_mc(w, model, self.elbo_samples, &RngStream::new(self.elbo_seed).child(t))?;
            (Some(e.mean), Some(e.std_err))
        } else {
            (None, None)
        };
        Ok(RunRecord {
            t,
            gamma,
            dist_sq_to_ref,
            kl_to_ref,
            elbo_mc,
            elbo_se,
            grad_sq_norm: g.norm_sq(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Output of one optimization run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `w⁰, …, wᵀ` when iterate storage is enabled.
    pub iterates: Option<Vec<VariationalParams>>,
    /// One row per recorded iteration, including `t = 0` and `t = T`.
    pub metrics: Vec<RunRecord>,
    /// Weighted average of `w¹, …, wᵀ` when averaging is enabled.
    pub averaged: Option<VariationalParams>,
    /// The starting point actually used (after projection for Proj-SGD).
    pub initial: VariationalParams,
    /// `wᵀ`.
    pub last: VariationalParams,
}

/// Running weighted mean of iterates with weights `1, θ, θ², …`.
#[derive(Debug, Clone)]
struct RunningAverage {
    theta: f64,
    next_weight: f64,
    total: f64,
    m: DVector<f64>,
    c: DMatrix<f64>,
}

impl RunningAverage {
    fn new(theta: f64, d: usize) -> Self {
        Self {
            theta,
            next_weight: 1.0,
            total: 0.0,
            m: DVector::zeros(d),
            c: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, w: &VariationalParams) {
        let weight = self.next_weight;
        self.next_weight *= self.theta;
        if weight == 0.0 {
            return;
        }
        self.total += weight;
        let r = weight / self.total;
        self.m += (w.mean() - &self.m) * r;
        self.c += (w.factor() - &self.c) * r;
    }

    fn finish(self, space: FactorSpace) -> Result<VariationalParams> {
        // averaging is linear, so the factor stays in the subspace up to
        // rounding; project to make membership exact
        VariationalParams::new_projected(self.m, self.c, space)
    }
}

fn check_initial(w0: &VariationalParams, model: &TargetModel, spec: &OptimizerSpec) -> Result<()> {
    spec.validate()?;
    if w0.dim() != model.dim() {
        return Err(Error::arg(format!(
            "initial point has dimension {}, model has {}",
            w0.dim(),
            model.dim()
        )));
    }
    if w0.space() != spec.algorithm.factor_space() {
        return Err(Error::arg(format!(
            "{:?} runs on {:?} factors, got {:?}",
            spec.algorithm,
            spec.algorithm.factor_space(),
            w0.space()
        )));
    }
    if !w0.all_finite() {
        return Err(Error::arg("initial point is not finite"));
    }
    Ok(())
}

fn draw(est: &PreparedEstimator<'_>, model: &TargetModel, stream: &RngStream, t: u64, batch: usize, d: usize) -> Result<GradientEstimate> {
    let mut rng = stream.substream(t);
    if batch == 1 {
        return est.draw(model, &standard_normal(&mut rng, d));
    }
    let us: Vec<DVector<f64>> = (0..batch).map(|_| standard_normal(&mut rng, d)).collect();
    est.draw_minibatch(model, &us)
}

fn run(w0: VariationalParams, model: &TargetModel, spec: &OptimizerSpec, monitor: &Monitor) -> Result<Trajectory> {
    let start = Instant::now();
    let d = w0.dim();
    let space = w0.space();
    let stream = RngStream::new(spec.seed);
    let mut w = w0;
    let initial = w.clone();
    let mut iterates = spec.store_iterates.then(|| vec![w.clone()]);
    let mut average = spec.averaging.map(|a| RunningAverage::new(a.theta(), d));
    let mut metrics = Vec::new();

    for t in 0..=spec.iterations {
        let gamma = spec.schedule.stepsize(t)?;
        let g = {
            let est = PreparedEstimator::new(spec.estimator, &w)?;
            draw(&est, model, &stream, t, spec.minibatch, d)?
        };
        if spec.records_at(t) {
            metrics.push(monitor.record(model, &w, t, gamma, &g, &start)?);
        }
        if t == spec.iterations {
            break;
        }
        let moved = w.step(gamma, &g);
        w = match spec.algorithm {
            Algorithm::ProxSgd => prox_entropy(&moved, gamma)?,
            Algorithm::ProjSgd => {
                let (m, c, space) = moved.into_parts();
                let sym = VariationalParams::new(m, linalg::symmetrize(&c), space)?;
                project_w_m(&sym, spec.level.expect("validated"))?
            }
        };
        if !w.all_finite() {
            return Err(Error::Diverged { iteration: t + 1 });
        }
        debug_assert!(match spec.algorithm {
            Algorithm::ProxSgd => w.factor().diagonal().iter().all(|&v| v > 0.0),
            Algorithm::ProjSgd => w.in_w_m(spec.level.expect("validated"), 1e-12),
        });
        if let Some(avg) = average.as_mut() {
            avg.push(&w);
        }
        if let Some(store) = iterates.as_mut() {
            store.push(w.clone());
        }
    }

    Ok(Trajectory {
        iterates,
        metrics,
        averaged: average.map(|a| a.finish(space)).transpose()?,
        initial,
        last: w,
    })
}

/// Prox-SGD with the energy estimator over lower-triangular factors.
pub fn prox_sgd_run(w0: &VariationalParams, model: &TargetModel, spec: &OptimizerSpec) -> Result<Trajectory> {
    let monitor = Monitor::from_model(model, FactorSpace::LowerTriangular)?;
    prox_sgd_run_monitored(w0, model, spec, &monitor)
}

pub fn prox_sgd_run_monitored(w0: &VariationalParams, model: &TargetModel, spec: &OptimizerSpec, monitor: &Monitor) -> Result<Trajectory> {
    if spec.algorithm != Algorithm::ProxSgd {
        return Err(Error::arg("spec is not for Prox-SGD"));
    }
    check_initial(w0, model, spec)?;
    if w0.factor().diagonal().iter().any(|&v| v <= 0.0) {
        return Err(Error::arg("Prox-SGD needs a factor with positive diagonal"));
    }
    run(w0.clone(), model, spec, monitor)
}

/// Proj-SGD with the entropy or STL estimator over symmetric factors in `W_M`.
/// A starting point outside `W_M` is projected onto it first.
pub fn proj_sgd_run(w0: &VariationalParams, model: &TargetModel, spec: &OptimizerSpec) -> Result<Trajectory> {
    let monitor = Monitor::from_model(model, FactorSpace::Symmetric)?;
    proj_sgd_run_monitored(w0, model, spec, &monitor)
}

pub fn proj_sgd_run_monitored(w0: &VariationalParams, model: &TargetModel, spec: &OptimizerSpec, monitor: &Monitor) -> Result<Trajectory> {
    if spec.algorithm != Algorithm::ProjSgd {
        return Err(Error::arg("spec is not for Proj-SGD"));
    }
    check_initial(w0, model, spec)?;
    let level = spec.level.expect("validated");
    let start = if w0.in_w_m(level, 0.0) {
        w0.clone()
    } else {
        project_w_m(w0, level)?
    };
    run(start, model, spec, monitor)
}

/// Dispatch on the spec's algorithm.
pub fn run_optimizer(w0: &VariationalParams, model: &TargetModel, spec: &OptimizerSpec, monitor: &Monitor) -> Result<Trajectory> {
    match spec.algorithm {
        Algorithm::ProxSgd => prox_sgd_run_monitored(w0, model, spec, monitor),
        Algorithm::ProjSgd => proj_sgd_run_monitored(w0, model, spec, monitor),
    }
}

/// Weighted average of parameters, entrywise in `(m, C)`.
pub fn weighted_average(iterates: &[VariationalParams], weights: &[f64]) -> Result<VariationalParams> {
    if iterates.is_empty() || iterates.len() != weights.len() {
        return Err(Error::arg(format!(
            "{} iterates but {} weights",
            iterates.len(),
            weights.len()
        )));
    }
    let d = iterates[0].dim();
    let space = iterates[0].space();
    let mut m = DVector::zeros(d);
    let mut c = DMatrix::zeros(d, d);
    for (w, &a) in iterates.iter().zip(weights) {
        if w.dim() != d || w.space() != space {
            return Err(Error::arg("iterates differ in dimension or factor space"));
        }
        m += w.mean() * a;
        c += w.factor() * a;
    }
    VariationalParams::new_projected(m, c, space)
}

/// Weighted average of the stored iterates `w¹, …, wᵀ`.
pub fn averaged_iterate(traj: &Trajectory, weights: &[f64]) -> Result<VariationalParams> {
    let iterates = traj
        .iterates
        .as_ref()
        .ok_or_else(|| Error::arg("trajectory has no stored iterates"))?;
    weighted_average(&iterates[1..], weights)
}
