use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{
    ExperimentConfig, GroupsConfig, InitConfig, ModelConfig, PriorConfig, RegressionData, ScheduleConfig,
};
use super::reference::{approximate_reference, residual_stationary_point};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::family::{project_w_m, FactorSpace, NonDegeneracyLevel, VariationalParams};
use crate::linalg;
use crate::optimizers::{Algorithm, AveragingSpec, OptimizerSpec};
use crate::rng::RngStream;
use crate::schedules::{
    constant_stepsize_for_t, log_t_over_t_stepsize, quad_bound, rate_envelope, AveragingSetting, BoundInputs,
    ConvexSetting, EnvelopeConstants, QuadBound, RateEnvelope, StepSchedule, Theorem,
};
use crate::targets::{
    load_labels_csv, load_matrix_csv, synthetic_linear, synthetic_logistic, gaussian_target, hierarchical_logistic_target, linear_regression_target, logistic_regression_target,
    map_point, GroupData, ReferenceSolution, TargetModel,
};

fn cfg_err(e: Error) -> Error {
    match e {
        Error::Argument(msg) | Error::Domain(msg) => Error::Config(msg),
        other => other,
    }
}

fn prior_covariance(prior: &PriorConfig, d: usize, what: &str) -> Result<DMatrix<f64>> {
    match (prior.variance, &prior.covariance) {
        (Some(_), Some(_)) => Err(Error::config(format!("{what}: give either variance or covariance, not both"))),
        (Some(v), None) => {
            if v > 0.0 && v.is_finite() {
                Ok(DMatrix::identity(d, d) * v)
            } else {
                Err(Error::config(format!("{what}: variance must be positive")))
            }
        }
        (None, Some(rows)) => {
            let m = linalg::matrix_from_rows(rows, what).map_err(cfg_err)?;
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::config(format!("{what}: expected a {d}x{d} covariance")));
            }
            Ok(m)
        }
        (None, None) => Ok(DMatrix::identity(d, d)),
    }
}

fn regression_data(data: &RegressionData, noise_std: f64, logistic: bool) -> Result<(DMatrix<f64>, DVector<f64>)> {
    match data {
        RegressionData::Inline { design, responses } => Ok((
            linalg::matrix_from_rows(design, "design").map_err(cfg_err)?,
            DVector::from_column_slice(responses),
        )),
        RegressionData::Csv { design, responses } => {
            Ok((load_matrix_csv(design)?, load_labels_csv(responses)?))
        }
        RegressionData::Synthetic { seed, dim, n, scale } => {
            if *dim == 0 || *n == 0 {
                return Err(Error::config("synthetic data needs positive dim and n"));
            }
            let s = if logistic {
                synthetic_logistic(*seed, *dim, *n, *scale)
            } else {
                synthetic_linear(*seed, *dim, *n, *scale, noise_std)
            };
            Ok((s.design, s.responses))
        }
    }
}

fn groups(config: &GroupsConfig, k: usize) -> Result<Vec<GroupData>> {
    match config {
        GroupsConfig::Inline { groups } => groups
            .iter()
            .map(|g| {
                Ok(GroupData {
                    design: linalg::matrix_from_rows(&g.design, "group design").map_err(cfg_err)?,
                    labels: DVector::from_column_slice(&g.labels),
                })
            })
            .collect(),
        GroupsConfig::Csv { groups } => groups
            .iter()
            .map(|g| {
                Ok(GroupData {
                    design: load_matrix_csv(&g.design)?,
                    labels: load_labels_csv(&g.labels)?,
                })
            })
            .collect(),
        GroupsConfig::Synthetic { seed, count, per_group, scale } => {
            let stream = RngStream::new(*seed);
            Ok((0..*count as u64)
                .map(|i| {
                    let s = synthetic_logistic(stream.child(i).seed(), k, *per_group, *scale);
                    GroupData {
                        design: s.design,
                        labels: s.responses,
                    }
                })
                .collect())
        }
    }
}

/// Construct the target described by a model config.
pub fn build_model(config: &ModelConfig) -> Result<TargetModel> {
    let model = match config {
        ModelConfig::Gaussian { mean, covariance } => {
            let cov = linalg::matrix_from_rows(covariance, "covariance").map_err(cfg_err)?;
            gaussian_target(DVector::from_column_slice(mean), cov)
        }
        ModelConfig::LinearRegression { data, noise_std, prior } => {
            let (a, x) = regression_data(data, *noise_std, false)?;
            let p = prior_covariance(prior, a.nrows(), "prior")?;
            linear_regression_target(a, x, *noise_std, p)
        }
        ModelConfig::LogisticRegression { data, prior } => {
            let (a, x) = regression_data(data, 1.0, true)?;
            let p = prior_covariance(prior, a.nrows(), "prior")?;
            logistic_regression_target(a, x, p)
        }
        ModelConfig::HierarchicalLogistic { theta_dim, groups: g, prior, group_prior } => {
            let gs = groups(g, *theta_dim)?;
            hierarchical_logistic_target(
                *theta_dim,
                gs,
                prior_covariance(prior, *theta_dim, "prior")?,
                prior_covariance(group_prior, *theta_dim, "group_prior")?,
            )
        }
    };
    model.map_err(cfg_err)
}

/// Constants that feed the noise bounds and envelopes, as reported in summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub smoothness: f64,
    pub strong_concavity: f64,
    pub residual_smoothness: Option<f64>,
    pub level: Option<f64>,
    /// `‖w* − w̄‖²` with `w̄ = (z̄, 0)`.
    pub dist_sq_to_map: f64,
    /// `‖w* − ŵ‖²`, for STL on non-Gaussian targets.
    pub dist_sq_to_residual_stationary: Option<f64>,
    /// `‖w⁰ − w*‖²`.
    pub initial_dist_sq: f64,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// Stepsize at `t = 0`.
    pub gamma0: f64,
}

/// A fully resolved experiment: model, reference, constants, schedule and start.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: TargetModel,
    pub space: FactorSpace,
    pub reference: VariationalParams,
    pub reference_exact: bool,
    pub level: Option<NonDegeneracyLevel>,
    pub map_point: DVector<f64>,
    pub bound: Option<QuadBound>,
    /// Why `bound` is missing, if it is.
    pub bound_note: Option<String>,
    pub spec: OptimizerSpec,
    pub w0: VariationalParams,
    pub envelope: Option<RateEnvelope>,
    pub envelope_note: Option<String>,
    pub constants: DerivedConstants,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        Self::prepare_with_reference(config, None)
    }

    /// Like [`Experiment::prepare`], but with a caller-supplied reference for
    /// targets without an analytic one (so a ladder of runs can share it).
    pub fn prepare_with_reference(config: &ExperimentConfig, reference: Option<ReferenceSolution>) -> Result<Self> {
        config.validate()?;
        let model = build_model(&config.model)?;
        Self::from_model(config, model, reference)
    }

    pub fn from_model(config: &ExperimentConfig, mut model: TargetModel, reference: Option<ReferenceSolution>) -> Result<Self> {
        config.validate()?;
        let opt = &config.optimizer;
        let d = model.dim();
        let space = opt.algorithm.factor_space();
        let consts = model.constants().clone();
        let m = consts
            .smoothness
            .ok_or_else(|| Error::config("the model has no smoothness constant"))?;
        let mu = consts.strong_concavity.unwrap_or(0.0);
        let level = match opt.algorithm {
            Algorithm::ProjSgd => Some(NonDegeneracyLevel::new(opt.level.unwrap_or(m)).map_err(cfg_err)?),
            Algorithm::ProxSgd => None,
        };

        let map = match &consts.map_point {
            Some(z) => z.clone(),
            None => map_point(&model)?,
        };

        if let Some(r) = reference {
            model = model.with_reference(r).map_err(cfg_err)?;
        }
        if model.reference().is_none() {
            let rc = &config.diagnostics.reference;
            let budget = rc.iterations.unwrap_or(rc.budget_factor.max(1) * opt.iterations);
            let r = approximate_reference(&model, &map, m, rc, budget)?;
            model = model.with_reference(r).map_err(cfg_err)?;
        }
        let reference_solution = model.reference().expect("set above").clone();
        let reference = reference_solution.params(space).map_err(cfg_err)?;
        let reference_exact = reference_solution.exact;

        let dist_sq_to_map = linalg::vec_sq(&(reference.mean() - &map)) + linalg::fro_sq(reference.factor());
        let dist_sq_to_residual_stationary = if opt.estimator == EstimatorKind::Stl && consts.residual_smoothness != Some(0.0) {
            residual_stationary_point(&model, &reference)
                .ok()
                .map(|m_hat| linalg::vec_sq(&(reference.mean() - m_hat)) + linalg::fro_sq(reference.factor()))
        } else {
            None
        };

        let inputs = BoundInputs {
            dim: d,
            smoothness: Some(m),
            strong_concavity: Some(mu),
            residual_smoothness: consts.residual_smoothness,
            entropy_level: level.map(|l| l.value()),
            dist_sq_to_map: Some(dist_sq_to_map),
            dist_sq_to_residual_stationary,
        };
        let (bound, bound_note) = match quad_bound(opt.estimator, &inputs) {
            Ok(b) => (Some(b.for_minibatch(opt.minibatch).with_anchor(reference.clone())), None),
            Err(e) => (None, Some(e.to_string())),
        };

        let need_bound = || {
            bound.as_ref().ok_or_else(|| {
                Error::config(format!(
                    "the schedule needs the noise constant a: {}",
                    bound_note.clone().unwrap_or_default()
                ))
            })
        };
        let need_mu = || {
            if mu > 0.0 {
                Ok(mu)
            } else {
                Err(Error::config("the schedule needs a positive strong-concavity constant"))
            }
        };
        let schedule = match &opt.schedule {
            ScheduleConfig::Constant { gamma } => StepSchedule::Constant { gamma: *gamma },
            ScheduleConfig::Anytime {} => {
                let a = need_bound()?.a;
                let mu = need_mu()?;
                match opt.algorithm {
                    Algorithm::ProxSgd => StepSchedule::AnytimeProx { mu, a },
                    Algorithm::ProjSgd => StepSchedule::AnytimeProj { mu, a },
                }
            }
            ScheduleConfig::TheoryConstant {} => {
                let setting = match opt.algorithm {
                    Algorithm::ProxSgd => ConvexSetting::ProxConvex,
                    Algorithm::ProjSgd => ConvexSetting::ProjConvex,
                };
                StepSchedule::Constant {
                    gamma: constant_stepsize_for_t(setting, need_bound()?.a, opt.iterations).map_err(cfg_err)?,
                }
            }
            ScheduleConfig::StrongConstant {} => {
                let a = need_bound()?.a;
                let mu = need_mu()?;
                let cap = match opt.algorithm {
                    Algorithm::ProxSgd => 1.0 / mu,
                    Algorithm::ProjSgd => 2.0 / mu,
                };
                StepSchedule::Constant {
                    gamma: (mu / (2.0 * a)).min(cap),
                }
            }
            ScheduleConfig::LogTOverT { scale } => StepSchedule::Constant {
                gamma: log_t_over_t_stepsize(*scale, need_mu()?, need_bound()?.a, opt.iterations).map_err(cfg_err)?,
            },
        };
        schedule.validate().map_err(cfg_err)?;
        let gamma0 = schedule.stepsize(0)?;

        let averaging = if opt.averaging {
            let StepSchedule::Constant { gamma } = schedule else {
                return Err(Error::config("averaging requires a constant stepsize schedule"));
            };
            let setting = match opt.algorithm {
                Algorithm::ProxSgd => AveragingSetting::Prox,
                Algorithm::ProjSgd => AveragingSetting::Proj,
            };
            Some(AveragingSpec {
                setting,
                a: need_bound()?.a,
                gamma,
            })
        } else {
            None
        };

        let spec = OptimizerSpec {
            algorithm: opt.algorithm,
            estimator: opt.estimator,
            schedule,
            level,
            iterations: opt.iterations,
            seed: opt.seed,
            minibatch: opt.minibatch,
            averaging,
            record_every: config.diagnostics.record_every_for(opt.iterations),
            store_iterates: false,
        };
        spec.validate().map_err(cfg_err)?;

        let w0 = initial_point(&opt.init, &model, &map, space, level)?;
        let initial_dist_sq = w0.dist_sq(&reference);

        let (envelope, envelope_note) = select_envelope(
            config,
            &spec,
            bound.as_ref(),
            mu,
            m,
            dist_sq_to_map,
            initial_dist_sq,
            model.has_gaussian_posterior(),
        );

        let constants = DerivedConstants {
            smoothness: m,
            strong_concavity: mu,
            residual_smoothness: consts.residual_smoothness,
            level: level.map(|l| l.value()),
            dist_sq_to_map,
            dist_sq_to_residual_stationary,
            initial_dist_sq,
            a: bound.as_ref().map(|b| b.a),
            b: bound.as_ref().map(|b| b.b),
            gamma0,
        };

        Ok(Self {
            config: config.clone(),
            model,
            space,
            reference,
            reference_exact,
            level,
            map_point: map,
            bound,
            bound_note,
            spec,
            w0,
            envelope,
            envelope_note,
            constants,
        })
    }
}

fn initial_point(
    init: &InitConfig,
    model: &TargetModel,
    map: &DVector<f64>,
    space: FactorSpace,
    level: Option<NonDegeneracyLevel>,
) -> Result<VariationalParams> {
    let d = model.dim();
    let w = match init {
        InitConfig::Standard { mean } => {
            let m = match mean {
                Some(v) if v.len() == d => DVector::from_column_slice(v),
                Some(v) => return Err(Error::config(format!("init mean has length {}, expected {d}", v.len()))),
                None => DVector::zeros(d),
            };
            VariationalParams::standard(m, space)
        }
        InitConfig::Map {} => VariationalParams::standard(map.clone(), space),
        InitConfig::Laplace {} => {
            let h = model
                .neg_hessian(map)
                .ok_or_else(|| Error::config("Laplace initialization needs the model's Hessian"))?;
            let cov = linalg::spd_inverse(&h, "negative Hessian at the MAP point").map_err(cfg_err)?;
            VariationalParams::from_covariance(map.clone(), &linalg::symmetrize(&cov), space).map_err(cfg_err)?
        }
        InitConfig::Explicit { mean, factor } => {
            if mean.len() != d {
                return Err(Error::config(format!("init mean has length {}, expected {d}", mean.len())));
            }
            let c = linalg::matrix_from_rows(factor, "init factor").map_err(cfg_err)?;
            VariationalParams::new(DVector::from_column_slice(mean), c, space).map_err(cfg_err)?
        }
    };
    match (space, level) {
        (FactorSpace::Symmetric, Some(l)) if !w.in_w_m(l, 0.0) => project_w_m(&w, l).map_err(cfg_err),
        (FactorSpace::LowerTriangular, _) if w.factor().diagonal().iter().any(|&v| v <= 0.0) => {
            Err(Error::config("Prox-SGD needs an initial factor with positive diagonal"))
        }
        _ => Ok(w),
    }
}

#[allow(clippy::too_many_arguments)]
fn select_envelope(
    config: &ExperimentConfig,
    spec: &OptimizerSpec,
    bound: Option<&QuadBound>,
    mu: f64,
    m: f64,
    dist_sq_to_map: f64,
    d0: f64,
    gaussian_posterior: bool,
) -> (Option<RateEnvelope>, Option<String>) {
    let Some(bound) = bound else {
        return (None, Some("no noise bound is available for this estimator and model".into()));
    };
    let gamma = match spec.schedule {
        StepSchedule::Constant { gamma } => Some(gamma),
        _ => None,
    };
    let consts = EnvelopeConstants {
        initial_dist_sq: Some(d0),
        mu: Some(mu),
        a: Some(bound.a),
        b: Some(bound.b),
        smoothness: Some(m),
        dist_sq_to_map: Some(dist_sq_to_map),
        gamma,
    };
    let theorem = match (&config.optimizer.schedule, spec.algorithm) {
        (ScheduleConfig::Anytime {}, Algorithm::ProxSgd) => Some(Theorem::ProxStrongAnytime),
        (ScheduleConfig::Anytime {}, Algorithm::ProjSgd) => Some(Theorem::ProjStrongAnytime),
        (ScheduleConfig::TheoryConstant {}, alg) if spec.averaging.is_some() => Some(match alg {
            Algorithm::ProxSgd => Theorem::ProxConvexAvg,
            Algorithm::ProjSgd => Theorem::ProjConvexAvg,
        }),
        _ if mu <= 0.0 => None,
        (_, Algorithm::ProxSgd) => Some(Theorem::ProxStrong),
        (_, Algorithm::ProjSgd) if spec.estimator == EstimatorKind::Stl && gaussian_posterior && bound.b == 0.0 => {
            Some(Theorem::GaussianStlGeometric)
        }
        (_, Algorithm::ProjSgd) => Some(Theorem::ProjStrong),
    };
    let Some(theorem) = theorem else {
        return (
            None,
            Some("no guarantee applies: the target is not strongly concave and the run is not averaged with the theory stepsize".into()),
        );
    };
    match rate_envelope(theorem, &consts) {
        Ok(env) => (Some(env), None),
        Err(e) => (None, Some(format!("{theorem:?}: {e}"))),
    }
}
