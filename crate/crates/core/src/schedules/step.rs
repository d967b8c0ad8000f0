use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A stepsize rule `t ↦ γ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum StepSchedule {
    Constant { gamma: f64 },
    /// `min{μ/(2a), (1/μ)(2t+1)/(t+1)²}`.
    AnytimeProx { mu: f64, a: f64 },
    /// `min{μ/(2a), (2/μ)(2t+1)/(t+1)²}`.
    AnytimeProj { mu: f64, a: f64 },
}

fn positive(v: f64, name: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("{name} must be positive and finite, got {v}")))
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { gamma } => positive(gamma, "gamma"),
            StepSchedule::AnytimeProx { mu, a } | StepSchedule::AnytimeProj { mu, a } => {
                positive(mu, "mu")?;
                positive(a, "a")
            }
        }
    }

    /// Stepsize used at iteration `t` (counting from 0).
    pub fn stepsize(&self, t: u64) -> Result<f64> {
        self.validate()?;
        let decay = |scale: f64, mu: f64| {
            let t = t as f64;
            scale / mu * (2.0 * t + 1.0) / ((t + 1.0) * (t + 1.0))
        };
        Ok(match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::AnytimeProx { mu, a } => (mu / (2.0 * a)).min(decay(1.0, mu)),
            StepSchedule::AnytimeProj { mu, a } => (mu / (2.0 * a)).min(decay(2.0, mu)),
        })
    }

    /// Largest stepsize the schedule ever produces.
    pub fn max_stepsize(&self) -> Result<f64> {
        self.stepsize(0)
    }
}

/// Which convex-case theorem a constant stepsize is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexSetting {
    ProxConvex,
    ProjConvex,
}

/// `1/√(aT)` for Prox-SGD and `√2/√(aT)` for Proj-SGD; both need `T ≥ 2`.
pub fn constant_stepsize_for_t(setting: ConvexSetting, a: f64, iterations: u64) -> Result<f64> {
    positive(a, "a")?;
    if iterations < 2 {
        return Err(Error::arg(format!("iteration budget must be at least 2, got {iterations}")));
    }
    let base = 1.0 / (a * iterations as f64).sqrt();
    Ok(match setting {
        ConvexSetting::ProxConvex => base,
        ConvexSetting::ProjConvex => std::f64::consts::SQRT_2 * base,
    })
}

/// `γ = A log T / T` for strongly convex Prox-SGD, which yields a `log T / T`
/// rate without tuning to `a`. Requires `A ≥ 1/μ` and `T / log T ≥ 2aA/μ`.
pub fn log_t_over_t_stepsize(scale: f64, mu: f64, a: f64, iterations: u64) -> Result<f64> {
    positive(scale, "scale")?;
    positive(mu, "mu")?;
    positive(a, "a")?;
    if scale < 1.0 / mu {
        return Err(Error::arg(format!("scale {scale} must be at least 1/mu = {}", 1.0 / mu)));
    }
    if iterations < 2 {
        return Err(Error::arg("iteration budget must be at least 2"));
    }
    let t = iterations as f64;
    let ratio = t / t.ln();
    let needed = 2.0 * a * scale / mu;
    if ratio < needed {
        return Err(Error::arg(format!(
            "T/log T = {ratio:.4} is below 2aA/mu = {needed:.4}; increase the iteration budget"
        )));
    }
    Ok(scale * t.ln() / t)
}
