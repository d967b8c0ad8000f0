use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::family::VariationalParams;

/// Region of parameter space on which a [`QuadBound`] is guaranteed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "region", content = "level")]
pub enum Validity {
    Anywhere,
    /// Factors with singular values at least `1/√L`.
    WL(f64),
    /// Factors with singular values at least `1/√M` (the smoothness constant).
    WM(f64),
}

impl Validity {
    /// Non-degeneracy level required by the region, if any.
    pub fn level(&self) -> Option<f64> {
        match *self {
            Validity::Anywhere => None,
            Validity::WL(l) | Validity::WM(l) => Some(l),
        }
    }
}

/// `E‖g(w)‖² ≤ a‖w − w*‖² + b` on `validity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadBound {
    pub a: f64,
    pub b: f64,
    #[serde(skip)]
    pub anchor: Option<VariationalParams>,
    pub validity: Validity,
}

impl QuadBound {
    pub fn with_anchor(mut self, anchor: VariationalParams) -> Self {
        self.anchor = Some(anchor);
        self
    }

    /// The bound at squared distance `dist_sq` from the anchor.
    pub fn eval(&self, dist_sq: f64) -> f64 {
        self.a * dist_sq + self.b
    }

    /// Constants for the mean of `batch` independent estimates.
    pub fn for_minibatch(&self, batch: usize) -> Self {
        let s = 1.0 / batch.max(1) as f64;
        Self {
            a: self.a * s,
            b: self.b * s,
            ..self.clone()
        }
    }

    /// Both constants multiplied by `factor` (used for negative controls).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            a: self.a * factor,
            b: self.b * factor,
            ..self.clone()
        }
    }
}

/// Problem constants feeding [`quad_bound`].
///
/// Squared distances are used throughout: `dist_sq_to_map` is `‖w* − w̄‖²`
/// with `w̄ = (z̄, 0)` and `dist_sq_to_residual_stationary` is `‖w* − ŵ‖²`
/// with `ŵ = (m̂, 0)`, `m̂` a stationary point of `log p − log q_{w*}`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundInputs {
    pub dim: usize,
    pub smoothness: Option<f64>,
    pub strong_concavity: Option<f64>,
    pub residual_smoothness: Option<f64>,
    pub entropy_level: Option<f64>,
    pub dist_sq_to_map: Option<f64>,
    pub dist_sq_to_residual_stationary: Option<f64>,
}

fn require(value: Option<f64>, name: &str) -> Result<f64> {
    match value {
        Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
        Some(v) => Err(Error::arg(format!("{name} must be finite and nonnegative, got {v}"))),
        None => Err(Error::arg(format!("missing required constant {name}"))),
    }
}

fn dist_sq_to_map(inputs: &BoundInputs) -> Result<f64> {
    if let Some(v) = inputs.dist_sq_to_map {
        return require(Some(v), "dist_sq_to_map");
    }
    match inputs.strong_concavity {
        Some(mu) if mu > 0.0 => Ok(inputs.dim as f64 / mu),
        _ => Err(Error::arg(
            "missing required constant dist_sq_to_map (needed when strong_concavity is not positive)",
        )),
    }
}

/// The `(a, b)` constants for each estimator.
///
/// | estimator | `a`                 | `b`                          | region |
/// |-----------|---------------------|------------------------------|--------|
/// | Energy    | `2(d+3)M²`          | `2(d+3)M²‖w*−w̄‖²`            | all    |
/// | Entropy   | `4(d+3)M²`          | `4(d+3)M²‖w*−w̄‖² + dL`       | `W_L`  |
/// | STL       | `4(d+3)(K²+2M²)`    | `4(d+3)K²‖w*−ŵ‖²`            | `W_M`  |
///
/// Without a known `‖w* − w̄‖²`, a positive strong-concavity constant `μ`
/// bounds it by `d/μ`. Without a residual smoothness, STL uses the
/// conservative `K = 2M`. `b` is exactly zero for STL when `K = 0`.
pub fn quad_bound(kind: EstimatorKind, inputs: &BoundInputs) -> Result<QuadBound> {
    if inputs.dim == 0 {
        return Err(Error::arg("dimension must be positive"));
    }
    let d3 = inputs.dim as f64 + 3.0;
    let m = require(inputs.smoothness, "smoothness")?;
    let m2 = m * m;
    let bound = match kind {
        EstimatorKind::Energy => {
            let dist = dist_sq_to_map(inputs)?;
            QuadBound {
                a: 2.0 * d3 * m2,
                b: 2.0 * d3 * m2 * dist,
                anchor: None,
                validity: Validity::Anywhere,
            }
        }
        EstimatorKind::Entropy => {
            let l = require(inputs.entropy_level, "entropy_level")?;
            if l <= 0.0 {
                return Err(Error::arg("entropy_level must be positive"));
            }
            let dist = dist_sq_to_map(inputs)?;
            QuadBound {
                a: 4.0 * d3 * m2,
                b: 4.0 * d3 * m2 * dist + inputs.dim as f64 * l,
                anchor: None,
                validity: Validity::WL(l),
            }
        }
        EstimatorKind::Stl => {
            let k = match inputs.residual_smoothness {
                Some(k) => require(Some(k), "residual_smoothness")?,
                None => 2.0 * m,
            };
            let b = if k == 0.0 {
                0.0
            } else {
                let dist = require(inputs.dist_sq_to_residual_stationary, "dist_sq_to_residual_stationary")?;
                4.0 * d3 * k * k * dist
            };
            QuadBound {
                a: 4.0 * d3 * (k * k + 2.0 * m2),
                b,
                anchor: None,
                validity: Validity::WM(m),
            }
        }
    };
    Ok(bound)
}
