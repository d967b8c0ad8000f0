use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convergence guarantee whose right-hand side is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Prox-SGD, strongly convex, constant stepsize. Bounds `E‖w^{T+1} − w*‖²`.
    ProxStrong,
    /// Prox-SGD, strongly convex, anytime decaying stepsize.
    ProxStrongAnytime,
    /// Proj-SGD, strongly convex, constant stepsize.
    ProjStrong,
    /// Proj-SGD, strongly convex, anytime decaying stepsize.
    ProjStrongAnytime,
    /// Prox-SGD, convex, `γ = 1/√(aT)`, averaged iterate ELBO gap.
    ProxConvexAvg,
    /// Proj-SGD, convex, `γ = √2/√(aT)`, averaged iterate ELBO gap.
    ProjConvexAvg,
    /// Proj-SGD with STL on a Gaussian target: pure geometric decay.
    GaussianStlGeometric,
}

impl Theorem {
    /// Whether the envelope bounds the squared distance of the last iterate
    /// (as opposed to the ELBO gap of the averaged iterate).
    pub fn bounds_distance(&self) -> bool {
        !matches!(self, Theorem::ProxConvexAvg | Theorem::ProjConvexAvg)
    }
}

/// Inputs to [`rate_envelope`]; which ones are required depends on the theorem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConstants {
    /// `‖w⁰ − w*‖²`.
    pub initial_dist_sq: Option<f64>,
    pub mu: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub smoothness: Option<f64>,
    /// `‖w* − w̄‖²`.
    pub dist_sq_to_map: Option<f64>,
    /// Constant stepsize, for the constant-step theorems.
    pub gamma: Option<f64>,
}

/// Shape of an envelope as a function of the iteration count `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EnvelopeKind {
    /// `rate^T · initial + floor`.
    GeometricPlusFloor { rate: f64, initial: f64, floor: f64 },
    /// `c_quad / T² + c_lin / T`.
    AnytimeQuadratic { c_quad: f64, c_lin: f64 },
    /// `c / √T`.
    AveragedSqrtT { c: f64 },
}

/// A closed-form upper bound `T ↦ envelope(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEnvelope {
    pub theorem: Theorem,
    pub shape: EnvelopeKind,
    /// The bound at `T` applies to iterate `T + iterate_offset`.
    pub iterate_offset: u64,
    /// Smallest `T` for which the guarantee holds.
    pub valid_from: u64,
}

impl RateEnvelope {
    /// Right-hand side at `T`; `+∞` where the formula is vacuous (`T = 0` for
    /// the `1/T`-type shapes).
    pub fn eval(&self, t: u64) -> f64 {
        let tf = t as f64;
        match self.shape {
            EnvelopeKind::GeometricPlusFloor { rate, initial, floor } => rate.powf(tf) * initial + floor,
            EnvelopeKind::AnytimeQuadratic { c_quad, c_lin } => {
                if t == 0 {
                    f64::INFINITY
                } else {
                    c_quad / (tf * tf) + c_lin / tf
                }
            }
            EnvelopeKind::AveragedSqrtT { c } => {
                if t == 0 {
                    f64::INFINITY
                } else {
                    c / tf.sqrt()
                }
            }
        }
    }

    /// Bound on the metric at iterate `t`, accounting for the iterate offset.
    /// Iterates before the offset are bounded by the `T = 0` value.
    pub fn at_iterate(&self, t: u64) -> f64 {
        self.eval(t.saturating_sub(self.iterate_offset))
    }

    /// Whether the guarantee applies at `T`.
    pub fn is_valid_at(&self, t: u64) -> bool {
        t >= self.valid_from
    }
}

fn need(v: Option<f64>, name: &str) -> Result<f64> {
    match v {
        Some(x) if x.is_finite() && x >= 0.0 => Ok(x),
        Some(x) => Err(Error::arg(format!("{name} must be finite and nonnegative, got {x}"))),
        None => Err(Error::arg(format!("missing required constant {name}"))),
    }
}

fn need_positive(v: Option<f64>, name: &str) -> Result<f64> {
    let x = need(v, name)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::arg(format!("{name} must be positive")))
    }
}

/// Relative slack when comparing a stepsize to its cap, so a stepsize computed
/// as exactly the cap is not rejected by rounding.
const CAP_SLACK: f64 = 1e-12;

fn check_cap(gamma: f64, cap: f64, desc: &str) -> Result<()> {
    if gamma > cap * (1.0 + CAP_SLACK) {
        Err(Error::arg(format!("stepsize {gamma} exceeds the cap {desc} = {cap}")))
    } else {
        Ok(())
    }
}

/// Evaluate the right-hand side of a convergence theorem.
///
/// Strongly convex envelopes bound `E‖w^T − w*‖²`; convex ones bound
/// `E[f(w̄^T)] − inf f` for the averaged iterate. Constant-step envelopes
/// check the theorem's stepsize cap.
pub fn rate_envelope(theorem: Theorem, c: &EnvelopeConstants) -> Result<RateEnvelope> {
    let d0 = need(c.initial_dist_sq, "initial_dist_sq")?;
    let mut offset = 0;
    let mut valid_from = 0;
    let shape = match theorem {
        Theorem::ProxStrong => {
            let mu = need_positive(c.mu, "mu")?;
            let a = need(c.a, "a")?;
            let b = need(c.b, "b")?;
            let m = need(c.smoothness, "smoothness")?;
            let dist = need(c.dist_sq_to_map, "dist_sq_to_map")?;
            let gamma = need_positive(c.gamma, "gamma")?;
            check_cap(gamma, (mu / (2.0 * a)).min(1.0 / mu), "min{mu/(2a), 1/mu}")?;
            offset = 1;
            EnvelopeKind::GeometricPlusFloor {
                rate: 1.0 - gamma * mu,
                initial: d0,
                floor: 2.0 * gamma / mu * (b + m * m * dist),
            }
        }
        Theorem::ProxStrongAnytime => {
            let mu = need_positive(c.mu, "mu")?;
            let a = need(c.a, "a")?;
            let b = need(c.b, "b")?;
            let m = need(c.smoothness, "smoothness")?;
            let dist = need(c.dist_sq_to_map, "dist_sq_to_map")?;
            let k = (a / (mu * mu)).floor();
            valid_from = 1;
            EnvelopeKind::AnytimeQuadratic {
                c_quad: 16.0 * k * k * d0,
                c_lin: 8.0 / (mu * mu) * (b + m * m * dist),
            }
        }
        Theorem::ProjStrong => {
            let mu = need_positive(c.mu, "mu")?;
            let a = need(c.a, "a")?;
            let b = need(c.b, "b")?;
            let gamma = need_positive(c.gamma, "gamma")?;
            check_cap(gamma, (mu / (2.0 * a)).min(2.0 / mu), "min{mu/(2a), 2/mu}")?;
            EnvelopeKind::GeometricPlusFloor {
                rate: 1.0 - mu * gamma / 2.0,
                initial: d0,
                floor: 2.0 * gamma * b / mu,
            }
        }
        Theorem::ProjStrongAnytime => {
            let mu = need_positive(c.mu, "mu")?;
            let a = need(c.a, "a")?;
            let b = need(c.b, "b")?;
            valid_from = 1;
            EnvelopeKind::AnytimeQuadratic {
                c_quad: 32.0 * a / (mu * mu) * d0,
                c_lin: 16.0 * b / (mu * mu),
            }
        }
        Theorem::ProxConvexAvg => {
            let a = need_positive(c.a, "a")?;
            let b = need(c.b, "b")?;
            let m = need(c.smoothness, "smoothness")?;
            valid_from = ((m * m / a).ceil() as u64).max(2);
            EnvelopeKind::AveragedSqrtT {
                c: (2.0 * a * d0 + b) / a.sqrt(),
            }
        }
        Theorem::ProjConvexAvg => {
            let a = need_positive(c.a, "a")?;
            let b = need(c.b, "b")?;
            valid_from = 2;
            EnvelopeKind::AveragedSqrtT {
                c: (2.0 * a).sqrt() * d0 + b / (2.0 * a).sqrt(),
            }
        }
        Theorem::GaussianStlGeometric => {
            let mu = need_positive(c.mu, "mu")?;
            let a = need(c.a, "a")?;
            if let Some(b) = c.b {
                if b != 0.0 {
                    return Err(Error::arg(format!("the Gaussian STL envelope requires b = 0, got {b}")));
                }
            }
            let gamma = need_positive(c.gamma, "gamma")?;
            check_cap(gamma, (mu / (2.0 * a)).min(2.0 / mu), "min{mu/(2a), 2/mu}")?;
            EnvelopeKind::GeometricPlusFloor {
                rate: 1.0 - mu * gamma / 2.0,
                initial: d0,
                floor: 0.0,
            }
        }
    };
    Ok(RateEnvelope {
        theorem,
        shape,
        iterate_offset: offset,
        valid_from,
    })
}
