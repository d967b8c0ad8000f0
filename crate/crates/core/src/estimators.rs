//! Reparameterization gradient estimators for the negative ELBO.
//!
//! With `π = −∇_z log p(Cu + m, x)` and `u ~ N(0, I)`:
//!
//! | estimator | estimates | `g_m`          | `g_C`                         |
//! |-----------|-----------|----------------|-------------------------------|
//! | Energy    | `∇l`      | `π`            | `proj_V(π uᵀ)`                |
//! | Entropy   | `∇l + ∇h` | `π`            | `proj_V(π uᵀ − C⁻ᵀ)`          |
//! | STL       | `∇l + ∇h` | `π − C⁻ᵀu`     | `proj_V((π − C⁻ᵀu) uᵀ)`       |
//!
//! Estimating the entropy term by differentiating `log q_w(T_w(u))` through
//! both arguments gives exactly `∇h(w)` for Gaussians, so it coincides with
//! the Entropy estimator and is not offered separately.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{project_factor_space, Factorization, FactorSpace, VariationalParams};
use crate::linalg;
use crate::rng::{standard_normal, RngStream};
use crate::targets::TargetModel;

/// Which estimator to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Energy,
    Entropy,
    Stl,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Energy, EstimatorKind::Entropy, EstimatorKind::Stl];

    /// Whether the estimator needs `C⁻ᵀ` (and therefore `C ≻ 0`).
    pub fn needs_inverse(&self) -> bool {
        !matches!(self, EstimatorKind::Energy)
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Energy => "energy",
            EstimatorKind::Entropy => "entropy",
            EstimatorKind::Stl => "stl",
        }
    }
}

/// A gradient (or estimate of one) in the tangent space of `w = (m, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g_m: DVector<f64>,
    pub g_c: DMatrix<f64>,
}

impl GradientEstimate {
    pub fn zeros(d: usize) -> Self {
        Self {
            g_m: DVector::zeros(d),
            g_c: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.g_m.len()
    }

    /// `‖g_m‖² + ‖g_C‖_F²`.
    pub fn norm_sq(&self) -> f64 {
        linalg::vec_sq(&self.g_m) + linalg::fro_sq(&self.g_c)
    }

    /// Largest absolute coordinate.
    pub fn max_abs(&self) -> f64 {
        self.g_m
            .iter()
            .chain(self.g_c.iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            g_m: &self.g_m * s,
            g_c: &self.g_c * s,
        }
    }

    pub fn add_assign(&mut self, other: &GradientEstimate) {
        self.g_m += &other.g_m;
        self.g_c += &other.g_c;
    }

    pub fn sub(&self, other: &GradientEstimate) -> GradientEstimate {
        GradientEstimate {
            g_m: &self.g_m - &other.g_m,
            g_c: &self.g_c - &other.g_c,
        }
    }

    /// Entrywise map over all coordinates.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> GradientEstimate {
        GradientEstimate {
            g_m: self.g_m.map(f),
            g_c: self.g_c.map(f),
        }
    }

    pub fn in_space(&self, space: FactorSpace) -> bool {
        space.contains(&self.g_c)
    }
}

/// An estimator bound to a fixed `w`, with the factorization and `C⁻ᵀ` cached.
#[derive(Debug, Clone)]
pub struct PreparedEstimator<'a> {
    kind: EstimatorKind,
    w: &'a VariationalParams,
    factor: Option<Factorization>,
    inv_t: Option<DMatrix<f64>>,
}

impl<'a> PreparedEstimator<'a> {
    pub fn new(kind: EstimatorKind, w: &'a VariationalParams) -> Result<Self> {
        let (factor, inv_t) = if kind.needs_inverse() {
            let f = w.factorize()?;
            let inv_t = (kind == EstimatorKind::Entropy).then(|| f.inverse_transpose());
            (Some(f), inv_t)
        } else {
            (None, None)
        };
        Ok(Self { kind, w, factor, inv_t })
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    /// One estimate from the base sample `u`.
    pub fn draw(&self, model: &TargetModel, u: &DVector<f64>) -> Result<GradientEstimate> {
        let w = self.w;
        let d = w.dim();
        if u.len() != d {
            return Err(Error::arg(format!("base sample has length {}, expected {d}", u.len())));
        }
        if model.dim() != d {
            return Err(Error::arg(format!(
                "model has dimension {}, parameters have {d}",
                model.dim()
            )));
        }
        let z = w.factor() * u + w.mean();
        let pi = -model.grad_log_density(&z);
        let space = w.space();
        let est = match self.kind {
            EstimatorKind::Energy => {
                let g_c = project_factor_space(&(&pi * u.transpose()), space);
                GradientEstimate { g_m: pi, g_c }
            }
            EstimatorKind::Entropy => {
                let inv_t = self.inv_t.as_ref().expect("prepared for entropy");
                let g_c = project_factor_space(&(&pi * u.transpose() - inv_t), space);
                GradientEstimate { g_m: pi, g_c }
            }
            EstimatorKind::Stl => {
                let f = self.factor.as_ref().expect("prepared for stl");
                let v = pi - f.solve_transpose(u);
                let g_c = project_factor_space(&(&v * u.transpose()), space);
                GradientEstimate { g_m: v, g_c }
            }
        };
        Ok(est)
    }

    /// Mean of the estimates over a minibatch of base samples.
    pub fn draw_minibatch(&self, model: &TargetModel, us: &[DVector<f64>]) -> Result<GradientEstimate> {
        if us.is_empty() {
            return Err(Error::arg("minibatch must contain at least one sample"));
        }
        let mut acc = GradientEstimate::zeros(self.w.dim());
        for u in us {
            acc.add_assign(&self.draw(model, u)?);
        }
        Ok(acc.scaled(1.0 / us.len() as f64))
    }
}

/// One draw of the chosen estimator at `w` for base sample `u`.
pub fn draw_estimate(
    kind: EstimatorKind,
    w: &VariationalParams,
    model: &TargetModel,
    u: &DVector<f64>,
) -> Result<GradientEstimate> {
    PreparedEstimator::new(kind, w)?.draw(model, u)
}

/// Monte-Carlo mean of an estimator with coordinate-wise standard errors.
#[derive(Debug, Clone)]
pub struct McGradient {
    pub mean: GradientEstimate,
    pub std_err: GradientEstimate,
    pub n_samples: usize,
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McScalar {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

const CHUNK: usize = 512;

/// Running first and second moments, mergeable across chunks.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, x: impl Iterator<Item = f64>) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    fn merge(mut self, other: &Moments) -> Moments {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other.clone();
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.n += other.n;
        self
    }

    fn std_err(&self, i: usize) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        (self.m2[i] / (self.n as f64 - 1.0) / self.n as f64).sqrt()
    }
}

/// Accumulate `f(sample index)` over `n` samples in fixed-size chunks, so the
/// result does not depend on the number of worker threads.
fn accumulate<F>(n: usize, len: usize, f: F) -> Result<Moments>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::new(len);
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(n) {
                m.push(f(i as u64)?.into_iter());
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::new(len);
    for p in parts {
        total = total.merge(&p?);
    }
    Ok(total)
}

fn flatten(g: &GradientEstimate) -> Vec<f64> {
    g.g_m.iter().chain(g.g_c.iter()).copied().collect()
}

fn unflatten(d: usize, v: &[f64]) -> GradientEstimate {
    GradientEstimate {
        g_m: DVector::from_column_slice(&v[..d]),
        g_c: DMatrix::from_column_slice(d, d, &v[d..]),
    }
}

/// Sample mean of `n_samples` estimates; sample `i` uses substream `i` of `stream`.
pub fn mc_mean(
    kind: EstimatorKind,
    w: &VariationalParams,
    model: &TargetModel,
    n_samples: usize,
    stream: &RngStream,
) -> Result<McGradient> {
    if n_samples == 0 {
        return Err(Error::arg("need at least one sample"));
    }
    let est = PreparedEstimator::new(kind, w)?;
    let d = w.dim();
    let moments = accumulate(n_samples, d + d * d, |i| {
        let u = standard_normal(&mut stream.substream(i), d);
        Ok(flatten(&est.draw(model, &u)?))
    })?;
    let se: Vec<f64> = (0..moments.mean.len()).map(|i| moments.std_err(i)).collect();
    Ok(McGradient {
        mean: unflatten(d, &moments.mean),
        std_err: unflatten(d, &se),
        n_samples,
    })
}

/// Sample mean of `‖g‖²` with its standard error.
pub fn mc_expected_sq_norm(
    kind: EstimatorKind,
    w: &VariationalParams,
    model: &TargetModel,
    n_samples: usize,
    stream: &RngStream,
) -> Result<McScalar> {
    if n_samples < 2 {
        return Err(Error::arg("need at least two samples for a standard error"));
    }
    let est = PreparedEstimator::new(kind, w)?;
    let d = w.dim();
    let moments = accumulate(n_samples, 1, |i| {
        let u = standard_normal(&mut stream.substream(i), d);
        Ok(vec![est.draw(model, &u)?.norm_sq()])
    })?;
    Ok(McScalar {
        mean: moments.mean[0],
        std_err: moments.std_err(0),
        n_samples,
    })
}

/// Sample mean of an arbitrary scalar functional of `u`, on the same substream layout.
pub fn mc_scalar<F>(d: usize, n_samples: usize, stream: &RngStream, f: F) -> Result<McScalar>
where
    F: Fn(&DVector<f64>) -> Result<f64> + Sync,
{
    if n_samples < 2 {
        return Err(Error::arg("need at least two samples for a standard error"));
    }
    let moments = accumulate(n_samples, 1, |i| {
        let u = standard_normal(&mut stream.substream(i), d);
        Ok(vec![f(&u)?])
    })?;
    Ok(McScalar {
        mean: moments.mean[0],
        std_err: moments.std_err(0),
        n_samples,
    })
}
