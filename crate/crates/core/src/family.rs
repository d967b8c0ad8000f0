//! Dense Gaussian variational family `q_w = N(m, C Cᵀ)` with `w = (m, C)`.
//!
//! The covariance factor `C` lives either in the lower-triangular matrices or
//! in the symmetric matrices. Norms on parameters are the stacked Euclidean
//! norm `‖w‖² = ‖m‖² + ‖C‖_F²`.
//!
//! The negative entropy is reported as `h(w) = -log det C`, i.e. without the
//! additive constant `(d/2)(1 + log 2π)`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::GradientEstimate;
use crate::linalg;

/// Subspace the covariance factor is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSpace {
    LowerTriangular,
    Symmetric,
}

impl FactorSpace {
    pub fn contains(&self, x: &DMatrix<f64>) -> bool {
        x.is_square()
            && match self {
                FactorSpace::LowerTriangular => linalg::is_lower_triangular(x),
                FactorSpace::Symmetric => linalg::is_symmetric(x),
            }
    }
}

/// Smoothness level `M` defining the non-degeneracy set
/// `W_M = { (m, C) : C ≻ 0, σ_min(C) ≥ 1/√M }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonDegeneracyLevel(f64);

impl NonDegeneracyLevel {
    pub fn new(m: f64) -> Result<Self> {
        if m > 0.0 && m.is_finite() {
            Ok(Self(m))
        } else {
            Err(Error::arg(format!("non-degeneracy level must be positive and finite, got {m}")))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// Smallest admissible singular value, `1/√M`.
    pub fn threshold(&self) -> f64 {
        1.0 / self.0.sqrt()
    }
}

/// Variational parameters `w = (m, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    m: DVector<f64>,
    c: DMatrix<f64>,
    space: FactorSpace,
}

impl VariationalParams {
    /// Checks shapes and exact subspace membership of `c`.
    pub fn new(m: DVector<f64>, c: DMatrix<f64>, space: FactorSpace) -> Result<Self> {
        let d = m.len();
        if c.nrows() != d || c.ncols() != d {
            return Err(Error::arg(format!(
                "factor must be {d}x{d}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if !space.contains(&c) {
            return Err(Error::arg(format!("factor is not in the {space:?} subspace")));
        }
        Ok(Self { m, c, space })
    }

    /// Projects `c` onto the subspace first.
    pub fn new_projected(m: DVector<f64>, c: DMatrix<f64>, space: FactorSpace) -> Result<Self> {
        if !c.is_square() {
            return Err(Error::arg("factor must be square"));
        }
        let c = project_factor_space(&c, space);
        Self::new(m, c, space)
    }

    /// `(m, I)`.
    pub fn standard(m: DVector<f64>, space: FactorSpace) -> Self {
        let d = m.len();
        Self {
            m,
            c: DMatrix::identity(d, d),
            space,
        }
    }

    /// Parameters whose distribution is `N(mean, covariance)`: the Cholesky
    /// factor for triangular space, the principal square root for symmetric.
    pub fn from_covariance(
        mean: DVector<f64>,
        covariance: &DMatrix<f64>,
        space: FactorSpace,
    ) -> Result<Self> {
        let chol = linalg::spd_cholesky(covariance, "covariance")?;
        let c = match space {
            FactorSpace::LowerTriangular => linalg::tril(&chol.l()),
            FactorSpace::Symmetric => linalg::spd_sqrt(covariance),
        };
        Self::new(mean, c, space)
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn space(&self) -> FactorSpace {
        self.space
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>, FactorSpace) {
        (self.m, self.c, self.space)
    }

    /// `Σ = C Cᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.c * self.c.transpose()))
    }

    /// `C ≻ 0` in the declared factor space.
    pub fn is_positive_definite(&self) -> bool {
        match self.space {
            FactorSpace::LowerTriangular => self.c.diagonal().iter().all(|&v| v > 0.0),
            FactorSpace::Symmetric => Cholesky::new(self.c.clone()).is_some(),
        }
    }

    /// Membership in `W_M`, with an absolute slack on the singular-value threshold.
    pub fn in_w_m(&self, level: NonDegeneracyLevel, slack: f64) -> bool {
        if !self.is_positive_definite() {
            return false;
        }
        smallest_singular_value(&self.c) >= level.threshold() - slack
    }

    pub fn factorize(&self) -> Result<Factorization> {
        Factorization::new(self)
    }

    /// `‖w − v‖² = ‖m − m'‖² + ‖C − C'‖_F²`.
    pub fn dist_sq(&self, other: &VariationalParams) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch in dist_sq");
        linalg::vec_sq(&(&self.m - &other.m)) + linalg::fro_sq(&(&self.c - &other.c))
    }

    pub fn norm_sq(&self) -> f64 {
        linalg::vec_sq(&self.m) + linalg::fro_sq(&self.c)
    }

    /// `w − γ g`, staying in the same factor space (g is assumed to live there).
    pub fn step(&self, gamma: f64, g: &GradientEstimate) -> VariationalParams {
        VariationalParams {
            m: &self.m - &g.g_m * gamma,
            c: &self.c - &g.g_c * gamma,
            space: self.space,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.m.iter().chain(self.c.iter()).all(|v| v.is_finite())
    }

    /// Same distribution, factor re-expressed in another space.
    pub fn to_space(&self, space: FactorSpace) -> Result<VariationalParams> {
        if space == self.space {
            return Ok(self.clone());
        }
        Self::from_covariance(self.m.clone(), &self.covariance(), space)
    }
}

/// Solves against a positive-definite factor without forming its inverse.
#[derive(Debug, Clone)]
pub enum Factorization {
    /// A lower-triangular factor with positive diagonal, used directly.
    Triangular(DMatrix<f64>),
    /// Cholesky factorization of a symmetric positive-definite factor.
    Symmetric(Cholesky<f64, Dyn>),
}

impl Factorization {
    pub fn new(w: &VariationalParams) -> Result<Self> {
        match w.space {
            FactorSpace::LowerTriangular => {
                if let Some((i, v)) = w.c.diagonal().iter().enumerate().find(|(_, &v)| v.is_nan() || v <= 0.0) {
                    return Err(Error::domain(format!(
                        "triangular factor is not positive definite: diagonal entry {i} is {v}"
                    )));
                }
                Ok(Factorization::Triangular(w.c.clone()))
            }
            FactorSpace::Symmetric => Cholesky::new(w.c.clone())
                .map(Factorization::Symmetric)
                .ok_or_else(|| Error::domain("symmetric factor is not positive definite")),
        }
    }

    /// `log det C`.
    pub fn log_det(&self) -> f64 {
        match self {
            Factorization::Triangular(c) => c.diagonal().iter().map(|v| v.ln()).sum(),
            Factorization::Symmetric(ch) => {
                2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
            }
        }
    }

    /// `C⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Factorization::Triangular(c) => c
                .solve_lower_triangular(b)
                .expect("positive diagonal checked at construction"),
            Factorization::Symmetric(ch) => ch.solve(b),
        }
    }

    /// `C⁻ᵀ b`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Factorization::Triangular(c) => c
                .tr_solve_lower_triangular(b)
                .expect("positive diagonal checked at construction"),
            Factorization::Symmetric(ch) => ch.solve(b),
        }
    }

    /// `C⁻¹ B` for a matrix right-hand side.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Factorization::Triangular(c) => c
                .solve_lower_triangular(b)
                .expect("positive diagonal checked at construction"),
            Factorization::Symmetric(ch) => ch.solve(b),
        }
    }

    /// `C⁻ᵀ`, computed by solving against the identity.
    pub fn inverse_transpose(&self) -> DMatrix<f64> {
        let d = match self {
            Factorization::Triangular(c) => c.nrows(),
            Factorization::Symmetric(ch) => ch.l_dirty().nrows(),
        };
        let eye = DMatrix::identity(d, d);
        match self {
            Factorization::Triangular(c) => c
                .tr_solve_lower_triangular(&eye)
                .expect("positive diagonal checked at construction"),
            Factorization::Symmetric(ch) => linalg::symmetrize(&ch.solve(&eye)),
        }
    }
}

fn smallest_singular_value(c: &DMatrix<f64>) -> f64 {
    if linalg::is_symmetric(c) {
        // singular values of a symmetric matrix are |eigenvalues|
        linalg::sym_eigen(c)
            .eigenvalues
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    } else {
        c.clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `T_w(u) = C u + m`.
pub fn transform(w: &VariationalParams, u: &DVector<f64>) -> Result<DVector<f64>> {
    if u.len() != w.dim() {
        return Err(Error::arg(format!(
            "base sample has length {}, expected {}",
            u.len(),
            w.dim()
        )));
    }
    Ok(&w.c * u + &w.m)
}

/// `log q_w(z) = -(d/2) log 2π - log det C - ½‖C⁻¹(z - m)‖²`.
pub fn log_q(w: &VariationalParams, z: &DVector<f64>) -> Result<f64> {
    if z.len() != w.dim() {
        return Err(Error::arg(format!("point has length {}, expected {}", z.len(), w.dim())));
    }
    let f = w.factorize()?;
    let r = f.solve(&(z - &w.m));
    let d = w.dim() as f64;
    Ok(-0.5 * d * (2.0 * PI).ln() - f.log_det() - 0.5 * linalg::vec_sq(&r))
}

/// `h(w) = -log det C` if `C ≻ 0`, `+∞` otherwise.
pub fn entropy_h(w: &VariationalParams) -> f64 {
    match w.factorize() {
        Ok(f) => -f.log_det(),
        Err(_) => f64::INFINITY,
    }
}

/// `∇h(w) = (0, -proj_V(C⁻ᵀ))`.
pub fn grad_h(w: &VariationalParams) -> Result<GradientEstimate> {
    let f = w.factorize()?;
    let g_c = -project_factor_space(&f.inverse_transpose(), w.space);
    Ok(GradientEstimate {
        g_m: DVector::zeros(w.dim()),
        g_c,
    })
}

/// Orthogonal projection onto the factor space: `tril(X)` or `(X + Xᵀ)/2`.
pub fn project_factor_space(x: &DMatrix<f64>, space: FactorSpace) -> DMatrix<f64> {
    match space {
        FactorSpace::LowerTriangular => linalg::tril(x),
        FactorSpace::Symmetric => linalg::symmetrize(x),
    }
}

/// Proximal operator of `γ h` for triangular factors.
///
/// Diagonal entries become `½(C_ii + √(C_ii² + 4γ))`; everything else is kept.
/// The input factor does not need to be positive definite.
pub fn prox_entropy(w: &VariationalParams, gamma: f64) -> Result<VariationalParams> {
    if w.space != FactorSpace::LowerTriangular {
        return Err(Error::arg("entropy prox is only available for lower-triangular factors"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::arg(format!("prox step must be positive, got {gamma}")));
    }
    let mut c = w.c.clone();
    for i in 0..c.nrows() {
        c[(i, i)] = prox_neg_log(c[(i, i)], gamma);
    }
    Ok(VariationalParams {
        m: w.m.clone(),
        c,
        space: w.space,
    })
}

/// `argmin_{x>0} -log x + (x - c)²/(2γ)`.
fn prox_neg_log(c: f64, gamma: f64) -> f64 {
    let disc = (c * c + 4.0 * gamma).sqrt();
    if c >= 0.0 {
        0.5 * (c + disc)
    } else {
        // same root, without cancellation for large negative c
        2.0 * gamma / (disc - c)
    }
}

/// Euclidean projection onto `W_M` for symmetric factors: clamp every
/// eigenvalue of `C` from below at `1/√M`.
pub fn project_w_m(w: &VariationalParams, level: NonDegeneracyLevel) -> Result<VariationalParams> {
    if w.space != FactorSpace::Symmetric {
        return Err(Error::arg("projection onto W_M is only available for symmetric factors"));
    }
    let c = clamp_eigenvalues(&w.c, level.threshold());
    Ok(VariationalParams {
        m: w.m.clone(),
        c,
        space: w.space,
    })
}

pub(crate) fn clamp_eigenvalues(c: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let e = linalg::sym_eigen(c);
    if e.eigenvalues.iter().all(|&v| v >= floor) {
        return linalg::symmetrize(c);
    }
    let d = e.eigenvalues.map(|v| v.max(floor));
    linalg::symmetrize(&(&e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()))
}

/// `KL(q_w ‖ q_w*)` in closed form:
/// `½(log det Σ* − log det Σ − d + tr(Σ*⁻¹Σ) + (m* − m)ᵀ Σ*⁻¹ (m* − m))`.
pub fn kl_gaussian(w: &VariationalParams, w_star: &VariationalParams) -> Result<f64> {
    if w.dim() != w_star.dim() {
        return Err(Error::arg("dimension mismatch in kl_gaussian"));
    }
    let f = w.factorize()?;
    let f_star = w_star.factorize()?;
    let d = w.dim() as f64;
    // tr(Σ*⁻¹ Σ) = ‖C*⁻¹ C‖_F², (m*−m)ᵀΣ*⁻¹(m*−m) = ‖C*⁻¹(m*−m)‖²
    let trace = linalg::fro_sq(&f_star.solve_matrix(&w.c));
    let quad = linalg::vec_sq(&f_star.solve(&(&w_star.m - &w.m)));
    let kl = 0.5 * (2.0 * f_star.log_det() - 2.0 * f.log_det() - d + trace + quad);
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn params(m: &[f64], c: DMatrix<f64>, space: FactorSpace) -> VariationalParams {
        VariationalParams::new(DVector::from_row_slice(m), c, space).unwrap()
    }

    #[test]
    fn transform_examples() {
        let u = DVector::from_vec(vec![0.3, -1.2]);
        let w = VariationalParams::standard(DVector::zeros(2), FactorSpace::Symmetric);
        assert_eq!(transform(&w, &u).unwrap(), u);

        let w = params(&[1.0, 2.0], diag(&[2.0, 3.0]), FactorSpace::LowerTriangular);
        let z = transform(&w, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(z, DVector::from_vec(vec![3.0, 5.0]));

        let w = params(&[1.0, 2.0], DMatrix::zeros(2, 2), FactorSpace::Symmetric);
        assert_eq!(transform(&w, &u).unwrap(), DVector::from_vec(vec![1.0, 2.0]));

        assert!(matches!(transform(&w, &DVector::zeros(3)), Err(Error::Argument(_))));
    }

    #[test]
    fn log_q_examples() {
        let w = params(&[0.0], diag(&[1.0]), FactorSpace::LowerTriangular);
        assert_relative_eq!(log_q(&w, &DVector::zeros(1)).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);

        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.5, 1.5]);
        let w = params(&[0.2, -0.4], c.clone(), FactorSpace::LowerTriangular);
        let expected = -(2.0 * PI).ln() - (2.0f64 * 1.5).ln();
        assert_relative_eq!(log_q(&w, &w.mean().clone()).unwrap(), expected, epsilon = 1e-12);

        let w = params(&[0.0, 0.0], diag(&[2.0, 2.0]), FactorSpace::Symmetric);
        let z = DVector::from_vec(vec![2.0, 0.0]);
        let expected = -(2.0 * PI).ln() - 2.0 * 2.0f64.ln() - 0.5;
        assert_relative_eq!(log_q(&w, &z).unwrap(), expected, epsilon = 1e-12);

        let bad = params(&[0.0, 0.0], diag(&[-1.0, 1.0]), FactorSpace::LowerTriangular);
        assert!(matches!(log_q(&bad, &z), Err(Error::Domain(_))));
    }

    #[test]
    fn entropy_examples() {
        let w = VariationalParams::standard(DVector::zeros(3), FactorSpace::Symmetric);
        assert_eq!(entropy_h(&w), 0.0);
        let w = params(&[0.0, 0.0], diag(&[2.0, 2.0]), FactorSpace::Symmetric);
        assert_relative_eq!(entropy_h(&w), -1.386_294_361_119_890_6, epsilon = 1e-12);
        let w = params(&[0.0, 0.0], diag(&[-1.0, 1.0]), FactorSpace::LowerTriangular);
        assert_eq!(entropy_h(&w), f64::INFINITY);
        let w = params(&[0.0, 0.0], diag(&[-1.0, 1.0]), FactorSpace::Symmetric);
        assert_eq!(entropy_h(&w), f64::INFINITY);
    }

    #[test]
    fn grad_h_examples() {
        let w = VariationalParams::standard(DVector::zeros(2), FactorSpace::Symmetric);
        let g = grad_h(&w).unwrap();
        assert_eq!(g.g_m, DVector::zeros(2));
        assert_eq!(g.g_c, -DMatrix::<f64>::identity(2, 2));

        let w = params(&[0.0, 0.0], diag(&[2.0, 4.0]), FactorSpace::LowerTriangular);
        let g = grad_h(&w).unwrap();
        assert_relative_eq!(g.g_c, diag(&[-0.5, -0.25]), epsilon = 1e-15);

        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let w = params(&[0.0, 0.0], c, FactorSpace::LowerTriangular);
        let g = grad_h(&w).unwrap();
        assert_relative_eq!(g.g_c, diag(&[-1.0, -1.0]), epsilon = 1e-15);

        let w = params(&[0.0, 0.0], DMatrix::zeros(2, 2), FactorSpace::Symmetric);
        assert!(matches!(grad_h(&w), Err(Error::Domain(_))));
    }

    #[test]
    fn factor_space_projection_examples() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(project_factor_space(&s, FactorSpace::Symmetric), s);
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        assert_eq!(
            project_factor_space(&x, FactorSpace::Symmetric),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 2.0, 3.0]);
        assert_eq!(
            project_factor_space(&x, FactorSpace::LowerTriangular),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 3.0])
        );
    }

    #[test]
    fn prox_examples() {
        let w = params(&[1.0], diag(&[0.0]), FactorSpace::LowerTriangular);
        let p = prox_entropy(&w, 1.0).unwrap();
        assert_relative_eq!(p.factor()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_eq!(p.mean(), w.mean());

        let c = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 5.0]);
        let w = params(&[0.0, 0.0], c, FactorSpace::LowerTriangular);
        let p = prox_entropy(&w, 2.0).unwrap();
        assert_relative_eq!(p.factor()[(0, 0)], 3.561_552_812_808_830_3, epsilon = 1e-12);
        assert_relative_eq!(p.factor()[(1, 1)], 5.372_281_323_269_014, epsilon = 1e-12);
        assert_eq!(p.factor()[(1, 0)], 4.0);
        assert_eq!(p.factor()[(0, 1)], 0.0);

        let p = prox_entropy(&w, 1e-14).unwrap();
        assert_relative_eq!(p.factor(), w.factor(), epsilon = 1e-12);

        assert!(matches!(prox_entropy(&w, 0.0), Err(Error::Argument(_))));
        assert!(matches!(prox_entropy(&w, -1.0), Err(Error::Argument(_))));
        let sym = VariationalParams::standard(DVector::zeros(2), FactorSpace::Symmetric);
        assert!(prox_entropy(&sym, 1.0).is_err());
    }

    #[test]
    fn prox_of_large_negative_diagonal_stays_positive() {
        let w = params(&[0.0], diag(&[-1e9]), FactorSpace::LowerTriangular);
        let p = prox_entropy(&w, 1e-3).unwrap();
        let x = p.factor()[(0, 0)];
        assert!(x > 0.0);
        // optimality: (c - x)/γ = -1/x
        assert_relative_eq!((-1e9 - x) / 1e-3, -1.0 / x, max_relative = 1e-10);
    }

    #[test]
    fn projection_examples() {
        let level = NonDegeneracyLevel::new(1.0).unwrap();
        let w = params(&[1.0, 2.0], diag(&[0.5, 2.0]), FactorSpace::Symmetric);
        let p = project_w_m(&w, level).unwrap();
        assert_relative_eq!(p.factor(), &diag(&[1.0, 2.0]), epsilon = 1e-14);
        assert_eq!(p.mean(), w.mean());

        let w = params(&[0.0, 0.0], diag(&[3.0, 1.5]), FactorSpace::Symmetric);
        assert_eq!(project_w_m(&w, level).unwrap(), w);

        let level = NonDegeneracyLevel::new(4.0).unwrap();
        let w = params(&[0.0, 0.0], diag(&[-3.0, 0.7]), FactorSpace::Symmetric);
        let p = project_w_m(&w, level).unwrap();
        assert_relative_eq!(p.factor(), &diag(&[0.5, 0.7]), epsilon = 1e-14);

        let tri = VariationalParams::standard(DVector::zeros(2), FactorSpace::LowerTriangular);
        assert!(project_w_m(&tri, level).is_err());
        assert!(NonDegeneracyLevel::new(0.0).is_err());
    }

    #[test]
    fn kl_examples() {
        let w = params(&[0.3, -1.0], DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.2, 0.7]), FactorSpace::LowerTriangular);
        assert_relative_eq!(kl_gaussian(&w, &w).unwrap(), 0.0, epsilon = 1e-14);

        let w = params(&[1.0], diag(&[1.0]), FactorSpace::Symmetric);
        let ws = params(&[0.0], diag(&[1.0]), FactorSpace::Symmetric);
        assert_relative_eq!(kl_gaussian(&w, &ws).unwrap(), 0.5, epsilon = 1e-15);

        let w = params(&[0.0, 0.0], diag(&[2.0, 2.0]), FactorSpace::Symmetric);
        let ws = VariationalParams::standard(DVector::zeros(2), FactorSpace::Symmetric);
        assert_relative_eq!(kl_gaussian(&w, &ws).unwrap(), 3.0 - 2.0 * 2.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(kl_gaussian(&w, &ws).unwrap(), 1.613_705_638_880_109_4, epsilon = 1e-12);

        let singular = params(&[0.0, 0.0], DMatrix::zeros(2, 2), FactorSpace::Symmetric);
        assert!(matches!(kl_gaussian(&singular, &ws), Err(Error::Domain(_))));
    }

    #[test]
    fn kl_is_representation_independent() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let mean = DVector::from_vec(vec![0.5, -0.5]);
        let tri = VariationalParams::from_covariance(mean.clone(), &cov, FactorSpace::LowerTriangular).unwrap();
        let sym = VariationalParams::from_covariance(mean, &cov, FactorSpace::Symmetric).unwrap();
        let other = VariationalParams::standard(DVector::zeros(2), FactorSpace::Symmetric);
        assert_relative_eq!(
            kl_gaussian(&tri, &other).unwrap(),
            kl_gaussian(&sym, &other).unwrap(),
            epsilon = 1e-12
        );
        assert_relative_eq!(kl_gaussian(&tri, &sym).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_q_integrates_to_one_in_two_dimensions() {
        let c = DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.3, 0.5]);
        let w = params(&[0.4, -0.2], c, FactorSpace::LowerTriangular);
        // midpoint rule on [-6, 6]² around the mean
        let n = 400;
        let half = 6.0;
        let h = 2.0 * half / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let z = DVector::from_vec(vec![
                    w.mean()[0] - half + (i as f64 + 0.5) * h,
                    w.mean()[1] - half + (j as f64 + 0.5) * h,
                ]);
                total += log_q(&w, &z).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn log_q_integrates_to_one_in_one_dimension() {
        let w = params(&[1.5], diag(&[0.7]), FactorSpace::Symmetric);
        let n = 4000;
        let (lo, hi) = (-8.0, 11.0);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|i| log_q(&w, &DVector::from_vec(vec![lo + (i as f64 + 0.5) * h])).unwrap().exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn w_m_membership() {
        let level = NonDegeneracyLevel::new(1.0).unwrap();
        let w = params(&[0.0, 0.0], diag(&[1.0, 2.0]), FactorSpace::Symmetric);
        assert!(w.in_w_m(level, 0.0));
        let w = params(&[0.0, 0.0], diag(&[0.9, 2.0]), FactorSpace::Symmetric);
        assert!(!w.in_w_m(level, 1e-12));
        let w = params(&[0.0, 0.0], diag(&[2.0, 2.0]), FactorSpace::LowerTriangular);
        assert!(w.in_w_m(level, 0.0));
    }

    #[test]
    fn construction_checks_subspace() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(VariationalParams::new(DVector::zeros(2), x.clone(), FactorSpace::LowerTriangular).is_err());
        assert!(VariationalParams::new(DVector::zeros(2), x.clone(), FactorSpace::Symmetric).is_err());
        assert!(VariationalParams::new(DVector::zeros(3), x.clone(), FactorSpace::Symmetric).is_err());
        let p = VariationalParams::new_projected(DVector::zeros(2), x, FactorSpace::Symmetric).unwrap();
        assert!(FactorSpace::Symmetric.contains(p.factor()));
    }
}
