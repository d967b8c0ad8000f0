use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::{mc_scalar, McScalar};
use crate::family::{entropy_h, kl_gaussian, VariationalParams};
use crate::rng::RngStream;
use crate::targets::TargetModel;

/// `f(w) − f(w_ref)` for the negative ELBO `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Monte-Carlo estimate of the free-energy difference (common random
    /// numbers for both points) plus the exact entropy difference.
    pub mc: McScalar,
    /// Closed form `KL(q_w ‖ q_{w*})`, available when the reference is exact.
    pub exact: Option<f64>,
    /// True when `w_ref` is only an approximate optimum, so the gap is relative to it.
    pub relative: bool,
}

impl GapEstimate {
    /// The exact gap when available, else the Monte-Carlo one.
    pub fn value(&self) -> f64 {
        self.exact.unwrap_or(self.mc.mean)
    }
}

/// Estimate `f(w) − f(w_ref)`.
///
/// When `reference_exact` holds the reference is the analytic optimum of a
/// Gaussian posterior and the gap also has the closed form `KL(q_w ‖ q_{w_ref})`.
pub fn elbo_gap(
    w: &VariationalParams,
    model: &TargetModel,
    reference: &VariationalParams,
    reference_exact: bool,
    n_samples: usize,
    stream: &RngStream,
) -> Result<GapEstimate> {
    // entropy terms first: these fail on a singular factor
    w.factorize()?;
    reference.factorize()?;
    let dh = entropy_h(w) - entropy_h(reference);
    let dl = mc_scalar(w.dim(), n_samples, stream, |u| {
        let z = w.factor() * u + w.mean();
        let z_ref = reference.factor() * u + reference.mean();
        Ok(model.log_density(&z_ref) - model.log_density(&z))
    })?;
    let exact = if reference_exact {
        Some(kl_gaussian(w, reference)?)
    } else {
        None
    };
    Ok(GapEstimate {
        mc: McScalar {
            mean: dl.mean + dh,
            ..dl
        },
        exact,
        relative: !reference_exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::FactorSpace;
    use crate::targets::gaussian_target;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn zero_at_the_optimum() {
        let t = gaussian_target(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let w = VariationalParams::standard(DVector::zeros(2), FactorSpace::Symmetric);
        let g = elbo_gap(&w, &t, &w, true, 100, &RngStream::new(0)).unwrap();
        assert_eq!(g.exact, Some(0.0));
        assert_eq!(g.mc.mean, 0.0);
    }

    #[test]
    fn unit_mean_shift_in_one_dimension() {
        let t = gaussian_target(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let w_star = VariationalParams::standard(DVector::zeros(1), FactorSpace::LowerTriangular);
        let w = VariationalParams::standard(DVector::from_vec(vec![1.0]), FactorSpace::LowerTriangular);
        let g = elbo_gap(&w, &t, &w_star, true, 100_000, &RngStream::new(1)).unwrap();
        assert!((g.exact.unwrap() - 0.5).abs() < 1e-15);
        assert!((g.mc.mean - 0.5).abs() < 5.0 * g.mc.std_err.max(1e-12));
        assert!(!g.relative);
    }

    #[test]
    fn monte_carlo_matches_closed_form_for_a_correlated_target() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let t = gaussian_target(DVector::from_vec(vec![1.0, 0.0]), cov.clone()).unwrap();
        let w_star = VariationalParams::from_covariance(DVector::from_vec(vec![1.0, 0.0]), &cov, FactorSpace::Symmetric).unwrap();
        let w = VariationalParams::new(
            DVector::from_vec(vec![0.0, 0.5]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.7]),
            FactorSpace::Symmetric,
        )
        .unwrap();
        let g = elbo_gap(&w, &t, &w_star, true, 200_000, &RngStream::new(2)).unwrap();
        assert!((g.mc.mean - g.exact.unwrap()).abs() < 5.0 * g.mc.std_err, "{g:?}");
    }

    #[test]
    fn singular_factor_is_rejected() {
        let t = gaussian_target(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let w_star = VariationalParams::standard(DVector::zeros(1), FactorSpace::Symmetric);
        let w = VariationalParams::new(DVector::zeros(1), DMatrix::zeros(1, 1), FactorSpace::Symmetric).unwrap();
        assert!(elbo_gap(&w, &t, &w_star, true, 10, &RngStream::new(0)).is_err());
    }
}
