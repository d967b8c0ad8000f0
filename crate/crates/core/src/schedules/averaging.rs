use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which averaging rule to use.
///
/// Both assign weight `∝ θ^{t+1}` to successive iterates; they differ in `θ`
/// and in the index range:
///
/// * `Prox`: `θ = 1/(1 + 2aγ²)`, summing `θ^{t+1} w^t` over `t = 1..T`.
/// * `Proj`: `θ = 1/(1 + aγ²)`, summing `θ^{t+1} w^{t+1}` over `t = 0..T−1`.
///
/// Either way the weights cover `w^1, …, w^T`; for `Proj` the weight on
/// `w^s` is `θ^s`, for `Prox` it is `θ^{s+1}` — identical once normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingSetting {
    Prox,
    Proj,
}

impl AveragingSetting {
    pub fn theta(&self, a: f64, gamma: f64) -> f64 {
        match self {
            AveragingSetting::Prox => 1.0 / (1.0 + 2.0 * a * gamma * gamma),
            AveragingSetting::Proj => 1.0 / (1.0 + a * gamma * gamma),
        }
    }

    /// Human-readable index convention, stored with run outputs.
    pub fn index_convention(&self) -> &'static str {
        match self {
            AveragingSetting::Prox => "weights theta^(t+1) on w^t for t = 1..T",
            AveragingSetting::Proj => "weights theta^(t+1) on w^(t+1) for t = 0..T-1",
        }
    }
}

/// Normalized weights `∝ θ^k` for `k = 1..=n`, computed relative to the first
/// term so tiny `θ` does not underflow.
pub fn geometric_weights(theta: f64, n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n);
    let mut cur = 1.0;
    for _ in 0..n {
        w.push(cur);
        cur *= theta;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Normalized averaging weights over `w^1, …, w^T` (entry `i` is for `w^{i+1}`).
pub fn averaging_weights(setting: AveragingSetting, a: f64, gamma: f64, iterations: usize) -> Result<Vec<f64>> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::arg(format!("a must be nonnegative, got {a}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::arg(format!("gamma must be positive, got {gamma}")));
    }
    if iterations == 0 {
        return Err(Error::arg("averaging needs at least one iteration"));
    }
    Ok(geometric_weights(setting.theta(a, gamma), iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_a_gives_uniform_weights() {
        let w = averaging_weights(AveragingSetting::Prox, 0.0, 0.3, 5).unwrap();
        assert!(w.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn half_theta_three_terms() {
        let w = geometric_weights(0.5, 3);
        assert_relative_eq!(w[0], 4.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(w[1], 2.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(w[2], 1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn theta_per_setting() {
        // θ = 1/(1 + 2aγ²) = 0.5 when a = 1/2, γ = 1.
        assert_eq!(AveragingSetting::Prox.theta(0.5, 1.0), 0.5);
        assert_eq!(AveragingSetting::Proj.theta(1.0, 1.0), 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(averaging_weights(AveragingSetting::Proj, -1.0, 0.1, 3).is_err());
        assert!(averaging_weights(AveragingSetting::Proj, 1.0, 0.0, 3).is_err());
        assert!(averaging_weights(AveragingSetting::Proj, 1.0, 0.1, 0).is_err());
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(a in 0.0f64..1e4, gamma in 1e-4f64..10.0, t in 1usize..3000) {
            for s in [AveragingSetting::Prox, AveragingSetting::Proj] {
                let w = averaging_weights(s, a, gamma, t).unwrap();
                prop_assert_eq!(w.len(), t);
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(w.iter().all(|x| *x >= 0.0));
            }
        }
    }
}
