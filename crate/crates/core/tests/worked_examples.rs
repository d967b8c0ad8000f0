//! Small worked examples with hand-computed values, through the public API.

use std::f64::consts::{LN_2, PI};

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use provi::estimators::{draw_estimate, mc_expected_sq_norm, EstimatorKind};
use provi::family::{
    entropy_h, grad_h, kl_gaussian, log_q, project_factor_space, project_w_m, prox_entropy, transform, FactorSpace,
    NonDegeneracyLevel, VariationalParams,
};
use provi::optimizers::{run_optimizer, weighted_average, Algorithm, Monitor, OptimizerSpec};
use provi::rng::{standard_normal, RngStream};
use provi::schedules::{
    constant_stepsize_for_t, geometric_weights, quad_bound, rate_envelope, BoundInputs, ConvexSetting,
    EnvelopeConstants, StepSchedule, Theorem,
};
use provi::targets::{
    gaussian_target, hierarchical_logistic_target, linear_regression_target, logistic_regression_target, GroupData,
};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn m(rows: usize, x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, x.len() / rows, x)
}

fn params(mean: &[f64], factor: DMatrix<f64>, space: FactorSpace) -> VariationalParams {
    VariationalParams::new(v(mean), factor, space).unwrap()
}

fn standard_gaussian(d: usize) -> provi::targets::TargetModel {
    gaussian_target(DVector::zeros(d), DMatrix::identity(d, d)).unwrap()
}

#[test]
fn transform_by_hand() {
    let w = params(&[1.0, 2.0], m(2, &[2.0, 0.0, 0.0, 3.0]), FactorSpace::LowerTriangular);
    assert_eq!(transform(&w, &v(&[1.0, 1.0])).unwrap(), v(&[3.0, 5.0]));
}

#[test]
fn log_q_of_standard_normal_at_zero() {
    let w = params(&[0.0], m(1, &[1.0]), FactorSpace::LowerTriangular);
    assert_relative_eq!(log_q(&w, &v(&[0.0])).unwrap(), -0.5 * (2.0 * PI).ln(), epsilon = 1e-14);
    assert_relative_eq!(log_q(&w, &v(&[0.0])).unwrap(), -0.918938533204672, epsilon = 1e-12);
}

#[test]
fn log_q_of_scaled_normal() {
    // N(0, 4I) at (2, 0): −log(2π) − ½ log det(4I) − ½·(4/4)
    let w = params(&[0.0, 0.0], m(2, &[2.0, 0.0, 0.0, 2.0]), FactorSpace::Symmetric);
    let want = -(2.0 * PI).ln() - 2.0 * LN_2 - 0.5;
    assert_relative_eq!(log_q(&w, &v(&[2.0, 0.0])).unwrap(), want, epsilon = 1e-14);
}

#[test]
fn entropy_of_diagonal_factor() {
    let w = params(&[0.0, 0.0], m(2, &[2.0, 0.0, 0.0, 2.0]), FactorSpace::LowerTriangular);
    assert_relative_eq!(entropy_h(&w), -2.0 * LN_2, epsilon = 1e-15);
    assert_relative_eq!(entropy_h(&w), -1.386294361, epsilon = 1e-9);
}

#[test]
fn entropy_gradient_of_diagonal_factor() {
    let w = params(&[0.0, 0.0], m(2, &[2.0, 0.0, 0.0, 4.0]), FactorSpace::LowerTriangular);
    let g = grad_h(&w).unwrap();
    assert_eq!(g.g_m, v(&[0.0, 0.0]));
    assert_relative_eq!(g.g_c, m(2, &[-0.5, 0.0, 0.0, -0.25]), epsilon = 1e-15);
}

#[test]
fn entropy_gradient_drops_the_upper_triangle() {
    // C⁻ᵀ = [[1, −1], [0, 1]]; −C⁻ᵀ restricted to the lower triangle.
    let w = params(&[0.0, 0.0], m(2, &[1.0, 0.0, 1.0, 1.0]), FactorSpace::LowerTriangular);
    let g = grad_h(&w).unwrap();
    assert_relative_eq!(g.g_c, m(2, &[-1.0, 0.0, 0.0, -1.0]), epsilon = 1e-15);
}

#[test]
fn symmetric_projection_by_hand() {
    let x = m(2, &[0.0, 2.0, 0.0, 0.0]);
    assert_eq!(project_factor_space(&x, FactorSpace::Symmetric), m(2, &[0.0, 1.0, 1.0, 0.0]));
}

#[test]
fn prox_from_zero_diagonal() {
    let w = params(&[0.0], m(1, &[0.0]), FactorSpace::LowerTriangular);
    assert_relative_eq!(prox_entropy(&w, 1.0).unwrap().factor()[(0, 0)], 1.0, epsilon = 1e-15);
}

#[test]
fn prox_by_hand() {
    let w = params(&[0.0, 0.0], m(2, &[3.0, 0.0, 4.0, 5.0]), FactorSpace::LowerTriangular);
    let c = prox_entropy(&w, 2.0).unwrap().factor().clone();
    assert_relative_eq!(c[(0, 0)], 0.5 * (3.0 + 17f64.sqrt()), epsilon = 1e-14);
    assert_relative_eq!(c[(1, 1)], 0.5 * (5.0 + 33f64.sqrt()), epsilon = 1e-14);
    assert_relative_eq!(c[(0, 0)], 3.561553, epsilon = 1e-6);
    assert_relative_eq!(c[(1, 1)], 5.372281, epsilon = 1e-6);
    assert_eq!(c[(1, 0)], 4.0);
}

#[test]
fn eigenvalue_clamp_by_hand() {
    let w = params(&[0.0, 0.0], m(2, &[0.5, 0.0, 0.0, 2.0]), FactorSpace::Symmetric);
    let p = project_w_m(&w, NonDegeneracyLevel::new(1.0).unwrap()).unwrap();
    assert_relative_eq!(p.factor().clone(), m(2, &[1.0, 0.0, 0.0, 2.0]), epsilon = 1e-14);

    let w = params(&[0.0, 0.0], m(2, &[-3.0, 0.0, 0.0, 0.7]), FactorSpace::Symmetric);
    let p = project_w_m(&w, NonDegeneracyLevel::new(4.0).unwrap()).unwrap();
    assert_relative_eq!(p.factor().clone(), m(2, &[0.5, 0.0, 0.0, 0.7]), epsilon = 1e-14);

    let w = params(&[0.0, 0.0], m(2, &[0.1, 0.0, 0.0, 2.0]), FactorSpace::Symmetric);
    let p = project_w_m(&w, NonDegeneracyLevel::new(1.0).unwrap()).unwrap();
    assert_relative_eq!(p.factor().clone(), m(2, &[1.0, 0.0, 0.0, 2.0]), epsilon = 1e-14);
}

#[test]
fn kl_examples_by_hand() {
    let w = params(&[1.0], m(1, &[1.0]), FactorSpace::LowerTriangular);
    let w_star = params(&[0.0], m(1, &[1.0]), FactorSpace::LowerTriangular);
    assert_relative_eq!(kl_gaussian(&w, &w_star).unwrap(), 0.5, epsilon = 1e-15);

    // ½(0 − 2 log 4 − 2 + tr(4I)) = 3 − 2 log 2
    let w = params(&[0.3, -0.2], m(2, &[2.0, 0.0, 0.0, 2.0]), FactorSpace::Symmetric);
    let w_star = params(&[0.3, -0.2], DMatrix::identity(2, 2), FactorSpace::Symmetric);
    assert_relative_eq!(kl_gaussian(&w, &w_star).unwrap(), 3.0 - 2.0 * LN_2, epsilon = 1e-14);
    assert_relative_eq!(kl_gaussian(&w, &w_star).unwrap(), 1.613706, epsilon = 1e-6);
}

#[test]
fn gaussian_target_constants_and_optimum() {
    let t = gaussian_target(v(&[0.0, 0.0]), m(2, &[4.0, 0.0, 0.0, 1.0])).unwrap();
    assert_relative_eq!(t.constants().smoothness.unwrap(), 1.0, epsilon = 1e-14);
    assert_relative_eq!(t.constants().strong_concavity.unwrap(), 0.25, epsilon = 1e-14);
    let w_star = t.reference().unwrap().params(FactorSpace::Symmetric).unwrap();
    assert_relative_eq!(w_star.factor().clone(), m(2, &[2.0, 0.0, 0.0, 1.0]), epsilon = 1e-12);
}

#[test]
fn scalar_linear_regression_by_hand() {
    // precision 1 + 1 = 2, mean = (1·2)/2 = 1
    let t = linear_regression_target(m(1, &[1.0]), v(&[2.0]), 1.0, m(1, &[1.0])).unwrap();
    assert_relative_eq!(t.constants().map_point.as_ref().unwrap()[0], 1.0, epsilon = 1e-14);
    assert_relative_eq!(t.constants().smoothness.unwrap(), 2.0, epsilon = 1e-14);
    assert_relative_eq!(t.constants().strong_concavity.unwrap(), 2.0, epsilon = 1e-14);
}

#[test]
fn linear_regression_with_identity_prior_uses_singular_values() {
    let a = m(2, &[1.0, 0.0, 2.0, 0.0, 3.0, 1.0]);
    let sigma = 2.0;
    let t = linear_regression_target(a.clone(), v(&[1.0, -1.0, 0.5]), sigma, DMatrix::identity(2, 2)).unwrap();
    let sv = a.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    assert_relative_eq!(t.constants().smoothness.unwrap(), 1.0 + smax * smax / (sigma * sigma), epsilon = 1e-12);
    assert_relative_eq!(t.constants().strong_concavity.unwrap(), 1.0 + smin * smin / (sigma * sigma), epsilon = 1e-12);
    // normal equations
    let h = DMatrix::identity(2, 2) + &a * a.transpose() / (sigma * sigma);
    let want = h.lu().solve(&(&a * v(&[1.0, -1.0, 0.5]) / (sigma * sigma))).unwrap();
    assert_relative_eq!(t.constants().map_point.clone().unwrap(), want, epsilon = 1e-12);
}

#[test]
fn logistic_regression_with_identity_prior() {
    let a = m(2, &[1.0, -1.0, 0.5, 2.0, 0.0, 1.0]);
    let t = logistic_regression_target(a.clone(), v(&[1.0, -1.0, 1.0]), DMatrix::identity(2, 2)).unwrap();
    let smax = a.singular_values().max();
    assert_relative_eq!(t.constants().smoothness.unwrap(), 1.0 + 0.25 * smax * smax, epsilon = 1e-12);
    assert_relative_eq!(t.constants().strong_concavity.unwrap(), 1.0, epsilon = 1e-12);
}

#[test]
fn scalar_logistic_map_by_bisection() {
    // stationarity: −z + σ(−z) = 0, i.e. z = 1/(1 + e^z)
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - 1.0 / (1.0 + mid.exp()) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t = logistic_regression_target(m(1, &[1.0]), v(&[1.0]), m(1, &[1.0])).unwrap();
    let z = t.constants().map_point.as_ref().unwrap()[0];
    assert_relative_eq!(z, lo, epsilon = 1e-10);
    assert_relative_eq!(z, 0.401058, epsilon = 1e-6);
}

#[test]
fn hierarchical_without_observations_is_the_prior_chain() {
    // θ ~ N(0, 1), z ~ N(θ, 1): precision [[2, −1], [−1, 1]], λ_max = (3 + √5)/2
    let empty = GroupData {
        design: DMatrix::zeros(1, 0),
        labels: DVector::zeros(0),
    };
    let t = hierarchical_logistic_target(1, vec![empty], m(1, &[1.0]), m(1, &[1.0])).unwrap();
    assert_relative_eq!(t.constants().smoothness.unwrap(), 0.5 * (3.0 + 5f64.sqrt()), epsilon = 1e-12);
    let h = t.neg_hessian(&v(&[0.3, -0.4])).unwrap();
    assert_relative_eq!(h, m(2, &[2.0, -1.0, -1.0, 1.0]), epsilon = 1e-14);
}

#[test]
fn hierarchical_negative_hessian_is_psd() {
    let stream = RngStream::new(3);
    let groups: Vec<GroupData> = (0..3)
        .map(|i| {
            let mut rng = stream.child(i).substream(0);
            GroupData {
                design: DMatrix::from_fn(2, 4, |_, _| standard_normal(&mut rng, 1)[0]),
                labels: v(&[1.0, -1.0, -1.0, 1.0]),
            }
        })
        .collect();
    let t = hierarchical_logistic_target(2, groups, DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.5).unwrap();
    for k in 0..20 {
        let z = standard_normal(&mut stream.child(100 + k).substream(0), t.dim()) * 2.0;
        let h = t.neg_hessian(&z).unwrap();
        assert!(h.symmetric_eigenvalues().min() >= -1e-12);
    }
}

#[test]
fn estimator_draws_at_the_standard_point() {
    let t = standard_gaussian(2);
    let w = VariationalParams::standard(DVector::zeros(2), FactorSpace::Symmetric);
    let u = v(&[1.0, 0.0]);
    let e = draw_estimate(EstimatorKind::Energy, &w, &t, &u).unwrap();
    assert_eq!(e.g_m, v(&[1.0, 0.0]));
    assert_eq!(e.g_c, m(2, &[1.0, 0.0, 0.0, 0.0]));

    let s = draw_estimate(EstimatorKind::Stl, &w, &t, &u).unwrap();
    assert_eq!(s.norm_sq(), 0.0);

    let h = draw_estimate(EstimatorKind::Entropy, &w, &t, &u).unwrap();
    assert_eq!(h.g_m, u);
    assert_relative_eq!(h.g_c, m(2, &[0.0, 0.0, 0.0, -1.0]), epsilon = 1e-15);
}

#[test]
fn stl_is_zero_for_every_draw_at_the_standard_point() {
    let t = standard_gaussian(3);
    let w = VariationalParams::standard(DVector::zeros(3), FactorSpace::Symmetric);
    let stream = RngStream::new(8);
    for i in 0..100 {
        let u = standard_normal(&mut stream.substream(i), 3);
        assert_eq!(draw_estimate(EstimatorKind::Stl, &w, &t, &u).unwrap().norm_sq(), 0.0);
    }
}

#[test]
fn energy_second_moment_matches_an_independent_oracle() {
    // E‖u‖² + E‖uuᵀ‖_F² = d + d(d + 2) = 10 for d = 2
    let t = standard_gaussian(2);
    let w = VariationalParams::standard(DVector::zeros(2), FactorSpace::Symmetric);
    let mc = mc_expected_sq_norm(EstimatorKind::Energy, &w, &t, 200_000, &RngStream::new(1)).unwrap();
    assert!((mc.mean - 10.0).abs() <= 5.0 * mc.std_err, "{mc:?}");

    let mut rng = RngStream::new(2).substream(0);
    let n = 200_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let u = standard_normal(&mut rng, 2);
        let s = u.norm_squared();
        let x = s + s * s;
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mc.mean - mean).abs() <= 5.0 * (mc.std_err.powi(2) + se * se).sqrt());
}

#[test]
fn bound_constants_from_the_table() {
    let base = BoundInputs {
        dim: 2,
        smoothness: Some(1.0),
        strong_concavity: Some(1.0),
        dist_sq_to_map: Some(0.0),
        ..BoundInputs::default()
    };
    assert_relative_eq!(quad_bound(EstimatorKind::Energy, &base).unwrap().a, 10.0);

    let stl = quad_bound(
        EstimatorKind::Stl,
        &BoundInputs {
            residual_smoothness: Some(0.0),
            ..base
        },
    )
    .unwrap();
    assert_relative_eq!(stl.a, 40.0);
    assert_eq!(stl.b, 0.0);

    let entropy = quad_bound(
        EstimatorKind::Entropy,
        &BoundInputs {
            entropy_level: Some(1.0),
            ..base
        },
    )
    .unwrap();
    assert_relative_eq!(entropy.a, 20.0);
    assert_relative_eq!(entropy.b, 2.0);
}

#[test]
fn stepsizes_by_hand() {
    let s = StepSchedule::AnytimeProx { mu: 1.0, a: 10.0 };
    assert_relative_eq!(s.stepsize(0).unwrap(), 0.05);
    assert_relative_eq!(constant_stepsize_for_t(ConvexSetting::ProxConvex, 4.0, 100).unwrap(), 0.05);
    assert_relative_eq!(constant_stepsize_for_t(ConvexSetting::ProjConvex, 2.0, 100).unwrap(), 0.1);
    assert!(constant_stepsize_for_t(ConvexSetting::ProxConvex, 4.0, 1).is_err());
}

#[test]
fn geometric_weights_by_hand() {
    let w = geometric_weights(0.5, 3);
    for (got, want) in w.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
        assert_relative_eq!(*got, want, epsilon = 1e-15);
    }
}

#[test]
fn envelopes_by_hand() {
    // a/μ² = 1, T = 4: 16·1·d0/16 + 8/(μ²·4)·(b + M²‖w* − w̄‖²)
    let c = EnvelopeConstants {
        initial_dist_sq: Some(3.0),
        mu: Some(1.0),
        a: Some(1.0),
        b: Some(0.5),
        smoothness: Some(1.0),
        dist_sq_to_map: Some(2.0),
        gamma: None,
    };
    let env = rate_envelope(Theorem::ProxStrongAnytime, &c).unwrap();
    assert_relative_eq!(env.eval(4), 3.0 + 2.0 * 2.5, epsilon = 1e-14);

    let c = EnvelopeConstants {
        initial_dist_sq: Some(2.0),
        mu: Some(1.0),
        a: Some(40.0),
        b: Some(0.0),
        gamma: Some(1.0 / 80.0),
        ..EnvelopeConstants::default()
    };
    let env = rate_envelope(Theorem::GaussianStlGeometric, &c).unwrap();
    for t in [0u64, 1, 10, 500] {
        assert_relative_eq!(env.eval(t), (1.0 - 1.0 / 160.0f64).powi(t as i32) * 2.0, epsilon = 1e-14);
    }
}

#[test]
fn prox_step_from_a_zero_factor_at_the_map_point() {
    // π ≡ 0 when every sample lands on the stationary point, so only the prox acts.
    let t = standard_gaussian(2);
    let w = params(&[0.0, 0.0], DMatrix::zeros(2, 2), FactorSpace::LowerTriangular);
    let gamma = 0.3;
    let g = draw_estimate(EstimatorKind::Energy, &w, &t, &v(&[0.7, -1.2])).unwrap();
    assert_eq!(g.norm_sq(), 0.0);
    let next = prox_entropy(&w.step(gamma, &g), gamma).unwrap();
    assert_relative_eq!(next.factor().clone(), DMatrix::identity(2, 2) * gamma.sqrt(), epsilon = 1e-15);
}

#[test]
fn expected_mean_after_one_prox_step() {
    // m¹ = m − γ(Cu + m), so E[m¹] = 2 − 0.1·2 = 1.8
    let t = standard_gaussian(1);
    let w0 = params(&[2.0], m(1, &[1.0]), FactorSpace::LowerTriangular);
    let n = 4000;
    let draws: Vec<f64> = (0..n)
        .map(|seed| {
            let spec = OptimizerSpec::new(
                Algorithm::ProxSgd,
                EstimatorKind::Energy,
                StepSchedule::Constant { gamma: 0.1 },
                1,
                seed,
            );
            run_optimizer(&w0, &t, &spec, &Monitor::default()).unwrap().last.mean()[0]
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - 1.8).abs() <= 5.0 * (var / n as f64).sqrt(), "{mean}");
}

#[test]
fn proj_step_at_a_gaussian_optimum_with_stl_stays_put() {
    let t = gaussian_target(v(&[1.0, -1.0]), m(2, &[1.0, 0.3, 0.3, 0.8])).unwrap();
    let w_star = t.reference().unwrap().params(FactorSpace::Symmetric).unwrap();
    let level = NonDegeneracyLevel::new(t.constants().smoothness.unwrap()).unwrap();
    let spec = OptimizerSpec::new(Algorithm::ProjSgd, EstimatorKind::Stl, StepSchedule::Constant { gamma: 0.05 }, 1, 4)
        .with_level(level);
    let traj = run_optimizer(&w_star, &t, &spec, &Monitor::default()).unwrap();
    assert!(traj.last.dist_sq(&w_star) <= 1e-28);
}

#[test]
fn two_iterate_blend() {
    let a = params(&[3.0], m(1, &[3.0]), FactorSpace::Symmetric);
    let b = params(&[0.0], m(1, &[6.0]), FactorSpace::Symmetric);
    let avg = weighted_average(&[a, b], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
    assert_relative_eq!(avg.mean()[0], 2.0, epsilon = 1e-15);
    assert_relative_eq!(avg.factor()[(0, 0)], 4.0, epsilon = 1e-15);
}
