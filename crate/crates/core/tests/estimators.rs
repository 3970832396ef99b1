use proptest::prelude::*;

use zomuon_core::estimators::{
    estimate, lge_lozo, rge_full, subspace_rge, BlockPerturbation, DiffScheme, EstimatorConfig,
};
use zomuon_core::linalg::{
    leading_left_singular_vectors, sample_projection, singular_values, Matrix,
};
use zomuon_core::objectives::{make_quadratic, FnObjective, Objective};
use zomuon_core::oracle::{
    loglog_slope, mean_error_curve, mean_estimate, measure_variance, EstimatorSpec,
};
use zomuon_core::params::ParamSpace;
use zomuon_core::rng::{derive_seed, gaussian_matrix};

fn half_norm_sq(x0: ParamSpace) -> FnObjective {
    FnObjective::new("half-norm-sq", x0, |x| 0.5 * x.dot(x)).with_gradient(|x| x.clone())
}

fn rel_err(a: &ParamSpace, b: &ParamSpace) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm()
}

#[test]
fn full_rge_mean_matches_gradient_of_half_norm() {
    let x = ParamSpace::single(Matrix::identity(2));
    let f = half_norm_sq(x.clone());
    let cfg = EstimatorConfig::forward(1e-5, 10_000).unwrap();
    let est = rge_full(&f, &x, &cfg, 2024).unwrap();
    let err = rel_err(&est.grad, &x);
    // the expected error of a 10^4-query average is sqrt(5/10^4) ≈ 2.2%
    assert!(err <= 0.05, "relative error {err}");
    assert_eq!(f.query_count(), 10_001);
}

#[test]
fn subspace_mean_targets_projected_gradient() {
    let (m, n, r) = (16, 16, 4);
    let x = ParamSpace::single(gaussian_matrix(m, n, 1));
    let target = ParamSpace::single(gaussian_matrix(m, n, 2));
    let f = FnObjective::isotropic_quadratic(x.clone(), target.clone());
    let p = sample_projection(m, r, 3).unwrap();
    let g = x.sub(&target);
    let pm = p.matrix();
    let projected = ParamSpace::single(pm.matmul(&pm.tr_matmul(g.value(0))));
    let spec = EstimatorSpec::Subspace {
        cfg: EstimatorConfig::forward(1e-5, 1).unwrap(),
        projections: vec![p.clone()],
    };
    let samples = 10_000;
    let mean = mean_estimate(&spec, &f, &x, samples, 7).unwrap();
    let err = rel_err(&mean, &projected);
    // Each lifted sample has E‖PΨs − PPᵀG‖² = (rn + 1)‖PᵀG‖², so the sample
    // mean's expected relative error is sqrt((rn + 1) / N) ≈ 8.1% here.
    let theory = (((r * n + 1) as f64) / samples as f64).sqrt();
    assert!(err <= 1.5 * theory, "relative error {err}, theory {theory}");
    assert!(p.complement_residual(mean.value(0)).max_abs() < 1e-10);
}

#[test]
fn subspace_mean_converges_at_inverse_sqrt_rate() {
    let (m, n, r) = (12, 6, 3);
    let x = ParamSpace::single(gaussian_matrix(m, n, 11));
    let target = ParamSpace::single(gaussian_matrix(m, n, 12));
    let f = FnObjective::isotropic_quadratic(x.clone(), target.clone());
    let p = sample_projection(m, r, 13).unwrap();
    let pm = p.matrix();
    let projected = ParamSpace::single(pm.matmul(&pm.tr_matmul(x.sub(&target).value(0))));
    let spec = EstimatorSpec::Subspace {
        cfg: EstimatorConfig::forward(1e-5, 1).unwrap(),
        projections: vec![p],
    };
    let curve =
        mean_error_curve(&spec, &f, &x, &projected, &[16, 64, 256, 1024, 4096], 24, 5).unwrap();
    let slope = loglog_slope(&curve);
    assert!(
        (-0.6..=-0.4).contains(&slope),
        "slope {slope}, curve {curve:?}"
    );
}

#[test]
fn variance_drops_by_query_count() {
    let f = make_quadratic(64, 32, 8, 3).unwrap();
    let x = f.initial_point();
    let one = EstimatorSpec::Full {
        cfg: EstimatorConfig::forward(1e-3, 1).unwrap(),
    };
    let four = EstimatorSpec::Full {
        cfg: EstimatorConfig::forward(1e-3, 4).unwrap(),
    };
    let report = measure_variance(&four, &one, &f, &x, 10_000, 9).unwrap();
    assert!((3.2..=4.8).contains(&report.ratio), "{report:?}");
}

#[test]
fn variance_drops_by_m_over_r_in_the_gradient_subspace() {
    let (m, n, r) = (64, 32, 8);
    let f = make_quadratic(m, n, r, 3).unwrap();
    let x = f.initial_point();
    let grad = f.gradient(&x).unwrap();
    let p = leading_left_singular_vectors(grad.value(0), r).unwrap();
    let full = EstimatorSpec::Full {
        cfg: EstimatorConfig::forward(1e-3, 1).unwrap(),
    };
    let sub = EstimatorSpec::Subspace {
        cfg: EstimatorConfig::forward(1e-3, 1).unwrap(),
        projections: vec![p],
    };
    let report = measure_variance(&sub, &full, &f, &x, 10_000, 4).unwrap();
    let target = (m / r) as f64;
    assert!(
        (0.8 * target..=1.2 * target).contains(&report.ratio),
        "{report:?}"
    );
}

#[test]
fn estimates_replay_from_seed() {
    let x = ParamSpace::new()
        .with_matrix("w", gaussian_matrix(5, 4, 1))
        .with_vector("b", gaussian_matrix(5, 1, 2));
    let f = FnObjective::isotropic_quadratic(x.clone(), x.zeros_like());
    let p = sample_projection(5, 2, 3).unwrap();
    let cfg = EstimatorConfig::forward(1e-3, 3).unwrap();
    let a = subspace_rge(&f, &x, &[Some(&p), None], &cfg, 42).unwrap();
    let b = subspace_rge(&f, &x, &[Some(&p), None], &cfg, 42).unwrap();
    let c = subspace_rge(&f, &x, &[Some(&p), None], &cfg, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.grad, c.grad);
    // the first query's subspace factor is Ψ = N(0,1)^{r×n} from (seed, query 0, block 0)
    let psi = gaussian_matrix(2, 4, derive_seed(42, &[0, 0]));
    let xp = {
        let mut y = x.clone();
        y.value_mut(0).axpy(1e-3, &p.matrix().matmul(&psi));
        let noise = gaussian_matrix(5, 1, derive_seed(42, &[0, 1]));
        y.value_mut(1).axpy(1e-3, &noise);
        y
    };
    let s0 = (f.loss(&xp) - f.loss(&x)) / 1e-3;
    assert!((a.coefficients[0] - s0).abs() <= 1e-12 * s0.abs().max(1.0));
}

#[test]
fn lozo_estimate_has_rank_at_most_r() {
    let x = ParamSpace::single(gaussian_matrix(10, 9, 1));
    let f = FnObjective::isotropic_quadratic(x.clone(), x.zeros_like());
    for r in 1..=4 {
        let a = gaussian_matrix(10, r, 2);
        let b = gaussian_matrix(r, 9, 3);
        let est = lge_lozo(&f, &x, 0, &a, &b, 1e-3).unwrap();
        let sv = singular_values(est.grad.value(0)).unwrap();
        assert!(sv[r] / sv[0] <= 1e-10, "r={r}: {sv:?}");
    }
    let k = FnObjective::constant(x.clone(), 4.0);
    let est = lge_lozo(
        &k,
        &x,
        0,
        &gaussian_matrix(10, 2, 4),
        &gaussian_matrix(2, 9, 5),
        1e-3,
    )
    .unwrap();
    assert!(est.grad.value(0).is_zero());
}

#[test]
fn lozo_engine_matches_explicit_factors() {
    // the low-rank perturbation drawn inside the engine is A·B with
    // B = N(0,1)^{r×n} from (seed, query 0, block 0)
    let x = ParamSpace::single(gaussian_matrix(6, 5, 1));
    let f = FnObjective::isotropic_quadratic(x.clone(), x.zeros_like());
    let a = gaussian_matrix(6, 2, 7);
    let cfg = EstimatorConfig::central(1e-3).unwrap();
    let engine = estimate(&f, &x, &[BlockPerturbation::LowRank(&a)], &cfg, 99).unwrap();
    let b = gaussian_matrix(2, 5, derive_seed(99, &[0, 0]));
    let explicit = lge_lozo(&f, &x, 0, &a, &b, 1e-3).unwrap();
    assert_eq!(engine.grad, explicit.grad);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_and_central_query_accounting(nq in 1usize..9, m in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let x = ParamSpace::single(gaussian_matrix(m, n, seed));
        let f = FnObjective::isotropic_quadratic(x.clone(), x.zeros_like());
        let est = rge_full(&f, &x, &EstimatorConfig::forward(1e-3, nq).unwrap(), seed).unwrap();
        prop_assert_eq!(est.queries_used, nq as u64 + 1);
        prop_assert_eq!(f.query_count(), nq as u64 + 1);
        let est = rge_full(&f, &x, &EstimatorConfig::central(1e-3).unwrap(), seed).unwrap();
        prop_assert_eq!(est.queries_used, 2);
        prop_assert_eq!(f.query_count(), nq as u64 + 3);
    }

    #[test]
    fn lifted_estimate_lies_in_projection_span(m in 2usize..10, n in 1usize..8, r in 1usize..4, nq in 1usize..5, seed in any::<u64>()) {
        let r = r.min(m);
        let x = ParamSpace::single(gaussian_matrix(m, n, seed));
        let target = ParamSpace::single(gaussian_matrix(m, n, seed ^ 1));
        let f = FnObjective::isotropic_quadratic(x.clone(), target);
        let p = sample_projection(m, r, seed).unwrap();
        let est = subspace_rge(&f, &x, &[Some(&p)], &EstimatorConfig::forward(1e-3, nq).unwrap(), seed).unwrap();
        prop_assert!(p.complement_residual(est.grad.value(0)).max_abs() <= 1e-10);
        let z = est.reduced[0].as_ref().unwrap();
        prop_assert!(est.grad.value(0).max_abs_diff(&p.matrix().matmul(z)) == 0.0);
        prop_assert_eq!(f.query_count(), nq as u64 + 1);
    }

    #[test]
    fn linear_objective_is_exact_for_any_mu(mu_exp in -6i32..0, seed in any::<u64>()) {
        let mu = 10f64.powi(mu_exp);
        let x = ParamSpace::single(gaussian_matrix(3, 4, seed));
        let c = ParamSpace::single(gaussian_matrix(3, 4, seed.wrapping_add(1)));
        let f = FnObjective::linear(x.clone(), c.clone());
        let est = rge_full(&f, &x, &EstimatorConfig::new(mu, 1, DiffScheme::Central).unwrap(), seed).unwrap();
        let psi = gaussian_matrix(3, 4, derive_seed(seed, &[0, 0]));
        let expected = psi.scaled(c.value(0).dot(&psi));
        let tol = 1e-13 * (1.0 + f.loss(&x).abs()) / mu * psi.max_abs() * 10.0;
        prop_assert!(est.grad.value(0).max_abs_diff(&expected) <= tol);
    }
}
