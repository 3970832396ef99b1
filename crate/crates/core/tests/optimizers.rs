use proptest::prelude::*;

use zomuon_core::estimators::DiffScheme;
use zomuon_core::linalg::{
    leading_left_singular_vectors, msign_svd, sample_projection, singular_values, Matrix,
    DEFAULT_RANK_TOL,
};
use zomuon_core::objectives::{make_mlp, FnObjective, Objective};
use zomuon_core::optimizers::{
    run, step, step_fo_lowrank_muon, step_fo_muon, step_lozo, step_mezo, step_subspace_mezo,
    step_zo_muon, MsignBackend, OptimizerConfig, OptimizerKind, OptimizerState, ProjectionStrategy,
};
use zomuon_core::params::ParamSpace;
use zomuon_core::rng::{derive_seed, gaussian_matrix, stream};

fn quad(m: usize, n: usize, seed: u64) -> FnObjective {
    let x0 = ParamSpace::single(gaussian_matrix(m, n, seed));
    let target = ParamSpace::single(gaussian_matrix(m, n, seed.wrapping_add(1)));
    FnObjective::isotropic_quadratic(x0, target)
}

fn scaled_quad(m: usize, n: usize, seed: u64, c: f64) -> FnObjective {
    let x0 = ParamSpace::single(gaussian_matrix(m, n, seed));
    let target = gaussian_matrix(m, n, seed.wrapping_add(1));
    FnObjective::new("scaled-quadratic", x0, move |x| {
        let d = x.value(0).sub(&target);
        0.5 * c * d.dot(&d)
    })
}

#[test]
fn mezo_step_usually_decreases_half_norm() {
    let x0 = ParamSpace::single(gaussian_matrix(8, 6, 5));
    let f = FnObjective::isotropic_quadratic(x0.clone(), x0.zeros_like());
    let cfg = OptimizerConfig::defaults(OptimizerKind::Mezo).learning_rate(1e-3);
    let f0 = f.loss(&x0);
    let decreased = (0..100u64)
        .filter(|&seed| {
            let mut x = x0.clone();
            let mut state = OptimizerState::new(OptimizerKind::Mezo, &cfg, &x, seed).unwrap();
            step_mezo(&f, &mut x, &cfg, &mut state).unwrap();
            f.loss(&x) < f0
        })
        .count();
    assert!(decreased >= 60, "{decreased}/100 seeds decreased");
    assert_eq!(f.query_count(), 200);
}

#[test]
fn subspace_mezo_update_stays_in_projection_span() {
    let f = quad(12, 7, 3);
    let mut x = f.initial_point();
    let cfg = OptimizerConfig::defaults(OptimizerKind::SubspaceMezo)
        .rank(3)
        .n_queries(2);
    let mut state = OptimizerState::new(OptimizerKind::SubspaceMezo, &cfg, &x, 8).unwrap();
    for _ in 0..5 {
        let out = step_subspace_mezo(&f, &mut x, &cfg, &mut state).unwrap();
        let p = state.projections[0].as_ref().unwrap();
        assert!(p.complement_residual(out.update.value(0)).max_abs() < 1e-10);
        assert_eq!(out.queries_used, 3);
    }
}

#[test]
fn lozo_update_has_rank_at_most_r() {
    let f = quad(10, 9, 2);
    let mut x = f.initial_point();
    let cfg = OptimizerConfig::defaults(OptimizerKind::Lozo).rank(2);
    let mut state = OptimizerState::new(OptimizerKind::Lozo, &cfg, &x, 1).unwrap();
    let out = step_lozo(&f, &mut x, &cfg, &mut state).unwrap();
    let sv = singular_values(out.update.value(0)).unwrap();
    assert!(sv[2] <= 1e-10 * sv[0], "{sv:?}");
    assert_eq!(out.queries_used, 2);
}

#[test]
fn zo_muon_single_query_direction_is_signed_msign_of_the_draw() {
    let (m, n, r, root) = (9, 6, 3, 17u64);
    let cfg = OptimizerConfig::defaults(OptimizerKind::ZoMuon)
        .rank(r)
        .n_queries(1)
        .learning_rate(0.1);
    let mut directions = Vec::new();
    for mu in [1e-3, 1e-5] {
        let f = quad(m, n, 4);
        let mut x = f.initial_point();
        let cfg = cfg.clone().mu(mu);
        let mut state = OptimizerState::new(OptimizerKind::ZoMuon, &cfg, &x, root).unwrap();
        let p = state.projections[0].clone().unwrap();
        let out = step_zo_muon(&f, &mut x, &cfg, &mut state).unwrap();
        let psi = gaussian_matrix(
            r,
            n,
            derive_seed(derive_seed(root, &[stream::PERTURBATION, 0]), &[0, 0]),
        );
        let s = out.estimate.coefficients[0];
        let expected = p
            .matrix()
            .matmul(&msign_svd(&psi, DEFAULT_RANK_TOL).unwrap())
            .scaled(-0.1 * s.signum());
        assert!(out.update.value(0).max_abs_diff(&expected) < 1e-10);
        directions.push(out.update);
    }
    assert!(directions[0].max_abs_diff(&directions[1]) < 1e-10);
}

#[test]
fn zo_muon_step_length_is_eta_sqrt_k_and_scale_free() {
    let (m, n, r) = (16, 10, 4);
    let cfg = OptimizerConfig::defaults(OptimizerKind::ZoMuon)
        .rank(r)
        .learning_rate(0.05);
    let mut updates = Vec::new();
    for c in [1.0, 1e3, 1e-3] {
        let f = scaled_quad(m, n, 6, c);
        let mut x = f.initial_point();
        let mut state = OptimizerState::new(OptimizerKind::ZoMuon, &cfg, &x, 21).unwrap();
        let out = step_zo_muon(&f, &mut x, &cfg, &mut state).unwrap();
        let k = singular_values(out.estimate.reduced[0].as_ref().unwrap())
            .unwrap()
            .iter()
            .filter(|s| **s > 1e-7)
            .count();
        assert_eq!(k, r);
        let norm = out.update.frobenius_norm();
        assert!(
            (norm - 0.05 * (k as f64).sqrt()).abs() < 1e-10,
            "norm {norm}"
        );
        updates.push(out.update);
    }
    assert!(updates[0].max_abs_diff(&updates[1]) < 1e-8);
    assert!(updates[0].max_abs_diff(&updates[2]) < 1e-8);
}

#[test]
fn zo_muon_matches_mezo_on_vector_only_parameters() {
    let x0 = ParamSpace::new()
        .with_vector("a", gaussian_matrix(7, 1, 1))
        .with_vector("b", gaussian_matrix(3, 1, 2));
    let f = FnObjective::isotropic_quadratic(x0.clone(), x0.zeros_like());
    let muon = OptimizerConfig::defaults(OptimizerKind::ZoMuon)
        .learning_rate(1e-2)
        .n_queries(4)
        .total_steps(30);
    let mezo = OptimizerConfig::defaults(OptimizerKind::Mezo)
        .learning_rate(1e-2)
        .n_queries(4)
        .scheme(DiffScheme::Forward)
        .total_steps(30);
    let a = run(&f, &x0, &muon, OptimizerKind::ZoMuon, 5, 1).unwrap();
    let b = run(&f, &x0, &mezo, OptimizerKind::Mezo, 5, 1).unwrap();
    assert_eq!(a.trace.without_timing(), b.trace.without_timing());
    assert_eq!(a.params, b.params);
}

#[test]
fn fo_lowrank_muon_with_gradient_basis_equals_fo_muon() {
    let (m, n, k) = (12, 8, 3);
    let u = gaussian_matrix(m, k, 1);
    let v = gaussian_matrix(k, n, 2);
    let c = ParamSpace::single(u.matmul(&v));
    let x0 = ParamSpace::single(Matrix::zeros(m, n));
    let f = FnObjective::linear(x0.clone(), c.clone());
    let p = leading_left_singular_vectors(c.value(0), k).unwrap();
    let mut a = x0.clone();
    let mut b = x0.clone();
    step_fo_muon(&f, &mut a, 0.3, MsignBackend::Svd).unwrap();
    step_fo_lowrank_muon(&f, &mut b, &[Some(&p)], 0.3).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-8);
}

#[test]
fn sketching_falls_back_to_random_draw_while_momentum_is_zero() {
    let f = quad(10, 6, 1);
    let x = f.initial_point();
    let random = OptimizerConfig::defaults(OptimizerKind::ZoMuon)
        .rank(2)
        .resample_interval(3);
    let sketch = random.clone().strategy(ProjectionStrategy::Sketching);
    let a = OptimizerState::new(OptimizerKind::ZoMuon, &random, &x, 4).unwrap();
    let b = OptimizerState::new(OptimizerKind::ZoMuon, &sketch, &x, 4).unwrap();
    assert_eq!(a.projections, b.projections);

    let mut xa = x.clone();
    let mut xb = x.clone();
    let (mut a, mut b) = (a, b);
    for _ in 0..4 {
        step_zo_muon(&f, &mut xa, &random, &mut a).unwrap();
        step_zo_muon(&f, &mut xb, &sketch, &mut b).unwrap();
    }
    let pb = b.projections[0].as_ref().unwrap();
    assert_eq!(pb.born_at_step, 3);
    assert!(pb.orthonormality_defect() < 1e-10);
    assert_ne!(a.projections, b.projections);
}

#[test]
fn mlp_zo_muon_step_costs_nq_plus_one_queries() {
    let f = make_mlp(&[8, 16, 4], 64, 3).unwrap();
    let mut x = f.initial_point();
    let cfg = OptimizerConfig::defaults(OptimizerKind::ZoMuon).n_queries(4);
    let mut state = OptimizerState::new(OptimizerKind::ZoMuon, &cfg, &x, 0).unwrap();
    let before = f.query_count();
    step_zo_muon(&f, &mut x, &cfg, &mut state).unwrap();
    assert_eq!(f.query_count() - before, 5);
}

#[test]
fn every_kind_leaves_constant_objective_unchanged() {
    let x0 = ParamSpace::new()
        .with_matrix("w", gaussian_matrix(6, 5, 1))
        .with_vector("b", gaussian_matrix(6, 1, 2));
    let f = FnObjective::constant(x0.clone(), 3.5);
    for kind in OptimizerKind::ALL {
        let cfg = OptimizerConfig::defaults(kind).rank(2).total_steps(7);
        let out = run(&f, &x0, &cfg, kind, 1, 2).unwrap();
        assert_eq!(out.params, x0, "{kind}");
        assert!(out.trace.losses().iter().all(|l| *l == 3.5));
    }
}

#[test]
fn mezo_budget_is_two_queries_per_step() {
    let f = quad(5, 4, 9);
    let cfg = OptimizerConfig::defaults(OptimizerKind::Mezo).total_steps(50);
    let out = run(&f, &f.initial_point(), &cfg, OptimizerKind::Mezo, 3, 10).unwrap();
    assert_eq!(out.trace.last().unwrap().queries, 100);
    assert_eq!(f.query_count(), 100);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn projections_change_exactly_on_schedule(v in prop::sample::select(vec![1u64, 3, 100]), seed in any::<u64>(), sketching in any::<bool>()) {
        let f = quad(6, 5, 2);
        let mut x = f.initial_point();
        let mut cfg = OptimizerConfig::defaults(OptimizerKind::ZoMuon).rank(2).resample_interval(v).learning_rate(1e-3);
        if sketching {
            cfg = cfg.strategy(ProjectionStrategy::Sketching);
        }
        let mut state = OptimizerState::new(OptimizerKind::ZoMuon, &cfg, &x, seed).unwrap();
        let mut previous = state.projections[0].clone().unwrap();
        for t in 0..220u64 {
            step(OptimizerKind::ZoMuon, &f, &mut x, &cfg, &mut state).unwrap();
            let current = state.projections[0].clone().unwrap();
            prop_assert_eq!(current.born_at_step, t - t % v);
            if OptimizerState::resample_due_at(t, v) {
                prop_assert!(current.matrix() != previous.matrix());
            } else {
                prop_assert_eq!(&current, &previous);
            }
            prop_assert!(current.orthonormality_defect() < 1e-10);
            previous = current;
        }
    }

    #[test]
    fn projection_rank_is_clamped_to_block(m in 1usize..7, n in 1usize..7, r in 1usize..10) {
        let f = quad(m, n, 1);
        let cfg = OptimizerConfig::defaults(OptimizerKind::SubspaceMezo).rank(r);
        let state = OptimizerState::new(OptimizerKind::SubspaceMezo, &cfg, &f.initial_point(), 0).unwrap();
        prop_assert_eq!(state.projections[0].as_ref().unwrap().rank(), r.min(m).min(n));
    }

    #[test]
    fn runs_replay_from_seed(kind in prop::sample::select(OptimizerKind::ALL.to_vec()), seed in any::<u64>()) {
        let f = quad(6, 4, 3);
        let cfg = OptimizerConfig::defaults(kind).rank(2).total_steps(15);
        let a = run(&f, &f.initial_point(), &cfg, kind, seed, 4).unwrap();
        let b = run(&f, &f.initial_point(), &cfg, kind, seed, 4).unwrap();
        prop_assert_eq!(a.trace.without_timing(), b.trace.without_timing());
        prop_assert_eq!(a.params, b.params);
    }

    #[test]
    fn projection_sampling_is_orthonormal(m in 1usize..40, r in 1usize..40, seed in any::<u64>()) {
        let r = r.min(m);
        let p = sample_projection(m, r, seed).unwrap();
        prop_assert!(p.orthonormality_defect() <= 1e-10);
    }
}
