mod common;

use common::*;
use gfrls::estimator::relative_error;
use gfrls::{EstimatorState, Error, SymMatrix, Trajectory, Vector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn run(
    name: &str,
    seed: u64,
    n: usize,
    p: usize,
    steps: usize,
) -> (Trajectory, Vec<gfrls::Sample>) {
    let (n, p) = valid_dims(name, n, p);
    let mut r = rng(seed);
    let init = init_state(&mut r, n, p);
    let samples = random_samples(&mut r, n, p, steps, !unweighted_only(name));
    let mut strategy = random_strategy(name, &mut r, &init);
    let tr = Trajectory::record(init, strategy.as_mut(), &samples).unwrap();
    (tr, samples)
}

#[test]
fn recursive_estimate_matches_dense_batch_minimizer() {
    for (i, name) in STRATEGIES.iter().enumerate() {
        let (tr, samples) = run(name, 100 + i as u64, 3, 2, 60);
        let init = tr.initial_state();
        let fs: Vec<DMatrix<f64>> = tr.steps.iter().map(|s| s.directive.f.as_matrix().clone()).collect();
        let thetas = tr.thetas();
        let dense = batch_minimizer_dense(init.theta(), init.info().as_matrix(), &samples, &fs, &thetas[..samples.len()]);
        let err = rel_err(&dense, tr.final_state.theta());
        assert!(err <= 1e-8, "{name}: relative error {err}");
    }
}

#[test]
fn information_is_running_sum_of_gains_minus_forgetting() {
    for (i, name) in STRATEGIES.iter().enumerate() {
        let (tr, _) = run(name, 200 + i as u64, 4, 2, 80);
        let mut sum = tr.initial_state().info().as_matrix().clone();
        for s in &tr.steps {
            let gi = s.sample.gamma.as_matrix().clone().try_inverse().unwrap();
            let phi = s.sample.phi.as_matrix();
            sum += phi.transpose() * gi * phi - s.directive.f.as_matrix();
        }
        let target = tr.final_state.info().as_matrix();
        let err = max_abs(&(&sum - target)) / max_abs(target).max(1.0);
        assert!(err <= 1e-10, "{name}: {err}");
    }
}

#[test]
fn error_recursion_in_noiseless_case() {
    let mut r = rng(7);
    let theta = [0.5, -1.0, 2.0];
    let samples = scalar_samples(&mut r, &theta, 50, 0.0);
    let th = DVector::from_column_slice(&theta);
    for name in STRATEGIES.iter().filter(|n| valid_dims(n, 3, 1) == (3, 1)) {
        let init = init_state(&mut r, 3, 1);
        let mut strategy = random_strategy(name, &mut r, &init);
        let tr = Trajectory::record(init, strategy.as_mut(), &samples).unwrap();
        let thetas = tr.thetas();
        for (k, step) in tr.steps.iter().enumerate() {
            let predicted = &step.diagnostics.m_matrix * (&thetas[k] - &th);
            let actual = &thetas[k + 1] - &th;
            assert!(
                (&predicted - &actual).norm() <= 1e-10 * actual.norm().max(1.0),
                "{name} step {k}"
            );
        }
    }
}

#[test]
fn m_matrix_inverse_identity() {
    for (i, name) in STRATEGIES.iter().enumerate() {
        let (tr, _) = run(name, 300 + i as u64, 3, 1, 30);
        for (k, step) in tr.steps.iter().enumerate() {
            let next = tr.state(k + 1).unwrap();
            let p_next = next.info().as_matrix().clone().try_inverse().unwrap();
            let reduced = step.state.info().as_matrix() - step.directive.f.as_matrix();
            let m = &step.diagnostics.m_matrix;
            assert!(max_abs(&(m - p_next * &reduced)) <= 1e-9, "{name} step {k}");
            let m_inv = reduced.try_inverse().unwrap() * next.info().as_matrix();
            let n = m.nrows();
            assert!(max_abs(&(m * m_inv - DMatrix::identity(n, n))) <= 1e-9, "{name} step {k}");
        }
    }
}

#[test]
fn decrement_bound_holds_on_every_well_posed_step() {
    for (i, name) in STRATEGIES.iter().enumerate() {
        let (tr, _) = run(name, 400 + i as u64, 3, 2, 100);
        for (k, step) in tr.steps.iter().enumerate() {
            let d = &step.diagnostics;
            assert!(
                d.delta_v_gap_mineig >= -1e-10 * (1.0 + d.scale),
                "{name} step {k}: gap {}",
                step.diagnostics.delta_v_gap_mineig
            );
        }
    }
}

#[test]
fn ill_posed_forgetting_is_reported_not_clamped() {
    let init = EstimatorState::init(Vector::zeros(2), &spd(DMatrix::identity(2, 2)), 1).unwrap();
    let mut r = rng(1);
    let s = random_sample(&mut r, 2, 1, false);
    let f = SymMatrix::identity(2).scale(1.5);
    match init.step(&s, &f) {
        Err(Error::IllPosedForgetting { step, margin }) => {
            assert_eq!(step, 0);
            assert!((margin + 0.5).abs() < 1e-12);
        }
        other => panic!("expected IllPosedForgetting, got {other:?}"),
    }
}

#[test]
fn initial_state_round_trip() {
    let mut r = rng(9);
    for n in 1..=5 {
        let p0 = random_spd_spectrum(&mut r, n, 0.2, 10.0);
        let st = EstimatorState::init(Vector::zeros(n), &spd(p0.clone()), 1).unwrap();
        let back = st.covariance().unwrap();
        assert!(max_abs(&(back.as_matrix() - &p0)) <= 1e-12 * max_abs(&p0).max(1.0) * 100.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn batch_equivalence(seed in any::<u64>(), which in 0usize..10, n in 1usize..=4, p in 1usize..=2) {
        let name = STRATEGIES[which];
        let (tr, _) = run(name, seed, n, p, 40);
        let batch = tr.batch_replay().unwrap().minimizer().unwrap();
        prop_assert!(relative_error(&batch, tr.final_state.theta()) <= 1e-8);
    }

    #[test]
    fn batch_hessian_equals_next_information(seed in any::<u64>(), which in 0usize..10, n in 1usize..=4) {
        let name = STRATEGIES[which];
        let (tr, _) = run(name, seed, n, 1, 25);
        let acc = tr.batch_replay().unwrap();
        let target = tr.final_state.info().as_matrix();
        let err = max_abs(&(acc.h().as_matrix() - target)) / max_abs(target).max(1.0);
        prop_assert!(err <= 1e-10);
    }

    #[test]
    fn proper_forgetting_shrinks_or_keeps_decrement(seed in any::<u64>(), n in 1usize..=4) {
        let mut r = rng(seed);
        let init = init_state(&mut r, n, 1);
        let s = random_sample(&mut r, n, 1, false);
        let lam = r.random_range(0.5..=1.0);
        let f = init.info().to_sym().scale(1.0 - lam);
        let (_, d) = init.step(&s, &f).unwrap();
        prop_assert!(d.proper);
        prop_assert!(d.decrement_bound_holds(1e-9));
    }
}
