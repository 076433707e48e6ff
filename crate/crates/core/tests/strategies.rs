mod common;

use std::sync::Arc;

use common::*;
use gfrls::estimator::PSD_REL_TOLERANCE;
use gfrls::forgetting::{
    criteria, CovarianceResetting, DataDependentUpdating, DirectionalForgettingSlow,
    ExponentialForgetting, ExponentialResetting, Forgetting, MultipleForgetting, PlainRls,
    VariableRateForgetting,
};
use gfrls::{EstimatorState, Sample, SpdMatrix, SymMatrix, Trajectory, Vector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn thetas(init: &EstimatorState, strategy: &mut dyn Forgetting, samples: &[Sample]) -> Vec<Vector> {
    Trajectory::record(init.clone(), strategy, samples).unwrap().thetas()
}

fn max_diff(a: &[Vector], b: &[DVector<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).amax() / y.amax().max(1.0))
        .fold(0.0, f64::max)
}

fn setup(seed: u64, n: usize, p: usize) -> (EstimatorState, Vec<Sample>) {
    let mut r = rng(seed);
    let init = init_state(&mut r, n, p);
    let samples = random_samples(&mut r, n, p, 100, false);
    (init, samples)
}

#[test]
fn unit_rate_exponential_forgetting_is_plain_rls() {
    let (init, samples) = setup(1, 3, 2);
    let a = thetas(&init, &mut ExponentialForgetting::new(1.0).unwrap(), &samples);
    let b = thetas(&init, &mut PlainRls, &samples);
    assert!(max_diff(&a, &b) <= 1e-12);
}

#[test]
fn constant_variable_rate_is_exponential_forgetting() {
    let (init, samples) = setup(2, 4, 2);
    let a = thetas(&init, &mut VariableRateForgetting::new(Arc::new(|_| 0.93)), &samples);
    let b = thetas(&init, &mut ExponentialForgetting::new(0.93).unwrap(), &samples);
    assert!(max_diff(&a, &b) <= 1e-12);
}

#[test]
fn zero_target_resetting_is_exponential_forgetting() {
    let (init, samples) = setup(3, 3, 1);
    let mut er = ExponentialResetting::new(0.9, SymMatrix::zeros(3)).unwrap();
    let a = thetas(&init, &mut er, &samples);
    let b = thetas(&init, &mut ExponentialForgetting::new(0.9).unwrap(), &samples);
    assert!(max_diff(&a, &b) <= 1e-12);
}

#[test]
fn never_firing_covariance_resetting_is_plain_rls() {
    let (init, samples) = setup(4, 2, 2);
    let mut cr = CovarianceResetting::with_target(criteria::never(), SpdMatrix::identity(2));
    let a = thetas(&init, &mut cr, &samples);
    let b = thetas(&init, &mut PlainRls, &samples);
    assert!(max_diff(&a, &b) <= 1e-12);
}

#[test]
fn variable_rate_matches_covariance_form() {
    let (init, samples) = setup(5, 3, 2);
    let rate = |k: usize| 0.9 + 0.08 * ((k as f64) * 0.37).sin().abs();
    let a = thetas(&init, &mut VariableRateForgetting::new(Arc::new(rate)), &samples);
    let p0 = init.covariance().unwrap().as_matrix().clone();
    let b = native_vrf(init.theta(), &p0, &samples, rate);
    assert!(max_diff(&a, &b) <= 1e-10);
}

#[test]
fn data_dependent_updating_matches_native_form() {
    let (init, samples) = setup(6, 3, 1);
    let mu = |k: usize| 0.2 + 0.6 * (((k * 7) % 11) as f64 / 10.0);
    let mut ddu = DataDependentUpdating::new(Arc::new(mu));
    let tr = Trajectory::record(init.clone(), &mut ddu, &samples).unwrap();
    let p0 = init.covariance().unwrap().as_matrix().clone();
    let native = native_ddu(init.theta(), &p0, &samples, mu);
    let native_thetas: Vec<_> = native.iter().map(|(t, _)| t.clone()).collect();
    assert!(max_diff(&tr.thetas(), &native_thetas) <= 1e-10);
    // The rescaled information is the native one divided by the previous μ.
    for (k, (_, r)) in native.iter().enumerate().skip(1) {
        let scaled = r / mu(k - 1);
        let ours = tr.state(k).unwrap().info().as_matrix();
        assert!(max_abs(&(ours - &scaled)) <= 1e-10 * max_abs(&scaled).max(1.0));
    }
}

#[test]
fn slowly_varying_matches_native_form() {
    for seed in 0..5 {
        let (init, samples) = setup(10 + seed, 3, 1);
        let mu = 0.9 + 0.02 * seed as f64;
        let a = thetas(&init, &mut DirectionalForgettingSlow::new(mu).unwrap(), &samples);
        let p0 = init.covariance().unwrap().as_matrix().clone();
        let b = native_slow(init.theta(), &p0, &samples, mu);
        assert!(max_diff(&a, &b) <= 1e-10, "seed {seed}: {}", max_diff(&a, &b));
    }
}

#[test]
fn multiple_forgetting_matches_gain_form() {
    for seed in 0..5 {
        let mut r = rng(20 + seed);
        let (r1, r2) = (r.random_range(0.5..=3.0), r.random_range(0.5..=3.0));
        let init = EstimatorState::from_info(
            DVector::from_fn(2, |_, _| r.random_range(-1.0..=1.0)),
            SpdMatrix::from_diagonal(&[r1, r2]).unwrap(),
            1,
        )
        .unwrap();
        let samples = random_samples(&mut r, 2, 1, 100, false);
        let l1 = |k: usize| 0.9 + 0.05 * ((k % 3) as f64) / 2.0;
        let l2 = |k: usize| 0.85 + 0.1 * ((k % 5) as f64) / 4.0;
        let a = thetas(&init, &mut MultipleForgetting::new(Arc::new(l1), Arc::new(l2)), &samples);
        let b = native_multiple(init.theta(), r1, r2, &samples, l1, l2);
        assert!(max_diff(&a, &b) <= 1e-10, "seed {seed}: {}", max_diff(&a, &b));
    }
}

#[test]
fn resetting_from_dominating_start_stays_proper() {
    let mut r = rng(30);
    let init = init_state(&mut r, 3, 1);
    let c = 0.5 * init.info().min_eigenvalue();
    let mut er = ExponentialResetting::new(0.8, SymMatrix::identity(3).scale(c)).unwrap();
    let samples = random_samples(&mut r, 3, 1, 100, false);
    let tr = Trajectory::record(init, &mut er, &samples).unwrap();
    assert!(tr.steps.iter().all(|s| s.directive.declared_proper && s.diagnostics.proper));
}

#[test]
fn every_strategy_is_well_posed_and_honest_about_properness() {
    for (i, name) in STRATEGIES.iter().enumerate() {
        for seed in 0..4u64 {
            let (n, p) = valid_dims(name, 1 + (seed as usize % 4), 1 + (seed as usize % 2));
            let mut r = rng(1000 * i as u64 + seed);
            let init = init_state(&mut r, n, p);
            let samples = random_samples(&mut r, n, p, 150, !unweighted_only(name));
            let mut strategy = random_strategy(name, &mut r, &init);
            let tr = Trajectory::record(init, strategy.as_mut(), &samples)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            for (k, s) in tr.steps.iter().enumerate() {
                assert!(s.diagnostics.well_posed_margin > 0.0);
                if s.directive.declared_proper {
                    let f = &s.directive.f;
                    let tol = PSD_REL_TOLERANCE * f.max_abs().max(1.0);
                    assert!(f.min_eigenvalue() >= -tol, "{name} step {k}");
                }
                if is_always_proper(name) {
                    assert!(s.directive.declared_proper, "{name} step {k}");
                }
            }
        }
    }
}

#[test]
fn plain_rls_information_never_decreases() {
    let (init, samples) = setup(40, 3, 2);
    let tr = Trajectory::record(init, &mut PlainRls, &samples).unwrap();
    for k in 0..tr.len() {
        let diff = tr.state(k + 1).unwrap().info().as_matrix() - tr.state(k).unwrap().info().as_matrix();
        assert!(sym_eig(&diff)[0] >= -1e-12);
    }
}

#[test]
fn exponential_resetting_information_tends_to_target_without_data() {
    let n = 2;
    let init = EstimatorState::from_info(Vector::zeros(n), SpdMatrix::from_diagonal(&[5.0, 3.0]).unwrap(), 1)
        .unwrap();
    let target = SymMatrix::identity(n);
    let mut er = ExponentialResetting::new(0.7, target.clone()).unwrap();
    let zero = Sample::unweighted(Vector::zeros(1), gfrls::RectMatrix::zeros(1, n)).unwrap();
    let samples = vec![zero; 60];
    let tr = Trajectory::record(init, &mut er, &samples).unwrap();
    // info_k - R = λ^k (info_0 - R) with no data.
    let gap = tr.final_state.info().as_matrix() - target.as_matrix();
    let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0])) * 0.7f64.powi(60);
    assert!(max_abs(&(gap - expected)) <= 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ddu_mapping_holds_for_random_mu(seed in any::<u64>(), n in 1usize..=4) {
        let mut r = rng(seed);
        let init = init_state(&mut r, n, 1);
        let samples = random_samples(&mut r, n, 1, 40, false);
        let mus: Vec<f64> = (0..40).map(|_| r.random_range(0.05..0.95)).collect();
        let m2 = mus.clone();
        let mut ddu = DataDependentUpdating::new(Arc::new(move |k| m2[k]));
        let a = thetas(&init, &mut ddu, &samples);
        let p0 = init.covariance().unwrap().as_matrix().clone();
        let b: Vec<_> = native_ddu(init.theta(), &p0, &samples, |k| mus[k]).into_iter().map(|(t, _)| t).collect();
        prop_assert!(max_diff(&a, &b) <= 1e-9);
    }

    #[test]
    fn exponential_forgetting_matches_covariance_form(seed in any::<u64>(), n in 1usize..=4, p in 1usize..=2, lam in 0.8f64..=1.0) {
        let (init, samples) = setup(seed, n, p);
        let a = thetas(&init, &mut ExponentialForgetting::new(lam).unwrap(), &samples[..50]);
        let p0 = init.covariance().unwrap().as_matrix().clone();
        let b = native_vrf(init.theta(), &p0, &samples[..50], |_| lam);
        prop_assert!(max_diff(&a, &b) <= 1e-9);
    }
}
