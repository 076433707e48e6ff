//! Independent oracles and random-instance builders shared by the
//! integration tests. Everything here is written against plain `nalgebra`
//! (dense inverses, eigensolves) rather than the crate's own kernels.
#![allow(dead_code)]

use std::sync::Arc;

use gfrls::forgetting::{
    criteria, CovarianceResetting, DataDependentUpdating, DirectionalForgettingImd,
    DirectionalForgettingSlow, ExponentialForgetting, ExponentialResetting, Forgetting,
    MultipleForgetting, PlainRls, VariableDirectionForgetting, VariableRateForgetting,
};
use gfrls::{EstimatorState, RectMatrix, Sample, SpdMatrix, SymMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a: f64, x| a.max(x.abs()))
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let d = a.norm().max(b.norm());
    if d == 0.0 {
        0.0
    } else {
        (a - b).norm() / d
    }
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..=scale))
}

/// `B Bᵀ + shift·I` for a random `B`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let b = uniform_matrix(rng, n, n, 1.0);
    &b * b.transpose() + DMatrix::identity(n, n) * shift
}

/// Symmetric matrix with eigenvalues drawn from `[lo, hi]`.
pub fn random_spd_spectrum(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = uniform_matrix(rng, n, n, 1.0).qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..=hi)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn sym_eig(m: &DMatrix<f64>) -> Vec<f64> {
    let s = (m + m.transpose()) * 0.5;
    let mut v: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn spd(m: DMatrix<f64>) -> SpdMatrix {
    SpdMatrix::from_matrix(m).expect("spd")
}

pub fn random_sample(rng: &mut ChaCha8Rng, n: usize, p: usize, weighted: bool) -> Sample {
    let phi = RectMatrix::new(uniform_matrix(rng, p, n, 1.0)).unwrap();
    let y = DVector::from_fn(p, |_, _| rng.random_range(-2.0..=2.0));
    let gamma = if weighted {
        spd(random_spd_spectrum(rng, p, 0.5, 2.0))
    } else {
        SpdMatrix::identity(p)
    };
    Sample::new(y, phi, gamma).unwrap()
}

pub fn random_samples(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize, weighted: bool) -> Vec<Sample> {
    (0..k).map(|_| random_sample(rng, n, p, weighted)).collect()
}

/// Scalar-measurement samples `y = φθ` (plus optional noise) with `Γ = 1`.
pub fn scalar_samples(rng: &mut ChaCha8Rng, theta: &[f64], k: usize, noise: f64) -> Vec<Sample> {
    let n = theta.len();
    let th = DVector::from_column_slice(theta);
    (0..k)
        .map(|_| {
            let phi = uniform_matrix(rng, 1, n, 1.0);
            let e = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            let y = &phi * &th + DVector::from_element(1, e);
            Sample::unweighted(y, RectMatrix::new(phi).unwrap()).unwrap()
        })
        .collect()
}

pub fn init_state(rng: &mut ChaCha8Rng, n: usize, p: usize) -> EstimatorState {
    let theta0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
    let p0 = spd(random_spd_spectrum(rng, n, 0.5, 5.0));
    EstimatorState::init(theta0, &p0, p).unwrap()
}

/// Names of the ten forgetting laws in a fixed order.
pub const STRATEGIES: [&str; 10] = [
    "plain-rls",
    "exponential-forgetting",
    "variable-rate-forgetting",
    "data-dependent-updating",
    "exponential-resetting",
    "covariance-resetting",
    "directional-forgetting-imd",
    "variable-direction-forgetting",
    "directional-forgetting-slow",
    "multiple-forgetting",
];

/// Adjusts `(n, p)` to the strategy's published domain.
pub fn valid_dims(name: &str, n: usize, p: usize) -> (usize, usize) {
    match name {
        "directional-forgetting-imd" | "directional-forgetting-slow" => (n, 1),
        "multiple-forgetting" => (2, 1),
        _ => (n, p),
    }
}

/// Strategies whose forgetting matrices are guaranteed positive
/// semidefinite for the parameters `random_strategy` draws.
pub fn is_always_proper(name: &str) -> bool {
    !matches!(
        name,
        "covariance-resetting" | "variable-direction-forgetting" | "multiple-forgetting"
    )
}

/// A randomly parametrized instance on the strategy's valid domain. `init`
/// is the state it will start from (used for resetting targets).
pub fn random_strategy(
    name: &str,
    rng: &mut ChaCha8Rng,
    init: &EstimatorState,
) -> Box<dyn Forgetting> {
    let n = init.n();
    match name {
        "plain-rls" => Box::new(PlainRls),
        "exponential-forgetting" => {
            Box::new(ExponentialForgetting::new(rng.random_range(0.85..=1.0)).unwrap())
        }
        "variable-rate-forgetting" => {
            let rates: Vec<f64> = (0..17).map(|_| rng.random_range(0.85..=1.0)).collect();
            Box::new(VariableRateForgetting::new(Arc::new(move |k| rates[k % rates.len()])))
        }
        "data-dependent-updating" => {
            let mu = rng.random_range(0.5..=0.9);
            Box::new(DataDependentUpdating::new(Arc::new(move |_| mu)))
        }
        "exponential-resetting" => {
            let c = rng.random_range(0.0..=1.0) * init.info().min_eigenvalue();
            Box::new(
                ExponentialResetting::new(rng.random_range(0.85..=1.0), SymMatrix::identity(n).scale(c))
                    .unwrap(),
            )
        }
        "covariance-resetting" => {
            let period = rng.random_range(5..=30);
            let target = spd(random_spd_spectrum(rng, n, 0.5, 2.0));
            Box::new(CovarianceResetting::with_target(criteria::every(period), target))
        }
        "directional-forgetting-imd" => Box::new(
            DirectionalForgettingImd::new(rng.random_range(0.85..=1.0), 1e-6).unwrap(),
        ),
        "variable-direction-forgetting" => {
            let lambda = spd(random_spd_spectrum(rng, n, 0.95, 1.0));
            Box::new(VariableDirectionForgetting::constant(lambda))
        }
        "directional-forgetting-slow" => {
            Box::new(DirectionalForgettingSlow::new(rng.random_range(0.9..=1.0)).unwrap())
        }
        "multiple-forgetting" => {
            let l1 = rng.random_range(0.85..=1.0);
            let l2 = rng.random_range(0.85..=1.0);
            Box::new(MultipleForgetting::new(Arc::new(move |_| l1), Arc::new(move |_| l2)))
        }
        other => panic!("unknown strategy {other}"),
    }
}

/// Whether the strategy's law is stated for `Γ_k = I` only; such runs use
/// unweighted samples.
pub fn unweighted_only(name: &str) -> bool {
    name != "plain-rls" && name != "exponential-forgetting"
}

// ---------------------------------------------------------------------------
// Native-form recursions, each written in the variant's original variables.
// ---------------------------------------------------------------------------

fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}

/// Covariance-form exponential / variable-rate forgetting with `Γ = I`:
/// `P_{k+1} = (P_k - P_kφᵀ(λ_k I + φP_kφᵀ)^{-1}φP_k) / λ_k`.
pub fn native_vrf(
    theta0: &DVector<f64>,
    p0: &DMatrix<f64>,
    samples: &[Sample],
    lambda: impl Fn(usize) -> f64,
) -> Vec<DVector<f64>> {
    let mut p = p0.clone();
    let mut theta = theta0.clone();
    let mut out = vec![theta.clone()];
    for (k, s) in samples.iter().enumerate() {
        let phi = s.phi.as_matrix();
        let l = lambda(k);
        let pp = phi.nrows();
        let inner = DMatrix::identity(pp, pp) * l + phi * &p * phi.transpose();
        p = (&p - &p * phi.transpose() * inv(&inner) * phi * &p) / l;
        theta = &theta + &p * phi.transpose() * (&s.y - phi * &theta);
        out.push(theta.clone());
    }
    out
}

/// Data-dependent updating in its own variables:
/// `P_{k+1}^{-1} = (1-μ_k)P_k^{-1} + μ_kφᵀφ`, `θ += μ_k P_{k+1}φᵀ(y - φθ)`.
/// Returns `(θ_k, P_k^{-1})` for `k = 0..=K`.
pub fn native_ddu(
    theta0: &DVector<f64>,
    p0: &DMatrix<f64>,
    samples: &[Sample],
    mu: impl Fn(usize) -> f64,
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let mut r = inv(p0);
    let mut theta = theta0.clone();
    let mut out = vec![(theta.clone(), r.clone())];
    for (k, s) in samples.iter().enumerate() {
        let m = mu(k);
        let phi = s.phi.as_matrix();
        r = &r * (1.0 - m) + phi.transpose() * phi * m;
        let g = phi.transpose() * (&s.y - phi * &theta) * m;
        theta = &theta + r.clone().cholesky().expect("R stays SPD").solve(&g);
        out.push((theta.clone(), r.clone()));
    }
    out
}

/// Slowly-varying directional forgetting (`p = 1`):
/// `P_{k+1}^{-1} = P_k^{-1} + β_kφᵀφ`,
/// `θ_{k+1} = θ_k + P_kφᵀ(y - φθ_k)/(1 + φP_kφᵀ)`.
pub fn native_slow(theta0: &DVector<f64>, p0: &DMatrix<f64>, samples: &[Sample], mu: f64) -> Vec<DVector<f64>> {
    let mut p = p0.clone();
    let mut theta = theta0.clone();
    let mut out = vec![theta.clone()];
    for s in samples {
        let phi = s.phi.as_matrix();
        let s_k = (phi * &p * phi.transpose())[(0, 0)];
        let e = (&s.y - phi * &theta)[0];
        theta = &theta + &p * phi.transpose() * (e / (1.0 + s_k));
        let beta = if s_k > 0.0 { mu - (1.0 - mu) / s_k } else { 1.0 };
        p = inv(&(inv(&p) + phi.transpose() * phi * beta));
        out.push(theta.clone());
    }
    out
}

/// Multiple forgetting in scalar gain form (`n = 2`, `p = 1`): separate
/// `R_1`, `R_2` recursions and
/// `L = [φ₁/(λ₁R₁), φ₂/(λ₂R₂)]ᵀ / (1 + φ₁²/(λ₁R₁) + φ₂²/(λ₂R₂))`.
pub fn native_multiple(
    theta0: &DVector<f64>,
    r1: f64,
    r2: f64,
    samples: &[Sample],
    l1: impl Fn(usize) -> f64,
    l2: impl Fn(usize) -> f64,
) -> Vec<DVector<f64>> {
    let (mut r1, mut r2) = (r1, r2);
    let mut theta = theta0.clone();
    let mut out = vec![theta.clone()];
    for (k, s) in samples.iter().enumerate() {
        let (a, b) = (l1(k) * r1, l2(k) * r2);
        let phi = s.phi.as_matrix();
        let (f1, f2) = (phi[(0, 0)], phi[(0, 1)]);
        let denom = 1.0 + f1 * f1 / a + f2 * f2 / b;
        let gain = DVector::from_vec(vec![f1 / a / denom, f2 / b / denom]);
        let e = (&s.y - phi * &theta)[0];
        theta = &theta + gain * e;
        r1 = a + f1 * f1;
        r2 = b + f2 * f2;
        out.push(theta.clone());
    }
    out
}

/// Batch minimizer of the GF-RLS cost from scratch: assembles `H` and `b`
/// as explicit sums and solves with a dense inverse.
pub fn batch_minimizer_dense(
    theta0: &DVector<f64>,
    info0: &DMatrix<f64>,
    samples: &[Sample],
    fs: &[DMatrix<f64>],
    thetas: &[DVector<f64>],
) -> DVector<f64> {
    let mut h = info0.clone();
    let mut b = -(info0 * theta0);
    for ((s, f), th) in samples.iter().zip(fs).zip(thetas) {
        let gi = inv(s.gamma.as_matrix());
        let phi = s.phi.as_matrix();
        h += phi.transpose() * &gi * phi - f;
        b += -(phi.transpose() * &gi * &s.y) + f * th;
    }
    -(inv(&h) * b)
}

// ---------------------------------------------------------------------------
// Excitation brute force.
// ---------------------------------------------------------------------------

/// `(α, β)` by explicit window sums and dense eigensolves; `α` floored at 0.
pub fn brute_force_pe(seq: &[RectMatrix], window: usize) -> (f64, f64) {
    let grams: Vec<DMatrix<f64>> = seq
        .iter()
        .map(|m| m.as_matrix().transpose() * m.as_matrix())
        .collect();
    let n = grams[0].nrows();
    let mut alpha = f64::INFINITY;
    for k in 0..=seq.len() - window {
        let mut sum = DMatrix::zeros(n, n);
        for g in &grams[k..k + window] {
            sum += g;
        }
        alpha = alpha.min(sym_eig(&sum)[0]);
    }
    let beta = grams.iter().map(|g| *sym_eig(g).last().unwrap()).fold(0.0, f64::max);
    (alpha.max(0.0), beta)
}

/// Largest singular value via the eigenvalues of `AᵀA`.
pub fn sigma_max_eig(a: &DMatrix<f64>) -> f64 {
    sym_eig(&(a.transpose() * a)).last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// A conforming grid of random blocks, `rows × cols` blocks with random
/// heights and widths in `1..=3`.
pub fn random_block_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<RectMatrix>> {
    let heights: Vec<usize> = (0..rows).map(|_| rng.random_range(1..=3)).collect();
    let widths: Vec<usize> = (0..cols).map(|_| rng.random_range(1..=3)).collect();
    heights
        .iter()
        .map(|&h| {
            widths
                .iter()
                .map(|&w| RectMatrix::new(uniform_matrix(rng, h, w, 2.0)).unwrap())
                .collect()
        })
        .collect()
}

/// Random regressor sequence: `len` matrices of shape `p × n`, entries
/// uniform in `[-scale, scale]`, with an occasional all-zero entry.
pub fn random_regressor_seq(rng: &mut ChaCha8Rng, len: usize, p: usize, n: usize, scale: f64) -> Vec<RectMatrix> {
    (0..len)
        .map(|_| {
            if rng.random_bool(0.1) {
                RectMatrix::zeros(p, n)
            } else {
                RectMatrix::new(uniform_matrix(rng, p, n, scale)).unwrap()
            }
        })
        .collect()
}
