//! Synthetic identification scenarios with bounded noise, estimator runs and
//! their convergence / ultimate-bound measurements.
//!
//! Data model per step `k`:
//!
//! ```text
//! θ_true,k+1 = θ_true,k + δ_θ,k
//! y_k        = (φ_k + δ_φ,k) θ_true,k + δ_y,k
//! ```
//!
//! All noise is drawn uniformly from a ball of the configured radius (the
//! regressor-noise ball uses the Frobenius norm), so the drift and noise
//! bounds hold with certainty rather than with high probability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimatorState, Sample};
use crate::excitation::weighted_regressor;
use crate::forgetting::{Forgetting, StrategySpec};
use crate::guarantees::{GuaranteeReport, NoiseProfile, RobustnessBound, StabilityTier};
use crate::linalg::{spd_inverse_sqrt, RectMatrix, SpdMatrix, Vector, MAX_DIM};
use crate::par;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RegressorKind {
    /// Entry `(i, j)` is `amplitude · sin(ω_ij k + ϕ_ij)` with pairwise
    /// incommensurate frequencies.
    SinusoidalPe {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Independent entries uniform on `[-scale, scale]`.
    RandomPe {
        #[serde(default = "one")]
        scale: f64,
    },
    /// The same row-major `p×n` matrix every step.
    Constant { value: Vec<f64> },
    Zero,
    /// Row-major `p×n` matrices, repeated cyclically.
    CustomTrace { rows: Vec<Vec<f64>> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GammaKind {
    #[default]
    Identity,
    /// Diagonal `Γ_k` with entries sweeping `[gamma_min, gamma_max]`.
    DiagonalSchedule { gamma_min: f64, gamma_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n: usize,
    pub p: usize,
    pub horizon: usize,
    pub theta_true_0: Vec<f64>,
    /// Radius of the per-step parameter drift `δ_θ,k`.
    #[serde(default)]
    pub walk_bound: f64,
    /// Radius of the measurement noise `δ_y,k`.
    #[serde(default)]
    pub meas_noise_bound: f64,
    /// Frobenius radius of the regressor noise `δ_φ,k`.
    #[serde(default)]
    pub reg_noise_bound: f64,
    /// Drifting parameters are projected back onto this ball.
    #[serde(default)]
    pub theta_max: Option<f64>,
    pub regressor: RegressorKind,
    #[serde(default)]
    pub gamma: GammaKind,
    #[serde(default)]
    pub seed: u64,
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must be >= 0")))
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("n", self.n), ("p", self.p)] {
            if d == 0 || d > MAX_DIM {
                return Err(Error::InvalidParameter(format!("{name} = {d} must lie in 1..=64")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if self.theta_true_0.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "theta_true_0 has {} entries, n = {}",
                self.theta_true_0.len(),
                self.n
            )));
        }
        if self.theta_true_0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        nonneg("walk_bound", self.walk_bound)?;
        nonneg("meas_noise_bound", self.meas_noise_bound)?;
        nonneg("reg_noise_bound", self.reg_noise_bound)?;
        if let Some(t) = self.theta_max {
            nonneg("theta_max", t)?;
            let norm = Vector::from_column_slice(&self.theta_true_0).norm();
            if norm > t {
                return Err(Error::InvalidParameter(format!(
                    "|theta_true_0| = {norm} exceeds theta_max = {t}"
                )));
            }
        }
        let entries = self.n * self.p;
        match &self.regressor {
            RegressorKind::SinusoidalPe { amplitude } => nonneg("amplitude", *amplitude)?,
            RegressorKind::RandomPe { scale } => nonneg("scale", *scale)?,
            RegressorKind::Constant { value } if value.len() != entries => {
                return Err(Error::DimensionMismatch(format!(
                    "constant regressor has {} entries, expected p*n = {entries}",
                    value.len()
                )))
            }
            RegressorKind::CustomTrace { rows } => {
                if rows.is_empty() {
                    return Err(Error::InvalidParameter("custom trace is empty".into()));
                }
                if let Some(i) = rows.iter().position(|r| r.len() != entries) {
                    return Err(Error::DimensionMismatch(format!(
                        "custom trace row {i} has {} entries, expected p*n = {entries}",
                        rows[i].len()
                    )));
                }
            }
            _ => {}
        }
        if let GammaKind::DiagonalSchedule { gamma_min, gamma_max } = self.gamma {
            if !(gamma_min > 0.0 && gamma_min <= gamma_max && gamma_max.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "need 0 < gamma_min <= gamma_max, got {gamma_min}, {gamma_max}"
                )));
            }
        }
        Ok(())
    }
}

/// One generated step with the disturbances that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStep {
    pub sample: Sample,
    pub theta_true: Vector,
    /// `θ_true,k+1 - θ_true,k`.
    pub delta_theta: Vector,
    pub delta_y: Vector,
    pub delta_phi: RectMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub spec: ScenarioSpec,
    pub steps: Vec<GeneratedStep>,
}

impl Generated {
    pub fn samples(&self) -> Vec<Sample> {
        self.steps.iter().map(|s| s.sample.clone()).collect()
    }

    /// `θ_true,0, …, θ_true,K`.
    pub fn theta_true_path(&self) -> Vec<Vector> {
        let mut path: Vec<Vector> = self.steps.iter().map(|s| s.theta_true.clone()).collect();
        if let Some(last) = self.steps.last() {
            path.push(&last.theta_true + &last.delta_theta);
        }
        path
    }

    /// Tightest drift and noise bounds over steps `k ≥ k0`. The drift bound
    /// also covers `δ_θ,k0-1`, which enters the first delayed error.
    pub fn noise_profile(&self, k0: usize) -> Result<NoiseProfile> {
        let mut np = NoiseProfile::default();
        for (k, s) in self.steps.iter().enumerate() {
            if k + 1 >= k0 {
                np.delta_theta = np.delta_theta.max(s.delta_theta.norm());
            }
            if k < k0 {
                continue;
            }
            let w = spd_inverse_sqrt(&s.sample.gamma)?;
            np.delta_y_bar = np.delta_y_bar.max((w.as_matrix() * &s.delta_y).norm());
            let dphi = weighted_regressor(&s.delta_phi, &s.sample.gamma)?;
            np.delta_phi_bar = np.delta_phi_bar.max(dphi.sigma_max().powi(2));
            np.theta_max = np.theta_max.max(s.theta_true.norm());
        }
        if let Some(last) = self.steps.last() {
            np.theta_max = np.theta_max.max((&last.theta_true + &last.delta_theta).norm());
        }
        Ok(np)
    }
}

/// Uniform draw from the ball of radius `r` in `d` dimensions.
fn ball(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    if r == 0.0 {
        return vec![0.0; d];
    }
    let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: f64 = rng.random();
    let radius = r * u.powf(1.0 / d as f64);
    if norm == 0.0 {
        return vec![0.0; d];
    }
    dir.into_iter().map(|x| x * radius / norm).collect()
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn regressor(spec: &ScenarioSpec, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (p, n) = (spec.p, spec.n);
    match &spec.regressor {
        RegressorKind::SinusoidalPe { amplitude } => (0..p * n)
            .map(|idx| {
                let omega = 0.3 + GOLDEN * (idx as f64 + 1.0) + 0.1 * 2f64.sqrt() * idx as f64;
                let phase = 0.7 * idx as f64;
                amplitude * (omega * k as f64 + phase).sin()
            })
            .collect(),
        RegressorKind::RandomPe { scale } => (0..p * n)
            .map(|_| rng.random_range(-1.0..=1.0) * scale)
            .collect(),
        RegressorKind::Constant { value } => value.clone(),
        RegressorKind::Zero => vec![0.0; p * n],
        RegressorKind::CustomTrace { rows } => rows[k % rows.len()].clone(),
    }
}

fn gamma(spec: &ScenarioSpec, k: usize) -> Result<SpdMatrix> {
    match spec.gamma {
        GammaKind::Identity => Ok(SpdMatrix::identity(spec.p)),
        GammaKind::DiagonalSchedule { gamma_min, gamma_max } => {
            let d: Vec<f64> = (0..spec.p)
                .map(|i| {
                    let s = 0.5 * (1.0 + (0.3 * k as f64 + i as f64).sin());
                    gamma_min + (gamma_max - gamma_min) * s
                })
                .collect();
            SpdMatrix::from_diagonal(&d)
        }
    }
}

/// Deterministic in `spec` (including its seed).
pub fn generate(spec: &ScenarioSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, p) = (spec.n, spec.p);
    let mut theta = Vector::from_column_slice(&spec.theta_true_0);
    let mut steps = Vec::with_capacity(spec.horizon);
    for k in 0..spec.horizon {
        let phi = RectMatrix::from_row_slice(p, n, &regressor(spec, k, &mut rng))?;
        let delta_phi = RectMatrix::from_row_slice(p, n, &ball(&mut rng, p * n, spec.reg_noise_bound))?;
        let delta_y = Vector::from_vec(ball(&mut rng, p, spec.meas_noise_bound));
        let y = (phi.as_matrix() + delta_phi.as_matrix()) * &theta + &delta_y;
        let sample = Sample::new(y, phi, gamma(spec, k)?)?;

        let mut next = &theta + Vector::from_vec(ball(&mut rng, n, spec.walk_bound));
        if let Some(t) = spec.theta_max {
            let norm = next.norm();
            if norm > t {
                next *= t / norm;
            }
        }
        let delta_theta = &next - &theta;
        steps.push(GeneratedStep {
            sample,
            theta_true: theta,
            delta_theta,
            delta_y,
            delta_phi,
        });
        theta = next;
    }
    Ok(Generated {
        spec: spec.clone(),
        steps,
    })
}

/// One row per step `k`: the estimate before step `k`'s update and the
/// diagnostics of that update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub k: usize,
    pub theta: Vec<f64>,
    pub theta_true: Vec<f64>,
    /// `‖θ_k - θ_true,k‖`.
    pub err_tilde: f64,
    /// `‖θ_k - θ_true,k-1‖` with `θ_true,-1 = θ_true,0`.
    pub err_check: f64,
    /// `θ̃_kᵀ P_k^{-1} θ̃_k`.
    pub lyapunov: f64,
    pub lambda_min_info: f64,
    pub well_posed_margin: f64,
    pub proper: bool,
    pub delta_v_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    pub k_start: usize,
    pub k_end: usize,
}

/// How the delayed error compares with the ultimate bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compliance {
    pub eps: f64,
    /// Smallest `T` with `‖θ̌_k‖ < ε` for every `T ≤ k ≤ K`; `None` if the
    /// last recorded error is not below `ε`.
    pub transient: Option<usize>,
    /// Exceedances at or after `transient` (zero whenever `transient` is set).
    pub exceedances_after_transient: usize,
    pub total_exceedances: usize,
    pub max_err_after_transient: Option<f64>,
}

impl Compliance {
    /// `errors[k]` is `‖θ̌_k‖` for `k = 0..=K`.
    pub fn measure(errors: &[f64], eps: f64) -> Self {
        let total_exceedances = errors.iter().filter(|e| !(**e < eps)).count();
        let transient = match errors.iter().rposition(|e| !(*e < eps)) {
            None => Some(0),
            Some(last) if last + 1 < errors.len() => Some(last + 1),
            Some(_) => None,
        };
        let after = transient.map(|t| &errors[t..]).unwrap_or(&[]);
        Self {
            eps,
            transient,
            exceedances_after_transient: after.iter().filter(|e| !(**e < eps)).count(),
            total_exceedances,
            max_err_after_transient: after.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunOptions {
    pub window: usize,
    /// Step range `[start, end)` for the exponential-rate fit on `‖θ̃_k‖`.
    pub rate_fit: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    /// `‖θ̃_K‖` and `‖θ̌_K‖` after the last update.
    pub final_errors: (f64, f64),
    pub trajectory: Trajectory,
    pub report: GuaranteeReport,
}

impl RunRecord {
    pub fn tier(&self) -> StabilityTier {
        self.report.tier
    }

    pub fn bound(&self) -> Option<&RobustnessBound> {
        self.report.bound.value.as_ref()
    }

    /// `‖θ̃_k‖` for `k = 0..=K`.
    pub fn err_tilde(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.err_tilde)
            .chain(std::iter::once(self.final_errors.0))
            .collect()
    }

    /// `‖θ̌_k‖` for `k = 0..=K`.
    pub fn err_check(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.err_check)
            .chain(std::iter::once(self.final_errors.1))
            .collect()
    }
}

/// Drives `strategy` over the generated scenario and analyses the result.
/// Fails fast on any estimator error.
pub fn run(
    generated: &Generated,
    strategy: &mut dyn Forgetting,
    init: EstimatorState,
    options: RunOptions,
) -> Result<RunRecord> {
    let samples = generated.samples();
    let trajectory = Trajectory::record(init, strategy, &samples)?;
    let truth = generated.theta_true_path();
    let thetas = trajectory.thetas();

    let rows: Vec<RunRow> = trajectory
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let tilde = s.state.theta() - &truth[k];
            let check = s.state.theta() - &truth[k.saturating_sub(1)];
            RunRow {
                k: s.state.k(),
                theta: s.state.theta().iter().copied().collect(),
                theta_true: truth[k].iter().copied().collect(),
                err_tilde: tilde.norm(),
                err_check: check.norm(),
                lyapunov: s.state.info().quad_form(&tilde),
                lambda_min_info: s.state.info().min_eigenvalue(),
                well_posed_margin: s.diagnostics.well_posed_margin,
                proper: s.directive.declared_proper,
                delta_v_gap: s.diagnostics.delta_v_gap_mineig,
            }
        })
        .collect();
    let k_last = thetas.len() - 1;
    let final_errors = (
        (&thetas[k_last] - &truth[k_last]).norm(),
        (&thetas[k_last] - &truth[k_last.saturating_sub(1)]).norm(),
    );

    let window = options.window.max(1).min(trajectory.len().max(1));
    let profile_k0 = crate::guarantees::profile_conditions(&trajectory, window)?.k0;
    let noise = generated.noise_profile(profile_k0)?;
    let mut report = GuaranteeReport::analyze(&trajectory, window, Some(&noise))?;

    let err_check: Vec<f64> = rows
        .iter()
        .map(|r| r.err_check)
        .chain(std::iter::once(final_errors.1))
        .collect();
    if let Some(b) = report.bound.value {
        let k0 = report.profile.k0;
        let mut c = Compliance::measure(&err_check[k0..], b.eps);
        c.transient = c.transient.map(|t| t + k0);
        report.bound.compliance = Some(c);
    }
    let record = RunRecord {
        rows,
        final_errors,
        trajectory,
        report,
    };
    if let Some((a, b)) = options.rate_fit {
        let fit = fit_exponential_rate(&record.err_tilde(), a, b)?;
        return Ok(RunRecord {
            report: GuaranteeReport {
                rate_fit: Some(fit),
                ..record.report
            },
            ..record
        });
    }
    Ok(record)
}

/// Least-squares line through `(k, ln e_k)` for `k_start ≤ k < k_end`.
/// Returns `e_k ≈ α β^{-k}`: `β = exp(-slope)`, `α = exp(intercept)`.
/// Zeros are clipped to `1e-300` before taking logs.
pub fn fit_exponential_rate(errors: &[f64], k_start: usize, k_end: usize) -> Result<RateFit> {
    let k_end = k_end.min(errors.len());
    if k_end < k_start + 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two points in [{k_start}, {k_end})"
        )));
    }
    let pts: Vec<(f64, f64)> = (k_start..k_end)
        .map(|k| (k as f64, errors[k].max(1e-300).ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(RateFit {
        alpha: intercept.exp(),
        beta: (-slope).exp(),
        r_squared,
        k_start,
        k_end,
    })
}

/// One cell of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridJob {
    pub scenario: ScenarioSpec,
    pub strategy: StrategySpec,
    pub theta0: Vec<f64>,
    pub p0: f64,
    pub options: RunOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub tier: StabilityTier,
    pub eps: Option<f64>,
    pub compliance: Option<Compliance>,
    pub final_err_tilde: f64,
    pub lemmas_hold: bool,
}

fn run_job(job: &GridJob) -> Result<GridOutcome> {
    let generated = generate(&job.scenario)?;
    let mut strategy = job.strategy.build(job.scenario.n, job.scenario.p)?;
    let init = EstimatorState::init(
        Vector::from_column_slice(&job.theta0),
        &SpdMatrix::scaled_identity(job.scenario.n, job.p0)?,
        job.scenario.p,
    )?;
    let rec = run(&generated, strategy.as_mut(), init, job.options)?;
    Ok(GridOutcome {
        tier: rec.tier(),
        eps: rec.bound().map(|b| b.eps),
        compliance: rec.report.bound.compliance.clone(),
        final_err_tilde: rec.final_errors.0,
        lemmas_hold: rec.report.lemma_checks.all_hold(),
    })
}

/// Runs every job, in parallel when the `parallel` feature is on. Output
/// order matches `jobs`.
pub fn run_grid(jobs: &[GridJob]) -> Vec<Result<GridOutcome>> {
    par::map(jobs, run_job)
}

pub fn run_grid_sequential(jobs: &[GridJob]) -> Vec<Result<GridOutcome>> {
    par::map_sequential(jobs, run_job)
}
