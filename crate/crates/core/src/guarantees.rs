//! Stability and robustness conditions measured on recorded trajectories.
//!
//! - A1: `F_k ⪰ 0` for all `k ≥ k0`.
//! - A2: `(P_k^{-1} - F_k)^{-1} ⪯ bI`.
//! - A3: `aI ⪯ P_k`.
//! - A4: weighted regressors `φ̄_k = Γ_k^{-1/2}φ_k` persistently exciting
//!   (`ᾱ`, window `N`) and bounded (`β̄`).
//! - A5–A8: bounds `δ_θ`, `δ̄_y`, `δ̄_φ`, `θ_max` on parameter drift,
//!   weighted measurement noise, weighted regressor noise and parameter size.
//!
//! Every constant here is the tightest one consistent with the observed
//! horizon. That is an empirical certificate for the finite run, not a proof
//! about its continuation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{certify_excitation_at, ExcitationReport};
use crate::linalg::{min_eigenvalue, RectMatrix};
use crate::par;
use crate::simulation::{Compliance, RateFit};
use crate::trajectory::Trajectory;

/// Relative tolerance for the Lyapunov-decrement and covariance-bound checks;
/// the absolute slack is this times the run's largest `λ_max(P_k^{-1})`.
pub const LEMMA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionProfile {
    /// First step the conditions are asserted from.
    pub k0: usize,
    /// One past the last step examined.
    pub horizon_end: usize,
    pub a1_proper: bool,
    pub a2_b: Option<f64>,
    pub a3_a: Option<f64>,
    pub a4: Option<ExcitationReport>,
}

impl ConditionProfile {
    pub fn a4_holds(&self) -> bool {
        self.a4
            .as_ref()
            .is_some_and(|r| r.is_pe && r.beta_bar > 0.0 && r.beta_bar.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityTier {
    None,
    Lyapunov,
    UniformLyapunov,
    GlobalAsymptotic,
    GlobalUniformExponential,
}

/// Largest `λ_max(P_k^{-1})` over all recorded states, floored at one.
fn info_scale(traj: &Trajectory) -> f64 {
    traj.steps
        .iter()
        .map(|s| s.state.info().max_eigenvalue())
        .chain(std::iter::once(traj.final_state.info().max_eigenvalue()))
        .fold(1.0, f64::max)
}

/// Measures A1–A4 on `traj` with persistency window `window`.
///
/// `k0` is the earliest step after the last improper forgetting matrix; if
/// the weighted regressors fail to be PE somewhere after that, `k0` is moved
/// past the last unexcited window start as long as at least one full window
/// remains.
pub fn profile_conditions(traj: &Trajectory, window: usize) -> Result<ConditionProfile> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if window == 0 {
        return Err(Error::InvalidParameter("window must be positive".into()));
    }
    let len = traj.len();
    let k0_base = traj.initial_state().k();
    let weighted: Vec<RectMatrix> = traj
        .steps
        .iter()
        .map(|s| s.diagnostics.weighted_phi.clone())
        .collect();

    let last_improper = traj.steps.iter().rposition(|s| !s.directive.declared_proper);
    let mut start = last_improper.map_or(0, |i| i + 1);

    // Push past unexcited windows when the remaining horizon allows it.
    if start + window <= len {
        let window_pe = par::map_range(start..len + 1 - window, |k| {
            let sum = weighted[k..k + window]
                .iter()
                .fold(DMatrix::zeros(weighted[0].cols(), weighted[0].cols()), |acc, m| {
                    acc + m.gram().into_matrix()
                });
            min_eigenvalue(&sum) > crate::excitation::PE_TOLERANCE
        });
        if let Some(last_bad) = window_pe.iter().rposition(|ok| !ok) {
            let candidate = start + last_bad + 1;
            if candidate + window <= len {
                start = candidate;
            }
        }
    }

    let a1_proper = start < len;
    let tail = &traj.steps[start.min(len)..];
    let a2_b = tail
        .iter()
        .map(|s| 1.0 / s.diagnostics.well_posed_margin)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .filter(|b| b.is_finite() && *b > 0.0);
    let a3_a = tail
        .iter()
        .map(|s| s.state.info())
        .chain(std::iter::once(traj.final_state.info()))
        .map(|info| 1.0 / info.max_eigenvalue())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .filter(|a| a.is_finite() && *a > 0.0);
    let a4 = if start + window <= len {
        Some(certify_excitation_at(&weighted[start..], window, k0_base + start)?)
    } else {
        None
    };

    Ok(ConditionProfile {
        k0: k0_base + start,
        horizon_end: k0_base + len,
        a1_proper,
        a2_b,
        a3_a,
        a4,
    })
}

pub fn classify_stability(profile: &ConditionProfile) -> StabilityTier {
    let base = profile.a1_proper && profile.a2_b.is_some();
    let a3 = profile.a3_a.is_some();
    let a4 = profile.a4_holds();
    match (base, a3, a4) {
        (false, _, _) => StabilityTier::None,
        (true, true, true) => StabilityTier::GlobalUniformExponential,
        (true, false, true) => StabilityTier::GlobalAsymptotic,
        (true, true, false) => StabilityTier::UniformLyapunov,
        (true, false, false) => StabilityTier::Lyapunov,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub delta_theta: f64,
    pub delta_y_bar: f64,
    pub delta_phi_bar: f64,
    pub theta_max: f64,
}

impl NoiseProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_theta", self.delta_theta),
            ("delta_y_bar", self.delta_y_bar),
            ("delta_phi_bar", self.delta_phi_bar),
            ("theta_max", self.theta_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// The constants the ultimate bound is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub a: f64,
    pub b: f64,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub window: usize,
}

impl BoundConstants {
    pub fn from_profile(profile: &ConditionProfile) -> Result<Self> {
        let b = profile.a2_b.ok_or(Error::MissingCondition("a2 (b)"))?;
        let a = profile.a3_a.ok_or(Error::MissingCondition("a3 (a)"))?;
        let r = profile.a4.as_ref().ok_or(Error::MissingCondition("a4 (excitation)"))?;
        if !profile.a4_holds() {
            return Err(Error::MissingCondition("a4 (excitation)"));
        }
        Ok(Self {
            a,
            b,
            alpha_bar: r.alpha_bar,
            beta_bar: r.beta_bar,
            window: r.window,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("alpha_bar", self.alpha_bar),
            ("beta_bar", self.beta_bar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")));
            }
        }
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be >= 1".into()));
        }
        Ok(())
    }

    /// `Δ_N = (N / (aᾱ))(1 + bβ̄)[1 + ((N-1)/2)(bβ̄)²] - 1`.
    pub fn delta_n(&self) -> f64 {
        let n = self.window as f64;
        let bb = self.b * self.beta_bar;
        n / (self.a * self.alpha_bar) * (1.0 + bb) * (1.0 + 0.5 * (n - 1.0) * bb * bb) - 1.0
    }

    /// `ε* = max{1, 1/√a}(Δ_N + √(Δ_N + Δ_N²)) N`.
    pub fn eps_star(&self) -> f64 {
        let d = self.delta_n();
        1f64.max(1.0 / self.a.sqrt()) * (d + (d + d * d).sqrt()) * self.window as f64
    }

    /// `c_N = (ᾱ/N)(1 + bβ̄)^{-1}[1 + ((N-1)/2)(bβ̄)²]^{-1}`.
    pub fn c_n(&self) -> f64 {
        let n = self.window as f64;
        let bb = self.b * self.beta_bar;
        self.alpha_bar / n / (1.0 + bb) / (1.0 + 0.5 * (n - 1.0) * bb * bb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessBound {
    pub a: f64,
    pub b: f64,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub window: usize,
    pub noise: NoiseProfile,
    pub delta_n: f64,
    pub eps_star: f64,
    /// `δ_θ + bβ̄^{1/2}(δ̄_φ^{1/2}θ_max + δ̄_y)`.
    pub zeta: f64,
    pub eps: f64,
}

impl RobustnessBound {
    pub fn from_constants(c: BoundConstants, noise: NoiseProfile) -> Result<Self> {
        c.validate()?;
        noise.validate()?;
        let delta_n = c.delta_n();
        if !(delta_n >= 0.0) {
            // No trajectory produces these constants: along any run
            // a ≤ b/(1+bβ̄) and ᾱ ≤ Nβ̄, which force Δ_N ≥ 3.
            return Err(Error::InvalidParameter(format!(
                "inconsistent constants: Delta_N = {delta_n} < 0"
            )));
        }
        let eps_star = c.eps_star();
        let zeta = noise.delta_theta
            + c.b * c.beta_bar.sqrt() * (noise.delta_phi_bar.sqrt() * noise.theta_max + noise.delta_y_bar);
        Ok(Self {
            a: c.a,
            b: c.b,
            alpha_bar: c.alpha_bar,
            beta_bar: c.beta_bar,
            window: c.window,
            noise,
            delta_n,
            eps_star,
            zeta,
            eps: eps_star * zeta,
        })
    }

    pub fn constants(&self) -> BoundConstants {
        BoundConstants {
            a: self.a,
            b: self.b,
            alpha_bar: self.alpha_bar,
            beta_bar: self.beta_bar,
            window: self.window,
        }
    }
}

/// Ultimate bound on the one-step-delayed error.
pub fn compute_bound(profile: &ConditionProfile, noise: &NoiseProfile) -> Result<RobustnessBound> {
    RobustnessBound::from_constants(BoundConstants::from_profile(profile)?, *noise)
}

/// Errors-in-variables case: fixed parameters, noise in both `y` and `φ`.
pub fn eiv_bound(profile: &ConditionProfile, noise: &NoiseProfile) -> Result<RobustnessBound> {
    compute_bound(
        profile,
        &NoiseProfile {
            delta_theta: 0.0,
            ..*noise
        },
    )
}

/// Outcome of one lemma check over a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub checked: usize,
    /// Smallest margin seen (`None` when nothing was checked).
    pub worst_margin: Option<f64>,
    /// Margins below `-tolerance` count as violations.
    pub tolerance: f64,
    /// Step indices of violations.
    pub violations: Vec<usize>,
}

impl LemmaCheck {
    fn from_margins(margins: impl IntoIterator<Item = (usize, f64)>, tolerance: f64) -> Self {
        let mut checked = 0;
        let mut worst: Option<f64> = None;
        let mut violations = Vec::new();
        for (k, m) in margins {
            checked += 1;
            worst = Some(worst.map_or(m, |w| w.min(m)));
            if !(m >= -tolerance) {
                violations.push(k);
            }
        }
        Self {
            checked,
            worst_margin: worst,
            tolerance,
            violations,
        }
    }

    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Decrement bound on every step: `ΔV_k` minus its closed-form lower bound.
/// The bound holds whenever the step is well posed, so every step is checked.
pub fn decrement_check(traj: &Trajectory) -> LemmaCheck {
    let margins = traj.steps.iter().map(|s| {
        let d = &s.diagnostics;
        (s.state.k(), d.delta_v_gap_mineig / d.scale)
    });
    LemmaCheck::from_margins(margins, LEMMA_TOLERANCE)
}

/// `b - λ_max(P_k)` for every state from `k0`, which must be nonnegative
/// whenever A1 and A2 hold.
pub fn covariance_bound_check(traj: &Trajectory, profile: &ConditionProfile) -> Result<LemmaCheck> {
    if !profile.a1_proper {
        return Err(Error::MissingCondition("a1 (proper)"));
    }
    let b = profile.a2_b.ok_or(Error::MissingCondition("a2 (b)"))?;
    let first = traj.initial_state().k();
    let start = profile.k0 - first;
    let margins = traj.steps[start..]
        .iter()
        .map(|s| &s.state)
        .chain(std::iter::once(&traj.final_state))
        .map(|st| (st.k(), b - 1.0 / st.info().min_eigenvalue()))
        .collect::<Vec<_>>();
    Ok(LemmaCheck::from_margins(margins, LEMMA_TOLERANCE * b.max(1.0)))
}

/// Per-window margins `λ_min(Δ^N V_k) - c_N` for `k0 ≤ k ≤ K - N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDecrementCheck {
    pub c_n: f64,
    /// Absolute tolerance: [`LEMMA_TOLERANCE`] times the run's largest
    /// `λ_max(P_k^{-1})`.
    pub scale: f64,
    pub margins: Vec<f64>,
    pub summary: LemmaCheck,
}

/// `Δ^N V_k = P_k^{-1} - (M_{k+N-1}⋯M_k)ᵀ P_{k+N}^{-1} (M_{k+N-1}⋯M_k)`
/// against its floor `c_N I`. Requires A1, A2 and A4.
pub fn window_decrement_check(traj: &Trajectory, profile: &ConditionProfile) -> Result<WindowDecrementCheck> {
    if !profile.a1_proper {
        return Err(Error::MissingCondition("a1 (proper)"));
    }
    let b = profile.a2_b.ok_or(Error::MissingCondition("a2 (b)"))?;
    if !profile.a4_holds() {
        return Err(Error::MissingCondition("a4 (excitation)"));
    }
    let r = profile.a4.as_ref().expect("checked above");
    let window = r.window;
    let consts = BoundConstants {
        a: 1.0,
        b,
        alpha_bar: r.alpha_bar,
        beta_bar: r.beta_bar,
        window,
    };
    let c_n = consts.c_n();
    let first = traj.initial_state().k();
    let start = profile.k0 - first;
    let len = traj.len();
    let n = traj.final_state.n();
    let margins = par::map_range(start..len + 1 - window, |k| {
        let mut prod = DMatrix::<f64>::identity(n, n);
        for i in k..k + window {
            prod = &traj.steps[i].diagnostics.m_matrix * prod;
        }
        let end_info = traj.state(k + window).expect("in range").info();
        let dv = traj.steps[k].state.info().as_matrix()
            - prod.transpose() * end_info.as_matrix() * &prod;
        min_eigenvalue(&dv) - c_n
    });
    let scale = info_scale(traj);
    let summary = LemmaCheck::from_margins(
        margins.iter().enumerate().map(|(i, m)| (first + start + i, *m)),
        LEMMA_TOLERANCE * scale,
    );
    Ok(WindowDecrementCheck {
        c_n,
        scale,
        margins,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaChecks {
    pub covariance_bound: Option<LemmaCheck>,
    pub decrement: LemmaCheck,
    pub window_decrement: Option<WindowDecrementCheck>,
    /// Why a check was skipped, keyed by lemma name.
    pub skipped: Vec<(String, String)>,
}

impl LemmaChecks {
    pub fn run(traj: &Trajectory, profile: &ConditionProfile) -> Self {
        let mut skipped = Vec::new();
        let covariance_bound = covariance_bound_check(traj, profile)
            .map_err(|e| skipped.push(("covariance_bound".to_string(), e.to_string())))
            .ok();
        let window_decrement = window_decrement_check(traj, profile)
            .map_err(|e| skipped.push(("window_decrement".to_string(), e.to_string())))
            .ok();
        Self {
            covariance_bound,
            decrement: decrement_check(traj),
            window_decrement,
            skipped,
        }
    }

    pub fn all_hold(&self) -> bool {
        self.decrement.holds()
            && self.covariance_bound.as_ref().is_none_or(LemmaCheck::holds)
            && self.window_decrement.as_ref().is_none_or(|c| c.summary.holds())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSection {
    pub value: Option<RobustnessBound>,
    /// Why no bound was computed.
    pub unavailable: Option<String>,
    pub compliance: Option<Compliance>,
}

/// The guarantee report written next to every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub profile: ConditionProfile,
    pub tier: StabilityTier,
    pub bound: BoundSection,
    pub lemma_checks: LemmaChecks,
    pub rate_fit: Option<RateFit>,
}

impl GuaranteeReport {
    /// Profile, tier, lemma checks and (when `noise` is known) the bound.
    /// Compliance and rate fit are left for the caller to attach.
    pub fn analyze(traj: &Trajectory, window: usize, noise: Option<&NoiseProfile>) -> Result<Self> {
        let profile = profile_conditions(traj, window)?;
        let tier = classify_stability(&profile);
        let bound = match noise {
            None => BoundSection {
                value: None,
                unavailable: Some("noise bounds unknown".into()),
                compliance: None,
            },
            Some(noise) => match compute_bound(&profile, noise) {
                Ok(b) => BoundSection {
                    value: Some(b),
                    unavailable: None,
                    compliance: None,
                },
                Err(e) => BoundSection {
                    value: None,
                    unavailable: Some(e.to_string()),
                    compliance: None,
                },
            },
        };
        let lemma_checks = LemmaChecks::run(traj, &profile);
        Ok(Self {
            profile,
            tier,
            bound,
            lemma_checks,
            rate_fit: None,
        })
    }

    /// No lemma violations and, if compliance was measured, no exceedance
    /// after the transient.
    pub fn is_clean(&self) -> bool {
        self.lemma_checks.all_hold()
            && self
                .bound
                .compliance
                .as_ref()
                .is_none_or(|c| c.transient.is_some())
    }
}
