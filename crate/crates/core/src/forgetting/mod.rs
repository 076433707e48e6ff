//! Forgetting laws: each emits the symmetric forgetting matrix `F_k` for the
//! current state and sample.
//!
//! | strategy | `F_k` |
//! |---|---|
//! | [`PlainRls`] | `0` |
//! | [`ExponentialForgetting`] | `(1-λ) P_k^{-1}` |
//! | [`VariableRateForgetting`] | `(1-λ_k) P_k^{-1}` |
//! | [`DataDependentUpdating`] | variable-rate with `λ_k = (1-μ_k) μ_{k-1} / μ_k` |
//! | [`ExponentialResetting`] | `(1-λ)(P_k^{-1} - R_∞)` |
//! | [`CovarianceResetting`] | `P_k^{-1} - P_{∞,k}^{-1}` when the criterion fires, else `0` |
//! | [`DirectionalForgettingImd`] | `(1-λ) P_k^{-1}φᵀφP_k^{-1} / (φP_k^{-1}φᵀ)` when `‖φ‖ > ε` |
//! | [`VariableDirectionForgetting`] | `P_k^{-1} - Λ_k P_k^{-1} Λ_k` |
//! | [`DirectionalForgettingSlow`] | `(1-β_{k-1}) φ_{k-1}ᵀφ_{k-1}` |
//! | [`MultipleForgetting`] | `[[(1-λ₁)R₁, R₁₂], [R₁₂, (1-λ₂)R₂]]` |
//!
//! Strategies that carry memory between steps (previous regressor, previous
//! rate) keep it in an explicit serializable struct and refuse to be driven
//! out of step order.

mod spec;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use spec::{MatrixSpec, ResetCriterionSpec, Schedule, StrategySpec};

use crate::error::{Error, Result};
use crate::estimator::{is_proper, EstimatorState, Sample};
use crate::linalg::{SpdMatrix, SymMatrix, Vector};

/// Read-only view handed to a strategy each step.
#[derive(Debug, Clone, Copy)]
pub struct StrategyContext<'a> {
    pub state: &'a EstimatorState,
    pub sample: &'a Sample,
}

impl StrategyContext<'_> {
    pub fn k(&self) -> usize {
        self.state.k()
    }

    pub fn info(&self) -> &SpdMatrix {
        self.state.info()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyTag {
    PlainRls,
    ExponentialForgetting,
    VariableRateForgetting,
    DataDependentUpdating,
    ExponentialResetting,
    CovarianceResetting,
    DirectionalForgettingImd,
    VariableDirectionForgetting,
    DirectionalForgettingSlow,
    MultipleForgetting,
    Custom(String),
}

impl StrategyTag {
    pub const BUILTIN: [&'static str; 10] = [
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

    pub fn name(&self) -> &str {
        match self {
            Self::PlainRls => Self::BUILTIN[0],
            Self::ExponentialForgetting => Self::BUILTIN[1],
            Self::VariableRateForgetting => Self::BUILTIN[2],
            Self::DataDependentUpdating => Self::BUILTIN[3],
            Self::ExponentialResetting => Self::BUILTIN[4],
            Self::CovarianceResetting => Self::BUILTIN[5],
            Self::DirectionalForgettingImd => Self::BUILTIN[6],
            Self::VariableDirectionForgetting => Self::BUILTIN[7],
            Self::DirectionalForgettingSlow => Self::BUILTIN[8],
            Self::MultipleForgetting => Self::BUILTIN[9],
            Self::Custom(s) => s,
        }
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The forgetting matrix for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingDirective {
    pub f: SymMatrix,
    /// What the strategy asserts about `F_k ⪰ 0`.
    pub declared_proper: bool,
    pub strategy_tag: StrategyTag,
}

impl ForgettingDirective {
    fn new(f: SymMatrix, declared_proper: bool, strategy_tag: StrategyTag) -> Self {
        Self {
            f,
            declared_proper,
            strategy_tag,
        }
    }
}

pub trait Forgetting: Send {
    fn tag(&self) -> StrategyTag;

    /// Forgetting matrix for step `ctx.k()`. Strategies with memory update it
    /// here, so each step must be requested exactly once and in order.
    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective>;
}

pub type RateFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;
pub type ResetPredicate = Arc<dyn Fn(&StrategyContext<'_>) -> bool + Send + Sync>;
pub type MatrixProvider = Arc<dyn Fn(&StrategyContext<'_>) -> Result<SpdMatrix> + Send + Sync>;

fn check_rate(name: &str, v: f64, k: usize) -> Result<f64> {
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must lie in (0, 1], got {v} at step {k}"
        )))
    }
}

fn check_sequence(expected: usize, ctx: &StrategyContext<'_>) -> Result<()> {
    if ctx.k() != expected {
        return Err(Error::OutOfSequence {
            expected,
            got: ctx.k(),
        });
    }
    Ok(())
}

fn require_p1(tag: &str, ctx: &StrategyContext<'_>) -> Result<()> {
    if ctx.sample.p() != 1 {
        return Err(Error::UnsupportedDimension(format!(
            "{tag} is defined for scalar measurements only (p = 1), got p = {}",
            ctx.sample.p()
        )));
    }
    Ok(())
}

/// `F_k = 0`.
#[derive(Debug, Clone, Default)]
pub struct PlainRls;

impl Forgetting for PlainRls {
    fn tag(&self) -> StrategyTag {
        StrategyTag::PlainRls
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        Ok(ForgettingDirective::new(
            SymMatrix::zeros(ctx.state.n()),
            true,
            self.tag(),
        ))
    }
}

/// `F_k = (1-λ) P_k^{-1}` with constant `λ ∈ (0, 1]`.
#[derive(Debug, Clone)]
pub struct ExponentialForgetting {
    lambda: f64,
}

impl ExponentialForgetting {
    pub fn new(lambda: f64) -> Result<Self> {
        check_rate("lambda", lambda, 0)?;
        Ok(Self { lambda })
    }
}

impl Forgetting for ExponentialForgetting {
    fn tag(&self) -> StrategyTag {
        StrategyTag::ExponentialForgetting
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        let f = ctx.info().to_sym().scale(1.0 - self.lambda);
        Ok(ForgettingDirective::new(f, true, self.tag()))
    }
}

/// `F_k = (1-λ_k) P_k^{-1}` with a per-step rate `λ_k ∈ (0, 1]`.
#[derive(Clone)]
pub struct VariableRateForgetting {
    lambda: RateFn,
}

impl VariableRateForgetting {
    pub fn new(lambda: RateFn) -> Self {
        Self { lambda }
    }

    pub fn from_schedule(s: Schedule) -> Result<Self> {
        s.validate("lambda", |v| v > 0.0 && v <= 1.0)?;
        Ok(Self::new(Arc::new(move |k| s.at(k))))
    }
}

impl fmt::Debug for VariableRateForgetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VariableRateForgetting").finish_non_exhaustive()
    }
}

impl Forgetting for VariableRateForgetting {
    fn tag(&self) -> StrategyTag {
        StrategyTag::VariableRateForgetting
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        let lambda = check_rate("lambda_k", (self.lambda)(ctx.k()), ctx.k())?;
        let f = ctx.info().to_sym().scale(1.0 - lambda);
        Ok(ForgettingDirective::new(f, true, self.tag()))
    }
}

/// Memory of [`DataDependentUpdating`]: the previous step's `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DduMemory {
    pub next_step: usize,
    pub prev_mu: f64,
}

impl Default for DduMemory {
    fn default() -> Self {
        Self {
            next_step: 0,
            prev_mu: 1.0,
        }
    }
}

/// Data-dependent updating, run as variable-rate forgetting on the rescaled
/// information matrix `P̄_k^{-1} = P_k^{-1} / μ_{k-1}` (with `μ_{-1} = 1`).
///
/// The mapped rate `λ_k = (1-μ_k) μ_{k-1} / μ_k` may exceed one, in which
/// case `F_k` is negative definite and the directive is declared improper.
/// `μ_k = 0` has no mapped rate and is rejected.
#[derive(Clone)]
pub struct DataDependentUpdating {
    mu: RateFn,
    memory: DduMemory,
}

impl DataDependentUpdating {
    pub fn new(mu: RateFn) -> Self {
        Self {
            mu,
            memory: DduMemory::default(),
        }
    }

    pub fn from_schedule(s: Schedule) -> Result<Self> {
        s.validate("mu", |v| v > 0.0 && v < 1.0)?;
        Ok(Self::new(Arc::new(move |k| s.at(k))))
    }

    pub fn memory(&self) -> DduMemory {
        self.memory
    }

    /// `λ_k` for a given `μ_k` and `μ_{k-1}`.
    pub fn mapped_rate(mu: f64, prev_mu: f64) -> f64 {
        (1.0 - mu) * prev_mu / mu
    }
}

impl fmt::Debug for DataDependentUpdating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DataDependentUpdating")
            .field("memory", &self.memory)
            .finish_non_exhaustive()
    }
}

impl Forgetting for DataDependentUpdating {
    fn tag(&self) -> StrategyTag {
        StrategyTag::DataDependentUpdating
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        check_sequence(self.memory.next_step, ctx)?;
        let k = ctx.k();
        let mu = (self.mu)(k);
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mu_k must lie in (0, 1) for the variable-rate mapping, got {mu} at step {k}"
            )));
        }
        let lambda = Self::mapped_rate(mu, self.memory.prev_mu);
        let f = ctx.info().to_sym().scale(1.0 - lambda);
        self.memory = DduMemory {
            next_step: k + 1,
            prev_mu: mu,
        };
        Ok(ForgettingDirective::new(f, lambda <= 1.0, self.tag()))
    }
}

/// `F_k = (1-λ)(P_k^{-1} - R_∞)`. Proper when `P_0^{-1} ⪰ R_∞`, which is
/// checked on the first directive.
#[derive(Debug, Clone)]
pub struct ExponentialResetting {
    lambda: f64,
    r_inf: SymMatrix,
    proper: Option<bool>,
}

impl ExponentialResetting {
    pub fn new(lambda: f64, r_inf: SymMatrix) -> Result<Self> {
        check_rate("lambda", lambda, 0)?;
        if !r_inf.is_psd(crate::estimator::PSD_REL_TOLERANCE) {
            return Err(Error::InvalidParameter(
                "R_inf must be positive semidefinite".into(),
            ));
        }
        Ok(Self {
            lambda,
            r_inf,
            proper: None,
        })
    }
}

impl Forgetting for ExponentialResetting {
    fn tag(&self) -> StrategyTag {
        StrategyTag::ExponentialResetting
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        let excess = ctx.info().to_sym().sub(&self.r_inf)?;
        let proper = *self.proper.get_or_insert_with(|| is_proper(&excess));
        let f = excess.scale(1.0 - self.lambda);
        Ok(ForgettingDirective::new(f, proper, self.tag()))
    }
}

/// Shipped reset criteria. Any predicate over the context may be used.
pub mod criteria {
    use super::*;

    pub fn never() -> ResetPredicate {
        Arc::new(|_| false)
    }

    /// Fires at `k = period, 2·period, ...`.
    pub fn every(period: usize) -> ResetPredicate {
        Arc::new(move |ctx| period > 0 && ctx.k() > 0 && ctx.k() % period == 0)
    }

    /// Fires when `tr(P_k)` has dropped below `threshold`.
    pub fn trace_below(threshold: f64) -> ResetPredicate {
        Arc::new(move |ctx| {
            ctx.state
                .covariance()
                .map(|p| p.trace() < threshold)
                .unwrap_or(false)
        })
    }
}

/// Resets the covariance to `P_{∞,k}` whenever the criterion fires.
#[derive(Clone)]
pub struct CovarianceResetting {
    criterion: ResetPredicate,
    p_inf: MatrixProvider,
}

impl CovarianceResetting {
    pub fn new(criterion: ResetPredicate, p_inf: MatrixProvider) -> Self {
        Self { criterion, p_inf }
    }

    /// Constant reset target.
    pub fn with_target(criterion: ResetPredicate, p_inf: SpdMatrix) -> Self {
        Self::new(criterion, Arc::new(move |_| Ok(p_inf.clone())))
    }
}

impl fmt::Debug for CovarianceResetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovarianceResetting").finish_non_exhaustive()
    }
}

impl Forgetting for CovarianceResetting {
    fn tag(&self) -> StrategyTag {
        StrategyTag::CovarianceResetting
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        let n = ctx.state.n();
        if !(self.criterion)(ctx) {
            return Ok(ForgettingDirective::new(SymMatrix::zeros(n), true, self.tag()));
        }
        let p_inf = (self.p_inf)(ctx)?;
        if p_inf.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "reset covariance is {0}x{0}, estimator has n={n}",
                p_inf.dim()
            )));
        }
        let target_info = crate::linalg::spd_inverse(&p_inf)?;
        let f = ctx.info().to_sym().sub(&target_info.to_sym())?;
        // F ⪰ 0 exactly when P_k ⪯ P_∞,k.
        let proper = is_proper(&f);
        Ok(ForgettingDirective::new(f, proper, self.tag()))
    }
}

/// Directional forgetting by information-matrix decomposition (scalar
/// measurements only).
#[derive(Debug, Clone)]
pub struct DirectionalForgettingImd {
    lambda: f64,
    eps: f64,
}

impl DirectionalForgettingImd {
    pub fn new(lambda: f64, eps: f64) -> Result<Self> {
        check_rate("lambda", lambda, 0)?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { lambda, eps })
    }
}

impl Forgetting for DirectionalForgettingImd {
    fn tag(&self) -> StrategyTag {
        StrategyTag::DirectionalForgettingImd
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        require_p1(self.tag().name(), ctx)?;
        let n = ctx.state.n();
        let phi: Vector = ctx.sample.phi.as_matrix().row(0).transpose();
        if phi.norm() <= self.eps {
            return Ok(ForgettingDirective::new(SymMatrix::zeros(n), true, self.tag()));
        }
        let r_phi = ctx.info().as_matrix() * &phi;
        let s = phi.dot(&r_phi);
        let f = SymMatrix::outer(&r_phi, (1.0 - self.lambda) / s)?;
        Ok(ForgettingDirective::new(f, true, self.tag()))
    }
}

/// `F_k = P_k^{-1} - Λ_k P_k^{-1} Λ_k` for a caller-supplied SPD `Λ_k`.
#[derive(Clone)]
pub struct VariableDirectionForgetting {
    provider: MatrixProvider,
}

impl VariableDirectionForgetting {
    pub fn new(provider: MatrixProvider) -> Self {
        Self { provider }
    }

    pub fn constant(lambda: SpdMatrix) -> Self {
        Self::new(Arc::new(move |_| Ok(lambda.clone())))
    }
}

impl fmt::Debug for VariableDirectionForgetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VariableDirectionForgetting").finish_non_exhaustive()
    }
}

impl Forgetting for VariableDirectionForgetting {
    fn tag(&self) -> StrategyTag {
        StrategyTag::VariableDirectionForgetting
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        let lambda = (self.provider)(ctx)?;
        let n = ctx.state.n();
        if lambda.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "Lambda_k is {0}x{0}, estimator has n={n}",
                lambda.dim()
            )));
        }
        let l = lambda.as_matrix();
        let retained = SymMatrix::new(l * ctx.info().as_matrix() * l)?;
        let f = ctx.info().to_sym().sub(&retained)?;
        let proper = is_proper(&f);
        Ok(ForgettingDirective::new(f, proper, self.tag()))
    }
}

/// Memory of [`DirectionalForgettingSlow`]: `φ_{k-1}` and `β_{k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowMemory {
    pub next_step: usize,
    pub prev_phi: Vec<f64>,
    pub prev_beta: f64,
}

/// Directional forgetting for slowly varying parameters (scalar
/// measurements only). The estimator's information matrix is the rewritten
/// `P̄_k^{-1}`; the original recursion's `P_k^{-1}` is `P̄_k^{-1} - F_k`.
#[derive(Debug, Clone)]
pub struct DirectionalForgettingSlow {
    mu: f64,
    memory: Option<SlowMemory>,
}

impl DirectionalForgettingSlow {
    pub fn new(mu: f64) -> Result<Self> {
        check_rate("mu", mu, 0)?;
        Ok(Self { mu, memory: None })
    }

    pub fn memory(&self) -> Option<&SlowMemory> {
        self.memory.as_ref()
    }

    /// `β = μ - (1-μ)/s` for `s = φPφᵀ > 0`, else `1`.
    pub fn beta(mu: f64, s: f64) -> f64 {
        if s > 0.0 {
            mu - (1.0 - mu) / s
        } else {
            1.0
        }
    }
}

impl Forgetting for DirectionalForgettingSlow {
    fn tag(&self) -> StrategyTag {
        StrategyTag::DirectionalForgettingSlow
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        require_p1(self.tag().name(), ctx)?;
        let n = ctx.state.n();
        let memory = self.memory.get_or_insert_with(|| SlowMemory {
            next_step: ctx.k(),
            prev_phi: vec![0.0; n],
            prev_beta: 0.0,
        });
        check_sequence(memory.next_step, ctx)?;

        let prev_phi = Vector::from_column_slice(&memory.prev_phi);
        let f = SymMatrix::outer(&prev_phi, 1.0 - memory.prev_beta)?;

        let native_info = ctx.info().to_sym().sub(&f)?;
        let native_info = SpdMatrix::new(native_info).map_err(|_| Error::IllPosedForgetting {
            step: ctx.k(),
            margin: 0.0,
        })?;
        let phi: Vector = ctx.sample.phi.as_matrix().row(0).transpose();
        let s = phi.dot(&native_info.solve_vec(&phi)?);
        *memory = SlowMemory {
            next_step: ctx.k() + 1,
            prev_phi: phi.iter().copied().collect(),
            prev_beta: Self::beta(self.mu, s),
        };
        Ok(ForgettingDirective::new(f, true, self.tag()))
    }
}

/// Multiple forgetting for `n = 2`, `p = 1`: separate rates for the two
/// diagonal blocks of `P_k^{-1}`. Properness is reported numerically.
#[derive(Clone)]
pub struct MultipleForgetting {
    lambda1: RateFn,
    lambda2: RateFn,
}

impl MultipleForgetting {
    pub fn new(lambda1: RateFn, lambda2: RateFn) -> Self {
        Self { lambda1, lambda2 }
    }

    pub fn from_schedules(l1: Schedule, l2: Schedule) -> Result<Self> {
        l1.validate("lambda1", |v| v > 0.0 && v <= 1.0)?;
        l2.validate("lambda2", |v| v > 0.0 && v <= 1.0)?;
        Ok(Self::new(Arc::new(move |k| l1.at(k)), Arc::new(move |k| l2.at(k))))
    }
}

impl fmt::Debug for MultipleForgetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultipleForgetting").finish_non_exhaustive()
    }
}

impl Forgetting for MultipleForgetting {
    fn tag(&self) -> StrategyTag {
        StrategyTag::MultipleForgetting
    }

    fn directive(&mut self, ctx: &StrategyContext<'_>) -> Result<ForgettingDirective> {
        if ctx.state.n() != 2 || ctx.sample.p() != 1 {
            return Err(Error::UnsupportedDimension(format!(
                "multiple-forgetting is defined for n = 2, p = 1, got n = {}, p = {}",
                ctx.state.n(),
                ctx.sample.p()
            )));
        }
        let k = ctx.k();
        let l1 = check_rate("lambda1_k", (self.lambda1)(k), k)?;
        let l2 = check_rate("lambda2_k", (self.lambda2)(k), k)?;
        let r = ctx.info().as_matrix();
        let f = SymMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[(1.0 - l1) * r[(0, 0)], r[(0, 1)], r[(0, 1)], (1.0 - l2) * r[(1, 1)]],
        ))?;
        let proper = is_proper(&f);
        Ok(ForgettingDirective::new(f, proper, self.tag()))
    }
}
