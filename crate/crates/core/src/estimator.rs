//! The GF-RLS state machine in information form.
//!
//! One step consumes a sample `(y_k, φ_k, Γ_k)` and a symmetric forgetting
//! matrix `F_k` and produces
//!
//! ```text
//! P_{k+1}^{-1} = P_k^{-1} - F_k + φ_kᵀ Γ_k^{-1} φ_k
//! θ_{k+1}      = θ_k + P_{k+1} φ_kᵀ Γ_k^{-1} (y_k - φ_k θ_k)
//! ```
//!
//! The information matrix `P_k^{-1}` is the canonical state; `P_k` is only
//! ever materialized by a solve against it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    max_abs, max_eigenvalue, min_eigenvalue, quadratic_minimizer, spd_inverse, spd_inverse_sqrt,
    RectMatrix, SpdMatrix, SymMatrix, Vector, SPD_REL_TOLERANCE,
};

/// A forgetting matrix is proper when `min eig(F) >= -PSD_REL_TOLERANCE * max(1, max|F|)`.
pub const PSD_REL_TOLERANCE: f64 = 1e-10;

pub fn is_proper(f: &SymMatrix) -> bool {
    f.is_psd(PSD_REL_TOLERANCE)
}

/// One time step of data.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: Vector,
    pub phi: RectMatrix,
    pub gamma: SpdMatrix,
}

impl Sample {
    pub fn new(y: Vector, phi: RectMatrix, gamma: SpdMatrix) -> Result<Self> {
        if y.len() != phi.rows() || gamma.dim() != phi.rows() {
            return Err(Error::DimensionMismatch(format!(
                "sample: y has length {}, phi is {}x{}, gamma is {}x{}",
                y.len(),
                phi.rows(),
                phi.cols(),
                gamma.dim(),
                gamma.dim()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { y, phi, gamma })
    }

    /// Sample with `Γ = I`.
    pub fn unweighted(y: Vector, phi: RectMatrix) -> Result<Self> {
        let p = phi.rows();
        Self::new(y, phi, SpdMatrix::identity(p))
    }

    pub fn p(&self) -> usize {
        self.phi.rows()
    }

    pub fn n(&self) -> usize {
        self.phi.cols()
    }

    /// `φᵀ Γ^{-1} φ`.
    pub fn information_gain(&self) -> Result<SymMatrix> {
        let ginv_phi = self.gamma.solve(self.phi.as_matrix())?;
        SymMatrix::new(self.phi.as_matrix().transpose() * ginv_phi)
    }

    /// `φᵀ Γ^{-1} v` for a measurement-space vector `v`.
    fn weighted_back_projection(&self, v: &Vector) -> Result<Vector> {
        let ginv_v = self.gamma.solve_vec(v)?;
        Ok(self.phi.as_matrix().transpose() * ginv_v)
    }
}

/// Per-step quantities used by the stability analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// `M_k = I - P_{k+1} φ_kᵀ Γ_k^{-1} φ_k`, the noiseless error transition.
    pub m_matrix: DMatrix<f64>,
    /// `λ_min(P_k^{-1} - F_k)`.
    pub well_posed_margin: f64,
    /// Whether `F_k` is positive semidefinite within [`PSD_REL_TOLERANCE`].
    pub proper: bool,
    /// `λ_min` of the Lyapunov decrement `ΔV_k` minus its lower bound
    /// `F_k + φ̄ᵀφ̄ / (1 + λ_max(φ̄φ̄ᵀ) λ_max((P_k^{-1} - F_k)^{-1}))`.
    pub delta_v_gap_mineig: f64,
    /// `Γ_k^{-1/2} φ_k`.
    pub weighted_phi: RectMatrix,
    /// `max(1, λ_max(P_k^{-1}), λ_max(P_{k+1}^{-1}))`, the magnitude that
    /// rounding in `ΔV_k` scales with.
    pub scale: f64,
}

impl StepDiagnostics {
    pub fn decrement_bound_holds(&self, rel_tol: f64) -> bool {
        self.delta_v_gap_mineig >= -rel_tol * self.scale
    }
}

/// Parameter estimate and information matrix after `k` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    k: usize,
    theta: Vector,
    info: SpdMatrix,
    p: usize,
}

impl EstimatorState {
    /// State at `k = 0` with `P_0^{-1} = p0^{-1}`.
    pub fn init(theta0: Vector, p0: &SpdMatrix, p: usize) -> Result<Self> {
        Self::from_info(theta0, spd_inverse(p0)?, p)
    }

    pub fn from_info(theta0: Vector, info: SpdMatrix, p: usize) -> Result<Self> {
        if theta0.len() != info.dim() {
            return Err(Error::DimensionMismatch(format!(
                "theta0 has length {}, P0 is {}x{}",
                theta0.len(),
                info.dim(),
                info.dim()
            )));
        }
        if p == 0 || p > crate::linalg::MAX_DIM {
            return Err(Error::UnsupportedSize(p));
        }
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { k: 0, theta: theta0, info, p })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    /// `P_k^{-1}`.
    pub fn info(&self) -> &SpdMatrix {
        &self.info
    }

    /// `P_k`, materialized by inversion.
    pub fn covariance(&self) -> Result<SpdMatrix> {
        spd_inverse(&self.info)
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.p() != self.p || sample.n() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "estimator expects p={}, n={}; sample has p={}, n={}",
                self.p,
                self.n(),
                sample.p(),
                sample.n()
            )));
        }
        Ok(())
    }

    /// `P_k^{-1} - F_k` as an SPD matrix, or `IllPosedForgetting` with the
    /// offending eigenvalue.
    pub fn reduced_info(&self, f: &SymMatrix) -> Result<(SpdMatrix, f64)> {
        if f.dim() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "forgetting matrix is {0}x{0}, estimator has n={1}",
                f.dim(),
                self.n()
            )));
        }
        let reduced = self.info.to_sym().sub(f)?;
        let margin = reduced.min_eigenvalue();
        let n = self.n();
        let max_diag = (0..n)
            .map(|i| reduced.as_matrix()[(i, i)].abs())
            .fold(0.0_f64, f64::max);
        let ill = Error::IllPosedForgetting { step: self.k, margin };
        if !(margin > SPD_REL_TOLERANCE * max_diag) {
            return Err(ill);
        }
        let spd = SpdMatrix::new(reduced).map_err(|_| ill)?;
        Ok((spd, margin))
    }

    /// Advances one step. Fails with `IllPosedForgetting` unless
    /// `P_k^{-1} - F_k ≻ 0`.
    pub fn step(&self, sample: &Sample, f: &SymMatrix) -> Result<(EstimatorState, StepDiagnostics)> {
        self.check_sample(sample)?;
        let (reduced, margin) = self.reduced_info(f)?;
        let gain = sample.information_gain()?;
        let next_info = SpdMatrix::new(reduced.to_sym().add(&gain)?)?;

        let innovation = &sample.y - sample.phi.as_matrix() * &self.theta;
        let correction = next_info.solve_vec(&sample.weighted_back_projection(&innovation)?)?;
        let theta = &self.theta + correction;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }

        let n = self.n();
        let m_matrix = DMatrix::identity(n, n) - next_info.solve(gain.as_matrix())?;
        let weighted_phi =
            RectMatrix::new(spd_inverse_sqrt(&sample.gamma)?.as_matrix() * sample.phi.as_matrix())?;

        // ΔV_k = P_k^{-1} - M_kᵀ P_{k+1}^{-1} M_k against its lower bound.
        let delta_v = self.info.as_matrix()
            - m_matrix.transpose() * next_info.as_matrix() * &m_matrix;
        let wp = weighted_phi.as_matrix();
        let phi_phit_max = max_eigenvalue(&(wp * wp.transpose()));
        let denom = 1.0 + phi_phit_max / margin;
        let bound = f.as_matrix() + wp.transpose() * wp / denom;
        let delta_v_gap_mineig = min_eigenvalue(&(delta_v - bound));

        let scale = 1.0_f64
            .max(self.info.max_eigenvalue())
            .max(next_info.max_eigenvalue());

        let diagnostics = StepDiagnostics {
            m_matrix,
            well_posed_margin: margin,
            proper: is_proper(f),
            delta_v_gap_mineig,
            weighted_phi,
            scale,
        };
        let next = EstimatorState {
            k: self.k + 1,
            theta,
            info: next_info,
            p: self.p,
        };
        Ok((next, diagnostics))
    }
}

/// Quadratic-form coefficients of the GF-RLS cost, accumulated step by step.
///
/// `H_k = P_0^{-1} + Σ (φᵢᵀΓᵢ^{-1}φᵢ - Fᵢ)` and
/// `b_k = -P_0^{-1}θ_0 + Σ (-φᵢᵀΓᵢ^{-1}yᵢ + Fᵢθᵢ)`. The constant term of
/// the cost is not tracked; it does not move the minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchAccumulator {
    h: SymMatrix,
    b: Vector,
    theta_history: Vec<Vector>,
}

impl BatchAccumulator {
    /// Regularization term only: the minimizer is `θ_0`.
    pub fn new(theta0: &Vector, info0: &SpdMatrix) -> Result<Self> {
        if theta0.len() != info0.dim() {
            return Err(Error::DimensionMismatch("theta0 and P0 disagree on n".into()));
        }
        Ok(Self {
            h: info0.to_sym(),
            b: -(info0.as_matrix() * theta0),
            theta_history: Vec::new(),
        })
    }

    pub fn from_state(state: &EstimatorState) -> Result<Self> {
        Self::new(state.theta(), state.info())
    }

    /// Adds step `i`'s loss and forgetting terms; `theta_i` is the estimate
    /// the forgetting term is centered on.
    pub fn accumulate(&mut self, sample: &Sample, f: &SymMatrix, theta_i: &Vector) -> Result<()> {
        let n = self.h.dim();
        if sample.n() != n || f.dim() != n || theta_i.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "batch accumulator has n={n}; sample n={}, F {}x{}, theta length {}",
                sample.n(),
                f.dim(),
                f.dim(),
                theta_i.len()
            )));
        }
        let gain = sample.information_gain()?;
        self.h = self.h.sub(f)?.add(&gain)?;
        self.b = &self.b - sample.weighted_back_projection(&sample.y)? + f.as_matrix() * theta_i;
        self.theta_history.push(theta_i.clone());
        Ok(())
    }

    /// `-H_k^{-1} b_k`.
    pub fn minimizer(&self) -> Result<Vector> {
        let h = SpdMatrix::new(self.h.clone())?;
        quadratic_minimizer(&h, &self.b)
    }

    pub fn h(&self) -> &SymMatrix {
        &self.h
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn theta_history(&self) -> &[Vector] {
        &self.theta_history
    }

    pub fn steps(&self) -> usize {
        self.theta_history.len()
    }
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &Vector, b: &Vector) -> f64 {
    let denom = a.norm().max(b.norm());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).norm() / denom
    }
}

/// Max-abs entry of a matrix difference.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b))
}
