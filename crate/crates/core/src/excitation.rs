//! Weighted regressors and empirical persistent-excitation certificates.
//!
//! A sequence `(φ_k)` is persistently exciting with window `N` and lower
//! bound `α` when every window sum `Σ_{i=k}^{k+N-1} φ_iᵀφ_i ⪰ αI`, and
//! bounded by `β` when every `φ_kᵀφ_k ⪯ βI`. On a finite trace these are
//! measured, not proven: a report only speaks for the window starts it
//! examined (its `horizon`), never for the unseen tail.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, min_eigenvalue, spd_inverse_sqrt, RectMatrix, SpdMatrix};
use crate::par;

/// Window minimum eigenvalues at or below this count as no excitation.
pub const PE_TOLERANCE: f64 = 1e-9;

/// Window sums are rebuilt from scratch at the start of every chunk of this
/// many window starts, which both bounds rounding drift of the sliding sum
/// and gives the unit of parallel work.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub window: usize,
    /// Smallest window-sum eigenvalue over the examined window starts.
    pub alpha_bar: f64,
    /// Largest `λ_max(φ_kᵀφ_k)` over the examined samples.
    pub beta_bar: f64,
    pub is_pe: bool,
    /// `(k_start, k_end)`: samples `k_start..k_end` were examined, i.e.
    /// window starts `k_start..=k_end - window`.
    pub horizon: (usize, usize),
}

/// `Γ^{-1/2} φ`.
pub fn weighted_regressor(phi: &RectMatrix, gamma: &SpdMatrix) -> Result<RectMatrix> {
    if phi.rows() != gamma.dim() {
        return Err(Error::DimensionMismatch(format!(
            "phi has {} rows, gamma is {1}x{1}",
            phi.rows(),
            gamma.dim()
        )));
    }
    RectMatrix::new(spd_inverse_sqrt(gamma)?.as_matrix() * phi.as_matrix())
}

fn check_sequence(seq: &[RectMatrix], window: usize) -> Result<()> {
    let first = seq.first().ok_or(Error::EmptySequence)?;
    if let Some((i, m)) = seq
        .iter()
        .enumerate()
        .find(|(_, m)| m.rows() != first.rows() || m.cols() != first.cols())
    {
        return Err(Error::DimensionMismatch(format!(
            "regressor {i} is {}x{}, expected {}x{}",
            m.rows(),
            m.cols(),
            first.rows(),
            first.cols()
        )));
    }
    if window == 0 || window > seq.len() {
        return Err(Error::InvalidParameter(format!(
            "window {window} must lie in 1..={}",
            seq.len()
        )));
    }
    Ok(())
}

/// Certificate for `seq`, whose first element is step 0.
pub fn certify_excitation(seq: &[RectMatrix], window: usize) -> Result<ExcitationReport> {
    certify_excitation_at(seq, window, 0)
}

/// Certificate for `seq`, whose first element is step `k_start`.
pub fn certify_excitation_at(
    seq: &[RectMatrix],
    window: usize,
    k_start: usize,
) -> Result<ExcitationReport> {
    check_sequence(seq, window)?;
    let grams: Vec<DMatrix<f64>> = seq.iter().map(|m| m.gram().into_matrix()).collect();
    let starts = seq.len() - window + 1;
    let chunks = starts.div_ceil(CHUNK);

    let chunk_minima = par::map_range(0..chunks, |c| {
        let first = c * CHUNK;
        let last = (first + CHUNK).min(starts);
        let mut sum = grams[first..first + window]
            .iter()
            .fold(DMatrix::zeros(grams[0].nrows(), grams[0].ncols()), |acc, g| acc + g);
        let mut lo = min_eigenvalue(&sum);
        for k in (first + 1)..last {
            sum -= &grams[k - 1];
            sum += &grams[k + window - 1];
            lo = lo.min(min_eigenvalue(&sum));
        }
        lo
    });
    let alpha_bar = chunk_minima.into_iter().fold(f64::INFINITY, f64::min).max(0.0);

    let beta_bar = par::map(&grams, max_eigenvalue)
        .into_iter()
        .fold(0.0_f64, f64::max);

    Ok(ExcitationReport {
        window,
        alpha_bar,
        beta_bar,
        is_pe: alpha_bar > PE_TOLERANCE,
        horizon: (k_start, k_start + seq.len()),
    })
}

/// Bounds for the weighted sequence implied by `γ_min I ⪯ Γ_k ⪯ γ_max I`,
/// given a report on the unweighted regressors. Usually loose; certifying
/// the weighted sequence directly is preferable when `Γ_k` is known.
pub fn transfer_bounds(
    report: &ExcitationReport,
    gamma_min: f64,
    gamma_max: f64,
) -> Result<ExcitationReport> {
    if !(gamma_min > 0.0 && gamma_min <= gamma_max && gamma_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < gamma_min <= gamma_max < inf, got {gamma_min}, {gamma_max}"
        )));
    }
    let alpha_bar = report.alpha_bar / gamma_max;
    Ok(ExcitationReport {
        alpha_bar,
        beta_bar: report.beta_bar / gamma_min,
        is_pe: alpha_bar > PE_TOLERANCE,
        ..report.clone()
    })
}

/// The smallest window `N ≤ max_window` for which the sequence is PE, with
/// its report; `None` if no window up to `max_window` qualifies.
pub fn min_persistency_window(
    seq: &[RectMatrix],
    max_window: usize,
) -> Result<Option<ExcitationReport>> {
    check_sequence(seq, 1)?;
    for window in 1..=max_window.min(seq.len()) {
        let r = certify_excitation(seq, window)?;
        if r.is_pe {
            return Ok(Some(r));
        }
    }
    Ok(None)
}
