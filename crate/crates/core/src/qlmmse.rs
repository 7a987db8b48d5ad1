//! Quasi-LMMSE detection from MRC fronthaul streams.
//!
//! The CPU only sees `S_mrc = HᴴY` (here with the user powers folded into
//! `H`). Its sample correlation converges to
//!
//! ```text
//! A = G² + σ²G,    G = HᴴH
//! ```
//!
//! `A` and `G` share eigenvectors, and on each eigenspace `ω = λ² + σ²λ`
//! has exactly one nonnegative root. So with `A = U·diag(ω)·Uᴴ`:
//!
//! ```text
//! λ = (√(σ⁴ + 4ω) − σ²)/2        G = U·diag(λ)·Uᴴ
//! μ = 2/(√(σ⁴ + 4ω) + σ²)        (G + σ²I)⁻¹ = U·diag(μ)·Uᴴ
//! ```
//!
//! and the LMMSE output `(G + σ²I)⁻¹ S_mrc` follows without any channel
//! knowledge at the CPU. Any eigenbasis of a repeated `ω` gives the same
//! result because the maps `ω → λ` and `ω → μ` are scalar functions, so no
//! multiplicity grouping is needed.

use crate::combiners::{CombinerResult, Scheme};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, reconstruct, CMat};

/// Sample statistics of one coherence block of MRC streams.
#[derive(Debug, Clone)]
pub struct MrcStatistics {
    /// `K×L_D` fronthaul payload.
    pub s_mrc: CMat,
    /// `S_mrc·S_mrcᴴ`
    pub c: CMat,
    pub ld: usize,
    pub sigma2: f64,
}

impl MrcStatistics {
    /// `C / L_D`, the estimate of `A`.
    pub fn normalized(&self) -> CMat {
        self.c.scale(1.0 / self.ld as f64)
    }
}

pub fn mrc_statistics(s_mrc: &CMat, sigma2: f64) -> Result<MrcStatistics> {
    let ld = s_mrc.ncols();
    if ld == 0 {
        return Err(Error::Domain("MRC statistics need at least one symbol".into()));
    }
    let c = s_mrc * s_mrc.adjoint();
    Ok(MrcStatistics { s_mrc: s_mrc.clone(), c, ld, sigma2 })
}

/// Nonnegative root of `λ² + σ²λ = ω`.
///
/// Evaluated as `2ω / (√(σ⁴+4ω) + σ²)`, which equals the textbook root but
/// avoids cancellation when `4ω ≪ σ⁴`.
pub fn lambda_from_omega(omega: f64, sigma2: f64) -> f64 {
    let omega = omega.max(0.0);
    if sigma2 == 0.0 {
        return omega.sqrt();
    }
    let root = (sigma2 * sigma2 + 4.0 * omega).sqrt();
    2.0 * omega / (root + sigma2)
}

/// `1 / (λ + σ²)` expressed through `ω`.
pub fn mu_from_omega(omega: f64, sigma2: f64) -> f64 {
    let omega = omega.max(0.0);
    2.0 / ((sigma2 * sigma2 + 4.0 * omega).sqrt() + sigma2)
}

/// Eigenstructure of `A` and the Gram estimate recovered from it.
#[derive(Debug, Clone)]
pub struct GramRecovery {
    pub u: CMat,
    /// Eigenvalues of `A`, descending, clamped at zero.
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub g_hat: CMat,
    /// Most negative raw eigenvalue that was clamped, if any.
    pub clamped: Option<f64>,
}

impl GramRecovery {
    /// `U·diag(μ)·Uᴴ = (Ĝ + σ²I)⁻¹`
    pub fn transform(&self) -> CMat {
        reconstruct(&self.u, &self.mu)
    }
}

/// Recover `G` from `A = G² + σ²G` (or its sample estimate).
pub fn recover_gram(a: &CMat, sigma2: f64) -> Result<GramRecovery> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("A must be square, got {}×{}", a.nrows(), a.ncols())));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::Domain(format!("sigma2 must be nonnegative, got {sigma2}")));
    }
    let norm = a.norm();
    if (a - a.adjoint()).norm() > 1e-8 * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain("A is not Hermitian".into()));
    }
    let (raw, u) = hermitian_eigen(a)?;
    let tol = 1e-9 * raw.iter().map(|w| w.abs()).sum::<f64>();
    let mut clamped = None;
    let omega: Vec<f64> = raw
        .iter()
        .map(|&w| {
            if w < 0.0 {
                if w < -tol {
                    log::warn!("clamping eigenvalue {w:e} of the MRC correlation to zero");
                }
                clamped = Some(clamped.map_or(w, |c: f64| c.min(w)));
                0.0
            } else {
                w
            }
        })
        .collect();
    let lambda: Vec<f64> = omega.iter().map(|&w| lambda_from_omega(w, sigma2)).collect();
    let mu: Vec<f64> = omega.iter().map(|&w| mu_from_omega(w, sigma2)).collect();
    let g_hat = reconstruct(&u, &lambda);
    Ok(GramRecovery { u, omega, lambda, mu, g_hat, clamped })
}

/// Q-LMMSE detector state for one coherence block.
#[derive(Debug, Clone)]
pub struct QlmmseDetector {
    pub recovery: GramRecovery,
    /// `K×K` matrix `(Ĝ + σ²I)⁻¹` applied to the MRC streams.
    pub transform: CMat,
}

impl QlmmseDetector {
    /// Build from an `A` matrix, exact or estimated.
    pub fn from_statistics(a: &CMat, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::Domain("Q-LMMSE needs sigma2 > 0".into()));
        }
        let recovery = recover_gram(a, sigma2)?;
        let transform = recovery.transform();
        Ok(Self { recovery, transform })
    }

    /// Build from the sample correlation of the streams themselves.
    pub fn from_streams(s_mrc: &CMat, sigma2: f64) -> Result<Self> {
        let stats = mrc_statistics(s_mrc, sigma2)?;
        Self::from_statistics(&stats.normalized(), sigma2)
    }

    pub fn apply(&self, s_mrc: &CMat) -> CMat {
        &self.transform * s_mrc
    }

    /// End-to-end `M×K` combiner `H_mrc·T` for MRC vectors `H_mrc` (the
    /// columns whose conjugates produced the streams).
    pub fn effective_combiner(&self, h_mrc: &CMat) -> CMat {
        // T is Hermitian, so row k of T·H_mrcᴴ is (H_mrc·T e_k)ᴴ
        h_mrc * &self.transform
    }
}

pub fn qlmmse_receive(s_mrc: &CMat, sigma2: f64) -> Result<CombinerResult> {
    let det = QlmmseDetector::from_streams(s_mrc, sigma2)?;
    Ok(CombinerResult { scheme: Scheme::Qlmmse, s_hat: det.apply(s_mrc), v: None, uc_applied: false })
}

/// Same CPU processing as [`qlmmse_receive`]; user-centric operation only
/// changes which APs contributed to each MRC stream.
pub fn qlmmse_uc_receive(s_mrc_masked: &CMat, sigma2: f64) -> Result<CombinerResult> {
    let mut out = qlmmse_receive(s_mrc_masked, sigma2)?;
    out.uc_applied = true;
    Ok(out)
}

/// Scale MRC stream `k` by `√p_k`, turning `ĤᴴY` into `Ĥ_effᴴY` with
/// `Ĥ_eff = Ĥ·diag(√p)`, the channel the data actually went through.
pub fn power_weight_streams(s_mrc: &CMat, powers: &[f64]) -> CMat {
    let mut out = s_mrc.clone();
    for (k, p) in powers.iter().enumerate() {
        out.row_mut(k).scale_mut(p.sqrt());
    }
    out
}

/// `H·diag(√p)`
pub fn scale_columns(h: &CMat, sqrt_p: &[f64]) -> CMat {
    let mut out = h.clone();
    for (k, sp) in sqrt_p.iter().enumerate() {
        out.column_mut(k).scale_mut(*sp);
    }
    out
}

/// Limit of `C/L_D` when the streams come from estimates `Ĥ` but the data
/// went through `H` (both power-weighted): `ĤᴴHHᴴĤ + σ²ĤᴴĤ`.
pub fn exact_statistics(h_hat: &CMat, h: &CMat, sigma2: f64) -> CMat {
    let cross = h_hat.adjoint() * h;
    let a = &cross * cross.adjoint() + (h_hat.adjoint() * h_hat).scale(sigma2);
    crate::linalg::hermitian_part(&a)
}
