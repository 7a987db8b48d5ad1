//! Per-AP LMMSE channel estimation.
//!
//! For user `k` at AP `l` with pilot-sharing set `S_k`:
//!
//! ```text
//! Ψ_{k,l} = Σ_{i∈S_k} τp p_i R_{i,l} + σ² I_N
//! ĥ_{k,l} = √p_k R_{k,l} Ψ_{k,l}⁻¹ Z_l conj(φ_{t_k})
//! Γ_{k,l} = τp p_k R_{k,l} Ψ_{k,l}⁻¹ R_{k,l}
//! ```
//!
//! `Γ_{k,l}` is the covariance of the estimate and `R_{k,l} − Γ_{k,l}` the
//! covariance of the estimation error. Only the diagonal blocks are stored.

use crate::channel::{ChannelBlock, PilotBook, ReceivedPilot};
use crate::config::LinkBudget;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, hpd_solve, is_psd, CMat, CVec};
use crate::scenario::CovarianceSet;

#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    /// `M×K` stacked estimates.
    pub h_hat: CMat,
    /// `gamma[k][l]` = Γ_{k,l}
    pub gamma: Vec<Vec<CMat>>,
    /// `r_blk[k][l]` = R_{k,l}
    pub r_blk: Vec<Vec<CMat>>,
    pub n: usize,
    pub l: usize,
}

impl ChannelEstimate {
    pub fn k(&self) -> usize {
        self.h_hat.ncols()
    }

    pub fn m(&self) -> usize {
        self.h_hat.nrows()
    }

    pub fn h_hat_kl(&self, user: usize, ap: usize) -> CVec {
        self.h_hat.view((ap * self.n, user), (self.n, 1)).column(0).into_owned()
    }

    /// `N×K` estimates at AP `ap`.
    pub fn ap_block(&self, ap: usize) -> CMat {
        self.h_hat.rows(ap * self.n, self.n).into_owned()
    }

    /// `R_{k,l} − Γ_{k,l}`
    pub fn error_cov(&self, user: usize, ap: usize) -> CMat {
        &self.r_blk[user][ap] - &self.gamma[user][ap]
    }

    /// Genie estimate: `ĥ = h`, `Γ = R` (no estimation error).
    pub fn perfect(channel: &ChannelBlock, cov: &CovarianceSet) -> Self {
        let r_blk: Vec<Vec<CMat>> = (0..cov.k()).map(|k| (0..cov.l()).map(|l| cov.r(k, l).clone()).collect()).collect();
        Self { h_hat: channel.h.clone(), gamma: r_blk.clone(), r_blk, n: channel.n, l: channel.l }
    }

    /// Check `Γ_{k,l}` and `R_{k,l} − Γ_{k,l}` are PSD for every link.
    pub fn check_psd(&self, rel_tol: f64) -> Result<bool> {
        for k in 0..self.k() {
            for l in 0..self.l {
                if !is_psd(&self.gamma[k][l], rel_tol)? {
                    return Ok(false);
                }
                let err = self.error_cov(k, l);
                // tolerance relative to R, since R − Γ can be tiny
                let scale = crate::linalg::trace_re(&self.r_blk[k][l]).max(0.0);
                let min = crate::linalg::min_eigenvalue(&err)?;
                if min < -rel_tol * scale {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

pub fn estimate_channels(
    link: &LinkBudget,
    cov: &CovarianceSet,
    pilots: &PilotBook,
    z: &ReceivedPilot,
) -> Result<ChannelEstimate> {
    let (k_users, l_aps, n) = (cov.k(), cov.l(), cov.n());
    if z.z.len() != l_aps || pilots.assignment.len() != k_users || link.k() != k_users {
        return Err(Error::Dimension("pilot observation does not match the covariance set".into()));
    }
    if z.z.iter().any(|zl| zl.nrows() != n || zl.ncols() != pilots.tau_p()) {
        return Err(Error::Dimension(format!("each Z_l must be {n}×{}", pilots.tau_p())));
    }
    let tau_p = pilots.tau_p() as f64;
    let mut h_hat = CMat::zeros(n * l_aps, k_users);
    let mut gamma = vec![Vec::with_capacity(l_aps); k_users];
    for (k, gamma_k) in gamma.iter_mut().enumerate() {
        let sharing = pilots.sharing(k);
        let phi_conj = pilots.pilot_of(k).conjugate();
        let pk = link.powers[k];
        for l in 0..l_aps {
            let mut psi = CMat::identity(n, n).scale(link.sigma2);
            for &i in &sharing {
                psi += cov.r(i, l).scale(tau_p * link.powers[i]);
            }
            let r = cov.r(k, l);
            // X = Ψ⁻¹R, so RΨ⁻¹ = Xᴴ
            let x = hpd_solve(&psi, r)?;
            let proj = &z.z[l] * &phi_conj;
            let est = x.adjoint() * proj * crate::linalg::cr(pk.sqrt());
            h_hat.view_mut((l * n, k), (n, 1)).copy_from(&est);
            gamma_k.push(hermitian_part(&(x.adjoint() * r).scale(tau_p * pk)));
        }
    }
    let r_blk = (0..k_users).map(|k| (0..l_aps).map(|l| cov.r(k, l).clone()).collect()).collect();
    Ok(ChannelEstimate { h_hat, gamma, r_blk, n, l: l_aps })
}
