//! Fronthaul load and complex-multiplication counts per AP.
//!
//! Counting rules: a dense product `(m×n)(n×p)` costs `mnp`; a Hermitian
//! solve of size `n` with `r` right-hand sides costs `⌊n³/3⌋ + n²r`; a
//! Hermitian eigendecomposition of size `n` costs `4n³`. Additions are free.
//!
//! AP work is split into a parallel part (no dependence on other APs) and a
//! serial part (needs the previous AP's output); the total latency is
//! `L·c_serial + c_parallel`. CPU work is reported separately.

use serde::Serialize;

use crate::combiners::{LmmseUcForm, NlmmseVariant, ReceiverConfig, Scheme, UcMask};
use crate::config::SystemConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub scheme: Scheme,
    pub uc: bool,
    /// Real numbers sent to the CPU per coherence block.
    pub fronthaul_reals: u64,
    pub c_serial: u64,
    pub c_parallel: u64,
    pub c_total: u64,
    pub c_cpu: u64,
}

impl CostReport {
    /// Row label, `mrc` or `mrc_uc`.
    pub fn label(&self) -> String {
        if self.uc {
            format!("{}_uc", self.scheme)
        } else {
            self.scheme.to_string()
        }
    }
}

pub fn fronthaul_load(scheme: Scheme, cfg: &SystemConfig) -> u64 {
    let (k, m) = (cfg.k as u64, cfg.m() as u64);
    let ld = cfg.ld() as u64;
    match scheme {
        Scheme::Mrc | Scheme::Qlmmse => 2 * k * ld,
        Scheme::Lmmse => 2 * m * ld + 2 * m * k,
        Scheme::Nlmmse => 2 * k * ld + 3 * k * k,
    }
}

fn solve(n: u64, rhs: u64) -> u64 {
    n * n * n / 3 + n * n * rhs
}

/// Local LMMSE estimate of one user at one AP: pilot projection, the solve
/// `Ψ X = R` and the product `Xᴴ(Z φ*)`.
pub fn estimation_cost(n: u64, tau_p: u64) -> u64 {
    n * tau_p + solve(n, n) + n * n
}

/// `(parallel, serial)` multiplications at one AP serving `served` of `k`
/// users.
fn ap_cost(scheme: Scheme, cfg: &SystemConfig, served: u64, variant: NlmmseVariant) -> (u64, u64) {
    let (n, k, ld, tau_p) = (cfg.n as u64, cfg.k as u64, cfg.ld() as u64, cfg.tau_p as u64);
    let ce = estimation_cost(n, tau_p);
    match scheme {
        Scheme::Mrc | Scheme::Qlmmse => (served * (ce + n * ld), 0),
        Scheme::Lmmse => (served * ce, 0),
        Scheme::Nlmmse => {
            // the stage suppresses every user's local channel, so all K are
            // estimated even under user-centric operation
            let parallel = k * ce;
            let serial = match variant {
                NlmmseVariant::PerUserStream => {
                    let a = n + 1;
                    let per_user = n * k          // cross term with incoming gains
                        + k                       // incoming stream power
                        + solve(a, 1)
                        + a * k                   // updated effective channel
                        + (n * n + n + 1)         // residual variance
                        + a * ld                  // data
                        + (k + ld); // renormalization
                    n * n * k + served * per_user
                }
                NlmmseVariant::JointStreams => {
                    let a = n + k;
                    let shared = a * a * k + solve(a, k);
                    let per_user = (a * a + a) + a + a * k + a * ld + ld;
                    shared + served * per_user
                }
            };
            (parallel, serial)
        }
    }
}

fn cpu_cost(scheme: Scheme, cfg: &SystemConfig, mask: Option<&UcMask>, form: LmmseUcForm) -> u64 {
    let (n, k, ld, m) = (cfg.n as u64, cfg.k as u64, cfg.ld() as u64, cfg.m() as u64);
    match scheme {
        Scheme::Mrc => 0,
        // sample correlation, eigendecomposition, transform, application
        Scheme::Qlmmse => k * k * ld + 4 * k * k * k + k * k * k + k * k * ld,
        Scheme::Nlmmse => k * ld,
        Scheme::Lmmse => (0..cfg.k)
            .map(|user| {
                let dim = match (mask, form) {
                    (Some(mk), LmmseUcForm::RestrictThenSolve) => n * mk.serving_aps(user).len() as u64,
                    _ => m,
                };
                // interference covariance, solve, application
                (k - 1) * dim * dim + solve(dim, 1) + dim * ld
            })
            .sum(),
    }
}

/// Cost report for one scheme. With a mask each AP only processes its
/// served users and the parallel and serial parts are the maxima over APs.
pub fn complexity_counts(
    scheme: Scheme,
    cfg: &SystemConfig,
    uc: Option<&UcMask>,
    receivers: ReceiverConfig,
) -> CostReport {
    let loads = match uc {
        Some(mask) => mask.loads(),
        None => vec![cfg.k; cfg.l],
    };
    let (mut c_parallel, mut c_serial) = (0, 0);
    for load in loads {
        let (p, s) = ap_cost(scheme, cfg, load as u64, receivers.nlmmse);
        c_parallel = c_parallel.max(p);
        c_serial = c_serial.max(s);
    }
    CostReport {
        scheme,
        uc: uc.is_some(),
        fronthaul_reals: fronthaul_load(scheme, cfg),
        c_serial,
        c_parallel,
        c_total: cfg.l as u64 * c_serial + c_parallel,
        c_cpu: cpu_cost(scheme, cfg, uc, receivers.lmmse_uc),
    }
}
