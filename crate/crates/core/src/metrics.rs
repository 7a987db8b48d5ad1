//! Instantaneous SINR, spectral efficiency and empirical CDFs.

use serde::Serialize;

use crate::config::LinkBudget;
use crate::linalg::CMat;

/// SINR of user `k` for combining vector `v` (a column of an `M×K`
/// combiner) against the true channels `h`:
///
/// ```text
/// p_k|vᴴh_k|² / (Σ_{i≠k} p_i|vᴴh_i|² + σ²‖v‖²)
/// ```
///
/// A zero combiner gives zero.
pub fn instantaneous_sinr(v: &CMat, h: &CMat, link: &LinkBudget, k: usize) -> f64 {
    let col = v.column(k);
    let gains = h.adjoint() * col;
    sinr_from_gains(gains.iter().map(|g| g.norm_sqr()), col.norm_squared(), link, k)
}

fn sinr_from_gains(gains: impl Iterator<Item = f64>, v_norm2: f64, link: &LinkBudget, k: usize) -> f64 {
    if v_norm2 == 0.0 {
        return 0.0;
    }
    let mut signal = 0.0;
    let mut interference = link.sigma2 * v_norm2;
    for (i, g) in gains.enumerate() {
        if i == k {
            signal = link.powers[i] * g;
        } else {
            interference += link.powers[i] * g;
        }
    }
    if signal == 0.0 {
        0.0
    } else {
        signal / interference
    }
}

/// SINR of every user; `v` and `h` are both `M×K`.
pub fn sinr_all(v: &CMat, h: &CMat, link: &LinkBudget) -> Vec<f64> {
    // row k of VᴴH holds v_kᴴh_i for all i
    let cross = v.adjoint() * h;
    (0..v.ncols())
        .map(|k| {
            let gains = cross.row(k).iter().map(|g| g.norm_sqr()).collect::<Vec<_>>();
            sinr_from_gains(gains.into_iter(), v.column(k).norm_squared(), link, k)
        })
        .collect()
}

/// `(τc − τp)/τc`
pub fn pilot_prefactor(tau_c: usize, tau_p: usize) -> f64 {
    tau_c.saturating_sub(tau_p) as f64 / tau_c as f64
}

/// `prefactor · mean(log2(1 + SINR))` over the realizations of one user.
pub fn se_from_sinr(sinr: &[f64], prefactor: f64) -> f64 {
    if sinr.is_empty() {
        return 0.0;
    }
    prefactor * sinr.iter().map(|s| (1.0 + s).log2()).sum::<f64>() / sinr.len() as f64
}

/// Collection of per-user SE values with summary statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SeStats {
    pub values: Vec<f64>,
}

impl SeStats {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Linear-interpolated quantile, `q ∈ [0, 1]`.
    pub fn percentile(&self, q: f64) -> f64 {
        let sorted = self.sorted();
        if sorted.is_empty() {
            return f64::NAN;
        }
        let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }

    /// 10th percentile, the rate 90% of users reach.
    pub fn p10(&self) -> f64 {
        self.percentile(0.1)
    }

    pub fn merge(&mut self, other: &SeStats) {
        self.values.extend_from_slice(&other.values);
    }

    pub fn cdf(&self) -> EmpiricalCdf {
        EmpiricalCdf::new(&self.values)
    }

    fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// One SE value per user, each averaged over that user's SINR samples.
pub fn spectral_efficiency(sinr_per_user: &[Vec<f64>], tau_c: usize, tau_p: usize) -> SeStats {
    let pre = pilot_prefactor(tau_c, tau_p);
    SeStats::new(sinr_per_user.iter().map(|s| se_from_sinr(s, pre)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self { sorted }
    }

    /// Fraction of samples `≤ x`.
    pub fn eval(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return f64::NAN;
        }
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    /// `(value, i/n)` pairs with plotting positions `i = 1..n`.
    pub fn table(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        self.sorted.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
    }
}

pub fn cdf_table(stats: &SeStats) -> Vec<(f64, f64)> {
    stats.cdf().table()
}
