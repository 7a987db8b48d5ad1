//! System parameters and the flat key-value config file.
//!
//! The file is TOML with one key per [`SystemConfig`] field, e.g.
//!
//! ```text
//! L = 24
//! N = 4
//! K = 24
//! tau_c = 720
//! tau_p = 24
//! p = 50.0
//! sigma2_dBm = -92.0
//! antenna_mode = "correlated"
//! ```
//!
//! Missing keys take the defaults of [`SystemConfig::default`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AntennaMode {
    Correlated,
    Uncorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolAlphabet {
    /// Unit-variance circularly-symmetric complex Gaussian.
    Gaussian,
    /// Unit-energy QPSK.
    Qpsk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of APs on the stripe.
    #[serde(rename = "L")]
    pub l: usize,
    /// Antennas per AP.
    #[serde(rename = "N")]
    pub n: usize,
    /// Number of users.
    #[serde(rename = "K")]
    pub k: usize,
    /// Coherence block length in channel uses.
    pub tau_c: usize,
    /// Pilot length in channel uses.
    pub tau_p: usize,
    /// Per-user transmit power (mW).
    pub p: f64,
    /// Optional per-user powers (mW); overrides `p` when present.
    pub p_per_user: Option<Vec<f64>>,
    #[serde(rename = "sigma2_dBm")]
    pub sigma2_dbm: f64,
    pub room_x: f64,
    pub room_y: f64,
    pub room_z: f64,
    pub stripe_height: f64,
    pub user_height: f64,
    pub angle_spread_deg: f64,
    pub uc_fraction: f64,
    pub antenna_mode: AntennaMode,
    pub symbols: SymbolAlphabet,
    pub seed: u64,
    pub drops: usize,
    pub blocks_per_drop: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            l: 24,
            n: 4,
            k: 24,
            tau_c: 720,
            tau_p: 24,
            p: 50.0,
            p_per_user: None,
            sigma2_dbm: -92.0,
            room_x: 200.0,
            room_y: 200.0,
            room_z: 5.0,
            stripe_height: 5.0,
            user_height: 1.5,
            angle_spread_deg: 15.0,
            uc_fraction: 0.25,
            antenna_mode: AntennaMode::Correlated,
            symbols: SymbolAlphabet::Gaussian,
            seed: 1,
            drops: 50,
            blocks_per_drop: 1,
        }
    }
}

/// Transmit powers and noise power in linear units (mW).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    pub powers: Vec<f64>,
    pub sigma2: f64,
}

impl LinkBudget {
    pub fn uniform(k: usize, p: f64, sigma2: f64) -> Self {
        Self { powers: vec![p; k], sigma2 }
    }

    pub fn k(&self) -> usize {
        self.powers.len()
    }

    pub fn sqrt_powers(&self) -> Vec<f64> {
        self.powers.iter().map(|p| p.sqrt()).collect()
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Total antenna count `N·L`.
    pub fn m(&self) -> usize {
        self.n * self.l
    }

    /// Data symbols per coherence block.
    pub fn ld(&self) -> usize {
        self.tau_c - self.tau_p
    }

    pub fn sigma2(&self) -> f64 {
        dbm_to_mw(self.sigma2_dbm)
    }

    pub fn powers(&self) -> Vec<f64> {
        match &self.p_per_user {
            Some(v) => v.clone(),
            None => vec![self.p; self.k],
        }
    }

    pub fn link_budget(&self) -> LinkBudget {
        LinkBudget { powers: self.powers(), sigma2: self.sigma2() }
    }

    /// Number of serving APs per user under user-centric operation.
    pub fn uc_ap_count(&self) -> usize {
        uc_ap_count(self.l, self.uc_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &'static str, reason: &str| Err(Error::Config { field, reason: reason.to_string() });
        if self.l == 0 {
            return fail("L", "must be at least 1");
        }
        if self.n == 0 {
            return fail("N", "must be at least 1");
        }
        if self.k == 0 {
            return fail("K", "must be at least 1");
        }
        if self.tau_p == 0 {
            return fail("tau_p", "must be positive");
        }
        if self.tau_p >= self.tau_c {
            return fail("tau_p", "must be smaller than tau_c");
        }
        if self.tau_p < self.k {
            return fail("tau_p", "orthogonal pilots need tau_p >= K (pilot reuse is not supported)");
        }
        if !(self.p.is_finite() && self.p >= 0.0) {
            return fail("p", "must be finite and nonnegative");
        }
        if let Some(v) = &self.p_per_user {
            if v.len() != self.k {
                return fail("p_per_user", "length must equal K");
            }
            if v.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return fail("p_per_user", "entries must be finite and nonnegative");
            }
        }
        if !self.sigma2_dbm.is_finite() {
            return fail("sigma2_dBm", "must be finite");
        }
        if !(self.uc_fraction > 0.0 && self.uc_fraction <= 1.0) {
            return fail("uc_fraction", "must lie in (0, 1]");
        }
        for (field, v) in [("room_x", self.room_x), ("room_y", self.room_y), ("room_z", self.room_z)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(field, "must be positive");
            }
        }
        if !(self.stripe_height.is_finite() && self.stripe_height >= 0.0) {
            return fail("stripe_height", "must be nonnegative");
        }
        if !(self.user_height.is_finite() && self.user_height >= 0.0) {
            return fail("user_height", "must be nonnegative");
        }
        if !(self.angle_spread_deg.is_finite() && self.angle_spread_deg >= 0.0) {
            return fail("angle_spread_deg", "must be nonnegative");
        }
        if self.drops == 0 {
            return fail("drops", "must be at least 1");
        }
        if self.blocks_per_drop == 0 {
            return fail("blocks_per_drop", "must be at least 1");
        }
        Ok(())
    }
}

/// `ceil(fraction · L)`, guarded against round-off just above an integer.
pub fn uc_ap_count(l: usize, fraction: f64) -> usize {
    let raw = fraction * l as f64;
    ((raw - 1e-9).ceil() as usize).clamp(1, l)
}
