//! Rayleigh block-fading channel draws and received pilot/data synthesis.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;

use crate::config::{LinkBudget, SymbolAlphabet};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_sqrt, CMat, CVec};
use crate::rng::complex_normal;
use crate::scenario::CovarianceSet;

/// True channels of one coherence block. Column `k` of `h` is user `k`'s
/// channel, stacked AP by AP (`N` rows per AP).
#[derive(Debug, Clone)]
pub struct ChannelBlock {
    pub h: CMat,
    pub n: usize,
    pub l: usize,
}

impl ChannelBlock {
    pub fn new(h: CMat, n: usize, l: usize) -> Result<Self> {
        if h.nrows() != n * l {
            return Err(Error::Dimension(format!("channel has {} rows, expected {}", h.nrows(), n * l)));
        }
        Ok(Self { h, n, l })
    }

    pub fn k(&self) -> usize {
        self.h.ncols()
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    /// `h_{k,l}`
    pub fn h_kl(&self, user: usize, ap: usize) -> CVec {
        self.h.view((ap * self.n, user), (self.n, 1)).column(0).into_owned()
    }

    /// `N×K` slice of AP `ap`.
    pub fn ap_block(&self, ap: usize) -> CMat {
        self.h.rows(ap * self.n, self.n).into_owned()
    }
}

/// Precomputed `R^{1/2}` factors for repeated draws within a drop.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    k: usize,
    l: usize,
    n: usize,
    roots: Vec<CMat>,
}

impl ChannelSampler {
    pub fn new(cov: &CovarianceSet) -> Result<Self> {
        let mut roots = Vec::with_capacity(cov.k() * cov.l());
        for k in 0..cov.k() {
            for l in 0..cov.l() {
                roots.push(hermitian_sqrt(cov.r(k, l))?);
            }
        }
        Ok(Self { k: cov.k(), l: cov.l(), n: cov.n(), roots })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelBlock {
        let n = self.n;
        let mut h = CMat::zeros(n * self.l, self.k);
        for k in 0..self.k {
            for l in 0..self.l {
                let g = CVec::from_fn(n, |_, _| complex_normal(rng, 1.0));
                let hkl = &self.roots[k * self.l + l] * g;
                h.view_mut((l * n, k), (n, 1)).copy_from(&hkl);
            }
        }
        ChannelBlock { h, n, l: self.l }
    }
}

pub fn draw_channel<R: Rng + ?Sized>(cov: &CovarianceSet, rng: &mut R) -> Result<ChannelBlock> {
    Ok(ChannelSampler::new(cov)?.draw(rng))
}

/// Pilot sequences as columns of `phi` and the pilot index of each user.
#[derive(Debug, Clone)]
pub struct PilotBook {
    pub phi: CMat,
    pub assignment: Vec<usize>,
}

impl PilotBook {
    /// DFT pilots (`ΦᴴΦ = τp·I`), user `k` on pilot `k`.
    pub fn orthogonal(tau_p: usize, k: usize) -> Result<Self> {
        if tau_p < k {
            return Err(Error::Config {
                field: "tau_p",
                reason: format!("{k} users need at least {k} orthogonal pilots, got {tau_p}"),
            });
        }
        Self::with_assignment(tau_p, (0..k).collect())
    }

    /// DFT pilots with an explicit (possibly shared) assignment.
    pub fn with_assignment(tau_p: usize, assignment: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&t| t >= tau_p) {
            return Err(Error::Dimension(format!("pilot index {bad} out of range for tau_p = {tau_p}")));
        }
        let phi =
            CMat::from_fn(tau_p, tau_p, |n, t| Complex64::from_polar(1.0, -2.0 * PI * (n * t) as f64 / tau_p as f64));
        Ok(Self { phi, assignment })
    }

    pub fn tau_p(&self) -> usize {
        self.phi.nrows()
    }

    pub fn pilot_of(&self, user: usize) -> CVec {
        self.phi.column(self.assignment[user]).into_owned()
    }

    /// Users sharing user `k`'s pilot, including `k`.
    pub fn sharing(&self, user: usize) -> Vec<usize> {
        let t = self.assignment[user];
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == t).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReceivedPilot {
    /// One `N×τp` matrix per AP.
    pub z: Vec<CMat>,
}

#[derive(Debug, Clone)]
pub struct ReceivedData {
    /// One `N×L_D` matrix per AP.
    pub y: Vec<CMat>,
    /// `K×L_D` transmitted symbols.
    pub s_true: CMat,
}

impl ReceivedData {
    pub fn ld(&self) -> usize {
        self.s_true.ncols()
    }

    /// All APs stacked into one `M×L_D` matrix.
    pub fn stacked(&self) -> CMat {
        stack_rows(&self.y)
    }
}

pub(crate) fn stack_rows(blocks: &[CMat]) -> CMat {
    let n = blocks[0].nrows();
    let mut out = CMat::zeros(n * blocks.len(), blocks[0].ncols());
    for (l, b) in blocks.iter().enumerate() {
        out.rows_mut(l * n, n).copy_from(b);
    }
    out
}

fn noise_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, sigma2: f64, rng: &mut R) -> CMat {
    if sigma2 == 0.0 {
        return CMat::zeros(rows, cols);
    }
    CMat::from_fn(rows, cols, |_, _| complex_normal(rng, sigma2))
}

pub fn transmit_pilots<R: Rng + ?Sized>(
    link: &LinkBudget,
    channel: &ChannelBlock,
    pilots: &PilotBook,
    rng: &mut R,
) -> Result<ReceivedPilot> {
    if pilots.assignment.len() != channel.k() || link.k() != channel.k() {
        return Err(Error::Dimension("pilot assignment must cover every user".into()));
    }
    let tau_p = pilots.tau_p();
    // X = Σ_i √p_i e_i φ_{t_i}ᵀ, so Z_l = H_l X + N_l
    let sqrt_p = link.sqrt_powers();
    let x = CMat::from_fn(channel.k(), tau_p, |i, t| pilots.phi[(t, pilots.assignment[i])] * sqrt_p[i]);
    let z =
        (0..channel.l).map(|l| channel.ap_block(l) * &x + noise_matrix(channel.n, tau_p, link.sigma2, rng)).collect();
    Ok(ReceivedPilot { z })
}

pub fn draw_symbols<R: Rng + ?Sized>(k: usize, ld: usize, alphabet: SymbolAlphabet, rng: &mut R) -> CMat {
    match alphabet {
        SymbolAlphabet::Gaussian => CMat::from_fn(k, ld, |_, _| complex_normal(rng, 1.0)),
        SymbolAlphabet::Qpsk => CMat::from_fn(k, ld, |_, _| {
            let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            Complex64::new(re, im)
        }),
    }
}

/// Received data for given symbols: `Y_l = H_l·diag(√p)·S + noise`.
pub fn receive_symbols<R: Rng + ?Sized>(
    link: &LinkBudget,
    channel: &ChannelBlock,
    symbols: CMat,
    rng: &mut R,
) -> Result<ReceivedData> {
    if symbols.nrows() != channel.k() || link.k() != channel.k() {
        return Err(Error::Dimension("symbol rows must equal the user count".into()));
    }
    let ld = symbols.ncols();
    let mut x = symbols.clone();
    for (i, sp) in link.sqrt_powers().iter().enumerate() {
        x.row_mut(i).scale_mut(*sp);
    }
    let y = (0..channel.l).map(|l| channel.ap_block(l) * &x + noise_matrix(channel.n, ld, link.sigma2, rng)).collect();
    Ok(ReceivedData { y, s_true: symbols })
}

pub fn transmit_data<R: Rng + ?Sized>(
    link: &LinkBudget,
    channel: &ChannelBlock,
    ld: usize,
    alphabet: SymbolAlphabet,
    rng: &mut R,
) -> Result<ReceivedData> {
    if ld == 0 {
        return Err(Error::Domain("coherence block leaves no data symbols".into()));
    }
    let s = draw_symbols(channel.k(), ld, alphabet, rng);
    receive_symbols(link, channel, s, rng)
}
