//! Uplink receivers: MRC, centralized LMMSE, sequential N-LMMSE, and the
//! user-centric AP selection they share.
//!
//! Combining matrices are `M×K` with column `k` holding `v_k`; the soft
//! output of user `k` is `v_kᴴ y`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{uc_ap_count, LinkBudget};
use crate::error::{Error, Result};
use crate::estimation::ChannelEstimate;
use crate::linalg::{cr, hpd_solve, hpd_solve_vec, CMat, CVec};
use crate::scenario::CovarianceSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Mrc,
    Lmmse,
    Nlmmse,
    Qlmmse,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Mrc, Scheme::Lmmse, Scheme::Nlmmse, Scheme::Qlmmse];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mrc => "mrc",
            Scheme::Lmmse => "lmmse",
            Scheme::Nlmmse => "nlmmse",
            Scheme::Qlmmse => "qlmmse",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "").as_str() {
            "mrc" => Ok(Scheme::Mrc),
            "lmmse" => Ok(Scheme::Lmmse),
            "nlmmse" => Ok(Scheme::Nlmmse),
            "qlmmse" => Ok(Scheme::Qlmmse),
            _ => Err(Error::UnknownScheme(s.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CombinerResult {
    pub scheme: Scheme,
    /// `K×L_D` soft outputs.
    pub s_hat: CMat,
    /// `M×K` combining matrix, when the scheme has one in closed form.
    pub v: Option<CMat>,
    pub uc_applied: bool,
}

/// Which APs serve which users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UcMask {
    /// `serve[k][l]`
    pub serve: Vec<Vec<bool>>,
}

impl UcMask {
    pub fn all(k: usize, l: usize) -> Self {
        Self { serve: vec![vec![true; l]; k] }
    }

    pub fn k(&self) -> usize {
        self.serve.len()
    }

    pub fn l(&self) -> usize {
        self.serve.first().map_or(0, Vec::len)
    }

    pub fn serves(&self, user: usize, ap: usize) -> bool {
        self.serve[user][ap]
    }

    pub fn serving_aps(&self, user: usize) -> Vec<usize> {
        (0..self.l()).filter(|&l| self.serve[user][l]).collect()
    }

    pub fn users_of(&self, ap: usize) -> Vec<usize> {
        (0..self.k()).filter(|&k| self.serve[k][ap]).collect()
    }

    /// Number of users each AP serves.
    pub fn loads(&self) -> Vec<usize> {
        (0..self.l()).map(|l| self.users_of(l).len()).collect()
    }
}

/// Strongest `ceil(fraction·L)` APs per user by large-scale gain; ties go
/// to the lower AP index.
pub fn uc_select_beta(beta: &DMatrix<f64>, fraction: f64) -> UcMask {
    let (k, l) = beta.shape();
    let count = uc_ap_count(l, fraction);
    let serve = (0..k)
        .map(|user| {
            let mut order: Vec<usize> = (0..l).collect();
            order.sort_by(|&a, &b| beta[(user, b)].total_cmp(&beta[(user, a)]).then(a.cmp(&b)));
            let mut row = vec![false; l];
            for &ap in &order[..count] {
                row[ap] = true;
            }
            row
        })
        .collect();
    UcMask { serve }
}

pub fn uc_select(cov: &CovarianceSet, fraction: f64) -> UcMask {
    uc_select_beta(&cov.beta, fraction)
}

/// Zero the `n`-row block of column `k` for every AP that does not serve `k`.
pub fn apply_mask(v: &mut CMat, n: usize, mask: &UcMask) {
    for k in 0..mask.k() {
        for l in 0..mask.l() {
            if !mask.serves(k, l) {
                v.view_mut((l * n, k), (n, 1)).fill(cr(0.0));
            }
        }
    }
}

/// `Ĥ` with the blocks of non-serving APs zeroed.
pub fn masked_estimate(est: &ChannelEstimate, mask: Option<&UcMask>) -> CMat {
    let mut h = est.h_hat.clone();
    if let Some(mask) = mask {
        apply_mask(&mut h, est.n, mask);
    }
    h
}

fn check_mask(est: &ChannelEstimate, mask: Option<&UcMask>) -> Result<()> {
    match mask {
        Some(m) if m.k() != est.k() || m.l() != est.l => {
            Err(Error::Dimension(format!("mask is {}×{}, expected {}×{}", m.k(), m.l(), est.k(), est.l)))
        }
        _ => Ok(()),
    }
}

/// MRC fronthaul streams `Σ_l Ĥ_lᴴ Y_l`, one partial product per AP.
pub fn mrc_combine(est: &ChannelEstimate, y: &[CMat], mask: Option<&UcMask>) -> Result<CombinerResult> {
    check_mask(est, mask)?;
    if y.len() != est.l {
        return Err(Error::Dimension(format!("{} AP observations for {} APs", y.len(), est.l)));
    }
    let v = masked_estimate(est, mask);
    let ld = y[0].ncols();
    let mut s = CMat::zeros(est.k(), ld);
    for (l, yl) in y.iter().enumerate() {
        let hl = v.rows(l * est.n, est.n);
        s += hl.adjoint() * yl;
    }
    Ok(CombinerResult { scheme: Scheme::Mrc, s_hat: s, v: Some(v), uc_applied: mask.is_some() })
}

fn antenna_rows(n: usize, aps: &[usize]) -> Vec<usize> {
    aps.iter().flat_map(|&l| l * n..(l + 1) * n).collect()
}

/// How centralized LMMSE honours a user-centric mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmmseUcForm {
    /// Solve over all antennas, then zero the blocks of non-serving APs.
    #[default]
    SolveThenMask,
    /// Solve over user `k`'s serving antennas only.
    RestrictThenSolve,
}

/// Receiver choices that are not fixed by the scheme alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReceiverConfig {
    pub nlmmse: NlmmseVariant,
    pub lmmse_uc: LmmseUcForm,
}

/// Centralized LMMSE combining vectors
/// `v_k = (Σ_{i≠k} p_i(ĥ_iĥ_iᴴ + R_i − Γ_i) + σ²I)⁻¹ ĥ_k`.
///
/// With a mask, `v_k` is zero outside user `k`'s serving APs; `form` picks
/// whether the solve sees the other antennas.
pub fn lmmse_combiner(
    est: &ChannelEstimate,
    link: &LinkBudget,
    mask: Option<&UcMask>,
    form: LmmseUcForm,
) -> Result<CMat> {
    match (mask, form) {
        (Some(m), LmmseUcForm::SolveThenMask) => {
            check_mask(est, mask)?;
            let mut v = lmmse_restricted(est, link, None)?;
            apply_mask(&mut v, est.n, m);
            Ok(v)
        }
        _ => lmmse_restricted(est, link, mask),
    }
}

fn lmmse_restricted(est: &ChannelEstimate, link: &LinkBudget, mask: Option<&UcMask>) -> Result<CMat> {
    check_mask(est, mask)?;
    if !(link.sigma2 > 0.0) {
        return Err(Error::Domain("LMMSE combining needs sigma2 > 0".into()));
    }
    let (k_users, n) = (est.k(), est.n);
    let all_aps: Vec<usize> = (0..est.l).collect();
    let mut v = CMat::zeros(est.m(), k_users);
    for k in 0..k_users {
        let aps = match mask {
            Some(m) => m.serving_aps(k),
            None => all_aps.clone(),
        };
        let rows = antenna_rows(n, &aps);
        let dim = rows.len();
        let mut q = CMat::identity(dim, dim).scale(link.sigma2);
        for i in (0..k_users).filter(|&i| i != k) {
            let pi = link.powers[i];
            if pi == 0.0 {
                continue;
            }
            let hi = est.h_hat.select_rows(&rows).column(i).into_owned();
            q.ger(cr(pi), &hi, &hi.conjugate(), cr(1.0));
            for (b, &l) in aps.iter().enumerate() {
                let err = est.error_cov(i, l).scale(pi);
                let mut blk = q.view_mut((b * n, b * n), (n, n));
                blk += err;
            }
        }
        let hk: CVec = est.h_hat.select_rows(&rows).column(k).into_owned();
        let vk = hpd_solve_vec(&q, &hk)?;
        for (j, &r) in rows.iter().enumerate() {
            v[(r, k)] = vk[j];
        }
    }
    Ok(v)
}

/// Soft symbols `v_kᴴ y / (√p_k v_kᴴ ĥ_k)`, unbiased with respect to the
/// estimated channel.
pub fn detect_with(v: &CMat, h_hat: &CMat, y: &CMat, link: &LinkBudget) -> CMat {
    let mut s = v.adjoint() * y;
    for k in 0..v.ncols() {
        let gain = v.column(k).dotc(&h_hat.column(k)) * link.powers[k].sqrt();
        if gain.norm() > 0.0 {
            let inv = gain.inv();
            s.row_mut(k).apply(|z| *z *= inv);
        }
    }
    s
}

pub fn lmmse_receive(
    est: &ChannelEstimate,
    y: &[CMat],
    link: &LinkBudget,
    mask: Option<&UcMask>,
    form: LmmseUcForm,
) -> Result<CombinerResult> {
    let v = lmmse_combiner(est, link, mask, form)?;
    let stacked = crate::channel::stack_rows(y);
    let s_hat = detect_with(&v, &est.h_hat, &stacked, link);
    Ok(CombinerResult { scheme: Scheme::Lmmse, s_hat, v: Some(v), uc_applied: mask.is_some() })
}

/// Both algebraic forms of the LMMSE detector:
/// `Hᴴ(HHᴴ + σ²I_M)⁻¹Y` and `(HᴴH + σ²I_K)⁻¹HᴴY`.
pub fn lmmse_receive_forms(h: &CMat, y: &CMat, sigma2: f64) -> Result<(CMat, CMat)> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain("LMMSE needs sigma2 > 0".into()));
    }
    if h.nrows() != y.nrows() {
        return Err(Error::Dimension(format!("H has {} rows, Y has {}", h.nrows(), y.nrows())));
    }
    let (m, k) = h.shape();
    let outer = h * h.adjoint() + CMat::identity(m, m).scale(sigma2);
    let form8 = h.adjoint() * hpd_solve(&outer, y)?;
    let gram = h.adjoint() * h + CMat::identity(k, k).scale(sigma2);
    let form9 = hpd_solve(&gram, &(h.adjoint() * y))?;
    Ok((form8, form9))
}

/// How the sequential receiver treats the incoming soft streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlmmseVariant {
    /// User `k` combines its `N` local antennas with its own incoming stream
    /// (`N+1` observations per user).
    #[default]
    PerUserStream,
    /// Every user combines the local antennas with all `K` incoming streams
    /// (`N+K` observations).
    JointStreams,
}

/// One AP of the sequential receiver: `z_l = local·Y_l + incoming·z_{l−1}`.
#[derive(Debug, Clone)]
pub struct NlmmseStage {
    /// `K×N`
    pub local: CMat,
    /// `K×K`
    pub incoming: CMat,
}

/// Sequential LMMSE along the stripe with per-stream noise renormalization.
///
/// Each AP forwards `K` streams together with their effective channel `G`
/// (`z ≈ G s`) and a diagonal error-variance estimate. After every stage a
/// stream's residual variance is rescaled to `σ²`.
#[derive(Debug, Clone)]
pub struct NlmmsePipeline {
    pub stages: Vec<NlmmseStage>,
    /// Effective channel of the streams leaving the last AP.
    pub effective_channel: CMat,
    pub error_var: Vec<f64>,
    pub variant: NlmmseVariant,
    n: usize,
}

impl NlmmsePipeline {
    pub fn design(
        est: &ChannelEstimate,
        link: &LinkBudget,
        mask: Option<&UcMask>,
        variant: NlmmseVariant,
    ) -> Result<Self> {
        check_mask(est, mask)?;
        let sigma2 = link.sigma2;
        if !(sigma2 > 0.0) {
            return Err(Error::Domain("N-LMMSE needs sigma2 > 0".into()));
        }
        let (k_users, n) = (est.k(), est.n);
        let sqrt_p = link.sqrt_powers();
        let mut g = CMat::zeros(k_users, k_users);
        let mut d = vec![sigma2; k_users];
        let mut stages = Vec::with_capacity(est.l);

        for l in 0..est.l {
            let mut hl = est.ap_block(l);
            for (i, sp) in sqrt_p.iter().enumerate() {
                hl.column_mut(i).scale_mut(*sp);
            }
            let mut cl = CMat::identity(n, n).scale(sigma2);
            for (i, &pi) in link.powers.iter().enumerate() {
                if pi > 0.0 {
                    cl += est.error_cov(i, l).scale(pi);
                }
            }
            let served: Vec<bool> = (0..k_users).map(|k| mask.is_none_or(|m| m.serves(k, l))).collect();

            let mut local = CMat::zeros(k_users, n);
            let mut incoming = CMat::zeros(k_users, k_users);
            let mut g_next = g.clone();
            let mut d_next = d.clone();

            match variant {
                NlmmseVariant::PerUserStream => {
                    let local_cov = &hl * hl.adjoint() + &cl;
                    for k in (0..k_users).filter(|&k| served[k]) {
                        let gk = g.row(k).into_owned();
                        let mut haug = CMat::zeros(n + 1, k_users);
                        haug.rows_mut(0, n).copy_from(&hl);
                        haug.row_mut(n).copy_from(&gk);
                        let mut cov = CMat::zeros(n + 1, n + 1);
                        cov.view_mut((0, 0), (n, n)).copy_from(&local_cov);
                        let cross = &hl * gk.adjoint();
                        cov.view_mut((0, n), (n, 1)).copy_from(&cross);
                        cov.view_mut((n, 0), (1, n)).copy_from(&cross.adjoint());
                        cov[(n, n)] = cr(gk.norm_squared() + d[k]);
                        let w = hpd_solve_vec(&cov, &haug.column(k).into_owned())?;
                        let row = w.adjoint();
                        let new_g = &row * &haug;
                        let local_row = row.columns(0, n).into_owned();
                        let err = (&local_row * &cl * local_row.adjoint())[(0, 0)].re + row[(0, n)].norm_sqr() * d[k];
                        let scale = renorm(err, sigma2);
                        local.row_mut(k).copy_from(&local_row.scale(scale));
                        incoming[(k, k)] = row[(0, n)] * scale;
                        g_next.row_mut(k).copy_from(&new_g.scale(scale));
                        d_next[k] = if err > 0.0 { sigma2 } else { 0.0 };
                    }
                }
                NlmmseVariant::JointStreams => {
                    let mut haug = CMat::zeros(n + k_users, k_users);
                    haug.rows_mut(0, n).copy_from(&hl);
                    haug.rows_mut(n, k_users).copy_from(&g);
                    let mut caug = CMat::zeros(n + k_users, n + k_users);
                    caug.view_mut((0, 0), (n, n)).copy_from(&cl);
                    for (j, dj) in d.iter().enumerate() {
                        caug[(n + j, n + j)] = cr(*dj);
                    }
                    let cov = &haug * haug.adjoint() + &caug;
                    let w = hpd_solve(&cov, &haug)?.adjoint();
                    for k in (0..k_users).filter(|&k| served[k]) {
                        let row = w.row(k).into_owned();
                        let err = (&row * &caug * row.adjoint())[(0, 0)].re;
                        let scale = renorm(err, sigma2);
                        let row = row.scale(scale);
                        local.row_mut(k).copy_from(&row.columns(0, n));
                        incoming.row_mut(k).copy_from(&row.columns(n, k_users));
                        g_next.row_mut(k).copy_from(&(&row * &haug));
                        d_next[k] = if err > 0.0 { sigma2 } else { 0.0 };
                    }
                }
            }
            for k in (0..k_users).filter(|&k| !served[k]) {
                incoming[(k, k)] = cr(1.0);
            }
            stages.push(NlmmseStage { local, incoming });
            g = g_next;
            d = d_next;
        }
        Ok(Self { stages, effective_channel: g, error_var: d, variant, n })
    }

    /// Push per-AP observations (`N×T` each) through the stripe.
    pub fn run(&self, y: &[CMat]) -> Result<CMat> {
        if y.len() != self.stages.len() {
            return Err(Error::Dimension(format!("{} AP observations for {} stages", y.len(), self.stages.len())));
        }
        let k = self.effective_channel.nrows();
        let mut z = CMat::zeros(k, y[0].ncols());
        for (stage, yl) in self.stages.iter().zip(y) {
            z = &stage.local * yl + &stage.incoming * z;
        }
        Ok(z)
    }

    /// End-to-end `M×K` combining matrix, found by pushing the identity
    /// basis through the pipeline.
    pub fn effective_combiner(&self) -> CMat {
        let m = self.n * self.stages.len();
        let probe: Vec<CMat> =
            (0..self.stages.len()).map(|l| CMat::identity(m, m).rows(l * self.n, self.n).into_owned()).collect();
        self.run(&probe).expect("probe matches stage count").adjoint()
    }

    /// Divide each stream by its own effective gain.
    pub fn detect(&self, z: &CMat) -> CMat {
        let mut s = z.clone();
        for k in 0..s.nrows() {
            let gain = self.effective_channel[(k, k)];
            if gain.norm() > 0.0 {
                let inv = gain.inv();
                s.row_mut(k).apply(|v| *v *= inv);
            }
        }
        s
    }
}

fn renorm(err: f64, sigma2: f64) -> f64 {
    if err > 0.0 {
        (sigma2 / err).sqrt()
    } else {
        1.0
    }
}

pub fn nlmmse_receive(
    est: &ChannelEstimate,
    y: &[CMat],
    link: &LinkBudget,
    mask: Option<&UcMask>,
    variant: NlmmseVariant,
) -> Result<CombinerResult> {
    let pipeline = NlmmsePipeline::design(est, link, mask, variant)?;
    let z = pipeline.run(y)?;
    Ok(CombinerResult {
        scheme: Scheme::Nlmmse,
        s_hat: pipeline.detect(&z),
        v: Some(pipeline.effective_combiner()),
        uc_applied: mask.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{receive_symbols, ChannelBlock, ChannelSampler};
    use crate::config::SymbolAlphabet;
    use crate::linalg::{c, cosine_similarity, rel_frobenius};
    use crate::metrics::sinr_all;
    use crate::rng::{complex_normal, substream, SimRng};

    fn random_cmat(rows: usize, cols: usize, rng: &mut SimRng) -> CMat {
        CMat::from_fn(rows, cols, |_, _| complex_normal(rng, 1.0))
    }

    fn iid_cov(k: usize, l: usize, n: usize) -> CovarianceSet {
        let r = (0..k * l).map(|i| CMat::identity(n, n).scale(0.5 + 0.1 * (i % 7) as f64)).collect();
        CovarianceSet::from_matrices(k, l, r).unwrap()
    }

    fn perfect_setup(k: usize, l: usize, n: usize, seed: u64) -> (ChannelBlock, ChannelEstimate) {
        let cov = iid_cov(k, l, n);
        let ch = ChannelSampler::new(&cov).unwrap().draw(&mut substream(seed, &[]));
        let est = ChannelEstimate::perfect(&ch, &cov);
        (ch, est)
    }

    #[test]
    fn scheme_names_roundtrip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("Q-LMMSE".parse::<Scheme>().unwrap(), Scheme::Qlmmse);
        assert!("zf".parse::<Scheme>().is_err());
    }

    #[test]
    fn uc_full_fraction_all_true() {
        let beta = DMatrix::from_fn(3, 5, |k, l| (k + l) as f64);
        assert_eq!(uc_select_beta(&beta, 1.0), UcMask::all(3, 5));
    }

    #[test]
    fn uc_quarter_of_24() {
        let mut rng = substream(1, &[]);
        let beta = DMatrix::from_fn(24, 24, |_, _| rand::Rng::random::<f64>(&mut rng));
        let mask = uc_select_beta(&beta, 0.25);
        for k in 0..24 {
            assert_eq!(mask.serving_aps(k).len(), 6);
        }
    }

    #[test]
    fn uc_monotone_selects_prefix_and_breaks_ties_low() {
        let beta = DMatrix::from_fn(1, 24, |_, l| 100.0 - l as f64);
        let mask = uc_select_beta(&beta, 0.25);
        assert_eq!(mask.serving_aps(0), vec![0, 1, 2, 3, 4, 5]);
        let flat = DMatrix::from_element(1, 8, 1.0);
        assert_eq!(uc_select_beta(&flat, 0.25).serving_aps(0), vec![0, 1]);
    }

    #[test]
    fn mrc_identity_estimate_passes_data() {
        let h_hat = CMat::identity(4, 4);
        let est = ChannelEstimate {
            h_hat,
            gamma: vec![vec![CMat::zeros(2, 2); 2]; 4],
            r_blk: vec![vec![CMat::zeros(2, 2); 2]; 4],
            n: 2,
            l: 2,
        };
        let mut rng = substream(2, &[]);
        let y = vec![random_cmat(2, 3, &mut rng), random_cmat(2, 3, &mut rng)];
        let out = mrc_combine(&est, &y, None).unwrap();
        assert!(rel_frobenius(&out.s_hat, &crate::channel::stack_rows(&y)) < 1e-15);
    }

    #[test]
    fn mrc_single_user_noiseless() {
        let (ch, est) = perfect_setup(1, 3, 2, 3);
        let link = LinkBudget::uniform(1, 4.0, 0.0);
        let s = CMat::from_fn(1, 4, |_, t| c(t as f64, 1.0));
        let d = receive_symbols(&link, &ch, s.clone(), &mut substream(0, &[])).unwrap();
        let out = mrc_combine(&est, &d.y, None).unwrap();
        let expected = s.scale(2.0 * ch.h.norm_squared());
        assert!(rel_frobenius(&out.s_hat, &expected) < 1e-13);
    }

    #[test]
    fn mrc_matches_dense_oracle() {
        let mut rng = substream(5, &[]);
        let h_hat = random_cmat(8, 3, &mut rng);
        let y = random_cmat(8, 5, &mut rng);
        let est = ChannelEstimate {
            h_hat: h_hat.clone(),
            gamma: vec![vec![CMat::zeros(2, 2); 4]; 3],
            r_blk: vec![vec![CMat::zeros(2, 2); 4]; 3],
            n: 2,
            l: 4,
        };
        let per_ap: Vec<CMat> = (0..4).map(|l| y.rows(2 * l, 2).into_owned()).collect();
        let out = mrc_combine(&est, &per_ap, None).unwrap();
        let mut oracle = CMat::zeros(3, 5);
        for k in 0..3 {
            for t in 0..5 {
                for m in 0..8 {
                    oracle[(k, t)] += h_hat[(m, k)].conj() * y[(m, t)];
                }
            }
        }
        assert!((&out.s_hat - &oracle).norm() < 1e-12);
    }

    #[test]
    fn mrc_partial_sums_order_independent() {
        let mut rng = substream(6, &[]);
        let h_hat = random_cmat(12, 3, &mut rng);
        let y: Vec<CMat> = (0..6).map(|_| random_cmat(2, 7, &mut rng)).collect();
        let forward = (0..6).fold(CMat::zeros(3, 7), |acc, l| acc + h_hat.rows(2 * l, 2).adjoint() * &y[l]);
        let reverse = (0..6).rev().fold(CMat::zeros(3, 7), |acc, l| acc + h_hat.rows(2 * l, 2).adjoint() * &y[l]);
        let shuffled =
            [3, 0, 5, 1, 4, 2].iter().fold(CMat::zeros(3, 7), |acc, &l| acc + h_hat.rows(2 * l, 2).adjoint() * &y[l]);
        assert!((&forward - &reverse).norm() < 1e-12);
        assert!((&forward - &shuffled).norm() < 1e-12);
    }

    #[test]
    fn mrc_mask_restricts_contributions() {
        let (_, est) = perfect_setup(2, 3, 2, 7);
        let mut rng = substream(7, &[1]);
        let y: Vec<CMat> = (0..3).map(|_| random_cmat(2, 4, &mut rng)).collect();
        let mask = UcMask { serve: vec![vec![true, false, false], vec![false, true, true]] };
        let out = mrc_combine(&est, &y, Some(&mask)).unwrap();
        let expected0 = est.ap_block(0).column(0).adjoint() * &y[0];
        assert!((out.s_hat.row(0) - expected0).norm() < 1e-12);
    }

    #[test]
    fn lmmse_single_user_is_mrc_direction() {
        let (_, est) = perfect_setup(1, 3, 2, 8);
        let link = LinkBudget::uniform(1, 1.0, 0.3);
        let v = lmmse_combiner(&est, &link, None, LmmseUcForm::default()).unwrap();
        let sim = cosine_similarity(&v.column(0).into_owned(), &est.h_hat.column(0).into_owned());
        assert!((sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lmmse_orthogonal_users_is_mrc_direction() {
        let h = CMat::from_row_slice(
            4,
            2,
            &[cr(1.0), cr(0.0), c(0.0, 1.0), cr(0.0), cr(0.0), cr(2.0), cr(0.0), c(1.0, 1.0)],
        );
        let ch = ChannelBlock::new(h, 2, 2).unwrap();
        let est = ChannelEstimate::perfect(&ch, &iid_cov(2, 2, 2));
        let v = lmmse_combiner(&est, &LinkBudget::uniform(2, 1.0, 0.2), None, LmmseUcForm::default()).unwrap();
        for k in 0..2 {
            let sim = cosine_similarity(&v.column(k).into_owned(), &est.h_hat.column(k).into_owned());
            assert!((sim - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lmmse_sinr_beats_mrc() {
        for seed in 0..20 {
            let (ch, est) = perfect_setup(3, 3, 2, 100 + seed);
            let link = LinkBudget::uniform(3, 1.0, 0.2);
            let v = lmmse_combiner(&est, &link, None, LmmseUcForm::default()).unwrap();
            let lmmse = sinr_all(&v, &ch.h, &link);
            let mrc = sinr_all(&est.h_hat, &ch.h, &link);
            for k in 0..3 {
                assert!(lmmse[k] >= mrc[k] * (1.0 - 1e-12), "seed {seed} user {k}");
            }
        }
    }

    #[test]
    fn lmmse_full_mask_equals_unmasked() {
        let cov = iid_cov(3, 4, 2);
        let mut rng = substream(9, &[]);
        let ch = ChannelSampler::new(&cov).unwrap().draw(&mut rng);
        let link = LinkBudget::uniform(3, 1.0, 0.2);
        let pilots = crate::channel::PilotBook::orthogonal(3, 3).unwrap();
        let z = crate::channel::transmit_pilots(&link, &ch, &pilots, &mut rng).unwrap();
        let est = crate::estimation::estimate_channels(&link, &cov, &pilots, &z).unwrap();
        let a = lmmse_combiner(&est, &link, None, LmmseUcForm::default()).unwrap();
        let mask = UcMask { serve: vec![vec![true, true, false, false]; 3] };
        for form in [LmmseUcForm::SolveThenMask, LmmseUcForm::RestrictThenSolve] {
            let b = lmmse_combiner(&est, &link, Some(&UcMask::all(3, 4)), form).unwrap();
            assert_eq!(a, b);
            let masked = lmmse_combiner(&est, &link, Some(&mask), form).unwrap();
            assert!(masked.rows(4, 4).iter().all(|z| *z == cr(0.0)));
        }
    }

    #[test]
    fn lmmse_uc_forms_differ_only_on_served_blocks() {
        let (ch, est) = perfect_setup(3, 4, 2, 17);
        let link = LinkBudget::uniform(3, 1.0, 0.2);
        let mask =
            UcMask { serve: vec![vec![true, true, false, false], vec![false, true, true, false], vec![true; 4]] };
        let full = lmmse_combiner(&est, &link, None, LmmseUcForm::SolveThenMask).unwrap();
        let stm = lmmse_combiner(&est, &link, Some(&mask), LmmseUcForm::SolveThenMask).unwrap();
        let mut expected = full.clone();
        apply_mask(&mut expected, 2, &mask);
        assert_eq!(stm, expected);
        // restricting the solve is the optimal combiner on the serving antennas
        let rts = lmmse_combiner(&est, &link, Some(&mask), LmmseUcForm::RestrictThenSolve).unwrap();
        let (a, b) = (sinr_all(&stm, &ch.h, &link), sinr_all(&rts, &ch.h, &link));
        assert!(b[0] >= a[0] * (1.0 - 1e-12) && b[1] >= a[1] * (1.0 - 1e-12));
        assert!((a[2] / b[2] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lmmse_noiseless_limit_recovers_symbols() {
        let (ch, est) = perfect_setup(3, 3, 2, 10);
        let link = LinkBudget::uniform(3, 2.0, 1e-12);
        let s = crate::channel::draw_symbols(3, 6, SymbolAlphabet::Qpsk, &mut substream(1, &[]));
        let noiseless = LinkBudget { sigma2: 0.0, ..link.clone() };
        let d = receive_symbols(&noiseless, &ch, s.clone(), &mut substream(0, &[])).unwrap();
        let out = lmmse_receive(&est, &d.y, &link, None, LmmseUcForm::default()).unwrap();
        assert!(rel_frobenius(&out.s_hat, &s) < 1e-6);
    }

    #[test]
    fn lmmse_forms_agree() {
        let mut rng = substream(11, &[]);
        for _ in 0..20 {
            let h = random_cmat(6, 3, &mut rng);
            let y = random_cmat(6, 4, &mut rng);
            let (f8, f9) = lmmse_receive_forms(&h, &y, 0.37).unwrap();
            assert!(rel_frobenius(&f8, &f9) < 1e-10);
        }
        let (f8, f9) = lmmse_receive_forms(&CMat::zeros(6, 3), &random_cmat(6, 2, &mut rng), 1.0).unwrap();
        assert!(f8.norm() == 0.0 && f9.norm() == 0.0);
    }

    #[test]
    fn lmmse_forms_scalar_case() {
        let h = CMat::from_column_slice(2, 1, &[c(1.0, 2.0), c(-0.5, 0.0)]);
        let y = CMat::from_column_slice(2, 1, &[c(0.3, -1.0), c(2.0, 0.5)]);
        let sigma2 = 0.8;
        // hᴴy/(‖h‖²+σ²) by hand
        let hy = c(1.0, -2.0) * c(0.3, -1.0) + c(-0.5, 0.0) * c(2.0, 0.5);
        let expected = hy / (5.25 + sigma2);
        let (f8, f9) = lmmse_receive_forms(&h, &y, sigma2).unwrap();
        assert!((f9[(0, 0)] - expected).norm() < 1e-14);
        assert!((f8[(0, 0)] - expected).norm() < 1e-14);
    }

    fn centralized_all_user(est: &ChannelEstimate, link: &LinkBudget) -> CMat {
        // Ĥ_eff(Ĥ_eff Ĥ_effᴴ + C)⁻¹ with C = Σ p_i(R_i − Γ_i) + σ²I (block diagonal)
        let m = est.m();
        let mut heff = est.h_hat.clone();
        for (i, p) in link.powers.iter().enumerate() {
            heff.column_mut(i).scale_mut(p.sqrt());
        }
        let mut cov = &heff * heff.adjoint() + CMat::identity(m, m).scale(link.sigma2);
        for l in 0..est.l {
            for i in 0..est.k() {
                let mut blk = cov.view_mut((l * est.n, l * est.n), (est.n, est.n));
                blk += est.error_cov(i, l).scale(link.powers[i]);
            }
        }
        hpd_solve(&cov, &heff).unwrap()
    }

    #[test]
    fn nlmmse_single_ap_matches_centralized() {
        for variant in [NlmmseVariant::PerUserStream, NlmmseVariant::JointStreams] {
            let (_, est) = perfect_setup(3, 1, 4, 12);
            let link = LinkBudget::uniform(3, 1.5, 0.25);
            let pipe = NlmmsePipeline::design(&est, &link, None, variant).unwrap();
            let v = pipe.effective_combiner();
            let reference = lmmse_combiner(&est, &link, None, LmmseUcForm::default()).unwrap();
            let all_user = centralized_all_user(&est, &link);
            let ch = ChannelBlock::new(est.h_hat.clone(), 4, 1).unwrap();
            let s_ref = sinr_all(&reference, &ch.h, &link);
            let s_seq = sinr_all(&v, &ch.h, &link);
            for k in 0..3 {
                let cos = cosine_similarity(&v.column(k).into_owned(), &reference.column(k).into_owned());
                assert!((cos - 1.0).abs() < 1e-10, "{variant:?}");
                let cos2 = cosine_similarity(&v.column(k).into_owned(), &all_user.column(k).into_owned());
                assert!((cos2 - 1.0).abs() < 1e-10);
                assert!((s_seq[k] / s_ref[k] - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nlmmse_noiseless_recovers_symbols() {
        for variant in [NlmmseVariant::PerUserStream, NlmmseVariant::JointStreams] {
            let (ch, est) = perfect_setup(2, 3, 4, 13);
            let link = LinkBudget::uniform(2, 1.0, 1e-12);
            let s = crate::channel::draw_symbols(2, 5, SymbolAlphabet::Qpsk, &mut substream(2, &[]));
            let noiseless = LinkBudget { sigma2: 0.0, ..link.clone() };
            let d = receive_symbols(&noiseless, &ch, s.clone(), &mut substream(0, &[])).unwrap();
            let out = nlmmse_receive(&est, &d.y, &link, None, variant).unwrap();
            assert!(rel_frobenius(&out.s_hat, &s) < 1e-5, "{variant:?}");
        }
    }

    #[test]
    fn nlmmse_probe_matches_run() {
        let (ch, est) = perfect_setup(3, 4, 2, 14);
        let link = LinkBudget::uniform(3, 1.0, 0.4);
        let d = crate::channel::transmit_data(&link, &ch, 9, SymbolAlphabet::Gaussian, &mut substream(1, &[])).unwrap();
        for variant in [NlmmseVariant::PerUserStream, NlmmseVariant::JointStreams] {
            let pipe = NlmmsePipeline::design(&est, &link, None, variant).unwrap();
            let direct = pipe.run(&d.y).unwrap();
            let via_probe = pipe.effective_combiner().adjoint() * d.stacked();
            assert!(rel_frobenius(&via_probe, &direct) < 1e-12);
        }
    }

    #[test]
    fn nlmmse_unserved_ap_passes_stream_through() {
        let (_, est) = perfect_setup(2, 3, 2, 15);
        let link = LinkBudget::uniform(2, 1.0, 0.4);
        let mask = UcMask { serve: vec![vec![true, false, true], vec![true, true, false]] };
        for variant in [NlmmseVariant::PerUserStream, NlmmseVariant::JointStreams] {
            let pipe = NlmmsePipeline::design(&est, &link, Some(&mask), variant).unwrap();
            assert!(pipe.stages[1].local.row(0).iter().all(|z| *z == cr(0.0)));
            assert_eq!(pipe.stages[1].incoming[(0, 0)], cr(1.0));
            assert_eq!(pipe.stages[1].incoming[(0, 1)], cr(0.0));
            if variant == NlmmseVariant::PerUserStream {
                // user 0 never listens to AP 1, user 1 never to AP 2
                let v = pipe.effective_combiner();
                assert!(v.view((2, 0), (2, 1)).iter().all(|z| *z == cr(0.0)));
                assert!(v.view((4, 1), (2, 1)).iter().all(|z| *z == cr(0.0)));
            }
        }
    }

    #[test]
    fn nlmmse_streams_normalized_to_noise_power() {
        let (_, est) = perfect_setup(3, 4, 2, 16);
        let link = LinkBudget::uniform(3, 1.0, 0.4);
        let pipe = NlmmsePipeline::design(&est, &link, None, NlmmseVariant::PerUserStream).unwrap();
        // with perfect CE the residual of each output is combined noise
        // only, so its power σ²‖v_k‖² must equal σ²
        let v = pipe.effective_combiner();
        for k in 0..3 {
            assert!((v.column(k).norm_squared() - 1.0).abs() < 1e-9);
        }
    }
}
