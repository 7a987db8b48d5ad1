//! Monte Carlo driver and result files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{transmit_data, transmit_pilots, ChannelSampler, PilotBook};
use crate::combiners::{
    lmmse_combiner, masked_estimate, mrc_combine, uc_select, NlmmsePipeline, ReceiverConfig, Scheme, UcMask,
};
use crate::config::{LinkBudget, SystemConfig};
use crate::cost::{complexity_counts, CostReport};
use crate::error::{Error, Result};
use crate::estimation::{estimate_channels, ChannelEstimate};
use crate::linalg::CMat;
use crate::metrics::{pilot_prefactor, se_from_sinr, sinr_all, SeStats};
use crate::qlmmse::{exact_statistics, power_weight_streams, scale_columns, QlmmseDetector};
use crate::rng::{derive_seed, substream};
use crate::scenario::{build_covariances, place_layout};

/// Share of coherence blocks allowed to fail before a run is rejected.
pub const MAX_SKIP_FRACTION: f64 = 1e-3;

/// Relative tolerance of the per-block PSD check on `Γ` and `R − Γ`.
const PSD_TOL: f64 = 1e-9;

/// Where the Q-LMMSE CPU gets its correlation matrix from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QStatistics {
    /// Sample correlation of the `L_D` received MRC streams.
    #[default]
    Sample,
    /// The `L_D → ∞` limit, injected directly. SE then carries no pilot
    /// overhead factor.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOptions {
    pub schemes: Vec<Scheme>,
    pub uc_modes: Vec<bool>,
    pub receivers: ReceiverConfig,
    pub statistics: QStatistics,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            uc_modes: vec![false, true],
            receivers: ReceiverConfig::default(),
            statistics: QStatistics::Sample,
        }
    }
}

/// One row of `se_samples.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeRecord {
    pub drop: usize,
    pub user: usize,
    pub scheme: Scheme,
    pub uc: bool,
    pub sinr_mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: SystemConfig,
    pub options: RunOptions,
    pub version: String,
    pub seed: u64,
    pub drop_seeds: Vec<u64>,
    pub wall_seconds: f64,
    pub drop_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub records: Vec<SeRecord>,
    pub stats: BTreeMap<(Scheme, bool), SeStats>,
    pub costs: Vec<CostReport>,
    pub manifest: RunManifest,
    pub total_blocks: usize,
    pub skipped_blocks: usize,
    /// Links whose `Γ` or `R − Γ` failed the PSD check.
    pub psd_violations: usize,
}

impl ExperimentResult {
    pub fn mean_se(&self, scheme: Scheme, uc: bool) -> Option<f64> {
        self.stats.get(&(scheme, uc)).map(SeStats::mean)
    }
}

type BlockSinr = BTreeMap<(Scheme, bool), Vec<f64>>;

struct DropOutcome {
    /// Per (scheme, uc), one SINR list per user.
    sinr: BTreeMap<(Scheme, bool), Vec<Vec<f64>>>,
    mask: Option<UcMask>,
    skipped: usize,
    psd_violations: usize,
    seconds: f64,
}

fn uc_label(uc: bool) -> &'static str {
    if uc {
        "on"
    } else {
        "off"
    }
}

fn qlmmse_combiner(
    est: &ChannelEstimate,
    h_true: &CMat,
    y: Option<&[CMat]>,
    link: &LinkBudget,
    mask: Option<&UcMask>,
    statistics: QStatistics,
) -> Result<CMat> {
    let sqrt_p = link.sqrt_powers();
    let h_hat_eff = scale_columns(&masked_estimate(est, mask), &sqrt_p);
    let detector = match (statistics, y) {
        (QStatistics::Exact, _) => {
            let a = exact_statistics(&h_hat_eff, &scale_columns(h_true, &sqrt_p), link.sigma2);
            QlmmseDetector::from_statistics(&a, link.sigma2)?
        }
        (QStatistics::Sample, Some(y)) => {
            // the CPU weights the received MRC streams by √p_k
            let streams = mrc_combine(est, y, mask)?.s_hat;
            QlmmseDetector::from_streams(&power_weight_streams(&streams, &link.powers), link.sigma2)?
        }
        (QStatistics::Sample, None) => return Err(Error::Domain("Q-LMMSE needs data symbols".into())),
    };
    Ok(detector.effective_combiner(&h_hat_eff))
}

#[allow(clippy::too_many_arguments)]
fn evaluate_block(
    cfg: &SystemConfig,
    link: &LinkBudget,
    cov: &crate::scenario::CovarianceSet,
    sampler: &ChannelSampler,
    pilots: &PilotBook,
    mask: Option<&UcMask>,
    opts: &RunOptions,
    rng: &mut crate::rng::SimRng,
) -> Result<(BlockSinr, usize)> {
    let ch = sampler.draw(rng);
    let z = transmit_pilots(link, &ch, pilots, rng)?;
    let needs_data = opts.statistics == QStatistics::Sample && opts.schemes.contains(&Scheme::Qlmmse);
    let data = if needs_data { Some(transmit_data(link, &ch, cfg.ld(), cfg.symbols, rng)?) } else { None };
    let est = estimate_channels(link, cov, pilots, &z)?;
    let psd_violations = usize::from(!est.check_psd(PSD_TOL)?);

    let mut out = BlockSinr::new();
    for &uc in &opts.uc_modes {
        let m = if uc { mask } else { None };
        for &scheme in &opts.schemes {
            let v = match scheme {
                Scheme::Mrc => masked_estimate(&est, m),
                Scheme::Lmmse => lmmse_combiner(&est, link, m, opts.receivers.lmmse_uc)?,
                Scheme::Nlmmse => NlmmsePipeline::design(&est, link, m, opts.receivers.nlmmse)?.effective_combiner(),
                Scheme::Qlmmse => {
                    qlmmse_combiner(&est, &ch.h, data.as_ref().map(|d| d.y.as_slice()), link, m, opts.statistics)?
                }
            };
            let sinr = sinr_all(&v, &ch.h, link);
            if sinr.iter().any(|s| !s.is_finite()) {
                return Err(Error::Domain(format!("non-finite SINR for {scheme}")));
            }
            out.insert((scheme, uc), sinr);
        }
    }
    Ok((out, psd_violations))
}

fn simulate_drop(cfg: &SystemConfig, link: &LinkBudget, drop_seed: u64, opts: &RunOptions) -> Result<DropOutcome> {
    let start = Instant::now();
    let mut rng = substream(drop_seed, &[0]);
    let layout = place_layout(cfg, &mut rng);
    let cov = build_covariances(cfg, &layout)?;
    let sampler = ChannelSampler::new(&cov)?;
    let pilots = PilotBook::orthogonal(cfg.tau_p, cfg.k)?;
    let mask = opts.uc_modes.contains(&true).then(|| uc_select(&cov, cfg.uc_fraction));

    let mut sinr: BTreeMap<(Scheme, bool), Vec<Vec<f64>>> = BTreeMap::new();
    let mut skipped = 0;
    let mut psd_violations = 0;
    for block in 0..cfg.blocks_per_drop {
        let mut block_rng = substream(drop_seed, &[1 + block as u64]);
        match evaluate_block(cfg, link, &cov, &sampler, &pilots, mask.as_ref(), opts, &mut block_rng) {
            Ok((values, psd)) => {
                psd_violations += psd;
                for (key, per_user) in values {
                    let entry = sinr.entry(key).or_insert_with(|| vec![Vec::new(); cfg.k]);
                    for (acc, s) in entry.iter_mut().zip(per_user) {
                        acc.push(s);
                    }
                }
            }
            Err(e) => {
                log::warn!("drop seed {drop_seed:#x}, block {block} skipped: {e}");
                skipped += 1;
            }
        }
    }
    Ok(DropOutcome { sinr, mask, skipped, psd_violations, seconds: start.elapsed().as_secs_f64() })
}

/// Run every drop of `cfg` (in parallel) and collect per-user SE.
pub fn run_experiment(cfg: &SystemConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    if opts.schemes.is_empty() || opts.uc_modes.is_empty() {
        return Err(Error::Domain("at least one scheme and one UC mode are required".into()));
    }
    let start = Instant::now();
    let link = cfg.link_budget();
    let drop_seeds: Vec<u64> = (0..cfg.drops).map(|d| derive_seed(cfg.seed, &[d as u64])).collect();
    let outcomes =
        drop_seeds.par_iter().map(|&seed| simulate_drop(cfg, &link, seed, opts)).collect::<Result<Vec<_>>>()?;

    let total_blocks = cfg.drops * cfg.blocks_per_drop;
    let skipped_blocks: usize = outcomes.iter().map(|o| o.skipped).sum();
    if skipped_blocks as f64 > MAX_SKIP_FRACTION * total_blocks as f64 {
        return Err(Error::TooManySkipped { skipped: skipped_blocks, total: total_blocks });
    }

    let prefactor = match opts.statistics {
        QStatistics::Sample => pilot_prefactor(cfg.tau_c, cfg.tau_p),
        QStatistics::Exact => 1.0,
    };
    let mut records = Vec::new();
    let mut stats: BTreeMap<(Scheme, bool), SeStats> = BTreeMap::new();
    for (drop, outcome) in outcomes.iter().enumerate() {
        for &scheme in &opts.schemes {
            for &uc in &opts.uc_modes {
                let Some(per_user) = outcome.sinr.get(&(scheme, uc)) else { continue };
                for (user, samples) in per_user.iter().enumerate() {
                    let se = se_from_sinr(samples, prefactor);
                    let sinr_mean = samples.iter().sum::<f64>() / samples.len() as f64;
                    records.push(SeRecord { drop, user, scheme, uc, sinr_mean, se });
                    stats.entry((scheme, uc)).or_default().values.push(se);
                }
            }
        }
    }

    let mask0 = outcomes.first().and_then(|o| o.mask.as_ref());
    let mut costs = Vec::new();
    for &scheme in &opts.schemes {
        for &uc in &opts.uc_modes {
            let mask = if uc { mask0 } else { None };
            if uc && mask.is_none() {
                continue;
            }
            costs.push(complexity_counts(scheme, cfg, mask, opts.receivers));
        }
    }

    let manifest = RunManifest {
        config: cfg.clone(),
        options: opts.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        drop_seeds,
        wall_seconds: start.elapsed().as_secs_f64(),
        drop_seconds: outcomes.iter().map(|o| o.seconds).collect(),
    };
    Ok(ExperimentResult {
        records,
        stats,
        costs,
        manifest,
        total_blocks,
        skipped_blocks,
        psd_violations: outcomes.iter().map(|o| o.psd_violations).sum(),
    })
}

/// Data length of one sweep point; `Exact` injects the limiting statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdPoint {
    Finite(usize),
    Exact,
}

impl fmt::Display for LdPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LdPoint::Finite(ld) => write!(f, "{ld}"),
            LdPoint::Exact => f.write_str("inf"),
        }
    }
}

impl FromStr for LdPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") {
            return Ok(LdPoint::Exact);
        }
        match s.parse::<usize>() {
            Ok(ld) if ld > 0 => Ok(LdPoint::Finite(ld)),
            _ => Err(Error::Parse(format!("invalid data length `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub uc: bool,
    pub dsnr_db: f64,
    pub ld: LdPoint,
    pub mean_se: f64,
    pub p10_se: f64,
}

/// Copy of `cfg` with every transmit power raised by `dsnr_db`.
pub fn with_snr_offset(cfg: &SystemConfig, dsnr_db: f64) -> SystemConfig {
    let factor = 10f64.powf(dsnr_db / 10.0);
    let mut out = cfg.clone();
    out.p *= factor;
    if let Some(p) = out.p_per_user.as_mut() {
        p.iter_mut().for_each(|x| *x *= factor);
    }
    out
}

/// Mean SE per scheme over a grid of SNR offsets and data lengths. Every
/// point reuses the same drop seeds.
pub fn sweep_snr_ld(cfg: &SystemConfig, dsnr_db: &[f64], lds: &[LdPoint], opts: &RunOptions) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &dsnr in dsnr_db {
        for &ld in lds {
            let mut point = with_snr_offset(cfg, dsnr);
            let mut point_opts = opts.clone();
            match ld {
                LdPoint::Finite(ld) => point.tau_c = point.tau_p + ld,
                LdPoint::Exact => point_opts.statistics = QStatistics::Exact,
            }
            let result = run_experiment(&point, &point_opts)?;
            for ((scheme, uc), stats) in &result.stats {
                rows.push(SweepRow {
                    scheme: *scheme,
                    uc: *uc,
                    dsnr_db: dsnr,
                    ld,
                    mean_se: stats.mean(),
                    p10_se: stats.p10(),
                });
            }
        }
    }
    Ok(rows)
}

/// `a:step:b` or a comma list.
pub fn parse_float_list(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Parse(format!("invalid number list `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<f64> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let (a, step, b) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || b < a {
            return Err(bad());
        }
        let count = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| a + i as f64 * step).collect());
    }
    spec.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

pub fn parse_ld_list(spec: &str) -> Result<Vec<LdPoint>> {
    spec.split(',').map(str::parse).collect()
}

fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn write_se_samples(dir: &Path, records: &[SeRecord]) -> Result<()> {
    let mut w = create(dir, "se_samples.csv")?;
    writeln!(w, "drop,user,scheme,uc,sinr_mean,se")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.drop,
            r.user,
            r.scheme,
            uc_label(r.uc),
            fmt_float(r.sinr_mean),
            fmt_float(r.se)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cdfs(dir: &Path, stats: &BTreeMap<(Scheme, bool), SeStats>) -> Result<()> {
    for ((scheme, uc), s) in stats {
        let mut w = create(dir, &format!("cdf_{scheme}_{}.csv", uc_label(*uc)))?;
        writeln!(w, "se,prob")?;
        for (x, p) in s.cdf().table() {
            writeln!(w, "{},{}", fmt_float(x), fmt_float(p))?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_costs(dir: &Path, costs: &[CostReport]) -> Result<()> {
    let mut w = create(dir, "cost.csv")?;
    writeln!(w, "scheme,fronthaul_reals,c_serial,c_parallel,c_total")?;
    for c in costs {
        writeln!(w, "{},{},{},{},{}", c.label(), c.fronthaul_reals, c.c_serial, c.c_parallel, c.c_total)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = create(dir, "sweep.csv")?;
    writeln!(w, "scheme,uc,dsnr_db,ld,mean_se,p10_se")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.scheme,
            uc_label(r.uc),
            fmt_float(r.dsnr_db),
            r.ld,
            fmt_float(r.mean_se),
            fmt_float(r.p10_se)
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SchemeSummary {
    scheme: Scheme,
    uc: bool,
    samples: usize,
    mean_se: String,
    p10_se: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    schemes: Vec<SchemeSummary>,
    costs: &'a [CostReport],
    total_blocks: usize,
    skipped_blocks: usize,
    psd_violations: usize,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Write every output of a run into `dir`. All files except
/// `manifest.json` (which holds timings) are a pure function of the
/// config and seed.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_se_samples(dir, &result.records)?;
    write_cdfs(dir, &result.stats)?;
    write_costs(dir, &result.costs)?;
    let summary = Summary {
        schemes: result
            .stats
            .iter()
            .map(|((scheme, uc), s)| SchemeSummary {
                scheme: *scheme,
                uc: *uc,
                samples: s.len(),
                mean_se: fmt_float(s.mean()),
                p10_se: fmt_float(s.p10()),
            })
            .collect(),
        costs: &result.costs,
        total_blocks: result.total_blocks,
        skipped_blocks: result.skipped_blocks,
        psd_violations: result.psd_violations,
    };
    write_json(dir, "summary.json", &summary)?;
    write_json(dir, "manifest.json", &result.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SystemConfig {
        SystemConfig { l: 4, n: 2, k: 3, tau_p: 3, tau_c: 40, drops: 3, blocks_per_drop: 2, ..SystemConfig::default() }
    }

    #[test]
    fn row_count_matches_grid() {
        let cfg = small_config();
        let result = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(result.records.len(), 3 * 3 * 4 * 2);
        assert_eq!(result.skipped_blocks, 0);
        assert_eq!(result.costs.len(), 8);
        assert!(result.records.iter().all(|r| r.se >= 0.0 && r.se.is_finite()));
    }

    #[test]
    fn single_scheme_single_row_deterministic() {
        let cfg = SystemConfig { k: 1, tau_p: 1, drops: 1, blocks_per_drop: 1, ..small_config() };
        let opts = RunOptions { schemes: vec![Scheme::Mrc], uc_modes: vec![false], ..RunOptions::default() };
        let a = run_experiment(&cfg, &opts).unwrap();
        let b = run_experiment(&cfg, &opts).unwrap();
        assert_eq!(a.records.len(), 1);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn drops_do_not_depend_on_each_other() {
        let cfg = small_config();
        let opts = RunOptions::default();
        let three = run_experiment(&cfg, &opts).unwrap();
        let two = run_experiment(&SystemConfig { drops: 2, ..cfg }, &opts).unwrap();
        let prefix: Vec<_> = three.records.iter().filter(|r| r.drop < 2).cloned().collect();
        assert_eq!(prefix, two.records);
    }

    #[test]
    fn zero_offset_sweep_matches_base_run() {
        let cfg = small_config();
        let opts = RunOptions { uc_modes: vec![false], ..RunOptions::default() };
        let base = run_experiment(&cfg, &opts).unwrap();
        let rows = sweep_snr_ld(&cfg, &[0.0], &[LdPoint::Finite(cfg.ld())], &opts).unwrap();
        for row in rows {
            assert_eq!(Some(row.mean_se), base.mean_se(row.scheme, row.uc));
        }
    }

    #[test]
    fn snr_offset_scales_power() {
        let cfg = SystemConfig { p_per_user: Some(vec![1.0, 2.0]), ..SystemConfig::default() };
        let up = with_snr_offset(&cfg, 10.0);
        assert!((up.p - 500.0).abs() < 1e-9);
        assert_eq!(up.p_per_user.unwrap().iter().map(|x| x.round()).collect::<Vec<_>>(), vec![10.0, 20.0]);
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_float_list("-10:5:10").unwrap(), vec![-10.0, -5.0, 0.0, 5.0, 10.0]);
        assert_eq!(parse_float_list("1, 2.5").unwrap(), vec![1.0, 2.5]);
        assert!(parse_float_list("1:0:3").is_err());
        assert_eq!(
            parse_ld_list("54,216,inf").unwrap(),
            vec![LdPoint::Finite(54), LdPoint::Finite(216), LdPoint::Exact]
        );
        assert!(parse_ld_list("0").is_err());
    }

    #[test]
    fn rejects_invalid_config_by_field() {
        let cfg = SystemConfig { tau_p: 2, ..small_config() };
        let err = run_experiment(&cfg, &RunOptions::default()).unwrap_err();
        assert!(err.to_string().contains("tau_p"), "{err}");
    }

    #[test]
    fn writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SystemConfig { drops: 1, blocks_per_drop: 1, ..small_config() };
        let result = run_experiment(&cfg, &RunOptions::default()).unwrap();
        write_outputs(dir.path(), &result).unwrap();
        for name in
            ["se_samples.csv", "cost.csv", "summary.json", "manifest.json", "cdf_qlmmse_on.csv", "cdf_mrc_off.csv"]
        {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let samples = fs::read_to_string(dir.path().join("se_samples.csv")).unwrap();
        assert_eq!(samples.lines().count(), 1 + 3 * 4 * 2);
        let cost = fs::read_to_string(dir.path().join("cost.csv")).unwrap();
        assert!(cost.lines().any(|l| l.starts_with("nlmmse_uc,")));
    }
}
