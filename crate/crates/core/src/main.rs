use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfmimo::combiners::{uc_select, LmmseUcForm, NlmmseVariant, ReceiverConfig, Scheme};
use cfmimo::config::SystemConfig;
use cfmimo::cost::complexity_counts;
use cfmimo::harness::{self, parse_float_list, parse_ld_list, RunOptions};
use cfmimo::rng::{derive_seed, substream};
use cfmimo::scenario::{build_covariances, place_layout};
use cfmimo::{Error, Result};

#[derive(Parser)]
#[command(name = "cfmimo", version, about = "Cell-free massive MIMO uplink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config; defaults to the built-in reference setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Sequential receiver variant: per-user-stream or joint-streams.
    #[arg(long, default_value = "per-user-stream", value_parser = parse_variant)]
    nlmmse: NlmmseVariant,
    /// Centralized LMMSE under UC: solve-then-mask or restrict-then-solve.
    #[arg(long, default_value = "solve-then-mask", value_parser = parse_lmmse_uc)]
    lmmse_uc: LmmseUcForm,
}

impl Common {
    fn receivers(&self) -> ReceiverConfig {
        ReceiverConfig { nlmmse: self.nlmmse, lmmse_uc: self.lmmse_uc }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo SE for the chosen schemes.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        drops: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "mrc,lmmse,nlmmse,qlmmse")]
        schemes: String,
        /// User-centric modes to run: on, off or both.
        #[arg(long, default_value = "on,off")]
        uc: String,
    },
    /// Mean SE over SNR offsets (dB) and data lengths.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "-10:5:10", allow_hyphen_values = true)]
        dsnr: String,
        #[arg(long, default_value = "54,216,696,inf")]
        ld: String,
        #[arg(long, default_value = "off")]
        uc: String,
    },
    /// Fronthaul load and complexity counts.
    Cost {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_variant(s: &str) -> std::result::Result<NlmmseVariant, String> {
    match s {
        "per-user-stream" => Ok(NlmmseVariant::PerUserStream),
        "joint-streams" => Ok(NlmmseVariant::JointStreams),
        other => Err(format!("unknown variant `{other}`")),
    }
}

fn parse_lmmse_uc(s: &str) -> std::result::Result<LmmseUcForm, String> {
    match s {
        "solve-then-mask" => Ok(LmmseUcForm::SolveThenMask),
        "restrict-then-solve" => Ok(LmmseUcForm::RestrictThenSolve),
        other => Err(format!("unknown form `{other}`")),
    }
}

fn parse_schemes(s: &str) -> Result<Vec<Scheme>> {
    let mut out: Vec<Scheme> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn parse_uc(s: &str) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let flag = match part.trim() {
            "on" => true,
            "off" => false,
            other => return Err(Error::Parse(format!("UC mode must be on or off, got `{other}`"))),
        };
        if !out.contains(&flag) {
            out.push(flag);
        }
    }
    out.sort();
    Ok(out)
}

fn load_config(path: Option<&Path>) -> Result<SystemConfig> {
    match path {
        Some(p) => SystemConfig::load(p),
        None => Ok(SystemConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, drops, seed, schemes, uc } => {
            let mut cfg = load_config(common.config.as_deref())?;
            cfg.drops = drops.unwrap_or(cfg.drops);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let opts = RunOptions {
                schemes: parse_schemes(&schemes)?,
                uc_modes: parse_uc(&uc)?,
                receivers: common.receivers(),
                ..RunOptions::default()
            };
            let result = harness::run_experiment(&cfg, &opts)?;
            harness::write_outputs(&common.out, &result)?;
            for ((scheme, uc), stats) in &result.stats {
                let tag = if *uc { " +UC" } else { "" };
                println!("{:<8}{:<5} mean {:.4}  p10 {:.4}", scheme.to_string(), tag, stats.mean(), stats.p10());
            }
        }
        Command::Sweep { common, dsnr, ld, uc } => {
            let cfg = load_config(common.config.as_deref())?;
            let opts = RunOptions { uc_modes: parse_uc(&uc)?, receivers: common.receivers(), ..RunOptions::default() };
            let rows = harness::sweep_snr_ld(&cfg, &parse_float_list(&dsnr)?, &parse_ld_list(&ld)?, &opts)?;
            std::fs::create_dir_all(&common.out)?;
            harness::write_sweep(&common.out, &rows)?;
        }
        Command::Cost { common } => {
            let cfg = load_config(common.config.as_deref())?;
            cfg.validate()?;
            // user-centric counts use the AP loads of the first drop
            let drop_seed = derive_seed(cfg.seed, &[0]);
            let layout = place_layout(&cfg, &mut substream(drop_seed, &[0]));
            let mask = uc_select(&build_covariances(&cfg, &layout)?, cfg.uc_fraction);
            let mut reports = Vec::new();
            for scheme in Scheme::ALL {
                reports.push(complexity_counts(scheme, &cfg, None, common.receivers()));
                reports.push(complexity_counts(scheme, &cfg, Some(&mask), common.receivers()));
            }
            std::fs::create_dir_all(&common.out)?;
            harness::write_costs(&common.out, &reports)?;
            for r in &reports {
                println!(
                    "{:<10} fronthaul {:>8}  total {:>10}  cpu {:>10}",
                    r.label(),
                    r.fronthaul_reals,
                    r.c_total,
                    r.c_cpu
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
