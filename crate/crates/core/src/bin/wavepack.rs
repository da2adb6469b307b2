//! Command-line front end of the measurement harness.
//!
//! Every subcommand writes one report into the output directory and prints it in
//! human form. The exit status is 0 when every checked row passes, 1 when some
//! fail (they are listed on stderr) and 2 on errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use wavepack::harness::experiments::{self, Check};
use wavepack::harness::{criteria, ExperimentConfig, Format, Report};
use wavepack::waves::{read_snapshot, write_snapshot};
use wavepack::{FreeWave, Result};

#[derive(Parser)]
#[command(name = "wavepack", version, about = "Free-wave experiments and acceptance checks")]
struct Cli {
    /// TOML experiment configuration. Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// First seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format (csv, json, human), overriding the configuration.
    #[arg(long, global = true)]
    format: Option<Format>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decompose a localized random wave, dump it and verify it.
    Decompose {
        /// A (phase space) or B (two time); defaults to the configured variant.
        #[arg(value_parser = ["A", "B"])]
        variant: Option<String>,
    },
    /// Run one check on a dumped decomposition or on fresh waves.
    Verify {
        check: VerifyKind,
        /// Directory written by `decompose`; its input wave and configuration are reused.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Run one scaling sweep.
    Sweep { kind: SweepKind },
    /// Frequency-block measurements of full-spectrum waves.
    Corollaries,
    /// Run acceptance criteria and write one report.
    Report {
        /// Criterion numbers, comma separated; all when omitted.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyKind {
    Bessel,
    Ortho,
    Localization,
    Decay,
    Commutation,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Theorem1,
    Theorem2,
    Strichartz,
    Thickness,
    Alpha,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::Theorem1 => "theorem1",
            SweepKind::Theorem2 => "theorem2",
            SweepKind::Strichartz => "strichartz",
            SweepKind::Thickness => "thickness",
            SweepKind::Alpha => "alpha",
        }
    }
}

const INPUT_STEM: &str = "input";
const CONFIG_FILE: &str = "config.toml";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(rep) => {
            let failures = rep.failures();
            if failures.is_empty() {
                return ExitCode::SUCCESS;
            }
            eprintln!("{} failing rows:", failures.len());
            for r in failures {
                eprintln!("  {} {} {}{}", r.experiment, r.tag, r.key, r.seed.map(|s| format!(" seed={s}")).unwrap_or_default());
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli, path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path.or(cli.config.as_deref()) {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Report> {
    let (cfg, name, rep) = match &cli.cmd {
        Cmd::Decompose { variant } => {
            let mut cfg = load_config(cli, None)?;
            if let Some(v) = variant {
                cfg.decompose.variant = v.clone();
            }
            cfg.validate()?;
            let rep = decompose(&cfg)?;
            (cfg.clone(), format!("decompose-{}", cfg.decompose.variant), rep)
        }
        Cmd::Verify { check, from } => {
            if from.is_some() && matches!(check, VerifyKind::Decay | VerifyKind::Commutation) {
                return Err(wavepack::Error::Config("--from only applies to decomposition checks".into()));
            }
            let cfg = load_config(cli, from.as_ref().map(|d| d.join(CONFIG_FILE)).as_deref())?;
            let rep = verify(&cfg, *check, from.as_deref())?;
            let name = format!("verify-{}", check.to_possible_value().expect("named").get_name());
            (cfg, name, rep)
        }
        Cmd::Sweep { kind } => {
            let cfg = load_config(cli, None)?;
            let rep = match kind {
                SweepKind::Theorem1 => experiments::run_theorem1_sweep(&cfg)?,
                SweepKind::Theorem2 => experiments::run_theorem2_sweep(&cfg)?,
                SweepKind::Strichartz => experiments::run_improved_strichartz(&cfg)?,
                SweepKind::Thickness => experiments::run_fundamental_thickness(&cfg)?,
                SweepKind::Alpha => experiments::run_alpha_scaling(&cfg)?,
            };
            (cfg, format!("sweep-{}", kind.name()), rep)
        }
        Cmd::Corollaries => {
            let cfg = load_config(cli, None)?;
            let rep = experiments::run_corollaries(&cfg)?;
            (cfg, "corollaries".to_string(), rep)
        }
        Cmd::Report { criteria: ids } => {
            let cfg = load_config(cli, None)?;
            let ids: Vec<u8> = if ids.is_empty() { (1..=criteria::COUNT).collect() } else { ids.clone() };
            if let Some(bad) = ids.iter().find(|&&i| i == 0 || i > criteria::COUNT) {
                return Err(wavepack::Error::Config(format!("no criterion {bad}")));
            }
            (cfg, "criteria".to_string(), criteria::report(&ids))
        }
    };
    let path = cfg.output.dir.join(format!("{name}.{}", cfg.output.format.extension()));
    rep.write(cfg.output.format, &path)?;
    print!("{}", rep.to_human());
    log::info!("wrote {}", path.display());
    Ok(rep)
}

fn decompose(cfg: &ExperimentConfig) -> Result<Report> {
    let dc = &cfg.decompose;
    let d = experiments::run_decomposition(dc, cfg.dim, cfg.eps, cfg.seed)?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    d.write_tube_table(&dir.join(format!("tubes-{}.csv", dc.variant)))?;
    write_snapshot(&d.phi.evaluate(0.0), &dir.join(INPUT_STEM))?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string()?)?;
    log::info!("{} packets, dumped to {}", d.len(), dir.display());
    let mut rep = Report::new(Some(cfg.clone()));
    for check in [Check::Fidelity, Check::Bessel, Check::Ortho, Check::Localization] {
        for r in experiments::verify_decomposition(&d, check, dc, cfg.seed)? {
            rep.push(r);
        }
    }
    Ok(rep)
}

fn verify(cfg: &ExperimentConfig, kind: VerifyKind, from: Option<&Path>) -> Result<Report> {
    let check = match kind {
        VerifyKind::Bessel => Check::Bessel,
        VerifyKind::Ortho => Check::Ortho,
        VerifyKind::Localization => Check::Localization,
        VerifyKind::Decay => return experiments::run_decay_sweep(cfg),
        VerifyKind::Commutation => return experiments::run_commutation(cfg),
    };
    let dc = &cfg.decompose;
    let d = match from {
        Some(dir) => {
            // Snapshots are single precision, so the mean velocity is only zero to rounding.
            let phi = FreeWave::from_data_projected(&read_snapshot(&dir.join(INPUT_STEM))?)?.0;
            experiments::decompose_wave(&phi, dc, cfg.eps)?
        }
        None => experiments::run_decomposition(dc, cfg.dim, cfg.eps, cfg.seed)?,
    };
    let mut rep = Report::new(Some(cfg.clone()));
    for r in experiments::verify_decomposition(&d, check, dc, cfg.seed)? {
        rep.push(r);
    }
    Ok(rep)
}
