use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fio_hardy::analysis::{
    embedding_experiment, molecule_experiment, offsing_experiment, parse_exponent, sobolev_sharpness_experiment,
    wave_uniformity_experiment, EmbeddingConfig, ExperimentReport, MoleculeConfig, OffSingConfig, Outcome,
    SharpnessConfig, WaveUniformityConfig,
};
use fio_hardy::config::Config;
use fio_hardy::io::{load_fiof, plan_from_config, save_fiop, write_norm_csv, NormRecord};
use fio_hardy::transform::HardyNormEngine;
use fio_hardy::{Error, Result};

#[derive(Parser)]
#[command(name = "fio-hardy", version, about = "Hardy spaces for Fourier integral operators on a periodic grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Wave packet transform of a FIOF field, written as a FIOP dump.
    Transform {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// H^p_FIO norm of a FIOF field as a CSV norm report.
    Norm {
        /// 1, 2, inf or any exponent p >= 1.
        #[arg(long)]
        p: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Off-singularity constant of a lifted operator kernel.
    Offsing {
        /// identity, halfwave, pseudo, smoothing or zero.
        #[arg(long, default_value = "halfwave")]
        op: String,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        t: f64,
        #[arg(long = "N", default_value_t = 3)]
        n: u32,
        #[arg(long, default_value_t = 512)]
        m: usize,
        #[arg(long, default_value_t = 8.0)]
        extent: f64,
        /// Skip the doubled-resolution fit.
        #[arg(long)]
        no_refine: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Composite experiment driven by a key=value config.
    Experiment {
        #[arg(long, value_enum)]
        name: ExperimentName,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    Sharpness,
    Waveunif,
    Embed,
    Molecule,
}

fn write_report(report: &ExperimentReport, out: &Path) -> Result<Outcome> {
    let mut w = BufWriter::new(File::create(out)?);
    report.write_csv(&mut w)?;
    w.flush()?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("failed check {}: {} not in [{}, {}]", c.name, c.value, c.lo, c.hi);
    }
    Ok(report.outcome())
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Transform { input, plan, out } => {
            let f = load_fiof(&input)?;
            let plan = plan_from_config(&Config::load(&plan)?, *f.grid())?;
            let big_f = plan.analyze(&f)?;
            save_fiop(&big_f, &out)?;
            Ok(Outcome::Pass)
        }
        Command::Norm { p, input, plan, out } => {
            let p = parse_exponent(&p)?;
            if !(p >= 1.0) {
                return Err(Error::Config(format!("exponent {p} must be at least 1")));
            }
            let f = load_fiof(&input)?;
            let cfg = match plan {
                Some(path) => Config::load(&path)?,
                None => Config::default(),
            };
            let plan = plan_from_config(&cfg, *f.grid())?;
            let report = HardyNormEngine::new(&plan).norms(&f, &[p])?;
            let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let recs: Vec<NormRecord> = report.iter().map(|r| NormRecord::from_report(&id, plan.grid(), r)).collect();
            match out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    write_norm_csv(&recs, &mut w)?;
                    w.flush()?;
                }
                None => write_norm_csv(&recs, std::io::stdout().lock())?,
            }
            Ok(Outcome::Pass)
        }
        Command::Offsing { op, t, n, m, extent, no_refine, out } => {
            let cfg = OffSingConfig { op, t, n, extent, m, refine: !no_refine, ..OffSingConfig::default() };
            write_report(&offsing_experiment(&cfg)?, &out)
        }
        Command::Experiment { name, config, out } => {
            let cfg = Config::load(&config)?;
            let report = match name {
                ExperimentName::Sharpness => sobolev_sharpness_experiment(&SharpnessConfig::from_config(&cfg)?)?,
                ExperimentName::Waveunif => wave_uniformity_experiment(&WaveUniformityConfig::from_config(&cfg)?)?,
                ExperimentName::Embed => embedding_experiment(&EmbeddingConfig::from_config(&cfg)?)?,
                ExperimentName::Molecule => molecule_experiment(&MoleculeConfig::from_config(&cfg)?)?,
            };
            write_report(&report, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::ToleranceFailure) => ExitCode::from(2),
        Ok(Outcome::ResolutionFailure) => ExitCode::from(3),
        Err(e @ Error::Resolution(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
