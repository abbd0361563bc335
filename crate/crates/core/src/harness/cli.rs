//! The `homeostat` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{parse_config, ExperimentConfig, ShiftModeKind, ShiftSetting};
use super::metrics::{fmt_float, write_aggregate_csv, write_csv, write_failures, AggregateRow};
use super::plot::{parse_plot_spec, render_plot, Metric, PlotSpec, SeriesKey};
use super::run::{run_experiment, Experiment, ExperimentData};
use crate::drift::write_event_log;
use crate::error::{Error, Result};
use crate::gradcheck::{self, DEFAULT_TOLERANCE};
use crate::oracle;

#[derive(Debug, Parser)]
#[command(name = "homeostat", version, about = "Homeostatic learning-rate experiments under concept shift")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment a config describes.
    Run(RunArgs),
    /// Run every learner over the config's grid of constant shift rates.
    Sweep(RunArgs),
    /// Run every learner under the seasonal schedules.
    Seasonal(RunArgs),
    /// Render an aggregate CSV to SVG.
    Plot {
        aggregate: PathBuf,
        /// Inline `key=value;...` spec or a path to a spec file.
        spec: String,
        /// Output file (default: next to the CSV, `.svg` extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check backprop against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Compare the counterfactual decision with its brute-force oracle.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        states: usize,
        #[arg(long, default_value_t = 100)]
        max_store: usize,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<u32>,
    #[arg(long)]
    pub threads: Option<usize>,
}

impl RunArgs {
    /// Reads the config and applies flag overrides.
    pub fn load(&self) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| Error::io(&self.config, e))?;
        let mut cfg = parse_config(&text)?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `std::env::args` and runs. Errors print one line to stderr.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            match cfg.shift_mode {
                ShiftModeKind::Constant => sweep(cfg, false),
                ShiftModeKind::Seasonal => seasonal(cfg),
            }?;
        }
        Command::Sweep(args) => {
            let mut cfg = args.load()?;
            cfg.shift_mode = ShiftModeKind::Constant;
            sweep(cfg, true)?;
        }
        Command::Seasonal(args) => {
            let mut cfg = args.load()?;
            cfg.shift_mode = ShiftModeKind::Seasonal;
            seasonal(cfg)?;
        }
        Command::Plot { aggregate, spec, out } => {
            let rows = super::metrics::read_aggregate_csv(&aggregate)?;
            let spec_text = if Path::new(&spec).is_file() {
                std::fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?
            } else {
                spec
            };
            let spec = parse_plot_spec(&spec_text)?;
            let out = out.unwrap_or_else(|| aggregate.with_extension("svg"));
            write_text(&out, &render_plot(&rows, &spec)?)?;
            println!("wrote {}", out.display());
        }
        Command::Gradcheck { seed, instances } => {
            let reports = gradcheck::run_suite(instances, seed)?;
            let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
            let coords: usize = reports.iter().map(|r| r.coords_checked).sum();
            println!(
                "gradcheck: {instances} instances, {coords} coordinates, max relative error {worst:.3e} (tolerance {DEFAULT_TOLERANCE:e})"
            );
            if !(worst <= DEFAULT_TOLERANCE) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::OracleCheck {
            seed,
            states,
            max_store,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = oracle::run_suite(&mut rng, states, max_store)?;
            println!(
                "oracle-check: {} states, {} mismatches, {} ingest verdicts",
                s.states, s.mismatches, s.ingests
            );
            if s.mismatches > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sweep(cfg: ExperimentConfig, per_rate: bool) -> Result<()> {
    let data = ExperimentData::load(&cfg)?;
    let exp = run_experiment(&cfg, &data)?;
    write_outputs(&cfg, &exp, &cfg.out_dir, SeriesKey::LearnerRate)?;
    if per_rate {
        for s in cfg.settings() {
            if let ShiftSetting::Rate(r) = s {
                let rows: Vec<&AggregateRow> = exp.aggregates.iter().filter(|a| a.shift_rate == r).collect();
                write_aggregate_csv(rows, &cfg.out_dir.join(format!("aggregate_{}.csv", s.label())))?;
            }
        }
    }
    print_summary(&exp);
    Ok(())
}

fn seasonal(cfg: ExperimentConfig) -> Result<()> {
    let data = ExperimentData::load(&cfg)?;
    for &id in &cfg.schedules {
        let one = ExperimentConfig {
            schedules: vec![id],
            out_dir: cfg.out_dir.join(format!("schedule_{}", id.name())),
            ..cfg.clone()
        };
        let exp = run_experiment(&one, &data)?;
        write_outputs(&one, &exp, &one.out_dir, SeriesKey::Learner)?;
        println!("schedule {}:", id.name());
        print_summary(&exp);
    }
    Ok(())
}

/// Writes `metrics.csv`, `aggregate.csv`, per-replicate event logs, the
/// effective config, failure list (if any) and the accuracy and LR plots.
pub fn write_outputs(cfg: &ExperimentConfig, exp: &Experiment, dir: &Path, series: SeriesKey) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("config.txt"), &cfg.serialize())?;
    write_csv(exp.rows(), &dir.join("metrics.csv"))?;
    write_aggregate_csv(&exp.aggregates, &dir.join("aggregate.csv"))?;
    if exp.failures().next().is_some() {
        write_failures(&exp.replicates, &dir.join("failures.csv"))?;
    }
    let events = dir.join("events");
    create_dir(&events)?;
    // Streams depend only on seed and schedule, so one learner's logs cover all.
    let first = exp.replicates.first().map(|r| r.learner);
    for r in exp.replicates.iter().filter(|r| Some(r.learner) == first) {
        write_event_log(
            &r.events,
            &events.join(format!("{}_replicate_{}.csv", r.setting.label(), r.replicate)),
        )?;
    }
    let title = |what: &str| match cfg.settings().as_slice() {
        [ShiftSetting::Schedule(id)] => format!("{what}, schedule {}", id.name().to_uppercase()),
        _ => what.to_string(),
    };
    let acc = PlotSpec {
        metric: Metric::Accuracy,
        series,
        title: Some(title("Validation accuracy")),
        ..PlotSpec::default()
    };
    let lr = PlotSpec {
        metric: Metric::LearningRate,
        series,
        title: Some(title("Learning rate")),
        log_y: true,
        ..PlotSpec::default()
    };
    if !exp.aggregates.is_empty() {
        write_text(&dir.join("accuracy.svg"), &render_plot(&exp.aggregates, &acc)?)?;
        write_text(&dir.join("lr.svg"), &render_plot(&exp.aggregates, &lr)?)?;
    }
    Ok(())
}

fn print_summary(exp: &Experiment) {
    let mut last: Vec<&AggregateRow> = Vec::new();
    for (i, a) in exp.aggregates.iter().enumerate() {
        let next = exp.aggregates.get(i + 1);
        if next.is_none_or(|n| n.learner != a.learner || n.epoch <= a.epoch) {
            last.push(a);
        }
    }
    for a in last {
        println!(
            "  {:<12} rate {:<6} epoch {:<4} acc {} ± {}  lr {}  n={}",
            a.learner.name(),
            fmt_float(a.shift_rate),
            a.epoch,
            fmt_float(a.acc_mean),
            fmt_float(a.acc_sem),
            fmt_float(a.lr_mean),
            a.n_replicates
        );
    }
    for r in exp.failures() {
        let f = r.failure.as_ref().expect("filtered on failure");
        println!(
            "  aborted: {} {} replicate {} at presentation {}: {}",
            r.learner,
            r.setting.label(),
            r.replicate,
            f.presentation,
            f.reason
        );
    }
}

