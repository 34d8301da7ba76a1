//! `triage-sim`: run worklist simulations from the command line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use triage_core::classifier::BuiltinPoint;
use triage_core::config::FileConfig;
use triage_core::engine::{read_trace, run_replications};
use triage_core::experiments::{run_comparison, run_sweep, write_sweep_csv, SweepSpec, DEFAULT_SWEEP_GRID};
use triage_core::stats::{summarize, summarize_exams, welch_t_test, Category};
use triage_core::{Error, Policy};

#[derive(Parser)]
#[command(name = "triage-sim", version, about = "Chest X-ray worklist prioritization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// INI configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulated days per replication.
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<u32>,
    /// Simulate 11,000 days.
    #[arg(long, conflicts_with = "days")]
    full_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Fifo,
    Prio,
    PrioMaxwait,
    Perfect,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    LowFpr,
    LowFnr,
    Perfect,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single policy and write the trace and summary.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long, value_enum)]
        op: Option<OpArg>,
        /// Shared false positive rate on the fitted ROC curves.
        #[arg(long, conflicts_with = "op")]
        fpr: Option<f64>,
        #[arg(long)]
        max_wait: Option<f64>,
        /// Per-exam trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Per-finding summary CSV (stdout when omitted).
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Per-event audit CSV.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Compare FIFO, Prio-lowFNR, Prio-lowFPR, Prio-MAXwaiting and Perfect.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_wait: Option<f64>,
        /// Long-format CSV with summaries and p-values.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sweep a shared false positive rate along the ROC curves.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated false positive rates in (0, 1).
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Welch's t-test between two trace files for one finding.
    Ttest {
        a: PathBuf,
        b: PathBuf,
        /// Finding name, or `normal`.
        #[arg(long)]
        finding: String,
    },
}

const FULL_SCALE_DAYS: u32 = 11_000;

fn load_config(common: &Common) -> Result<FileConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(days) = common.days {
        cfg.days = days;
    }
    if common.full_scale {
        cfg.days = FULL_SCALE_DAYS;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(r) = common.replications {
        cfg.replications = r;
    }
    Ok(cfg)
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            common,
            policy,
            op,
            fpr,
            max_wait,
            trace,
            summary,
            audit,
        } => {
            let mut file = load_config(&common)?;
            if let Some(m) = max_wait {
                file.max_wait_min = m;
            }
            match policy {
                Some(PolicyArg::Fifo) => file.policy = Policy::Fifo,
                Some(PolicyArg::Prio) => file.policy = Policy::Prio,
                Some(PolicyArg::PrioMaxwait) => file.policy = Policy::PrioMaxWait { max_wait: file.max_wait_min },
                Some(PolicyArg::Perfect) => {
                    file.policy = Policy::Prio;
                    file.operating_point = BuiltinPoint::Perfect;
                    file.fpr = None;
                }
                None => {}
            }
            if let Some(op) = op {
                file.operating_point = match op {
                    OpArg::LowFpr => BuiltinPoint::LowFpr,
                    OpArg::LowFnr => BuiltinPoint::LowFnr,
                    OpArg::Perfect => BuiltinPoint::Perfect,
                };
                file.fpr = None;
            }
            if fpr.is_some() {
                file.fpr = fpr;
            }
            file.apply_max_wait();
            if trace.is_some() {
                file.trace_file = trace;
            }
            if summary.is_some() {
                file.summary_file = summary;
            }
            if audit.is_some() {
                file.audit_file = audit;
            }
            file.validate()?;
            let cfg = file.simulation_config()?;
            let result = run_replications(&cfg, cfg.replications)?;
            if let Some(path) = &file.trace_file {
                result.write_trace(output(Some(path))?)?;
            }
            if let Some(path) = &file.audit_file {
                result.write_audit(output(Some(path))?)?;
            }
            summarize(&result).write_csv(output(file.summary_file.as_deref())?)?;
            eprintln!(
                "{}: {} exams, mean RTAT {:.1} min, {} escalations, {} flush violations",
                result.label,
                result.exam_count(),
                result.mean_rtat(),
                result.escalations,
                result.flush_violations
            );
        }
        Command::Compare { common, max_wait, csv } => {
            let file = load_config(&common)?;
            let max_wait = max_wait.unwrap_or(file.max_wait_min);
            if !(max_wait > 0.0) {
                return Err(Error::Config(format!("max wait {max_wait} must be positive")).into());
            }
            let cfg = file.simulation_config()?;
            let report = run_comparison(&cfg, max_wait)?;
            print!("{}", report.render_table());
            println!();
            print!("{}", report.render_pvalues());
            for run in &report.runs {
                eprintln!(
                    "{:<16} exams {:>8}  mean {:>7.2}  escalations {:>6}  workload {}",
                    run.strategy.label(),
                    run.exam_count,
                    run.overall_mean,
                    run.escalations,
                    &run.workload_hash[..16]
                );
            }
            if let Some(path) = csv {
                report.write_csv(output(Some(&path))?)?;
            }
        }
        Command::Sweep { common, grid, out } => {
            let file = load_config(&common)?;
            let grid = grid.unwrap_or_else(|| DEFAULT_SWEEP_GRID.to_vec());
            let spec = SweepSpec::new(grid, file.days, file.seed)?;
            let cfg = file.simulation_config()?;
            let points = run_sweep(&spec, &cfg)?;
            write_sweep_csv(&points, output(out.as_deref())?)?;
        }
        Command::Ttest { a, b, finding } => {
            let category: Category = finding
                .parse()
                .map_err(|e: Error| Error::Config(e.to_string()))?;
            let read = |p: &Path| -> anyhow::Result<Vec<f64>> {
                let file = File::open(p).map_err(|_| Error::MissingFile(p.to_path_buf()))?;
                let exams = read_trace(file)?;
                Ok(summarize_exams(&exams).get(category).samples().to_vec())
            };
            let r = welch_t_test(&read(&a)?, &read(&b)?)?;
            println!("t = {}", Sig6(r.t));
            println!("df = {}", Sig6(r.df));
            println!("p = {}", Sig6(r.p));
        }
    }
    Ok(())
}

/// Six significant digits.
struct Sig6(f64);

impl std::fmt::Display for Sig6 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = self.0;
        if v == 0.0 || !v.is_finite() {
            return write!(f, "{v}");
        }
        let exp = v.abs().log10().floor() as i32;
        if !(-4..6).contains(&exp) {
            write!(f, "{v:.5e}")
        } else {
            let decimals = (5 - exp).max(0) as usize;
            write!(f, "{v:.decimals$}")
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<Error>() {
                Some(e) if e.is_config() => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
