//! Canned experiments: the five-policy comparison and the operating-point
//! sweep along the binormal ROC.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::classifier::{BinormalRoc, OperatingPoint};
use crate::engine::{run_replications, SimulationConfig, SimulationResult};
use crate::error::{Error, Result};
use crate::model::Finding;
use crate::stats::{summarize, welch_t_test, Category, RtatSummary, WelchResult};
use crate::worklist::Policy;

/// The five simulated worklist strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Fifo,
    PrioLowFnr,
    PrioLowFpr,
    PrioMaxWaiting,
    Perfect,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Fifo,
        Strategy::PrioLowFnr,
        Strategy::PrioLowFpr,
        Strategy::PrioMaxWaiting,
        Strategy::Perfect,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Fifo => "FIFO",
            Strategy::PrioLowFnr => "Prio-lowFNR",
            Strategy::PrioLowFpr => "Prio-lowFPR",
            Strategy::PrioMaxWaiting => "Prio-MAXwaiting",
            Strategy::Perfect => "Perfect",
        }
    }

    /// `base` with this strategy's policy and operating point. Perfect is
    /// plain PRIO with the perfect classifier.
    pub fn configure(self, base: &SimulationConfig, max_wait: f64) -> SimulationConfig {
        let (policy, op) = match self {
            Strategy::Fifo => (Policy::Fifo, OperatingPoint::perfect()),
            Strategy::PrioLowFnr => (Policy::Prio, OperatingPoint::low_fnr()),
            Strategy::PrioLowFpr => (Policy::Prio, OperatingPoint::low_fpr()),
            Strategy::PrioMaxWaiting => (Policy::PrioMaxWait { max_wait }, OperatingPoint::low_fpr()),
            Strategy::Perfect => (Policy::Prio, OperatingPoint::perfect()),
        };
        base.with_policy(policy, op)
    }
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub summary: RtatSummary,
    pub workload_hash: String,
    pub exam_count: usize,
    pub escalations: usize,
    pub flush_violations: usize,
    pub overall_mean: f64,
    /// Welch test of this strategy against FIFO per category; `None` for
    /// FIFO itself or when a category has too few samples.
    pub vs_fifo: [Option<WelchResult>; 9],
}

#[derive(Debug, Clone, Default)]
pub struct ComparisonReport {
    pub runs: Vec<StrategyRun>,
}

impl ComparisonReport {
    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn run(&self, strategy: Strategy) -> Option<&StrategyRun> {
        self.runs.iter().find(|r| r.strategy == strategy)
    }

    /// Whether every strategy saw the same arrivals and true findings.
    pub fn shared_workload(&self) -> bool {
        self.runs.windows(2).all(|w| w[0].workload_hash == w[1].workload_hash)
    }

    /// Fixed-width table with `mean / max` cells, one row per category.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<18}", "Finding");
        for run in &self.runs {
            let _ = write!(out, "{:>18}", run.strategy.label());
        }
        out.push('\n');
        for category in Category::ALL {
            let _ = write!(out, "{:<18}", category.name());
            for run in &self.runs {
                let s = run.summary.get(category);
                let _ = write!(out, "{:>18}", format!("{:.1} / {:.0}", s.mean, s.max));
            }
            out.push('\n');
        }
        out
    }

    /// Welch p-values against FIFO, one row per category.
    pub fn render_pvalues(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<18}", "p vs FIFO");
        for run in self.runs.iter().filter(|r| r.strategy != Strategy::Fifo) {
            let _ = write!(out, "{:>18}", run.strategy.label());
        }
        out.push('\n');
        for category in Category::ALL {
            let _ = write!(out, "{:<18}", category.name());
            for run in self.runs.iter().filter(|r| r.strategy != Strategy::Fifo) {
                let cell = run.vs_fifo[category.index()].map_or("-".to_string(), |w| format!("{:.3e}", w.p));
                let _ = write!(out, "{cell:>18}");
            }
            out.push('\n');
        }
        out
    }

    /// `policy,finding,n,mean_rtat,median_rtat,p95_rtat,max_rtat,t_vs_fifo,p_vs_fifo`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "policy",
            "finding",
            "n",
            "mean_rtat",
            "median_rtat",
            "p95_rtat",
            "max_rtat",
            "t_vs_fifo",
            "p_vs_fifo",
        ])?;
        for run in &self.runs {
            for (category, s) in run.summary.iter() {
                let welch = run.vs_fifo[category.index()];
                out.write_record([
                    run.strategy.label().to_string(),
                    category.name().to_string(),
                    s.n.to_string(),
                    format!("{:.3}", s.mean),
                    format!("{:.3}", s.median),
                    format!("{:.3}", s.p95),
                    format!("{:.3}", s.max),
                    welch.map_or(String::new(), |w| format!("{:.6}", w.t)),
                    welch.map_or(String::new(), |w| format!("{:.6e}", w.p)),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn strategy_run(strategy: Strategy, result: &SimulationResult) -> StrategyRun {
    StrategyRun {
        strategy,
        summary: summarize(result),
        workload_hash: result.workload_hash(),
        exam_count: result.exam_count(),
        escalations: result.escalations,
        flush_violations: result.flush_violations,
        overall_mean: result.mean_rtat(),
        vs_fifo: [None; 9],
    }
}

/// Runs all five strategies on the workload of `cfg` and tests each
/// against FIFO. A zero-day configuration yields an empty report.
pub fn run_comparison(cfg: &SimulationConfig, max_wait: f64) -> Result<ComparisonReport> {
    if cfg.days == 0 {
        return Ok(ComparisonReport::default());
    }
    let mut runs = Strategy::ALL
        .par_iter()
        .map(|&s| {
            let result = run_replications(&s.configure(cfg, max_wait), cfg.replications)?;
            Ok(strategy_run(s, &result))
        })
        .collect::<Result<Vec<_>>>()?;
    let fifo = runs[0].summary.clone();
    for run in runs.iter_mut().skip(1) {
        for category in Category::ALL {
            run.vs_fifo[category.index()] =
                welch_t_test(run.summary.get(category).samples(), fifo.get(category).samples()).ok();
        }
    }
    Ok(ComparisonReport { runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub grid: Vec<f64>,
    pub target: Finding,
    pub days: u32,
    pub seed: u64,
}

pub const DEFAULT_SWEEP_GRID: [f64; 8] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 0.9];

impl SweepSpec {
    pub fn new(grid: Vec<f64>, days: u32, seed: u64) -> Result<Self> {
        let spec = SweepSpec {
            grid,
            target: Finding::Pneumothorax,
            days,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if !self.grid.iter().all(|x| *x > 0.0 && *x < 1.0) {
            return Err(Error::Config("sweep grid values must lie in (0, 1)".into()));
        }
        if !self.grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("sweep grid must be strictly increasing".into()));
        }
        if self.days == 0 {
            return Err(Error::Config("sweep needs at least one day".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub fpr: f64,
    /// Sensitivity for the target finding at this false positive rate.
    pub tpr: f64,
    pub n: usize,
    pub mean_rtat: f64,
    /// Standard error of `mean_rtat`.
    pub sem: f64,
}

/// PRIO runs on one shared workload, one per grid value, with every
/// finding's classifier set to the same false positive rate.
pub fn run_sweep(spec: &SweepSpec, cfg: &SimulationConfig) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    let roc = BinormalRoc::from_builtin_points();
    let base = SimulationConfig {
        days: spec.days,
        seed: spec.seed,
        ..cfg.clone()
    };
    spec.grid
        .par_iter()
        .map(|&fpr| {
            let op = roc.operating_point_at_fpr(fpr);
            let tpr = op.rates(spec.target).tpr;
            let result = run_replications(&base.with_policy(Policy::Prio, op), base.replications)?;
            let summary = summarize(&result);
            let s = summary.finding(spec.target);
            let sem = if s.n > 1 {
                let var = s.samples().iter().map(|x| (x - s.mean).powi(2)).sum::<f64>() / (s.n - 1) as f64;
                (var / s.n as f64).sqrt()
            } else {
                f64::NAN
            };
            Ok(SweepPoint {
                fpr,
                tpr,
                n: s.n,
                mean_rtat: s.mean,
                sem,
            })
        })
        .collect()
}

/// `fpr,mean_rtat_min`
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["fpr", "mean_rtat_min"])?;
    for p in points {
        out.write_record([p.fpr.to_string(), format!("{:.4}", p.mean_rtat)])?;
    }
    out.flush()?;
    Ok(())
}
