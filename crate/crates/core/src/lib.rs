//! Monte-Carlo simulation of chest X-ray reporting worklists.
//!
//! The simulator generates a stream of exams from time-of-day arrival
//! histograms, labels them with findings drawn from a prevalence table,
//! passes them through a stochastic classifier, and lets a single
//! radiologist work through a worklist ordered by one of several policies:
//!
//! * FIFO, the chronological baseline;
//! * PRIO, ordering by the most urgent predicted finding;
//! * PRIO with a maximum waiting time, after which an exam jumps to the
//!   front of the worklist.
//!
//! Report turnaround times (RTAT) are summarized per true finding and
//! compared across policies with Welch's t-test.
//!
//! ```no_run
//! use std::sync::Arc;
//! use triage_core::{distributions, engine, stats, worklist::Policy, OperatingPoint};
//!
//! let dists = Arc::new(distributions::default_distributions()?);
//! let cfg = engine::SimulationConfig::new(dists).with_policy(Policy::Prio, OperatingPoint::low_fpr());
//! let result = engine::run_simulation(&cfg)?;
//! let summary = stats::summarize(&result);
//! println!("{:.1}", summary.normal().mean);
//! # Ok::<(), triage_core::Error>(())
//! ```

pub mod classifier;
pub mod config;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod model;
pub mod rng;
pub mod stats;
pub mod worklist;

pub use classifier::{BinormalRoc, OperatingPoint};
pub use distributions::{DistributionPair, SyntheticProfile, TimeOfDayDistribution};
pub use engine::{run_replications, run_simulation, FlushMode, SimulationConfig, SimulationResult};
pub use error::{Error, Result};
pub use model::{urgency_of, Exam, Finding, FindingSet, LabelMode, PrevalenceTable, UrgencyRank};
pub use stats::{summarize, welch_t_test, Category, RtatSummary, WelchResult};
pub use worklist::{Policy, Worklist};
