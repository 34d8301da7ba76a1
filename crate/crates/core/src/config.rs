//! INI-style experiment configuration.
//!
//! ```ini
//! [simulation]
//! days = 1000
//! seed = 2020
//! replications = 1
//! flush_mode = force
//! label_mode = normal-gated
//! prevalence_file = prevalence.csv
//! trace_file = trace.csv
//! summary_file = summary.csv
//! audit_file = audit.csv
//!
//! [distributions]
//! arrivals_file = arrivals.csv
//! reporting_file = reporting.csv
//! outlier_cutoff_min = 150
//! bins_per_day = 24
//!
//! [classifier]
//! op = low-fpr
//! operating_point_file = op.csv
//!
//! [worklist]
//! policy = prio
//! max_wait_min = 960
//! ```
//!
//! Every key is optional. Without distribution files the calibrated
//! synthetic workload is used.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ini::Ini;

use crate::classifier::{BinormalRoc, BuiltinPoint, OperatingPoint};
use crate::distributions::{self, DistributionPair, DEFAULT_OUTLIER_CUTOFF_MIN};
use crate::engine::{FlushMode, SimulationConfig};
use crate::error::{Error, Result};
use crate::model::{LabelMode, PrevalenceTable};
use crate::worklist::{Policy, DEFAULT_MAX_WAIT_MIN};

#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub days: u32,
    pub seed: u64,
    pub replications: u32,
    pub flush_mode: FlushMode,
    pub label_mode: LabelMode,
    pub prevalence_file: Option<PathBuf>,
    pub trace_file: Option<PathBuf>,
    pub summary_file: Option<PathBuf>,
    pub audit_file: Option<PathBuf>,
    pub arrivals_file: Option<PathBuf>,
    pub reporting_file: Option<PathBuf>,
    pub outlier_cutoff_min: f64,
    pub bins_per_day: usize,
    pub operating_point: BuiltinPoint,
    /// Shared false positive rate read off the ROC; overrides `op`.
    pub fpr: Option<f64>,
    pub operating_point_file: Option<PathBuf>,
    pub policy: Policy,
    pub max_wait_min: f64,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            days: 1000,
            seed: 2020,
            replications: 1,
            flush_mode: FlushMode::Force,
            label_mode: LabelMode::NormalGated,
            prevalence_file: None,
            trace_file: None,
            summary_file: None,
            audit_file: None,
            arrivals_file: None,
            reporting_file: None,
            outlier_cutoff_min: DEFAULT_OUTLIER_CUTOFF_MIN,
            bins_per_day: 24,
            operating_point: BuiltinPoint::LowFpr,
            fpr: None,
            operating_point_file: None,
            policy: Policy::Prio,
            max_wait_min: DEFAULT_MAX_WAIT_MIN,
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{raw}`")))
}

fn parse_mode<T: FromStr<Err = Error>>(section: &str, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|e: Error| Error::Config(format!("[{section}] {key}: {e}")))
}

const KNOWN_KEYS: [(&str, &[&str]); 4] = [
    (
        "simulation",
        &[
            "days",
            "seed",
            "replications",
            "flush_mode",
            "label_mode",
            "prevalence_file",
            "trace_file",
            "summary_file",
            "audit_file",
        ],
    ),
    (
        "distributions",
        &["arrivals_file", "reporting_file", "outlier_cutoff_min", "bins_per_day"],
    ),
    ("classifier", &["op", "fpr", "operating_point_file"]),
    ("worklist", &["policy", "max_wait_min"]),
];

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg = FileConfig::parse_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((key, _)) = props.iter().next() {
                    return Err(Error::Config(format!("key `{key}` outside of any section")));
                }
                continue;
            };
            let Some((_, keys)) = KNOWN_KEYS.iter().find(|(name, _)| *name == section) else {
                return Err(Error::Config(format!("unknown section [{section}]")));
            };
            for (key, _) in props.iter() {
                if !keys.contains(&key) {
                    return Err(Error::Config(format!("unknown key `{key}` in [{section}]")));
                }
            }
        }

        let mut cfg = FileConfig::default();
        let get = |section: &str, key: &str| ini.section(Some(section)).and_then(|s| s.get(key));
        let path = |section: &str, key: &str| get(section, key).map(|v| PathBuf::from(v.trim()));

        if let Some(v) = get("simulation", "days") {
            cfg.days = parse("simulation", "days", v)?;
        }
        if let Some(v) = get("simulation", "seed") {
            cfg.seed = parse("simulation", "seed", v)?;
        }
        if let Some(v) = get("simulation", "replications") {
            cfg.replications = parse("simulation", "replications", v)?;
        }
        if let Some(v) = get("simulation", "flush_mode") {
            cfg.flush_mode = parse_mode("simulation", "flush_mode", v)?;
        }
        if let Some(v) = get("simulation", "label_mode") {
            cfg.label_mode = parse_mode("simulation", "label_mode", v)?;
        }
        cfg.prevalence_file = path("simulation", "prevalence_file");
        cfg.trace_file = path("simulation", "trace_file");
        cfg.summary_file = path("simulation", "summary_file");
        cfg.audit_file = path("simulation", "audit_file");

        cfg.arrivals_file = path("distributions", "arrivals_file");
        cfg.reporting_file = path("distributions", "reporting_file");
        if let Some(v) = get("distributions", "outlier_cutoff_min") {
            cfg.outlier_cutoff_min = parse("distributions", "outlier_cutoff_min", v)?;
        }
        if let Some(v) = get("distributions", "bins_per_day") {
            cfg.bins_per_day = parse("distributions", "bins_per_day", v)?;
        }

        if let Some(v) = get("classifier", "op") {
            cfg.operating_point = parse_mode("classifier", "op", v)?;
        }
        if let Some(v) = get("classifier", "fpr") {
            cfg.fpr = Some(parse("classifier", "fpr", v)?);
        }
        cfg.operating_point_file = path("classifier", "operating_point_file");

        if let Some(v) = get("worklist", "max_wait_min") {
            cfg.max_wait_min = parse("worklist", "max_wait_min", v)?;
        }
        if let Some(v) = get("worklist", "policy") {
            cfg.policy = parse_mode("worklist", "policy", v)?;
        }
        cfg.apply_max_wait();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copies `max_wait_min` into a max-wait policy.
    pub fn apply_max_wait(&mut self) {
        if let Policy::PrioMaxWait { .. } = self.policy {
            self.policy = Policy::PrioMaxWait {
                max_wait: self.max_wait_min,
            };
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.outlier_cutoff_min > 0.0) {
            return Err(Error::Config("outlier_cutoff_min must be positive".into()));
        }
        if !(self.max_wait_min > 0.0) {
            return Err(Error::Config("max_wait_min must be positive".into()));
        }
        if let Some(fpr) = self.fpr {
            if !(0.0..=1.0).contains(&fpr) {
                return Err(Error::Config(format!("fpr {fpr} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.prevalence_file,
            &mut self.trace_file,
            &mut self.summary_file,
            &mut self.audit_file,
            &mut self.arrivals_file,
            &mut self.reporting_file,
            &mut self.operating_point_file,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn distributions(&self) -> Result<DistributionPair> {
        let mut pair = match (&self.arrivals_file, &self.reporting_file) {
            (Some(_), Some(_)) => None,
            _ => Some(distributions::default_distributions()?),
        };
        let load = |p: &Path| distributions::load_distribution_binned(p, self.outlier_cutoff_min, self.bins_per_day);
        let arrivals = match &self.arrivals_file {
            Some(p) => load(p)?,
            None => pair.as_ref().expect("synthetic").arrivals.clone(),
        };
        let reporting = match &self.reporting_file {
            Some(p) => load(p)?,
            None => pair.take().expect("synthetic").reporting,
        };
        Ok(DistributionPair {
            arrivals,
            reporting,
            reporting_scale: 1.0,
        })
    }

    pub fn operating_point(&self) -> Result<OperatingPoint> {
        let base = match self.fpr {
            Some(fpr) => BinormalRoc::from_builtin_points().operating_point_at_fpr(fpr),
            None => self.operating_point.operating_point(),
        };
        match &self.operating_point_file {
            Some(path) => OperatingPoint::from_csv(path, &base),
            None => Ok(base),
        }
    }

    pub fn prevalence(&self) -> Result<PrevalenceTable> {
        match &self.prevalence_file {
            Some(path) => PrevalenceTable::from_csv_or_default(path, self.label_mode),
            None => Ok(PrevalenceTable::default().with_mode(self.label_mode)),
        }
    }

    /// Assembles the simulation configuration, loading every referenced file.
    pub fn simulation_config(&self) -> Result<SimulationConfig> {
        let cfg = SimulationConfig {
            days: self.days,
            seed: self.seed,
            replications: self.replications,
            policy: self.policy,
            operating_point: self.operating_point()?,
            prevalence: self.prevalence()?,
            distributions: Arc::new(self.distributions()?),
            flush_mode: self.flush_mode,
            audit: self.audit_file.is_some(),
        };
        Ok(cfg)
    }
}
