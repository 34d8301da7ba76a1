//! Discrete-event loop of the reporting workflow.
//!
//! A single radiologist serves one worklist. Exams arrive from a generator
//! driven by the arrival distribution, are labeled and classified on
//! arrival, and are reported after a delta drawn from the reporting
//! distribution at the moment the radiologist picks them up.
//!
//! Events at equal timestamps are processed as day boundary, then arrival,
//! then report completion, so an exam arriving exactly when the radiologist
//! becomes free is eligible for that pick.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::classifier::OperatingPoint;
use crate::distributions::{DistributionPair, MINUTES_PER_DAY};
use crate::error::{Error, Result};
use crate::model::{Exam, ExamId, FindingSet, PrevalenceTable, UrgencyRank};
use crate::rng::{self, Stream};
use crate::worklist::{Policy, Worklist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlushMode {
    /// Withhold new arrivals after each midnight until the worklist has
    /// drained to zero.
    #[default]
    Force,
    /// Never intervene; count days on which the worklist never emptied.
    Assert,
}

impl FromStr for FlushMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "force" => Ok(FlushMode::Force),
            "assert" => Ok(FlushMode::Assert),
            other => Err(Error::Config(format!("unknown flush mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub days: u32,
    pub seed: u64,
    pub replications: u32,
    pub policy: Policy,
    pub operating_point: OperatingPoint,
    pub prevalence: PrevalenceTable,
    pub distributions: Arc<DistributionPair>,
    pub flush_mode: FlushMode,
    /// Record every queue event for the audit log.
    pub audit: bool,
}

impl SimulationConfig {
    pub fn new(distributions: Arc<DistributionPair>) -> Self {
        SimulationConfig {
            days: 1000,
            seed: 2020,
            replications: 1,
            policy: Policy::Fifo,
            operating_point: OperatingPoint::low_fpr(),
            prevalence: PrevalenceTable::default(),
            distributions,
            flush_mode: FlushMode::Force,
            audit: false,
        }
    }

    pub fn with_policy(&self, policy: Policy, operating_point: OperatingPoint) -> Self {
        SimulationConfig {
            policy,
            operating_point,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::Config("days must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if let Policy::PrioMaxWait { max_wait } = self.policy {
            if !(max_wait > 0.0) {
                return Err(Error::Config(format!("max wait {max_wait} must be positive")));
            }
        }
        Ok(())
    }

    /// Label used in reports, e.g. `prio/low-fpr`.
    pub fn label(&self) -> String {
        match self.policy {
            Policy::Fifo => "fifo".to_string(),
            policy => format!("{}/{}", policy.name(), self.operating_point.tag),
        }
    }
}

/// An exam entering the system, before it is queued.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub created_at: f64,
    pub true_findings: FindingSet,
    pub predicted_findings: FindingSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrive,
    Withhold,
    Release,
    Escalate,
    Pop,
    Report,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Arrive => "arrive",
            EventKind::Withhold => "withhold",
            EventKind::Release => "release",
            EventKind::Escalate => "escalate",
            EventKind::Pop => "pop",
            EventKind::Report => "report",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditEvent {
    pub time_min: f64,
    pub event: EventKind,
    pub exam_id: ExamId,
    pub rank: UrgencyRank,
    pub escalated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub label: String,
    pub policy: Policy,
    pub days: u32,
    pub replications: u32,
    /// Reported exams in id order.
    pub exams: Vec<Exam>,
    /// Pop order of exam ids.
    pub pop_order: Vec<ExamId>,
    pub escalations: usize,
    /// Days on which the worklist never reached zero.
    pub flush_violations: usize,
    pub audit: Vec<AuditEvent>,
}

impl SimulationResult {
    pub fn exam_count(&self) -> usize {
        self.exams.len()
    }

    pub fn rtats(&self) -> impl Iterator<Item = f64> + '_ {
        self.exams.iter().filter_map(Exam::rtat)
    }

    pub fn mean_rtat(&self) -> f64 {
        let n = self.exams.len();
        if n == 0 {
            return 0.0;
        }
        self.rtats().sum::<f64>() / n as f64
    }

    /// SHA-256 over creation times and true findings, identical for every
    /// policy simulated on the same workload.
    pub fn workload_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for exam in &self.exams {
            hasher.update(exam.id.to_le_bytes());
            hasher.update(exam.created_at.to_bits().to_le_bytes());
            hasher.update([exam.true_findings.bits()]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Writes the per-exam trace CSV.
    pub fn write_trace<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "exam_id",
            "day",
            "created_min",
            "reported_min",
            "rtat_min",
            "true_findings",
            "predicted_findings",
            "urgency",
            "escalated",
        ])?;
        for exam in &self.exams {
            let reported = exam.reported_at.unwrap_or(f64::NAN);
            out.write_record([
                exam.id.to_string(),
                ((exam.created_at / MINUTES_PER_DAY).floor() as u64).to_string(),
                format!("{:.6}", exam.created_at),
                format!("{reported:.6}"),
                format!("{:.6}", reported - exam.created_at),
                exam.true_findings.to_pipe_string(),
                exam.predicted_findings.to_pipe_string(),
                exam.urgency.to_string(),
                exam.escalated.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_audit<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["time_min", "event", "exam_id", "rank", "escalated"])?;
        for e in &self.audit {
            out.write_record([
                format!("{:.6}", e.time_min),
                e.event.to_string(),
                e.exam_id.to_string(),
                e.rank.to_string(),
                e.escalated.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Concatenates replication results. Partial results are ordered by
    /// replication index, so the outcome does not depend on the order in
    /// which they finished. Exam ids are renumbered to stay unique.
    pub fn merge(mut parts: Vec<(u32, SimulationResult)>) -> Option<SimulationResult> {
        parts.sort_by_key(|(index, _)| *index);
        let mut iter = parts.into_iter().map(|(_, r)| r);
        let mut merged = iter.next()?;
        for part in iter {
            let offset = merged.exams.last().map_or(0, |e| e.id);
            merged.exams.extend(part.exams.into_iter().map(|mut e| {
                e.id += offset;
                e
            }));
            merged.pop_order.extend(part.pop_order.into_iter().map(|id| id + offset));
            merged.audit.extend(part.audit.into_iter().map(|mut a| {
                a.exam_id += offset;
                a
            }));
            merged.escalations += part.escalations;
            merged.flush_violations += part.flush_violations;
            merged.replications += part.replications;
        }
        Some(merged)
    }
}

/// Reads exams back from a trace CSV written by
/// [`SimulationResult::write_trace`].
pub fn read_trace<R: std::io::Read>(reader: R) -> Result<Vec<Exam>> {
    #[derive(serde::Deserialize)]
    struct Row {
        exam_id: ExamId,
        created_min: f64,
        reported_min: f64,
        true_findings: String,
        predicted_findings: String,
        urgency: u8,
        escalated: bool,
    }
    let mut exams = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize::<Row>() {
        let row = row?;
        exams.push(Exam {
            id: row.exam_id,
            created_at: row.created_min,
            true_findings: FindingSet::parse_pipe(&row.true_findings)?,
            predicted_findings: FindingSet::parse_pipe(&row.predicted_findings)?,
            urgency: UrgencyRank::new(row.urgency)?,
            escalated: row.escalated,
            reported_at: Some(row.reported_min),
        });
    }
    Ok(exams)
}

/// Exams in id order, pop order, escalation count, flush violations and
/// the audit log of one [`Simulator::run`].
pub type RunOutput = (Vec<Exam>, Vec<ExamId>, usize, usize, Vec<AuditEvent>);

/// Single-server event loop over an arbitrary arrival stream.
pub struct Simulator {
    policy: Policy,
    flush_mode: FlushMode,
    /// Last day boundary to observe, in minutes.
    horizon: f64,
    audit: bool,
}

struct Run {
    worklist: Worklist,
    withheld: VecDeque<Exam>,
    holding: bool,
    in_service: Option<(Exam, f64)>,
    reached_zero_today: bool,
    done: Vec<Exam>,
    pop_order: Vec<ExamId>,
    escalations: usize,
    violations: usize,
    audit: Option<Vec<AuditEvent>>,
}

impl Run {
    fn log(&mut self, time_min: f64, event: EventKind, exam: &Exam) {
        if let Some(audit) = &mut self.audit {
            audit.push(AuditEvent {
                time_min,
                event,
                exam_id: exam.id,
                rank: exam.urgency,
                escalated: exam.escalated,
            });
        }
    }

    fn escalate(&mut self, now: f64) {
        let ids = self.worklist.escalate_overdue(now);
        self.escalations += ids.len();
        if self.audit.is_some() {
            for id in ids {
                let exam = self.worklist.iter().find(|e| e.id == id).cloned();
                if let Some(exam) = exam {
                    self.log(now, EventKind::Escalate, &exam);
                }
            }
        }
    }

    fn enqueue(&mut self, now: f64, exam: Exam, event: EventKind) -> Result<()> {
        self.log(now, event, &exam);
        self.worklist.insert(exam)?;
        self.escalate(now);
        Ok(())
    }
}

impl Simulator {
    pub fn new(policy: Policy, flush_mode: FlushMode, days: u32) -> Self {
        Simulator {
            policy,
            flush_mode,
            horizon: f64::from(days) * MINUTES_PER_DAY,
            audit: false,
        }
    }

    pub fn with_audit(mut self, audit: bool) -> Self {
        self.audit = audit;
        self
    }

    /// Runs until every arrival has been reported. `arrivals` must be in
    /// non-decreasing creation order; `report_delta` maps the pick-up time
    /// to the reporting delta.
    pub fn run<I, F>(&self, arrivals: I, mut report_delta: F) -> Result<RunOutput>
    where
        I: IntoIterator<Item = Arrival>,
        F: FnMut(f64) -> f64,
    {
        let mut arrivals = arrivals.into_iter().peekable();
        let mut run = Run {
            worklist: Worklist::new(self.policy),
            withheld: VecDeque::new(),
            holding: false,
            in_service: None,
            reached_zero_today: true,
            done: Vec::new(),
            pop_order: Vec::new(),
            escalations: 0,
            violations: 0,
            audit: self.audit.then(Vec::new),
        };
        let mut next_id: ExamId = 1;
        let mut next_boundary = MINUTES_PER_DAY;
        let mut last_time = f64::NEG_INFINITY;

        loop {
            let t_arrival = arrivals.peek().map_or(f64::INFINITY, |a| a.created_at);
            let t_done = run.in_service.as_ref().map_or(f64::INFINITY, |(_, t)| *t);
            let t_boundary = if next_boundary <= self.horizon {
                next_boundary
            } else {
                f64::INFINITY
            };
            let now = t_arrival.min(t_done).min(t_boundary);
            if now.is_infinite() {
                break;
            }
            if now < last_time {
                return Err(Error::Data(format!("arrival at {now} precedes {last_time}")));
            }
            last_time = now;

            if t_boundary <= now {
                next_boundary += MINUTES_PER_DAY;
                if !run.reached_zero_today && run.worklist.len() + run.withheld.len() > 0 {
                    run.violations += 1;
                }
                run.reached_zero_today = run.worklist.is_empty();
                if self.flush_mode == FlushMode::Force && !run.worklist.is_empty() {
                    run.holding = true;
                }
            } else if t_arrival <= now {
                let arrival = arrivals.next().expect("peeked");
                let exam = Exam::new(next_id, arrival.created_at, arrival.true_findings, arrival.predicted_findings);
                next_id += 1;
                if run.holding {
                    run.log(now, EventKind::Withhold, &exam);
                    run.withheld.push_back(exam);
                } else {
                    run.enqueue(now, exam, EventKind::Arrive)?;
                }
            } else {
                let (mut exam, reported_at) = run.in_service.take().expect("in service");
                exam.reported_at = Some(reported_at);
                run.log(now, EventKind::Report, &exam);
                run.done.push(exam);
            }

            if run.in_service.is_none() && !run.worklist.is_empty() {
                run.escalate(now);
                let exam = run.worklist.pop_next()?;
                let delta = report_delta(now);
                if !(delta > 0.0) || !delta.is_finite() {
                    return Err(Error::NonpositiveDelta(delta));
                }
                run.log(now, EventKind::Pop, &exam);
                run.pop_order.push(exam.id);
                run.in_service = Some((exam, now + delta));
                if run.worklist.is_empty() {
                    run.reached_zero_today = true;
                    if run.holding {
                        run.holding = false;
                        while let Some(exam) = run.withheld.pop_front() {
                            run.enqueue(now, exam, EventKind::Release)?;
                        }
                    }
                }
            }
            if run.worklist.is_empty() && run.withheld.is_empty() {
                run.reached_zero_today = true;
            }
        }
        if !run.withheld.is_empty() || !run.worklist.is_empty() {
            return Err(Error::Data("simulation ended with unreported exams".into()));
        }
        run.done.sort_by_key(|e| e.id);
        Ok((
            run.done,
            run.pop_order,
            run.escalations,
            run.violations,
            run.audit.unwrap_or_default(),
        ))
    }
}

/// Lazily generated arrivals of one replication.
struct Generator<'a> {
    cfg: &'a SimulationConfig,
    classify: bool,
    arrivals_rng: rand_chacha::ChaCha8Rng,
    labels_rng: rand_chacha::ChaCha8Rng,
    classify_rng: rand_chacha::ChaCha8Rng,
    next_time: f64,
    horizon: f64,
}

impl Iterator for Generator<'_> {
    type Item = Arrival;

    fn next(&mut self) -> Option<Arrival> {
        if self.next_time >= self.horizon {
            return None;
        }
        let created_at = self.next_time;
        let true_findings = self.cfg.prevalence.assign_findings(&mut self.labels_rng);
        let predicted_findings = if self.classify {
            self.cfg.operating_point.classify(true_findings, &mut self.classify_rng)
        } else {
            FindingSet::EMPTY
        };
        self.next_time += self
            .cfg
            .distributions
            .arrivals
            .sample_delta(created_at, &mut self.arrivals_rng);
        Some(Arrival {
            created_at,
            true_findings,
            predicted_findings,
        })
    }
}

fn run_one(cfg: &SimulationConfig, replication: u32) -> Result<SimulationResult> {
    let seed = rng::replication_seed(cfg.seed, replication);
    let dists = &cfg.distributions;
    let horizon = f64::from(cfg.days) * MINUTES_PER_DAY;
    let mut arrivals_rng = rng::stream(seed, Stream::Arrivals);
    let first = dists.arrivals.sample_delta(0.0, &mut arrivals_rng);
    let generator = Generator {
        cfg,
        classify: cfg.policy.uses_urgency(),
        arrivals_rng,
        labels_rng: rng::stream(seed, Stream::Labels),
        classify_rng: rng::stream(seed, Stream::Classification),
        next_time: first,
        horizon,
    };
    let mut reporting_rng = rng::stream(seed, Stream::Reporting);
    let reporting = &dists.reporting;
    let (exams, pop_order, escalations, flush_violations, audit) =
        Simulator::new(cfg.policy, cfg.flush_mode, cfg.days)
            .with_audit(cfg.audit)
            .run(generator, |now| reporting.sample_delta(now, &mut reporting_rng))?;
    Ok(SimulationResult {
        label: cfg.label(),
        policy: cfg.policy,
        days: cfg.days,
        replications: 1,
        exams,
        pop_order,
        escalations,
        flush_violations,
        audit,
    })
}

/// Runs replication 0 of `cfg`.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    run_one(cfg, 0)
}

/// Runs `replications` independent replications in parallel and merges
/// them in replication order.
pub fn run_replications(cfg: &SimulationConfig, replications: u32) -> Result<SimulationResult> {
    cfg.validate()?;
    if replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    let parts = (0..replications)
        .into_par_iter()
        .map(|r| run_one(cfg, r).map(|res| (r, res)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationResult::merge(parts).expect("at least one replication"))
}
