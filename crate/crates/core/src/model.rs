//! Findings, urgency ranking, prevalence and the exam record.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

/// A pathological finding on a chest X-ray.
///
/// Declaration order is urgency order: `Pneumothorax` is the most urgent
/// finding and `ForeignObject` the least urgent pathology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Finding {
    Pneumothorax,
    Congestion,
    PleuralEffusion,
    Infiltrate,
    Atelectasis,
    Cardiomegaly,
    Mass,
    ForeignObject,
}

impl Finding {
    pub const COUNT: usize = 8;

    pub const ALL: [Finding; Finding::COUNT] = [
        Finding::Pneumothorax,
        Finding::Congestion,
        Finding::PleuralEffusion,
        Finding::Infiltrate,
        Finding::Atelectasis,
        Finding::Cardiomegaly,
        Finding::Mass,
        Finding::ForeignObject,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Finding> {
        Finding::ALL.get(index).copied()
    }

    pub fn rank(self) -> UrgencyRank {
        UrgencyRank(self as u8 + 1)
    }

    /// Lowercase, underscore-separated name used in every file format.
    pub fn name(self) -> &'static str {
        match self {
            Finding::Pneumothorax => "pneumothorax",
            Finding::Congestion => "congestion",
            Finding::PleuralEffusion => "pleural_effusion",
            Finding::Infiltrate => "infiltrate",
            Finding::Atelectasis => "atelectasis",
            Finding::Cardiomegaly => "cardiomegaly",
            Finding::Mass => "mass",
            Finding::ForeignObject => "foreign_object",
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Finding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Finding::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown finding `{s}`")))
    }
}

/// Urgency level of an exam. 1 is the most urgent, 9 is "normal".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UrgencyRank(u8);

impl UrgencyRank {
    pub const MOST_URGENT: UrgencyRank = UrgencyRank(1);
    pub const NORMAL: UrgencyRank = UrgencyRank(9);

    pub fn new(rank: u8) -> Result<Self> {
        if (1..=9).contains(&rank) {
            Ok(UrgencyRank(rank))
        } else {
            Err(Error::Parse(format!("urgency rank {rank} outside [1, 9]")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl fmt::Display for UrgencyRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A set of findings stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct FindingSet(u8);

impl FindingSet {
    pub const EMPTY: FindingSet = FindingSet(0);

    pub fn from_bits(bits: u8) -> Self {
        FindingSet(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, finding: Finding) {
        self.0 |= 1 << finding.index();
    }

    pub fn with(mut self, finding: Finding) -> Self {
        self.insert(finding);
        self
    }

    pub fn contains(self, finding: Finding) -> bool {
        self.0 & (1 << finding.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Findings in urgency order.
    pub fn iter(self) -> impl Iterator<Item = Finding> {
        Finding::ALL.into_iter().filter(move |f| self.contains(*f))
    }

    /// Pipe-separated names, empty string for the empty set.
    pub fn to_pipe_string(self) -> String {
        self.iter().map(Finding::name).collect::<Vec<_>>().join("|")
    }

    pub fn parse_pipe(s: &str) -> Result<Self> {
        let mut set = FindingSet::EMPTY;
        for part in s.split('|').map(str::trim).filter(|p| !p.is_empty()) {
            set.insert(part.parse()?);
        }
        Ok(set)
    }
}

impl FromIterator<Finding> for FindingSet {
    fn from_iter<I: IntoIterator<Item = Finding>>(iter: I) -> Self {
        let mut set = FindingSet::EMPTY;
        for f in iter {
            set.insert(f);
        }
        set
    }
}

/// Urgency of an exam given its predicted findings: the most urgent finding
/// wins, the empty set is [`UrgencyRank::NORMAL`].
pub fn urgency_of(predicted: FindingSet) -> UrgencyRank {
    predicted
        .iter()
        .next()
        .map_or(UrgencyRank::NORMAL, Finding::rank)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMode {
    /// Every finding drawn independently with its marginal prevalence.
    Independent,
    /// Empty set with probability `p_normal`, otherwise findings drawn with
    /// rescaled marginals conditioned on at least one finding.
    #[default]
    NormalGated,
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "independent" => Ok(LabelMode::Independent),
            "normal-gated" | "normal_gated" => Ok(LabelMode::NormalGated),
            other => Err(Error::Config(format!("unknown label mode `{other}`"))),
        }
    }
}

/// Per-finding prevalence used to label generated exams.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceTable {
    prevalence: [f64; Finding::COUNT],
    p_normal: f64,
    pub mode: LabelMode,
}

/// Prevalence [%] of the eight findings and of normal exams in the hospital
/// population (600 annotated reports).
const DEFAULT_PREVALENCE: [f64; Finding::COUNT] =
    [0.038, 0.207, 0.393, 0.167, 0.207, 0.195, 0.063, 0.497];
const DEFAULT_NORMAL: f64 = 0.31;

impl Default for PrevalenceTable {
    fn default() -> Self {
        PrevalenceTable {
            prevalence: DEFAULT_PREVALENCE,
            p_normal: DEFAULT_NORMAL,
            mode: LabelMode::default(),
        }
    }
}

#[derive(Deserialize)]
struct PrevalenceRow {
    finding: String,
    prevalence: f64,
}

impl PrevalenceTable {
    pub fn new(prevalence: [f64; Finding::COUNT], p_normal: f64, mode: LabelMode) -> Result<Self> {
        let valid = |p: f64| (0.0..=1.0).contains(&p);
        if !prevalence.iter().copied().all(valid) || !valid(p_normal) {
            return Err(Error::Config("prevalence values must lie in [0, 1]".into()));
        }
        Ok(PrevalenceTable {
            prevalence,
            p_normal,
            mode,
        })
    }

    pub fn prevalence(&self, finding: Finding) -> f64 {
        self.prevalence[finding.index()]
    }

    pub fn p_normal(&self) -> f64 {
        self.p_normal
    }

    pub fn with_mode(mut self, mode: LabelMode) -> Self {
        self.mode = mode;
        self
    }

    /// Reads a `finding,prevalence` CSV. A row named `normal` sets the
    /// normal fraction; findings without a row keep their default value.
    /// A path that does not exist yields the built-in defaults.
    pub fn from_csv_or_default(path: &Path, mode: LabelMode) -> Result<Self> {
        let defaults = PrevalenceTable::default().with_mode(mode);
        if !path.exists() {
            return Ok(defaults);
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut prevalence = defaults.prevalence;
        let mut p_normal = defaults.p_normal;
        for row in reader.deserialize::<PrevalenceRow>() {
            let row = row?;
            if row.finding == "normal" {
                p_normal = row.prevalence;
            } else {
                let finding: Finding = row.finding.parse()?;
                prevalence[finding.index()] = row.prevalence;
            }
        }
        PrevalenceTable::new(prevalence, p_normal, mode)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Draws the true finding set of a new exam.
    pub fn assign_findings<R: Rng + ?Sized>(&self, rng: &mut R) -> FindingSet {
        match self.mode {
            LabelMode::Independent => draw_independent(&self.prevalence, rng),
            LabelMode::NormalGated => {
                if rng.random::<f64>() < self.p_normal {
                    return FindingSet::EMPTY;
                }
                let scale = 1.0 - self.p_normal;
                let mut gated = [0.0; Finding::COUNT];
                for (q, p) in gated.iter_mut().zip(self.prevalence) {
                    *q = if scale > 0.0 { (p / scale).min(1.0) } else { 1.0 };
                }
                if gated.iter().all(|q| *q == 0.0) {
                    return FindingSet::EMPTY;
                }
                loop {
                    let set = draw_independent(&gated, rng);
                    if !set.is_empty() {
                        return set;
                    }
                }
            }
        }
    }
}

fn draw_independent<R: Rng + ?Sized>(probs: &[f64; Finding::COUNT], rng: &mut R) -> FindingSet {
    let mut set = FindingSet::EMPTY;
    for finding in Finding::ALL {
        if rng.random::<f64>() < probs[finding.index()] {
            set.insert(finding);
        }
    }
    set
}

pub type ExamId = u64;

/// One chest X-ray as it moves through the department.
#[derive(Debug, Clone, PartialEq)]
pub struct Exam {
    pub id: ExamId,
    /// Minutes since simulation start.
    pub created_at: f64,
    pub true_findings: FindingSet,
    pub predicted_findings: FindingSet,
    pub urgency: UrgencyRank,
    pub escalated: bool,
    pub reported_at: Option<f64>,
}

impl Exam {
    pub fn new(id: ExamId, created_at: f64, true_findings: FindingSet, predicted_findings: FindingSet) -> Self {
        Exam {
            id,
            created_at,
            true_findings,
            predicted_findings,
            urgency: urgency_of(predicted_findings),
            escalated: false,
            reported_at: None,
        }
    }

    /// Report turnaround time in minutes, once reported.
    pub fn rtat(&self) -> Option<f64> {
        self.reported_at.map(|r| r - self.created_at)
    }
}
