//! The queue of unreported exams.
//!
//! Exams are keyed by `(effective rank, enqueue sequence)`, so an ordered map
//! gives stable priority ordering: equal ranks pop in enqueue order. FIFO
//! uses a single rank for every exam. Escalated exams move to rank 0, ahead
//! of every rank-1 exam, and keep their original sequence number.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Exam, ExamId, UrgencyRank};

pub const DEFAULT_MAX_WAIT_MIN: f64 = 960.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    Fifo,
    Prio,
    /// Priority ordering plus escalation of exams waiting longer than
    /// `max_wait` minutes.
    PrioMaxWait { max_wait: f64 },
}

impl Policy {
    pub fn uses_urgency(self) -> bool {
        !matches!(self, Policy::Fifo)
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::Fifo => "fifo",
            Policy::Prio => "prio",
            Policy::PrioMaxWait { .. } => "prio-maxwait",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::PrioMaxWait { max_wait } => write!(f, "prio-maxwait({max_wait})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses `fifo`, `prio` or `prio-maxwait`; the latter takes
/// [`DEFAULT_MAX_WAIT_MIN`] until overridden.
impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fifo" => Ok(Policy::Fifo),
            "prio" => Ok(Policy::Prio),
            "prio-maxwait" | "prio_maxwait" => Ok(Policy::PrioMaxWait {
                max_wait: DEFAULT_MAX_WAIT_MIN,
            }),
            other => Err(Error::Config(format!("unknown policy `{other}`"))),
        }
    }
}

const ESCALATED_RANK: u8 = 0;
const FIFO_RANK: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct SlotKey {
    rank: u8,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Minutes(f64);

impl Eq for Minutes {}

impl PartialOrd for Minutes {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Minutes {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
pub struct Worklist {
    policy: Policy,
    queue: BTreeMap<SlotKey, Exam>,
    slots: HashMap<ExamId, SlotKey>,
    /// Non-escalated exams by creation time, for overdue scans.
    by_age: BTreeMap<(Minutes, u64), ExamId>,
    next_seq: u64,
}

impl Worklist {
    pub fn new(policy: Policy) -> Self {
        Worklist {
            policy,
            queue: BTreeMap::new(),
            slots: HashMap::new(),
            by_age: BTreeMap::new(),
            next_seq: 0,
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn contains(&self, id: ExamId) -> bool {
        self.slots.contains_key(&id)
    }

    /// Exams in pop order.
    pub fn iter(&self) -> impl Iterator<Item = &Exam> {
        self.queue.values()
    }

    pub fn ids(&self) -> Vec<ExamId> {
        self.iter().map(|e| e.id).collect()
    }

    pub fn peek(&self) -> Option<&Exam> {
        self.queue.values().next()
    }

    pub fn insert(&mut self, exam: Exam) -> Result<()> {
        if self.slots.contains_key(&exam.id) {
            return Err(Error::DuplicateExam(exam.id));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let rank = match self.policy {
            Policy::Fifo => FIFO_RANK,
            _ if exam.escalated => ESCALATED_RANK,
            _ => exam.urgency.get(),
        };
        let key = SlotKey { rank, seq };
        if !exam.escalated {
            self.by_age.insert((Minutes(exam.created_at), seq), exam.id);
        }
        self.slots.insert(exam.id, key);
        self.queue.insert(key, exam);
        Ok(())
    }

    /// Escalates every exam that has waited strictly longer than the
    /// maximum waiting time, in creation order. Returns the escalated ids.
    /// A no-op for policies without a maximum waiting time.
    pub fn escalate_overdue(&mut self, now: f64) -> Vec<ExamId> {
        let Policy::PrioMaxWait { max_wait } = self.policy else {
            return Vec::new();
        };
        let mut escalated = Vec::new();
        while let Some((&(Minutes(created), seq), &id)) = self.by_age.first_key_value() {
            if now - created <= max_wait {
                break;
            }
            self.by_age.remove(&(Minutes(created), seq));
            let old = self.slots[&id];
            let mut exam = self.queue.remove(&old).expect("slot index out of sync");
            exam.escalated = true;
            exam.urgency = UrgencyRank::MOST_URGENT;
            let key = SlotKey {
                rank: ESCALATED_RANK,
                seq: old.seq,
            };
            self.slots.insert(id, key);
            self.queue.insert(key, exam);
            escalated.push(id);
        }
        escalated
    }

    pub fn pop_next(&mut self) -> Result<Exam> {
        let (key, exam) = self.queue.pop_first().ok_or(Error::EmptyWorklist)?;
        self.slots.remove(&exam.id);
        if !exam.escalated {
            self.by_age.remove(&(Minutes(exam.created_at), key.seq));
        }
        Ok(exam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Finding, FindingSet};
    use proptest::prelude::*;

    fn exam(id: ExamId, created_at: f64, rank: u8) -> Exam {
        let predicted = if rank == 9 {
            FindingSet::EMPTY
        } else {
            FindingSet::EMPTY.with(Finding::from_index(rank as usize - 1).unwrap())
        };
        Exam::new(id, created_at, FindingSet::EMPTY, predicted)
    }

    #[test]
    fn prio_keeps_chronology_within_a_rank() {
        let mut wl = Worklist::new(Policy::Prio);
        wl.insert(exam(1, 0.0, 2)).unwrap();
        wl.insert(exam(2, 1.0, 3)).unwrap();
        wl.insert(exam(3, 2.0, 2)).unwrap();
        assert_eq!(wl.ids(), vec![1, 3, 2]);
    }

    #[test]
    fn prio_puts_more_urgent_first() {
        let mut wl = Worklist::new(Policy::Prio);
        wl.insert(exam(1, 0.0, 2)).unwrap();
        wl.insert(exam(3, 1.0, 1)).unwrap();
        assert_eq!(wl.ids(), vec![3, 1]);
        assert_eq!(wl.pop_next().unwrap().id, 3);
    }

    #[test]
    fn fifo_appends() {
        let mut wl = Worklist::new(Policy::Fifo);
        wl.insert(exam(1, 0.0, 5)).unwrap();
        wl.insert(exam(2, 1.0, 9)).unwrap();
        wl.insert(exam(3, 2.0, 1)).unwrap();
        assert_eq!(wl.ids(), vec![1, 2, 3]);
        assert_eq!(wl.pop_next().unwrap().id, 1);
    }

    #[test]
    fn duplicate_and_empty() {
        let mut wl = Worklist::new(Policy::Prio);
        wl.insert(exam(1, 0.0, 2)).unwrap();
        assert!(matches!(wl.insert(exam(1, 0.0, 2)), Err(Error::DuplicateExam(1))));
        wl.pop_next().unwrap();
        assert!(matches!(wl.pop_next(), Err(Error::EmptyWorklist)));
        // popped ids may be reused
        wl.insert(exam(1, 3.0, 4)).unwrap();
    }

    #[test]
    fn overdue_exam_moves_to_front() {
        let mut wl = Worklist::new(Policy::PrioMaxWait { max_wait: 1000.0 });
        wl.insert(exam(1, 0.0, 9)).unwrap();
        wl.insert(exam(2, 900.0, 1)).unwrap();
        assert!(wl.escalate_overdue(1000.0).is_empty());
        assert_eq!(wl.ids(), vec![2, 1]);
        assert_eq!(wl.escalate_overdue(1001.0), vec![1]);
        assert_eq!(wl.ids(), vec![1, 2]);
        let head = wl.pop_next().unwrap();
        assert!(head.escalated);
        assert_eq!(head.urgency, UrgencyRank::MOST_URGENT);
        assert_eq!(wl.escalate_overdue(5000.0), vec![2]);
        assert!(wl.escalate_overdue(6000.0).is_empty());
    }

    #[test]
    fn escalation_is_a_noop_without_max_wait() {
        let mut wl = Worklist::new(Policy::Prio);
        wl.insert(exam(1, 0.0, 9)).unwrap();
        assert!(wl.escalate_overdue(1e9).is_empty());
        assert!(!wl.peek().unwrap().escalated);
    }

    /// Four-exam trace replayed by hand:
    ///   t=0   X arrives, rank 9
    ///   t=10  Y arrives, rank 8
    ///   t=500 C arrives, rank 1
    ///   t=520 D arrives, rank 3
    /// With max wait 100, the check at t=520 escalates X then Y; the
    /// worklist becomes [X*, Y*, C, D] and pops in that order even though C
    /// is a rank-1 arrival.
    #[test]
    fn four_exam_escalation_trace() {
        let mut wl = Worklist::new(Policy::PrioMaxWait { max_wait: 100.0 });
        wl.insert(exam(1, 0.0, 9)).unwrap();
        wl.insert(exam(2, 10.0, 8)).unwrap();
        wl.insert(exam(3, 500.0, 1)).unwrap();
        assert_eq!(wl.ids(), vec![3, 2, 1]);
        wl.insert(exam(4, 520.0, 3)).unwrap();
        assert_eq!(wl.escalate_overdue(520.0), vec![1, 2]);
        assert_eq!(wl.ids(), vec![1, 2, 3, 4]);
        let popped: Vec<(ExamId, bool)> = (0..4)
            .map(|_| wl.pop_next().unwrap())
            .map(|e| (e.id, e.escalated))
            .collect();
        assert_eq!(popped, vec![(1, true), (2, true), (3, false), (4, false)]);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Insert(u8),
        Pop,
        Tick(f64),
    }

    fn ops() -> impl Strategy<Value = Vec<Op>> {
        proptest::collection::vec(
            prop_oneof![
                3 => (1u8..=9).prop_map(Op::Insert),
                2 => Just(Op::Pop),
                1 => (0.0f64..50.0).prop_map(Op::Tick),
            ],
            0..200,
        )
    }

    fn policies() -> impl Strategy<Value = Policy> {
        prop_oneof![
            Just(Policy::Fifo),
            Just(Policy::Prio),
            (1.0f64..100.0).prop_map(|max_wait| Policy::PrioMaxWait { max_wait }),
        ]
    }

    proptest! {
        #[test]
        fn stable_and_conserving(policy in policies(), ops in ops()) {
            let mut wl = Worklist::new(policy);
            let mut now = 0.0;
            let mut next_id = 0;
            let mut popped: Vec<Exam> = Vec::new();
            for op in ops {
                match op {
                    Op::Insert(rank) => {
                        wl.insert(exam(next_id, now, rank)).unwrap();
                        next_id += 1;
                        wl.escalate_overdue(now);
                    }
                    Op::Pop => {
                        wl.escalate_overdue(now);
                        if let Ok(e) = wl.pop_next() {
                            // Nothing left behind may outrank what was popped.
                            let eff = |e: &Exam| match policy {
                                Policy::Fifo => 1,
                                _ if e.escalated => 0,
                                _ => e.urgency.get(),
                            };
                            for rest in wl.iter() {
                                prop_assert!(
                                    (eff(&e), e.id) < (eff(rest), rest.id),
                                    "popped {:?} ahead of {:?}", e, rest
                                );
                            }
                            popped.push(e);
                        }
                    }
                    Op::Tick(dt) => now += dt,
                }
            }
            while let Ok(e) = wl.pop_next() {
                popped.push(e);
            }
            let mut ids: Vec<ExamId> = popped.iter().map(|e| e.id).collect();
            if matches!(policy, Policy::Fifo) {
                prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
            }
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..next_id).collect::<Vec<_>>());
        }

        #[test]
        fn single_rank_prio_equals_fifo(rank in 1u8..=9, ops in ops()) {
            let mut fifo = Worklist::new(Policy::Fifo);
            let mut prio = Worklist::new(Policy::Prio);
            let mut next_id = 0;
            for op in ops {
                match op {
                    Op::Insert(_) => {
                        fifo.insert(exam(next_id, next_id as f64, rank)).unwrap();
                        prio.insert(exam(next_id, next_id as f64, rank)).unwrap();
                        next_id += 1;
                    }
                    Op::Pop => {
                        prop_assert_eq!(fifo.pop_next().ok().map(|e| e.id), prio.pop_next().ok().map(|e| e.id));
                    }
                    Op::Tick(_) => {}
                }
            }
            prop_assert_eq!(fifo.ids(), prio.ids());
        }
    }
}
