//! Fixtures shared by the benchmarks.

use triage_core::{Exam, Finding, FindingSet};

/// `n` exams one minute apart with urgency ranks cycling through 1..=9 in
/// a scrambled order.
pub fn ranked_exams(n: u64) -> Vec<Exam> {
    (1..=n)
        .map(|id| {
            let slot = (id * 7 + id / 9) % 9;
            let predicted = Finding::from_index(slot as usize).map_or(FindingSet::EMPTY, |f| FindingSet::EMPTY.with(f));
            Exam::new(id, id as f64, predicted, predicted)
        })
        .collect()
}
