//! Turnaround summaries per finding and Welch's unequal-variance t-test.

use std::fmt;
use std::str::FromStr;

use crate::engine::SimulationResult;
use crate::error::{Error, Result};
use crate::model::{Exam, Finding};

/// Reporting category of an exam: one per true finding, or normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Finding(Finding),
    Normal,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Finding(Finding::Pneumothorax),
        Category::Finding(Finding::Congestion),
        Category::Finding(Finding::PleuralEffusion),
        Category::Finding(Finding::Infiltrate),
        Category::Finding(Finding::Atelectasis),
        Category::Finding(Finding::Cardiomegaly),
        Category::Finding(Finding::Mass),
        Category::Finding(Finding::ForeignObject),
        Category::Normal,
    ];

    pub fn index(self) -> usize {
        match self {
            Category::Finding(f) => f.index(),
            Category::Normal => Finding::COUNT,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Finding(f) => f.name(),
            Category::Normal => "normal",
        }
    }

    /// Whether an exam counts toward this category, judged by its true
    /// findings.
    pub fn includes(self, exam: &Exam) -> bool {
        match self {
            Category::Finding(f) => exam.true_findings.contains(f),
            Category::Normal => exam.true_findings.is_empty(),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "normal" {
            Ok(Category::Normal)
        } else {
            s.parse().map(Category::Finding)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategorySummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    samples: Vec<f64>,
}

/// Nearest-rank percentile of sorted data, `q` in (0, 1].
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl CategorySummary {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        if samples.is_empty() {
            return CategorySummary::default();
        }
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        CategorySummary {
            n,
            mean,
            median: nearest_rank(&sorted, 0.5),
            p95: nearest_rank(&sorted, 0.95),
            max: sorted[n - 1],
            samples,
        }
    }

    /// Samples in exam id order.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// Turnaround statistics for the eight findings and normal exams.
#[derive(Debug, Clone, PartialEq)]
pub struct RtatSummary {
    categories: [CategorySummary; 9],
}

impl RtatSummary {
    pub fn get(&self, category: Category) -> &CategorySummary {
        &self.categories[category.index()]
    }

    pub fn finding(&self, finding: Finding) -> &CategorySummary {
        self.get(Category::Finding(finding))
    }

    pub fn normal(&self) -> &CategorySummary {
        self.get(Category::Normal)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, &CategorySummary)> {
        Category::ALL.into_iter().zip(self.categories.iter())
    }

    /// Concatenates the samples of two summaries and recomputes.
    pub fn merge(&self, other: &RtatSummary) -> RtatSummary {
        let categories = std::array::from_fn(|i| {
            let mut samples = self.categories[i].samples.clone();
            samples.extend_from_slice(&other.categories[i].samples);
            CategorySummary::from_samples(samples)
        });
        RtatSummary { categories }
    }

    /// `finding,n,mean_rtat,median_rtat,p95_rtat,max_rtat`
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["finding", "n", "mean_rtat", "median_rtat", "p95_rtat", "max_rtat"])?;
        for (category, s) in self.iter() {
            out.write_record([
                category.name().to_string(),
                s.n.to_string(),
                format!("{:.3}", s.mean),
                format!("{:.3}", s.median),
                format!("{:.3}", s.p95),
                format!("{:.3}", s.max),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Summarizes exams by their true findings. Exams without a report are
/// ignored.
pub fn summarize_exams(exams: &[Exam]) -> RtatSummary {
    let mut samples: [Vec<f64>; 9] = Default::default();
    for exam in exams {
        let Some(rtat) = exam.rtat() else { continue };
        if exam.true_findings.is_empty() {
            samples[Category::Normal.index()].push(rtat);
        }
        for f in exam.true_findings.iter() {
            samples[f.index()].push(rtat);
        }
    }
    RtatSummary {
        categories: samples.map(CategorySummary::from_samples),
    }
}

pub fn summarize(result: &SimulationResult) -> RtatSummary {
    summarize_exams(&result.exams)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
}

fn mean_and_variance(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Welch's t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateSamples(format!(
            "need at least two samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mean_a, var_a) = mean_and_variance(a);
    let (mean_b, var_b) = mean_and_variance(b);
    if var_a == 0.0 && var_b == 0.0 {
        return Err(Error::DegenerateSamples("both samples have zero variance".into()));
    }
    let (sa, sb) = (var_a / a.len() as f64, var_b / b.len() as f64);
    let se2 = sa + sb;
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok(WelchResult {
        t,
        df,
        p: student_t_two_sided(t, df),
        mean_a,
        mean_b,
        var_a,
        var_b,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// `I_x(a, b)` evaluated with the modified Lentz continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=100_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
