//! Stochastic stand-in for the image classifier.
//!
//! An [`OperatingPoint`] holds per-finding true and false positive rates and
//! turns an exam's true findings into predicted findings. Intermediate
//! operating points are read off a binormal ROC curve,
//! `TPR = Φ(a + b·Φ⁻¹(FPR))`, fitted through two known points per finding.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::Deserialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{Finding, FindingSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub tpr: f64,
    pub fpr: f64,
}

impl Rates {
    pub fn fnr(self) -> f64 {
        1.0 - self.tpr
    }

    pub fn tnr(self) -> f64 {
        1.0 - self.fpr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatingTag {
    LowFpr,
    LowFnr,
    Perfect,
    Custom(String),
}

impl fmt::Display for OperatingTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatingTag::LowFpr => f.write_str("low-fpr"),
            OperatingTag::LowFnr => f.write_str("low-fnr"),
            OperatingTag::Perfect => f.write_str("perfect"),
            OperatingTag::Custom(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub tag: OperatingTag,
    rates: [Rates; Finding::COUNT],
}

// Sensitivity at a fixed 5% false positive rate, and false positive rate at
// a fixed 95% sensitivity, per finding in urgency order.
const LOW_FPR_TPR: [f64; Finding::COUNT] = [0.82, 0.71, 0.86, 0.75, 0.61, 0.75, 0.51, 0.51];
const LOW_FNR_FPR: [f64; Finding::COUNT] = [0.20, 0.24, 0.21, 0.27, 0.39, 0.18, 0.72, 0.78];

impl OperatingPoint {
    pub fn new(tag: OperatingTag, rates: [Rates; Finding::COUNT]) -> Result<Self> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !rates.iter().all(|r| unit(r.tpr) && unit(r.fpr)) {
            return Err(Error::Config("operating point rates must lie in [0, 1]".into()));
        }
        if tag == OperatingTag::Perfect && !rates.iter().all(|r| r.tpr == 1.0 && r.fpr == 0.0) {
            return Err(Error::Config("a perfect operating point needs tpr = 1, fpr = 0".into()));
        }
        Ok(OperatingPoint { tag, rates })
    }

    /// Best average-RTAT point: FPR 0.05 for every finding.
    pub fn low_fpr() -> Self {
        OperatingPoint {
            tag: OperatingTag::LowFpr,
            rates: LOW_FPR_TPR.map(|tpr| Rates { tpr, fpr: 0.05 }),
        }
    }

    /// Low false negative point: TPR 0.95 for every finding.
    pub fn low_fnr() -> Self {
        OperatingPoint {
            tag: OperatingTag::LowFnr,
            rates: LOW_FNR_FPR.map(|fpr| Rates { tpr: 0.95, fpr }),
        }
    }

    pub fn perfect() -> Self {
        OperatingPoint {
            tag: OperatingTag::Perfect,
            rates: [Rates { tpr: 1.0, fpr: 0.0 }; Finding::COUNT],
        }
    }

    pub fn rates(&self, finding: Finding) -> Rates {
        self.rates[finding.index()]
    }

    /// Reads a `finding,tpr,fpr` CSV; findings not listed keep the rates of
    /// `base`.
    pub fn from_csv(path: &Path, base: &OperatingPoint) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            finding: String,
            tpr: f64,
            fpr: f64,
        }
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut rates = base.rates;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        for row in reader.deserialize::<Row>() {
            let row = row?;
            let finding: Finding = row.finding.parse()?;
            rates[finding.index()] = Rates {
                tpr: row.tpr,
                fpr: row.fpr,
            };
        }
        let name = path.file_stem().map_or("custom".into(), |s| s.to_string_lossy().into_owned());
        OperatingPoint::new(OperatingTag::Custom(name), rates)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Flips true labels into predictions, independently per finding.
    /// Always consumes exactly one uniform draw per finding.
    pub fn classify<R: Rng + ?Sized>(&self, true_findings: FindingSet, rng: &mut R) -> FindingSet {
        let mut predicted = FindingSet::EMPTY;
        for finding in Finding::ALL {
            let u: f64 = rng.random();
            let rates = self.rates[finding.index()];
            let p = if true_findings.contains(finding) {
                rates.tpr
            } else {
                rates.fpr
            };
            if u < p {
                predicted.insert(finding);
            }
        }
        predicted
    }
}

/// Built-in operating point chosen by name on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinPoint {
    LowFpr,
    LowFnr,
    Perfect,
}

impl BuiltinPoint {
    pub fn operating_point(self) -> OperatingPoint {
        match self {
            BuiltinPoint::LowFpr => OperatingPoint::low_fpr(),
            BuiltinPoint::LowFnr => OperatingPoint::low_fnr(),
            BuiltinPoint::Perfect => OperatingPoint::perfect(),
        }
    }
}

impl FromStr for BuiltinPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "low-fpr" | "low_fpr" | "lowFPR" => Ok(BuiltinPoint::LowFpr),
            "low-fnr" | "low_fnr" | "lowFNR" => Ok(BuiltinPoint::LowFnr),
            "perfect" => Ok(BuiltinPoint::Perfect),
            other => Err(Error::Config(format!("unknown operating point `{other}`"))),
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// One binormal ROC curve in probit space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinormalCurve {
    pub intercept: f64,
    pub slope: f64,
}

/// A point on an ROC curve, `(fpr, tpr)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

impl BinormalCurve {
    /// Solves the two linear equations `Φ⁻¹(tpr) = a + b·Φ⁻¹(fpr)` through
    /// both anchors.
    pub fn fit(first: RocPoint, second: RocPoint) -> Result<Self> {
        let inside = |p: f64| p > 0.0 && p < 1.0;
        for p in [first, second] {
            if !inside(p.fpr) || !inside(p.tpr) {
                return Err(Error::DegenerateAnchors(format!(
                    "anchor ({}, {}) is not strictly inside the unit square",
                    p.fpr, p.tpr
                )));
            }
        }
        if first.fpr == second.fpr {
            return Err(Error::DegenerateAnchors(format!(
                "both anchors have fpr {}",
                first.fpr
            )));
        }
        let n = std_normal();
        let (x1, y1) = (n.inverse_cdf(first.fpr), n.inverse_cdf(first.tpr));
        let (x2, y2) = (n.inverse_cdf(second.fpr), n.inverse_cdf(second.tpr));
        let slope = (y2 - y1) / (x2 - x1);
        if !(slope > 0.0) {
            return Err(Error::DegenerateAnchors(format!("slope {slope} is not positive")));
        }
        Ok(BinormalCurve {
            intercept: y1 - slope * x1,
            slope,
        })
    }

    pub fn tpr_at(self, fpr: f64) -> f64 {
        if fpr <= 0.0 {
            return 0.0;
        }
        if fpr >= 1.0 {
            return 1.0;
        }
        let n = std_normal();
        n.cdf(self.intercept + self.slope * n.inverse_cdf(fpr))
    }
}

/// Binormal curves for all eight findings plus the anchors they were fitted
/// through.
#[derive(Debug, Clone, PartialEq)]
pub struct BinormalRoc {
    curves: [BinormalCurve; Finding::COUNT],
    anchors: [(RocPoint, RocPoint); Finding::COUNT],
}

impl BinormalRoc {
    pub fn fit(anchors: [(RocPoint, RocPoint); Finding::COUNT]) -> Result<Self> {
        let mut curves = [BinormalCurve {
            intercept: 0.0,
            slope: 1.0,
        }; Finding::COUNT];
        for (curve, (first, second)) in curves.iter_mut().zip(anchors) {
            *curve = BinormalCurve::fit(first, second)?;
        }
        Ok(BinormalRoc { curves, anchors })
    }

    /// Curves through the built-in low-FPR and low-FNR operating points.
    pub fn from_builtin_points() -> Self {
        let (low_fpr, low_fnr) = (OperatingPoint::low_fpr(), OperatingPoint::low_fnr());
        let anchors = Finding::ALL.map(|f| {
            let (a, b) = (low_fpr.rates(f), low_fnr.rates(f));
            (
                RocPoint { fpr: a.fpr, tpr: a.tpr },
                RocPoint { fpr: b.fpr, tpr: b.tpr },
            )
        });
        BinormalRoc::fit(anchors).expect("built-in anchors are valid")
    }

    pub fn curve(&self, finding: Finding) -> BinormalCurve {
        self.curves[finding.index()]
    }

    pub fn anchors(&self, finding: Finding) -> (RocPoint, RocPoint) {
        self.anchors[finding.index()]
    }

    /// Operating point with the same false positive rate for every finding.
    pub fn operating_point_at_fpr(&self, fpr: f64) -> OperatingPoint {
        self.operating_point_at(&[fpr; Finding::COUNT])
    }

    pub fn operating_point_at(&self, fpr: &[f64; Finding::COUNT]) -> OperatingPoint {
        let rates = Finding::ALL.map(|f| {
            let fpr = fpr[f.index()].clamp(0.0, 1.0);
            Rates {
                tpr: self.curves[f.index()].tpr_at(fpr),
                fpr,
            }
        });
        let tag = if fpr.iter().all(|x| *x == fpr[0]) {
            OperatingTag::Custom(format!("roc@{}", fpr[0]))
        } else {
            OperatingTag::Custom("roc".into())
        };
        OperatingPoint { tag, rates }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Reference intercepts and slopes solved independently with
    // scipy.stats.norm.ppf, per finding in urgency order.
    const REFERENCE_FITS: [(f64, f64); 8] = [
        (2.409206570412232, 0.9081911351212834),
        (2.466233854444809, 1.1629296999723673),
        (2.1878341390435923, 0.6733211880264838),
        (2.221043719650983, 0.9402380516503724),
        (1.9241726613989263, 0.9999999999999996),
        (2.862470035800065, 1.330197562721205),
        (1.2210623494133142, 0.7271123834716071),
        (1.1273680958762602, 0.6701503219228818),
    ];

    #[test]
    fn table_points_are_consistent() {
        for f in Finding::ALL {
            let low_fpr = OperatingPoint::low_fpr().rates(f);
            assert_eq!(low_fpr.fpr, 0.05);
            assert_abs_diff_eq!(low_fpr.tnr(), 0.95, epsilon = 1e-12);
            let low_fnr = OperatingPoint::low_fnr().rates(f);
            assert_eq!(low_fnr.tpr, 0.95);
            assert_abs_diff_eq!(low_fnr.fnr(), 0.05, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(OperatingPoint::low_fpr().rates(Finding::Pneumothorax).fnr(), 0.18, epsilon = 1e-12);
        assert_abs_diff_eq!(OperatingPoint::low_fnr().rates(Finding::Mass).tnr(), 0.28, epsilon = 1e-12);
    }

    #[test]
    fn fit_matches_reference_solution() {
        let roc = BinormalRoc::from_builtin_points();
        for (f, (a, b)) in Finding::ALL.into_iter().zip(REFERENCE_FITS) {
            let curve = roc.curve(f);
            assert_abs_diff_eq!(curve.intercept, a, epsilon = 1e-9);
            assert_abs_diff_eq!(curve.slope, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_reproduces_anchors() {
        let roc = BinormalRoc::from_builtin_points();
        for f in Finding::ALL {
            let (first, second) = roc.anchors(f);
            assert_abs_diff_eq!(roc.curve(f).tpr_at(first.fpr), first.tpr, epsilon = 1e-9);
            assert_abs_diff_eq!(roc.curve(f).tpr_at(second.fpr), second.tpr, epsilon = 1e-9);
        }
        let p = roc.operating_point_at_fpr(0.5).rates(Finding::Pneumothorax);
        // Φ(2.409206570412232) from scipy.stats.norm.cdf
        assert_abs_diff_eq!(p.tpr, 0.9920063768974213, epsilon = 1e-9);
    }

    #[test]
    fn chance_line_and_degenerate_anchors() {
        let curve = BinormalCurve::fit(RocPoint { fpr: 0.3, tpr: 0.3 }, RocPoint { fpr: 0.6, tpr: 0.6 }).unwrap();
        assert_abs_diff_eq!(curve.intercept, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.slope, 1.0, epsilon = 1e-12);
        let same_fpr = BinormalCurve::fit(RocPoint { fpr: 0.2, tpr: 0.5 }, RocPoint { fpr: 0.2, tpr: 0.7 });
        assert!(matches!(same_fpr, Err(Error::DegenerateAnchors(_))));
        let decreasing = BinormalCurve::fit(RocPoint { fpr: 0.1, tpr: 0.8 }, RocPoint { fpr: 0.4, tpr: 0.6 });
        assert!(matches!(decreasing, Err(Error::DegenerateAnchors(_))));
        let on_edge = BinormalCurve::fit(RocPoint { fpr: 0.0, tpr: 0.5 }, RocPoint { fpr: 0.4, tpr: 0.6 });
        assert!(matches!(on_edge, Err(Error::DegenerateAnchors(_))));
    }

    #[test]
    fn endpoints_are_limits() {
        let curve = BinormalRoc::from_builtin_points().curve(Finding::Pneumothorax);
        assert_eq!(curve.tpr_at(0.0), 0.0);
        assert_eq!(curve.tpr_at(1.0), 1.0);
    }

    fn detection_rate(op: &OperatingPoint, truth: FindingSet, finding: Finding, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100_000;
        let hits = (0..n).filter(|_| op.classify(truth, &mut rng).contains(finding)).count();
        hits as f64 / n as f64
    }

    #[test]
    fn confusion_frequencies_match_table() {
        let present = FindingSet::EMPTY.with(Finding::Pneumothorax);
        let tpr = detection_rate(&OperatingPoint::low_fpr(), present, Finding::Pneumothorax, 11);
        assert!((tpr - 0.82).abs() < 0.01, "{tpr}");
        let fpr = detection_rate(&OperatingPoint::low_fnr(), FindingSet::EMPTY, Finding::Pneumothorax, 12);
        assert!((fpr - 0.20).abs() < 0.01, "{fpr}");
    }

    #[test]
    fn builtin_names_parse() {
        assert_eq!("low-fpr".parse::<BuiltinPoint>().unwrap(), BuiltinPoint::LowFpr);
        assert_eq!("low-fnr".parse::<BuiltinPoint>().unwrap(), BuiltinPoint::LowFnr);
        assert_eq!("perfect".parse::<BuiltinPoint>().unwrap(), BuiltinPoint::Perfect);
        assert!("best".parse::<BuiltinPoint>().is_err());
    }

    #[test]
    fn operating_point_csv_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("op.csv");
        std::fs::write(&path, "finding,tpr,fpr\nmass,0.6,0.1\n").unwrap();
        let op = OperatingPoint::from_csv(&path, &OperatingPoint::low_fpr()).unwrap();
        assert_eq!(op.rates(Finding::Mass), Rates { tpr: 0.6, fpr: 0.1 });
        assert_eq!(op.rates(Finding::Pneumothorax), OperatingPoint::low_fpr().rates(Finding::Pneumothorax));
        std::fs::write(&path, "finding,tpr,fpr\nmass,1.6,0.1\n").unwrap();
        assert!(OperatingPoint::from_csv(&path, &OperatingPoint::low_fpr()).is_err());
    }

    proptest! {
        #[test]
        fn perfect_classifier_is_identity(bits in any::<u8>(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = FindingSet::from_bits(bits);
            prop_assert_eq!(OperatingPoint::perfect().classify(truth, &mut rng), truth);
        }

        #[test]
        fn tpr_strictly_increasing_in_fpr(x in 0.001f64..0.99, dx in 0.001f64..0.5, idx in 0usize..8) {
            let y = (x + dx).min(0.999);
            prop_assume!(y > x);
            let curve = BinormalRoc::from_builtin_points().curve(Finding::ALL[idx]);
            prop_assert!(curve.tpr_at(y) > curve.tpr_at(x));
        }
    }
}
