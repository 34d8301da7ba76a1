//! Time-of-day dependent empirical delta distributions.
//!
//! Both the exam generator and the radiologist draw their next delta from
//! the histogram of the hour bin that contains the current simulation time.
//! Histograms come either from CSV observations (`hour,delta_min`) or from a
//! synthetic log-normal profile that is calibrated against a target daily
//! volume and a target FIFO turnaround.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::Deserialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const MINUTES_PER_DAY: f64 = 1440.0;
pub const DEFAULT_OUTLIER_CUTOFF_MIN: f64 = 150.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File(PathBuf),
    Synthetic,
}

/// Discrete weighted histogram of positive deltas.
#[derive(Debug, Clone)]
pub struct Histogram {
    values: Vec<f64>,
    weights: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl Histogram {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() || values.is_empty() {
            return Err(Error::Data("histogram needs one weight per value".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::NonpositiveDelta(*bad));
        }
        let index = WeightedIndex::new(&weights)
            .map_err(|e| Error::Data(format!("invalid histogram weights: {e}")))?;
        Ok(Histogram {
            values,
            weights,
            index,
        })
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; values.len()];
        Histogram::new(values, weights)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = self.weights.iter().sum();
        self.values.iter().zip(&self.weights).map(|(v, w)| v * w).sum::<f64>() / total
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.values[self.index.sample(rng)]
    }
}

/// Hour-binned histograms covering one day.
#[derive(Debug, Clone)]
pub struct TimeOfDayDistribution {
    bins: Vec<Histogram>,
    pub source: Source,
    pub outlier_cutoff_min: f64,
    /// Records dropped at load time because they exceeded the cutoff.
    pub discarded: usize,
}

impl TimeOfDayDistribution {
    pub fn from_bins(bins: Vec<Histogram>, source: Source, outlier_cutoff_min: f64) -> Result<Self> {
        if bins.is_empty() || (MINUTES_PER_DAY as usize) % bins.len() != 0 {
            return Err(Error::Config(format!(
                "{} bins do not evenly divide a day",
                bins.len()
            )));
        }
        if let Some(bad) = bins
            .iter()
            .flat_map(|b| b.values.iter())
            .find(|v| **v > outlier_cutoff_min)
        {
            return Err(Error::Data(format!(
                "delta {bad} exceeds the outlier cutoff {outlier_cutoff_min}"
            )));
        }
        Ok(TimeOfDayDistribution {
            bins,
            source,
            outlier_cutoff_min,
            discarded: 0,
        })
    }

    /// Every bin holds the single value `delta`.
    pub fn constant(delta: f64, bins_per_day: usize) -> Result<Self> {
        let bins = (0..bins_per_day)
            .map(|_| Histogram::uniform(vec![delta]))
            .collect::<Result<Vec<_>>>()?;
        TimeOfDayDistribution::from_bins(bins, Source::Synthetic, delta.max(DEFAULT_OUTLIER_CUTOFF_MIN))
    }

    pub fn bins(&self) -> &[Histogram] {
        &self.bins
    }

    pub fn bin_minutes(&self) -> f64 {
        MINUTES_PER_DAY / self.bins.len() as f64
    }

    /// Index of the bin containing `now` (minutes since start, any day).
    pub fn bin_index(&self, now: f64) -> usize {
        let time_of_day = now.rem_euclid(MINUTES_PER_DAY);
        ((time_of_day / self.bin_minutes()) as usize).min(self.bins.len() - 1)
    }

    pub fn sample_delta<R: Rng + ?Sized>(&self, now: f64, rng: &mut R) -> f64 {
        self.bins[self.bin_index(now)].sample(rng)
    }

    /// Expected number of events per day if each bin were a renewal process
    /// with its own mean delta.
    pub fn expected_daily_events(&self) -> f64 {
        self.bins.iter().map(|b| self.bin_minutes() / b.mean()).sum()
    }
}

impl fmt::Display for TimeOfDayDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, bin) in self.bins.iter().enumerate() {
            writeln!(f, "bin {i:>2}: n={:>3} mean={:.2}", bin.values.len(), bin.mean())?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct DeltaRow {
    hour: f64,
    delta_min: f64,
}

pub fn load_distribution(path: &Path, cutoff: f64) -> Result<TimeOfDayDistribution> {
    load_distribution_binned(path, cutoff, 24)
}

/// Reads a `hour,delta_min` CSV into `bins_per_day` bins. `hour` may be
/// fractional when finer bins are wanted.
pub fn load_distribution_binned(path: &Path, cutoff: f64, bins_per_day: usize) -> Result<TimeOfDayDistribution> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    if bins_per_day == 0 || (MINUTES_PER_DAY as usize) % bins_per_day != 0 {
        return Err(Error::Config(format!("{bins_per_day} bins do not evenly divide a day")));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); bins_per_day];
    let mut discarded = 0;
    for (line, row) in reader.deserialize::<DeltaRow>().enumerate() {
        let row = row?;
        if !(0.0..24.0).contains(&row.hour) {
            return Err(Error::Data(format!(
                "{}: record {}: hour {} outside [0, 24)",
                path.display(),
                line + 1,
                row.hour
            )));
        }
        if !(row.delta_min > 0.0) || !row.delta_min.is_finite() {
            return Err(Error::Data(format!(
                "{}: record {}: delta {} is not positive",
                path.display(),
                line + 1,
                row.delta_min
            )));
        }
        if row.delta_min > cutoff {
            discarded += 1;
            continue;
        }
        let bin = ((row.hour * bins_per_day as f64 / 24.0) as usize).min(bins_per_day - 1);
        values[bin].push(row.delta_min);
    }
    let bins = values
        .into_iter()
        .enumerate()
        .map(|(hour, v)| {
            if v.is_empty() {
                Err(Error::EmptyBin(hour))
            } else {
                Histogram::uniform(v)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dist = TimeOfDayDistribution::from_bins(bins, Source::File(path.to_path_buf()), cutoff)?;
    dist.discarded = discarded;
    Ok(dist)
}

/// Parameters of the synthetic default workload.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProfile {
    /// Mean minutes between consecutive exam creations, per hour of day.
    pub arrival_mean_min: [f64; 24],
    /// Mean minutes between consecutive report finalizations, per hour.
    pub reporting_mean_min: [f64; 24],
    /// Log-space standard deviation of every bin.
    pub dispersion: f64,
    /// Quantile points per bin.
    pub points_per_bin: usize,
    pub outlier_cutoff_min: f64,
    pub target_daily_volume: f64,
    /// FIFO mean turnaround the reporting speed is scaled to hit. `None`
    /// keeps the reporting means as given.
    pub target_mean_rtat_min: Option<f64>,
    pub calibration_days: u32,
}

/// Exams per hour of day; the shape of the daily demand curve.
const ARRIVALS_PER_HOUR: [f64; 24] = [
    1.6, 1.4, 1.2, 1.2, 1.2, 1.4, 2.2, 3.6, 6.8, 8.2, 8.2, 7.6, //
    6.6, 6.6, 6.4, 6.0, 5.4, 4.6, 3.6, 3.2, 2.8, 2.4, 2.0, 1.8,
];

/// Mean minutes between two finalized reports. Day shift reads quickly,
/// the on-call night shift slowly.
const REPORTING_MEAN_MIN: [f64; 24] = [
    26.4, 31.5, 36.5, 36.5, 36.5, 31.5, 26.4, 18.1, 5.0, 4.2, 4.2, 4.6, //
    5.8, 5.0, 4.6, 4.6, 5.0, 7.3, 10.1, 12.0, 13.9, 16.4, 19.8, 23.2,
];

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            arrival_mean_min: ARRIVALS_PER_HOUR.map(|rate| 60.0 / rate),
            reporting_mean_min: REPORTING_MEAN_MIN,
            dispersion: 0.8,
            points_per_bin: 64,
            outlier_cutoff_min: DEFAULT_OUTLIER_CUTOFF_MIN,
            target_daily_volume: 1408.0 / 14.0,
            target_mean_rtat_min: Some(80.0),
            calibration_days: 4000,
        }
    }
}

impl SyntheticProfile {
    /// Same mean for every hour.
    pub fn constant(arrival_mean: f64, reporting_mean: f64) -> Self {
        SyntheticProfile {
            arrival_mean_min: [arrival_mean; 24],
            reporting_mean_min: [reporting_mean; 24],
            target_daily_volume: MINUTES_PER_DAY / arrival_mean,
            target_mean_rtat_min: None,
            ..SyntheticProfile::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if !self.arrival_mean_min.iter().all(positive)
            || !self.reporting_mean_min.iter().all(positive)
            || !positive(&self.dispersion)
            || !positive(&self.outlier_cutoff_min)
            || !positive(&self.target_daily_volume)
            || self.points_per_bin == 0
            || self.calibration_days == 0
        {
            return Err(Error::Config("synthetic profile parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Arrival and reporting distributions that drive one workload.
#[derive(Debug, Clone)]
pub struct DistributionPair {
    pub arrivals: TimeOfDayDistribution,
    pub reporting: TimeOfDayDistribution,
    /// Factor applied to the profile's reporting means by calibration.
    pub reporting_scale: f64,
}

/// Equal-weight quantile discretization of a log-normal with the given
/// mean, dropping points above `cutoff`.
fn lognormal_bin(mean: f64, sigma: f64, points: usize, cutoff: f64) -> Result<Histogram> {
    let std_normal = Normal::standard();
    let mu = mean.ln() - sigma * sigma / 2.0;
    let values: Vec<f64> = (0..points)
        .map(|i| {
            let q = (i as f64 + 0.5) / points as f64;
            (mu + sigma * std_normal.inverse_cdf(q)).exp()
        })
        .filter(|v| *v <= cutoff)
        .collect();
    if values.is_empty() {
        return Err(Error::CalibrationFailed(format!(
            "mean {mean} min leaves no points below the {cutoff} min cutoff"
        )));
    }
    Histogram::uniform(values)
}

fn profile_distribution(means: &[f64; 24], scale: f64, profile: &SyntheticProfile) -> Result<TimeOfDayDistribution> {
    let bins = means
        .iter()
        .map(|m| lognormal_bin(m * scale, profile.dispersion, profile.points_per_bin, profile.outlier_cutoff_min))
        .collect::<Result<Vec<_>>>()?;
    TimeOfDayDistribution::from_bins(bins, Source::Synthetic, profile.outlier_cutoff_min)
}

/// Ratio of daily arrivals to the daily number of reports the radiologist
/// could finalize if never idle.
pub fn utilization(arrivals: &TimeOfDayDistribution, reporting: &TimeOfDayDistribution) -> f64 {
    arrivals.expected_daily_events() / reporting.expected_daily_events()
}

/// Mean turnaround of a FIFO single-server queue, computed with the Lindley
/// recursion `start = max(arrival, previous finish)`.
pub fn fifo_mean_rtat(pair_arrivals: &TimeOfDayDistribution, reporting: &TimeOfDayDistribution, days: u32, seed: u64) -> f64 {
    let mut arrival_rng = rng::stream(seed, Stream::Arrivals);
    let mut report_rng = rng::stream(seed, Stream::Reporting);
    let horizon = f64::from(days) * MINUTES_PER_DAY;
    let mut created = pair_arrivals.sample_delta(0.0, &mut arrival_rng);
    let mut free_at = 0.0_f64;
    let mut total = 0.0;
    let mut n = 0usize;
    while created < horizon {
        let start = created.max(free_at);
        free_at = start + reporting.sample_delta(start, &mut report_rng);
        total += free_at - created;
        n += 1;
        created += pair_arrivals.sample_delta(created, &mut arrival_rng);
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Mean number of exams created per day when arrivals are replayed for
/// `days` days.
pub fn simulated_daily_volume(arrivals: &TimeOfDayDistribution, days: u32, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, Stream::Arrivals);
    let horizon = f64::from(days) * MINUTES_PER_DAY;
    let mut created = arrivals.sample_delta(0.0, &mut rng);
    let mut n = 0usize;
    while created < horizon {
        n += 1;
        created += arrivals.sample_delta(created, &mut rng);
    }
    n as f64 / f64::from(days)
}

/// Builds the arrival and reporting distributions of a synthetic profile.
///
/// The arrival profile must integrate to the target daily volume within 5%
/// and the reporting profile must keep utilization below one. When the
/// profile carries a turnaround target, arrival means are first rescaled so
/// a replay creates the target volume (deltas that straddle an hour
/// boundary make the renewal count drift from the bin means), then
/// reporting means are scaled by a bisection on a FIFO replay until the
/// FIFO mean RTAT hits the target.
pub fn synthesize_default<R: Rng + ?Sized>(profile: &SyntheticProfile, rng: &mut R) -> Result<DistributionPair> {
    profile.validate()?;
    let arrivals = profile_distribution(&profile.arrival_mean_min, 1.0, profile)?;
    let volume = arrivals.expected_daily_events();
    if (volume - profile.target_daily_volume).abs() > 0.05 * profile.target_daily_volume {
        return Err(Error::CalibrationFailed(format!(
            "arrival profile yields {volume:.1} exams/day, target {:.1}",
            profile.target_daily_volume
        )));
    }
    let reporting = profile_distribution(&profile.reporting_mean_min, 1.0, profile)?;
    let rho = utilization(&arrivals, &reporting);
    if rho >= 1.0 {
        return Err(Error::CalibrationFailed(format!(
            "unstable queue: utilization {rho:.3} >= 1"
        )));
    }
    let Some(target) = profile.target_mean_rtat_min else {
        return Ok(DistributionPair {
            arrivals,
            reporting,
            reporting_scale: 1.0,
        });
    };

    let seed: u64 = rng.random();
    let mut arrival_scale = 1.0;
    let mut arrivals = arrivals;
    for _ in 0..4 {
        let realized = simulated_daily_volume(&arrivals, profile.calibration_days, seed);
        arrival_scale *= realized / profile.target_daily_volume;
        arrivals = profile_distribution(&profile.arrival_mean_min, arrival_scale, profile)?;
    }
    let evaluate = |scale: f64| -> Result<f64> {
        let reporting = profile_distribution(&profile.reporting_mean_min, scale, profile)?;
        if utilization(&arrivals, &reporting) >= 1.0 {
            return Ok(f64::INFINITY);
        }
        Ok(fifo_mean_rtat(&arrivals, &reporting, profile.calibration_days, seed))
    };
    let (mut lo, mut hi) = (0.25, 4.0);
    let (f_lo, f_hi) = (evaluate(lo)?, evaluate(hi)?);
    if !(f_lo <= target && target <= f_hi) {
        return Err(Error::CalibrationFailed(format!(
            "FIFO mean RTAT ranges over [{f_lo:.1}, {f_hi:.1}] min, target {target} min unreachable"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if evaluate(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    let scale = 0.5 * (lo + hi);
    Ok(DistributionPair {
        arrivals,
        reporting: profile_distribution(&profile.reporting_mean_min, scale, profile)?,
        reporting_scale: scale,
    })
}

/// Seed of the calibration replay behind [`default_distributions`].
pub const DEFAULT_CALIBRATION_SEED: u64 = 0x5eed_ca11;

/// The shipped synthetic workload, calibrated with a fixed seed so it does
/// not change with the simulation seed.
pub fn default_distributions() -> Result<DistributionPair> {
    let mut rng = rng::stream(DEFAULT_CALIBRATION_SEED, Stream::Calibration);
    synthesize_default(&SyntheticProfile::default(), &mut rng)
}
