//! Hourly discretization, imputation, normalization, and fixed-width
//! summarization of vital-sign series. The stage order is enforced by
//! types: `DiscretizedSeries` -> `ImputedSeries` -> `NormalizedSeries`.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{PatientVisit, CHANNELS};

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("reading at {at} predates the bin origin {origin}")]
    NegativeTime { at: DateTime<Utc>, origin: DateTime<Utc> },
}

/// Per-bin means with missing bins explicit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedSeries {
    pub bins: Vec<Option<f64>>,
}

/// Fully filled bins plus the mask of which were imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSeries {
    pub bins: Vec<f64>,
    pub imputed: Vec<bool>,
}

/// Z-scored bins ready for summarization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub bins: Vec<f64>,
    pub imputed: Vec<bool>,
}

pub const BIN: chrono::Duration = chrono::Duration::hours(1);

/// Number of one-hour bins covering a stay; never zero.
pub fn bin_count(admission: DateTime<Utc>, discharge: DateTime<Utc>) -> usize {
    let minutes = (discharge - admission).num_minutes().max(0);
    (minutes as f64 / 60.0).ceil().max(1.0) as usize
}

/// Mean of the readings falling into each one-hour bin from `origin`.
/// Readings beyond the last bin are dropped with a debug log.
pub fn discretize(
    series: &[(DateTime<Utc>, f64)],
    origin: DateTime<Utc>,
    n_bins: usize,
) -> Result<DiscretizedSeries, SeriesError> {
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(at, value) in series {
        if at < origin {
            return Err(SeriesError::NegativeTime { at, origin });
        }
        let bin = ((at - origin).num_minutes() as f64 / 60.0).floor() as usize;
        if bin >= n_bins {
            log::debug!("reading at {at} falls outside the stay; dropped");
            continue;
        }
        sums[bin] += value;
        counts[bin] += 1;
    }
    let bins = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect();
    Ok(DiscretizedSeries { bins })
}

/// Forward-fill, then backward-fill, then train-mean for channels still
/// entirely missing. Idempotent: re-imputing a complete series changes
/// nothing.
pub fn impute(series: &DiscretizedSeries, train_mean: f64) -> ImputedSeries {
    let n = series.bins.len();
    let mut bins = vec![0.0; n];
    let mut imputed = vec![false; n];
    let mut last: Option<f64> = None;
    for i in 0..n {
        match series.bins[i] {
            Some(x) => {
                bins[i] = x;
                last = Some(x);
            }
            None => {
                imputed[i] = true;
                if let Some(x) = last {
                    bins[i] = x;
                }
            }
        }
    }
    // Backward-fill the leading gap.
    if let Some(first_observed) = series.bins.iter().position(|b| b.is_some()) {
        let value = series.bins[first_observed].unwrap();
        for bin in bins.iter_mut().take(first_observed) {
            *bin = value;
        }
    } else {
        for bin in bins.iter_mut() {
            *bin = train_mean;
        }
    }
    ImputedSeries { bins, imputed }
}

/// Train-split mean and standard deviation per channel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Observed raw bin values across the given visits, one slot per
    /// registry channel. Channels never observed get mean 0, std 0.
    pub fn fit(visits: &[&PatientVisit]) -> ChannelStats {
        let mut sums = vec![0.0; CHANNELS.len()];
        let mut sq_sums = vec![0.0; CHANNELS.len()];
        let mut counts = vec![0u64; CHANNELS.len()];
        for visit in visits {
            let n_bins = bin_count(visit.admission_time, visit.discharge_time);
            for (c, name) in CHANNELS.iter().enumerate() {
                if let Some(series) = visit.timeseries.channels.get(*name) {
                    if let Ok(disc) = discretize(series, visit.admission_time, n_bins) {
                        for value in disc.bins.into_iter().flatten() {
                            sums[c] += value;
                            sq_sums[c] += value * value;
                            counts[c] += 1;
                        }
                    }
                }
            }
        }
        let mean: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect();
        let std: Vec<f64> = sq_sums
            .iter()
            .zip(&counts)
            .zip(&mean)
            .map(|((&sq, &n), &m)| {
                if n > 0 {
                    (sq / n as f64 - m * m).max(0.0).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        ChannelStats { mean, std }
    }

    pub fn channel_index(name: &str) -> Option<usize> {
        CHANNELS.iter().position(|c| *c == name)
    }
}

/// `(x - mean) / std`; a zero-variance channel normalizes to all zeros.
pub fn normalize(series: &ImputedSeries, mean: f64, std: f64) -> NormalizedSeries {
    let bins = if std < 1e-9 {
        vec![0.0; series.bins.len()]
    } else {
        series.bins.iter().map(|x| (x - mean) / std).collect()
    };
    NormalizedSeries { bins, imputed: series.imputed.clone() }
}

/// Summary block per channel: mean, min, max, last, observed fraction.
pub const SUMMARY_STATS: usize = 5;

pub fn summarize_series(series: &NormalizedSeries) -> [f64; SUMMARY_STATS] {
    let n = series.bins.len() as f64;
    let mean = series.bins.iter().sum::<f64>() / n;
    let min = series.bins.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = series.bins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let last = *series.bins.last().expect("bins never empty");
    let observed = series.imputed.iter().filter(|&&i| !i).count() as f64 / n;
    [mean, min, max, last, observed]
}

/// Full per-visit vitals block in registry channel order.
pub fn vitals_block(visit: &PatientVisit, stats: &ChannelStats) -> Result<Vec<f64>, SeriesError> {
    let n_bins = bin_count(visit.admission_time, visit.discharge_time);
    let mut out = Vec::with_capacity(CHANNELS.len() * SUMMARY_STATS);
    for (c, name) in CHANNELS.iter().enumerate() {
        let discretized = match visit.timeseries.channels.get(*name) {
            Some(series) => discretize(series, visit.admission_time, n_bins)?,
            None => DiscretizedSeries { bins: vec![None; n_bins] },
        };
        let imputed = impute(&discretized, stats.mean[c]);
        let normalized = normalize(&imputed, stats.mean[c], stats.std[c]);
        out.extend(summarize_series(&normalized));
    }
    Ok(out)
}
