//! Calibration and accuracy metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{answers_equal, CanonicalAnswer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no records")]
    EmptyInput,
    #[error("AUC needs both correct and incorrect records")]
    DegenerateLabels,
    #[error("number of bins must be positive")]
    NoBins,
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub confidence: f64,
    pub correct: bool,
}

impl CalibrationRecord {
    pub fn new(confidence: f64, correct: bool) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::ConfidenceOutOfRange(confidence));
        }
        Ok(CalibrationRecord { confidence, correct })
    }
}

/// 1-based equal-width bin for `c`: bin m holds `(m-1)/n < c <= m/n`, and
/// bin 1 also holds 0.
pub fn bin_index(c: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut m = ((c * n).ceil() as usize).clamp(1, n_bins);
    // c * n can round across a boundary; settle against the exact edges.
    while m > 1 && c <= (m - 1) as f64 / n {
        m -= 1;
    }
    while m < n_bins && c > m as f64 / n {
        m += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityBins {
    pub bins: Vec<ReliabilityBin>,
    pub total: usize,
}

impl ReliabilityBins {
    pub fn ece(&self) -> f64 {
        let n = self.total as f64;
        self.bins
            .iter()
            .filter_map(|b| match (b.mean_confidence, b.accuracy) {
                (Some(c), Some(a)) => Some(b.count as f64 / n * (a - c).abs()),
                _ => None,
            })
            .sum()
    }
}

pub fn reliability_bins(
    records: &[CalibrationRecord],
    n_bins: usize,
) -> Result<ReliabilityBins, MetricsError> {
    if n_bins == 0 {
        return Err(MetricsError::NoBins);
    }
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); n_bins];
    for r in records {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(MetricsError::ConfidenceOutOfRange(r.confidence));
        }
        let slot = &mut sums[bin_index(r.confidence, n_bins) - 1];
        slot.0 += 1;
        slot.1 += r.confidence;
        slot.2 += usize::from(r.correct);
    }
    let bins = sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, conf, correct))| {
            let (mean_confidence, accuracy) = if count == 0 {
                (None, None)
            } else {
                (
                    Some(conf / count as f64),
                    Some(correct as f64 / count as f64),
                )
            };
            ReliabilityBin {
                lower: i as f64 / n_bins as f64,
                upper: (i + 1) as f64 / n_bins as f64,
                count,
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(ReliabilityBins {
        bins,
        total: records.len(),
    })
}

/// Expected calibration error over `n_bins` equal-width bins.
pub fn ece(records: &[CalibrationRecord], n_bins: usize) -> Result<f64, MetricsError> {
    Ok(reliability_bins(records, n_bins)?.ece())
}

/// Rank-based (Mann-Whitney) AUC; tied confidences share their average rank.
pub fn auroc(records: &[CalibrationRecord]) -> Result<f64, MetricsError> {
    let n_pos = records.iter().filter(|r| r.correct).count();
    let n_neg = records.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    let mut order: Vec<&CalibrationRecord> = records.iter().collect();
    order.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && order[j + 1].confidence == order[i].confidence {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|r| r.correct).count();
        pos_rank_sum += avg * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of `(selected, gold)` pairs that agree; absent selections are wrong.
pub fn accuracy(pairs: &[(Option<CanonicalAnswer>, CanonicalAnswer)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = pairs
        .iter()
        .filter(|(got, gold)| got.as_ref().is_some_and(|g| answers_equal(g, gold)))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}
