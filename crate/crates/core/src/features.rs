//! Fixed-length observation vectors from snapshot records.
//!
//! Two encodings on a grid of `T` ticks of `sample_interval` timesteps:
//!
//! * touch: `[bid, bid_vol, ask, ask_vol]` per tick, last observation
//!   carried forward; a missing side reads as the mid with volume 0.
//! * VWAP: `[bid_vwap, ask_vwap]` per tick, the best-level prices observed in
//!   the interval weighted by their displayed volume; empty intervals carry
//!   the previous value forward.
//!
//! Values are stored tick-major (`values[tick * channels + channel]`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lob::MarketSnapshot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("record has no observations")]
    EmptyRecord,
    #[error("record covers {covered} timesteps but {needed} are required")]
    TooShort { covered: u64, needed: u64 },
    #[error("feature mismatch: expected {expected}, got {got}")]
    Mismatch { expected: String, got: String },
    #[error("normalization statistics must be fitted on the training split, not {0:?}")]
    Leakage(DataSplit),
    #[error("no series to fit statistics on")]
    NoData,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Touch,
    Vwap,
}

impl FeatureKind {
    pub fn channels(self) -> usize {
        match self {
            FeatureKind::Touch => 4,
            FeatureKind::Vwap => 2,
        }
    }

    /// Whether a channel carries a price (as opposed to a volume).
    pub fn is_price_channel(self, channel: usize) -> bool {
        match self {
            FeatureKind::Touch => channel.is_multiple_of(2),
            FeatureKind::Vwap => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Touch => "touch",
            FeatureKind::Vwap => "vwap",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "touch" => Ok(FeatureKind::Touch),
            "vwap" => Ok(FeatureKind::Vwap),
            other => Err(format!(
                "unknown feature kind `{other}` (expected touch or vwap)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySeries {
    pub kind: FeatureKind,
    pub sample_interval: u64,
    pub len: usize,
    pub values: Vec<f64>,
}

impl SummarySeries {
    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn at(&self, tick: usize, channel: usize) -> f64 {
        self.values[tick * self.channels() + channel]
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.at(t, channel)).collect()
    }

    /// Mid of the first tick; the reference for price log-ratios.
    pub fn reference_price(&self) -> f64 {
        match self.kind {
            FeatureKind::Touch => 0.5 * (self.at(0, 0) + self.at(0, 2)),
            FeatureKind::Vwap => 0.5 * (self.at(0, 0) + self.at(0, 1)),
        }
    }
}

fn check_coverage(rows: &[MarketSnapshot], len: usize, interval: u64) -> Result<(), FeatureError> {
    let last = rows.last().ok_or(FeatureError::EmptyRecord)?.timestep;
    let needed = len as u64 * interval;
    if last < needed || len == 0 {
        return Err(FeatureError::TooShort {
            covered: last,
            needed,
        });
    }
    Ok(())
}

fn bid_or_mid(s: &MarketSnapshot) -> f64 {
    s.best_bid.map_or(s.mid_price(), |p| p as f64)
}

fn ask_or_mid(s: &MarketSnapshot) -> f64 {
    s.best_ask.map_or(s.mid_price(), |p| p as f64)
}

/// Touch features sampled at the end of each tick.
pub fn extract_touch(
    rows: &[MarketSnapshot],
    len: usize,
    sample_interval: u64,
) -> Result<SummarySeries, FeatureError> {
    check_coverage(rows, len, sample_interval)?;
    let mut values = Vec::with_capacity(4 * len);
    let mut idx = 0;
    for k in 1..=len as u64 {
        let boundary = k * sample_interval;
        while idx < rows.len() && rows[idx].timestep <= boundary {
            idx += 1;
        }
        // before the first observation, backfill with it
        let s = &rows[idx.saturating_sub(1)];
        values.extend_from_slice(&[
            bid_or_mid(s),
            s.best_bid.map_or(0.0, |_| s.best_bid_volume as f64),
            ask_or_mid(s),
            s.best_ask.map_or(0.0, |_| s.best_ask_volume as f64),
        ]);
    }
    Ok(SummarySeries {
        kind: FeatureKind::Touch,
        sample_interval,
        len,
        values,
    })
}

/// Volume-weighted best-level prices per tick.
pub fn extract_vwap(
    rows: &[MarketSnapshot],
    len: usize,
    sample_interval: u64,
) -> Result<SummarySeries, FeatureError> {
    check_coverage(rows, len, sample_interval)?;
    let mut values = Vec::with_capacity(2 * len);
    let mut carry_bid = bid_or_mid(&rows[0]);
    let mut carry_ask = ask_or_mid(&rows[0]);
    let mut idx = 0;
    for k in 1..=len as u64 {
        let boundary = k * sample_interval;
        let (mut bpv, mut bv, mut apv, mut av) = (0.0, 0.0, 0.0, 0.0);
        while idx < rows.len() && rows[idx].timestep <= boundary {
            let s = &rows[idx];
            if let Some(p) = s.best_bid {
                bpv += p as f64 * s.best_bid_volume as f64;
                bv += s.best_bid_volume as f64;
            }
            if let Some(p) = s.best_ask {
                apv += p as f64 * s.best_ask_volume as f64;
                av += s.best_ask_volume as f64;
            }
            idx += 1;
        }
        if bv > 0.0 {
            carry_bid = bpv / bv;
        }
        if av > 0.0 {
            carry_ask = apv / av;
        }
        values.push(carry_bid);
        values.push(carry_ask);
    }
    Ok(SummarySeries {
        kind: FeatureKind::Vwap,
        sample_interval,
        len,
        values,
    })
}

pub fn extract(
    kind: FeatureKind,
    rows: &[MarketSnapshot],
    len: usize,
    sample_interval: u64,
) -> Result<SummarySeries, FeatureError> {
    match kind {
        FeatureKind::Touch => extract_touch(rows, len, sample_interval),
        FeatureKind::Vwap => extract_vwap(rows, len, sample_interval),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSplit {
    Train,
    Validation,
    Test,
    Observed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-channel standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub kind: FeatureKind,
    pub len: usize,
    pub channels: Vec<ChannelStats>,
    pub fitted_on: DataSplit,
    pub n_series: usize,
}

/// Price channels become `ln(p / reference)`; volumes become `ln(1 + v)`.
fn transform(series: &SummarySeries) -> Vec<f64> {
    let c = series.channels();
    let reference = series.reference_price();
    series
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if series.kind.is_price_channel(i % c) {
                (v / reference).ln()
            } else {
                v.ln_1p()
            }
        })
        .collect()
}

fn check_shape(series: &SummarySeries, kind: FeatureKind, len: usize) -> Result<(), FeatureError> {
    if series.kind != kind || series.len != len || series.values.len() != len * kind.channels() {
        return Err(FeatureError::Mismatch {
            expected: format!("{} x {len}", kind.name()),
            got: format!("{} x {}", series.kind.name(), series.len),
        });
    }
    Ok(())
}

pub fn fit_stats(series: &[SummarySeries], split: DataSplit) -> Result<FeatureStats, FeatureError> {
    if split != DataSplit::Train {
        return Err(FeatureError::Leakage(split));
    }
    let first = series.first().ok_or(FeatureError::NoData)?;
    let (kind, len) = (first.kind, first.len);
    let c = kind.channels();
    let mut sum = vec![0.0; c];
    let mut sumsq = vec![0.0; c];
    for s in series {
        check_shape(s, kind, len)?;
        for (i, v) in transform(s).into_iter().enumerate() {
            sum[i % c] += v;
            sumsq[i % c] += v * v;
        }
    }
    let n = (series.len() * len) as f64;
    let channels = (0..c)
        .map(|ch| {
            let mean = sum[ch] / n;
            let var = (sumsq[ch] / n - mean * mean).max(0.0);
            let mut std = var.sqrt();
            if !(std > 1e-12) {
                log::warn!("feature channel {ch} has zero variance; using unit scale");
                std = 1.0;
            }
            ChannelStats { mean, std }
        })
        .collect();
    Ok(FeatureStats {
        kind,
        len,
        channels,
        fitted_on: split,
        n_series: series.len(),
    })
}

pub fn normalize(series: &SummarySeries, stats: &FeatureStats) -> Result<Vec<f64>, FeatureError> {
    check_shape(series, stats.kind, stats.len)?;
    let c = stats.kind.channels();
    let out: Vec<f64> = transform(series)
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let ch = &stats.channels[i % c];
            (v - ch.mean) / ch.std
        })
        .collect();
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite(i));
    }
    Ok(out)
}

/// Inverse of [`normalize`] given the series' reference price.
pub fn denormalize(
    values: &[f64],
    stats: &FeatureStats,
    reference: f64,
    sample_interval: u64,
) -> SummarySeries {
    let c = stats.kind.channels();
    let raw = values
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let ch = &stats.channels[i % c];
            let v = z * ch.std + ch.mean;
            if stats.kind.is_price_channel(i % c) {
                reference * v.exp()
            } else {
                v.exp_m1()
            }
        })
        .collect();
    SummarySeries {
        kind: stats.kind,
        sample_interval,
        len: stats.len,
        values: raw,
    }
}
