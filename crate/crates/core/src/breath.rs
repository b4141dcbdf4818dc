//! Respiration analysis: breath peaks, inter-respiration intervals (IRI),
//! per-block IRI statistics, baseline breathing rate, and the streaming
//! depth normalizer that drives the personalized-envelope design.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, FilterSpec};
use crate::error::{Error, Result};
use crate::streams::{resample_uniform, BlockSpan, Condition, SignalTrack};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BreathConfig {
    pub lowpass_hz: f64,
    pub lowpass_order: usize,
    /// Required descent on each side of a peak, in nu.
    pub min_prominence: f64,
}

impl Default for BreathConfig {
    fn default() -> Self {
        BreathConfig {
            lowpass_hz: 1.0,
            lowpass_order: 4,
            min_prominence: 2.0,
        }
    }
}

/// Resample onto the nominal grid and low-pass (zero phase).
pub fn preprocess(track: &SignalTrack, cfg: &BreathConfig) -> Result<SignalTrack> {
    let fs = track.nominal_rate_hz();
    let uniform = resample_uniform(track, fs)?;
    let filter = dsp::design_butterworth(&FilterSpec::lowpass(cfg.lowpass_order, cfg.lowpass_hz, fs))?;
    let y = dsp::filter_zero_phase(&uniform.values(), &filter);
    let t0 = uniform.samples()[0].t;
    SignalTrack::from_uniform(track.channel_id(), track.unit(), fs, t0, &y)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BreathPeaks {
    pub peak_times: Vec<f64>,
    pub peak_values: Vec<f64>,
}

impl BreathPeaks {
    pub fn len(&self) -> usize {
        self.peak_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peak_times.is_empty()
    }
}

/// Indices of local maxima that descend by at least `min_prominence` on both
/// sides before a higher sample (or the edge of the signal) is reached.
///
/// A plateau is reported at its first sample. An earlier sample of equal
/// height blocks the left walk while a later one does not block the right
/// walk, so of two equal peaks without enough descent between them the
/// earlier one survives.
pub fn prominent_peaks(x: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = x.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] <= x[i - 1] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 >= n || x[j + 1] > x[i] {
            i = j + 1;
            continue;
        }
        let peak = x[i];
        let target = peak - min_prominence;

        let left_ok = {
            let mut ok = false;
            let mut k = i;
            while k > 0 {
                k -= 1;
                if x[k] >= peak {
                    break;
                }
                if x[k] <= target {
                    ok = true;
                    break;
                }
            }
            ok
        };
        let right_ok = left_ok && {
            let mut ok = false;
            for &v in &x[j + 1..] {
                if v > peak {
                    break;
                }
                if v <= target {
                    ok = true;
                    break;
                }
            }
            ok
        };
        if left_ok && right_ok {
            out.push(i);
        }
        i = j + 1;
    }
    out
}

/// Peaks of an already low-passed breathing waveform.
pub fn detect_breath_peaks(filtered: &SignalTrack, min_prominence: f64) -> BreathPeaks {
    let values = filtered.values();
    let samples = filtered.samples();
    let idx = prominent_peaks(&values, min_prominence);
    BreathPeaks {
        peak_times: idx.iter().map(|&i| samples[i].t).collect(),
        peak_values: idx.iter().map(|&i| samples[i].v).collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IriSeries {
    pub intervals_ms: Vec<f64>,
    /// Time of the closing peak of each interval, seconds.
    pub interval_end_times: Vec<f64>,
}

impl IriSeries {
    pub fn len(&self) -> usize {
        self.intervals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_ms.is_empty()
    }

    /// Intervals whose end time lies inside `span`.
    pub fn within(&self, span: &BlockSpan) -> IriSeries {
        let (intervals_ms, interval_end_times) = self
            .intervals_ms
            .iter()
            .zip(&self.interval_end_times)
            .filter(|(_, &t)| span.contains(t))
            .map(|(&i, &t)| (i, t))
            .unzip();
        IriSeries {
            intervals_ms,
            interval_end_times,
        }
    }
}

pub fn compute_iri(peaks: &BreathPeaks) -> Result<IriSeries> {
    if peaks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "IRI needs at least 2 breath peaks, got {}",
            peaks.len()
        )));
    }
    let intervals_ms: Vec<f64> = peaks
        .peak_times
        .windows(2)
        .map(|w| (w[1] - w[0]) * 1000.0)
        .collect();
    let fast = intervals_ms.iter().filter(|&&ms| ms <= 1000.0).count();
    if fast > 0 {
        warn!("{fast} inter-respiration intervals are 1 s or shorter; was the input low-passed?");
    }
    Ok(IriSeries {
        intervals_ms,
        interval_end_times: peaks.peak_times[1..].to_vec(),
    })
}

/// z-score of IRIs against the whole session (all blocks concatenated).
pub fn session_z_iri(intervals_ms: &[f64]) -> Result<Vec<f64>> {
    dsp::zscore(intervals_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockBreathMetrics {
    pub condition: Condition,
    pub n_intervals: usize,
    /// `None` when the block holds no intervals.
    pub mean_z_iri: Option<f64>,
    pub var_z_iri: Option<f64>,
}

/// Per-block mean and population variance of z-scored IRIs, each interval
/// assigned to the block containing its end time.
pub fn block_breath_metrics(z_iri: &[f64], end_times: &[f64], blocks: &[BlockSpan]) -> Vec<BlockBreathMetrics> {
    blocks
        .iter()
        .map(|b| {
            let zs: Vec<f64> = z_iri
                .iter()
                .zip(end_times)
                .filter(|(_, &t)| b.contains(t))
                .map(|(&z, _)| z)
                .collect();
            let (mean_z_iri, var_z_iri) = if zs.is_empty() {
                (None, None)
            } else {
                (Some(dsp::mean(&zs)), Some(dsp::variance(&zs)))
            };
            BlockBreathMetrics {
                condition: b.condition,
                n_intervals: zs.len(),
                mean_z_iri,
                var_z_iri,
            }
        })
        .collect()
}

/// Breaths per minute as `60000 / mean(IRI ms)`.
pub fn baseline_rate_bpm(baseline: &IriSeries) -> Result<f64> {
    if baseline.is_empty() {
        return Err(Error::InsufficientData(
            "baseline block needs at least 2 breath peaks".into(),
        ));
    }
    Ok(60_000.0 / dsp::mean(&baseline.intervals_ms))
}

/// Low-pass, detect peaks, and compute baseline rate from a raw baseline
/// breathing segment.
pub fn baseline_rate_from_track(raw: &SignalTrack, cfg: &BreathConfig) -> Result<f64> {
    let filtered = preprocess(raw, cfg)?;
    let peaks = detect_breath_peaks(&filtered, cfg.min_prominence);
    baseline_rate_bpm(&compute_iri(&peaks)?)
}

/// Streaming min-max normalizer over a trailing time window.
#[derive(Debug, Clone)]
pub struct DepthNormalizer {
    window_s: f64,
    epsilon: f64,
    maxq: VecDeque<(f64, f64)>,
    minq: VecDeque<(f64, f64)>,
}

impl Default for DepthNormalizer {
    fn default() -> Self {
        DepthNormalizer::new(Self::DEFAULT_WINDOW_S, Self::DEFAULT_EPSILON)
    }
}

impl DepthNormalizer {
    pub const DEFAULT_WINDOW_S: f64 = 30.0;
    pub const DEFAULT_EPSILON: f64 = 0.1;
    /// Emitted while the window range is below epsilon.
    pub const NEUTRAL: f64 = 0.5;

    pub fn new(window_s: f64, epsilon: f64) -> Self {
        DepthNormalizer {
            window_s,
            epsilon,
            maxq: VecDeque::new(),
            minq: VecDeque::new(),
        }
    }

    /// Push one sample and return its depth in `[0, 1]`.
    pub fn push(&mut self, t: f64, v: f64) -> f64 {
        while self.maxq.back().is_some_and(|&(_, b)| b <= v) {
            self.maxq.pop_back();
        }
        self.maxq.push_back((t, v));
        while self.minq.back().is_some_and(|&(_, b)| b >= v) {
            self.minq.pop_back();
        }
        self.minq.push_back((t, v));
        let horizon = t - self.window_s;
        while self.maxq.front().is_some_and(|&(ts, _)| ts <= horizon) {
            self.maxq.pop_front();
        }
        while self.minq.front().is_some_and(|&(ts, _)| ts <= horizon) {
            self.minq.pop_front();
        }
        let hi = self.maxq.front().map_or(v, |e| e.1);
        let lo = self.minq.front().map_or(v, |e| e.1);
        let range = hi - lo;
        if range < self.epsilon {
            Self::NEUTRAL
        } else {
            ((v - lo) / range).clamp(0.0, 1.0)
        }
    }

    pub fn reset(&mut self) {
        self.maxq.clear();
        self.minq.clear();
    }
}
