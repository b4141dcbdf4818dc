//! Heart rate variability from inter-beat intervals.

use serde::Serialize;

use crate::dsp;
use crate::error::{Error, Result};

pub const MIN_VALID_IBI_MS: f64 = 300.0;
pub const MAX_VALID_IBI_MS: f64 = 2000.0;
pub const MIN_SPAN_MS: f64 = 120_000.0;
pub const TACHOGRAM_HZ: f64 = 4.0;
pub const WELCH_SEGMENT: usize = 256;
pub const LF_BAND: (f64, f64) = (0.04, 0.15);
pub const HF_BAND: (f64, f64) = (0.15, 0.4);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HrvFeatures {
    pub sdnn_ms: f64,
    pub rmssd_ms: f64,
    pub pnn50_fraction: f64,
    /// ms^2
    pub lf_power: f64,
    pub hf_power: f64,
    /// Infinite when HF power is zero and LF is not; zero when both are.
    pub lf_hf_ratio: f64,
    pub sd1_ms: f64,
    pub sd2_ms: f64,
}

impl HrvFeatures {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("sdnn_ms", self.sdnn_ms),
            ("rmssd_ms", self.rmssd_ms),
            ("pnn50_fraction", self.pnn50_fraction),
            ("lf_power", self.lf_power),
            ("hf_power", self.hf_power),
            ("lf_hf_ratio", self.lf_hf_ratio),
            ("sd1_ms", self.sd1_ms),
            ("sd2_ms", self.sd2_ms),
        ]
    }
}

fn successive_diffs(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn rmssd(ibi_ms: &[f64]) -> f64 {
    let d = successive_diffs(ibi_ms);
    if d.is_empty() {
        return 0.0;
    }
    (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt()
}

/// LF and HF power of the evenly resampled tachogram.
fn spectral_powers(ibi_ms: &[f64]) -> Result<(f64, f64)> {
    let mut t = 0.0;
    let times: Vec<f64> = ibi_ms
        .iter()
        .map(|ms| {
            t += ms / 1000.0;
            t
        })
        .collect();
    let n = ((times[times.len() - 1] - times[0]) * TACHOGRAM_HZ).floor() as usize + 1;
    let mut j = 0;
    let grid: Vec<f64> = (0..n)
        .map(|k| {
            let tk = times[0] + k as f64 / TACHOGRAM_HZ;
            while j + 2 < times.len() && times[j + 1] <= tk {
                j += 1;
            }
            let (ta, tb) = (times[j], times[j + 1]);
            let w = ((tk - ta) / (tb - ta)).clamp(0.0, 1.0);
            ibi_ms[j] + w * (ibi_ms[j + 1] - ibi_ms[j])
        })
        .collect();
    let seg = WELCH_SEGMENT.min(grid.len());
    let psd = dsp::welch_psd(&grid, TACHOGRAM_HZ, seg, seg / 2)?;
    Ok((psd.band_power(LF_BAND.0, LF_BAND.1), psd.band_power(HF_BAND.0, HF_BAND.1)))
}

/// Time-domain, spectral and Poincaré features. Intervals outside
/// 300-2000 ms are discarded first; fewer than 120 s of valid intervals
/// excludes the block.
pub fn hrv_features(ibi_ms: &[f64]) -> Result<HrvFeatures> {
    let valid: Vec<f64> = ibi_ms
        .iter()
        .copied()
        .filter(|ms| (MIN_VALID_IBI_MS..=MAX_VALID_IBI_MS).contains(ms))
        .collect();
    let span: f64 = valid.iter().sum();
    if span < MIN_SPAN_MS {
        return Err(Error::BlockExcluded(format!(
            "{:.1} s of valid IBIs, need {:.0} s",
            span / 1000.0,
            MIN_SPAN_MS / 1000.0
        )));
    }
    let sdnn_ms = dsp::std_dev(&valid);
    let rmssd_ms = rmssd(&valid);
    let d = successive_diffs(&valid);
    let pnn50_fraction = d.iter().filter(|v| v.abs() > 50.0).count() as f64 / d.len() as f64;
    let (lf_power, hf_power) = spectral_powers(&valid)?;
    let lf_hf_ratio = if hf_power > 0.0 {
        lf_power / hf_power
    } else if lf_power > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let sd1_ms = rmssd_ms / std::f64::consts::SQRT_2;
    let sd2_ms = (2.0 * sdnn_ms * sdnn_ms - sd1_ms * sd1_ms).max(0.0).sqrt();
    Ok(HrvFeatures {
        sdnn_ms,
        rmssd_ms,
        pnn50_fraction,
        lf_power,
        hf_power,
        lf_hf_ratio,
        sd1_ms,
        sd2_ms,
    })
}
