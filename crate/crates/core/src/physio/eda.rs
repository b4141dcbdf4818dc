//! Tonic skin conductance: low-pass, session z-score, per-block slope.

use serde::Serialize;

use crate::dsp::{self, FilterSpec};
use crate::error::{Error, Result};
use crate::streams::{resample_uniform, BlockSpan, Hand, SignalTrack};

pub const LOWPASS_HZ: f64 = 1.0;
pub const LOWPASS_ORDER: usize = 6;
pub const MIN_DURATION_S: f64 = 30.0;

/// Zero-phase 1 Hz low-pass followed by a session-level z-score.
pub fn eda_preprocess(raw: &SignalTrack) -> Result<SignalTrack> {
    let (t0, t1) = raw
        .span()
        .ok_or_else(|| Error::InsufficientData(format!("{}: no samples", raw.channel_id())))?;
    if t1 - t0 < MIN_DURATION_S {
        return Err(Error::InsufficientData(format!(
            "{}: {:.1} s of data, need {MIN_DURATION_S} s",
            raw.channel_id(),
            t1 - t0
        )));
    }
    let fs = raw.nominal_rate_hz();
    let uniform = resample_uniform(raw, fs)?;
    let filter = dsp::design_butterworth(&FilterSpec::lowpass(LOWPASS_ORDER, LOWPASS_HZ, fs))?;
    let y = dsp::filter_zero_phase(&uniform.values(), &filter);
    let z = dsp::zscore(&y).map_err(|e| match e {
        Error::Degenerate(_) => Error::Degenerate(format!("{}: constant skin conductance", raw.channel_id())),
        other => other,
    })?;
    SignalTrack::from_uniform(raw.channel_id(), raw.unit(), fs, uniform.samples()[0].t, &z)
}

/// Mean of the per-sample slope sequence, `fs * (z_n - z_1) / (n - 1)`.
pub fn eda_block_slope(z_block: &[f64], fs: f64) -> Result<f64> {
    if z_block.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "slope needs at least 2 samples, got {}",
            z_block.len()
        )));
    }
    Ok(dsp::mean(&dsp::diff_slope(z_block, fs)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdaBlockMetric {
    /// z-units per second.
    pub slope_metric: f64,
    pub side: Hand,
}

/// Slope of a preprocessed (z-scored) EDA track over one block.
pub fn eda_block_metric(z_track: &SignalTrack, span: &BlockSpan, side: Hand) -> Result<EdaBlockMetric> {
    let block = z_track.slice_time(span.start, span.end);
    Ok(EdaBlockMetric {
        slope_metric: eda_block_slope(&block.values(), z_track.nominal_rate_hz())?,
        side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::{Condition, Unit};
    use std::f64::consts::PI;

    fn track(v: &[f64]) -> SignalTrack {
        SignalTrack::from_uniform("eda_left", Unit::Microsiemens, 4.0, 0.0, v).unwrap()
    }

    #[test]
    fn slow_sine_amplitude_kept() {
        let v: Vec<f64> = (0..4 * 600).map(|k| 5.0 + (2.0 * PI * 0.05 * k as f64 / 4.0).sin()).collect();
        let fs = 4.0;
        let f = dsp::design_butterworth(&FilterSpec::lowpass(LOWPASS_ORDER, LOWPASS_HZ, fs)).unwrap();
        let y = dsp::filter_zero_phase(&v, &f);
        // central region, whole cycles
        let mid = &y[400..2000];
        let amp = (mid.iter().cloned().fold(f64::MIN, f64::max) - mid.iter().cloned().fold(f64::MAX, f64::min)) / 2.0;
        assert!((amp - 1.0).abs() < 0.01, "amplitude {amp}");
    }

    #[test]
    fn drift_passes_as_z_scored_drift() {
        let v: Vec<f64> = (0..400).map(|k| 2.0 + 0.01 * k as f64).collect();
        let z = eda_preprocess(&track(&v)).unwrap().values();
        let expect = dsp::zscore(&v).unwrap();
        for (a, b) in z.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn attenuation_at_two_hz() {
        let f = dsp::design_butterworth(&FilterSpec::lowpass(LOWPASS_ORDER, LOWPASS_HZ, 4.0)).unwrap();
        assert!(f.magnitude_db(1.9, 4.0) < -30.0);
        assert!(f.response_at(2.0, 4.0).norm() < 1e-9);
    }

    #[test]
    fn preconditions() {
        assert!(matches!(eda_preprocess(&track(&[1.0; 100])), Err(Error::InsufficientData(_))));
        assert!(matches!(eda_preprocess(&track(&[1.0; 200])), Err(Error::Degenerate(_))));
        assert!(eda_block_slope(&[1.0], 4.0).is_err());
    }

    #[test]
    fn linear_descent_slope() {
        let n = 420 * 4 + 1;
        let z: Vec<f64> = (0..n).map(|k| 1.0 - 2.0 * k as f64 / (n - 1) as f64).collect();
        let s = eda_block_slope(&z, 4.0).unwrap();
        assert!((s - (-2.0 / 420.0)).abs() < 1e-9);
        assert_eq!(eda_block_slope(&[0.3; 50], 4.0).unwrap(), 0.0);
        let up: Vec<f64> = (0..50).map(|k| (k as f64).sqrt()).collect();
        assert!(eda_block_slope(&up, 4.0).unwrap() > 0.0);
    }

    #[test]
    fn block_metric_uses_span() {
        let v: Vec<f64> = (0..400).map(|k| k as f64 / 4.0).collect();
        let tr = track(&v);
        let span = BlockSpan {
            condition: Condition::Baseline,
            start: 10.0,
            end: 20.0,
        };
        let m = eda_block_metric(&tr, &span, Hand::Left).unwrap();
        assert!((m.slope_metric - 1.0).abs() < 1e-12);
        assert_eq!(m.side, Hand::Left);
    }
}
