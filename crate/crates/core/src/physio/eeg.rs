//! EEG cleaning, epoching and CNV window amplitudes.

use std::collections::BTreeMap;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dsp::{self, FilterSpec, KurtosisConvention};
use crate::error::{Error, Result};
use crate::streams::{resample_uniform, EventMarker, MarkerKind, SignalTrack};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EegConfig {
    pub highpass_hz: f64,
    pub highpass_order: usize,
    pub kurtosis_threshold: f64,
    pub kurtosis_convention: KurtosisConvention,
    pub epoch_pre_s: f64,
    pub epoch_post_s: f64,
    pub baseline_s: f64,
    pub reject_uv: f64,
}

impl Default for EegConfig {
    fn default() -> Self {
        EegConfig {
            highpass_hz: 0.05,
            highpass_order: 2,
            kurtosis_threshold: 5.0,
            kurtosis_convention: KurtosisConvention::Excess,
            epoch_pre_s: 1.0,
            epoch_post_s: 4.0,
            baseline_s: 0.5,
            reject_uv: 50.0,
        }
    }
}

/// Channels on a shared uniform grid after high-pass, rejection and
/// average referencing.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanedEeg {
    pub fs: f64,
    pub t0: f64,
    pub channels: BTreeMap<String, Vec<f64>>,
    /// Rejected channels with their kurtosis.
    pub dropped: Vec<(String, f64)>,
}

impl CleanedEeg {
    pub fn channel(&self, id: &str) -> Option<&[f64]> {
        self.channels.get(id).map(Vec::as_slice)
    }
}

/// `x` minus its zero-phase low-passed version.
pub fn highpass_by_subtraction(x: &[f64], fs: f64, cfg: &EegConfig) -> Result<Vec<f64>> {
    let lp = dsp::design_butterworth(&FilterSpec::lowpass(cfg.highpass_order, cfg.highpass_hz, fs))?;
    let slow = dsp::filter_zero_phase(x, &lp);
    Ok(x.iter().zip(&slow).map(|(a, b)| a - b).collect())
}

/// Subtract the across-channel mean at every sample.
pub fn average_reference(channels: &mut BTreeMap<String, Vec<f64>>) {
    let Some(n) = channels.values().map(Vec::len).min() else {
        return;
    };
    let k = channels.len() as f64;
    let means: Vec<f64> = (0..n)
        .map(|i| channels.values().map(|c| c[i]).sum::<f64>() / k)
        .collect();
    for c in channels.values_mut() {
        for (v, m) in c.iter_mut().zip(&means) {
            *v -= m;
        }
    }
}

pub fn eeg_preprocess(tracks: &[&SignalTrack], cfg: &EegConfig) -> Result<CleanedEeg> {
    if tracks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "average reference needs at least 2 EEG channels, got {}",
            tracks.len()
        )));
    }
    let fs = tracks[0].nominal_rate_hz();
    let mut grids = Vec::with_capacity(tracks.len());
    for tr in tracks {
        if tr.nominal_rate_hz() != fs {
            return Err(Error::Validation(format!(
                "{} is sampled at {} Hz, expected {fs} Hz",
                tr.channel_id(),
                tr.nominal_rate_hz()
            )));
        }
        grids.push(resample_uniform(tr, fs)?);
    }
    // common overlap of all channels
    let t0 = grids.iter().map(|g| g.samples()[0].t).fold(f64::MIN, f64::max);
    let t1 = grids.iter().map(|g| g.samples()[g.len() - 1].t).fold(f64::MAX, f64::min);
    if t1 <= t0 {
        return Err(Error::Validation("EEG channels do not overlap in time".into()));
    }
    let n = ((t1 - t0) * fs + 1e-6).floor() as usize + 1;

    let mut channels = BTreeMap::new();
    let mut dropped = Vec::new();
    for g in &grids {
        let skip = ((t0 - g.samples()[0].t) * fs).round() as usize;
        let v: Vec<f64> = g.samples()[skip..].iter().take(n).map(|s| s.v).collect();
        let hp = highpass_by_subtraction(&v, fs, cfg)?;
        let k = dsp::kurtosis(&hp, cfg.kurtosis_convention).unwrap_or(f64::INFINITY);
        if k > cfg.kurtosis_threshold {
            info!("dropping {} (kurtosis {k:.2})", g.channel_id());
            dropped.push((g.channel_id().to_string(), k));
        } else {
            channels.insert(g.channel_id().to_string(), hp);
        }
    }
    if channels.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} EEG channels survive kurtosis rejection, need 2",
            channels.len()
        )));
    }
    average_reference(&mut channels);
    Ok(CleanedEeg {
        fs,
        t0,
        channels,
        dropped,
    })
}

/// Baseline-corrected epochs around warning stimuli.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub fs: f64,
    /// Samples before the stimulus in each epoch.
    pub pre_samples: usize,
    pub accepted: Vec<Vec<f64>>,
    pub n_rejected: usize,
    /// Epochs that did not fit inside the recording.
    pub n_out_of_range: usize,
}

/// Subtract the mean of `epoch[lo..hi]` from the whole epoch.
pub fn baseline_correct(epoch: &mut [f64], lo: usize, hi: usize) {
    let m = dsp::mean(&epoch[lo..hi]);
    for v in epoch.iter_mut() {
        *v -= m;
    }
}

pub fn epoch_and_reject(signal: &[f64], fs: f64, t0: f64, markers: &[EventMarker], cfg: &EegConfig) -> EpochSet {
    let pre = (cfg.epoch_pre_s * fs).round() as usize;
    let len = ((cfg.epoch_pre_s + cfg.epoch_post_s) * fs).round() as usize;
    let base_lo = pre - (cfg.baseline_s * fs).round() as usize;
    let mut set = EpochSet {
        fs,
        pre_samples: pre,
        accepted: Vec::new(),
        n_rejected: 0,
        n_out_of_range: 0,
    };
    for m in markers.iter().filter(|m| m.kind == MarkerKind::WarningStimulus) {
        let onset = ((m.t - t0) * fs).round() as isize;
        let start = onset - pre as isize;
        if start < 0 || start as usize + len > signal.len() {
            set.n_out_of_range += 1;
            continue;
        }
        let mut epoch = signal[start as usize..start as usize + len].to_vec();
        baseline_correct(&mut epoch, base_lo, pre);
        if epoch.iter().any(|v| v.abs() > cfg.reject_uv) {
            set.n_rejected += 1;
        } else {
            set.accepted.push(epoch);
        }
    }
    if set.n_out_of_range > 0 {
        warn!("{} epochs fall outside the recording", set.n_out_of_range);
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CnvAmplitudes {
    pub early_uv: f64,
    pub mid_uv: f64,
    pub late_uv: f64,
}

/// Post-stimulus windows in seconds, half-open.
pub const CNV_WINDOWS: [(f64, f64); 3] = [(0.4, 1.4), (1.5, 2.6), (2.6, 3.7)];

pub fn cnv_mean_amplitudes(epochs: &EpochSet) -> Result<CnvAmplitudes> {
    if epochs.accepted.is_empty() {
        return Err(Error::InsufficientData("no accepted epochs".into()));
    }
    let len = epochs.accepted[0].len();
    let k = epochs.accepted.len() as f64;
    let avg: Vec<f64> = (0..len)
        .map(|i| epochs.accepted.iter().map(|e| e[i]).sum::<f64>() / k)
        .collect();
    let window_mean = |(lo, hi): (f64, f64)| {
        let a = epochs.pre_samples + (lo * epochs.fs).round() as usize;
        let b = (epochs.pre_samples + (hi * epochs.fs).round() as usize).min(len);
        dsp::mean(&avg[a..b])
    };
    Ok(CnvAmplitudes {
        early_uv: window_mean(CNV_WINDOWS[0]),
        mid_uv: window_mean(CNV_WINDOWS[1]),
        late_uv: window_mean(CNV_WINDOWS[2]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::Unit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const FS: f64 = 250.0;

    fn track(id: &str, v: &[f64]) -> SignalTrack {
        SignalTrack::from_uniform(id, Unit::Microvolt, FS, 0.0, v).unwrap()
    }

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
        (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn warning(t: f64) -> EventMarker {
        EventMarker {
            t,
            kind: MarkerKind::WarningStimulus,
        }
    }

    #[test]
    fn dc_is_removed() {
        let cfg = EegConfig::default();
        let hp = highpass_by_subtraction(&vec![37.0; 500 * 120], 500.0, &cfg).unwrap();
        assert!(hp.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn spiky_channel_is_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = (FS * 120.0) as usize;
        let mut chans: Vec<SignalTrack> = (1..=6)
            .map(|i| track(&format!("eeg_ch{i:02}"), &gaussian(&mut rng, n, 10.0)))
            .collect();
        let mut spiky = gaussian(&mut rng, n, 10.0);
        for k in (0..n).step_by(997) {
            spiky[k] += 400.0;
        }
        chans.push(track("eeg_ch07", &spiky));
        let refs: Vec<&SignalTrack> = chans.iter().collect();
        let clean = eeg_preprocess(&refs, &EegConfig::default()).unwrap();
        assert_eq!(clean.dropped.len(), 1);
        assert_eq!(clean.dropped[0].0, "eeg_ch07");
        assert_eq!(clean.channels.len(), 6);
        for i in 0..n {
            let m: f64 = clean.channels.values().map(|c| c[i]).sum::<f64>() / 6.0;
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_channels() {
        let one = track("eeg_ch01", &[0.0; 1000]);
        assert!(eeg_preprocess(&[&one], &EegConfig::default()).is_err());
    }

    #[test]
    fn epoch_length_and_baseline() {
        let fs = 500.0;
        let sig: Vec<f64> = (0..(fs * 30.0) as usize).map(|k| 3.0 + (k as f64 * 0.01).sin()).collect();
        let set = epoch_and_reject(&sig, fs, 0.0, &[warning(5.0), warning(12.0)], &EegConfig::default());
        assert_eq!(set.accepted.len(), 2);
        for e in &set.accepted {
            assert_eq!(e.len(), 2500);
            assert!(dsp::mean(&e[250..500]).abs() < 1e-9);
        }
        // imperative markers are not epoched
        let other = EventMarker {
            t: 8.0,
            kind: MarkerKind::ImperativeStimulus,
        };
        assert_eq!(epoch_and_reject(&sig, fs, 0.0, &[other], &EegConfig::default()).accepted.len(), 0);
    }

    #[test]
    fn artifact_epoch_is_rejected() {
        let fs = 500.0;
        let mut sig = vec![0.0; (fs * 30.0) as usize];
        sig[(fs * 7.0) as usize] = 60.0;
        let set = epoch_and_reject(&sig, fs, 0.0, &[warning(5.0), warning(15.0)], &EegConfig::default());
        assert_eq!(set.accepted.len(), 1);
        assert_eq!(set.n_rejected, 1);
        let edge = epoch_and_reject(&sig, fs, 0.0, &[warning(0.5), warning(28.0)], &EegConfig::default());
        assert_eq!(edge.n_out_of_range, 2);
    }

    fn ramp_epochs(fs: f64) -> EpochSet {
        let pre = fs as usize;
        let e: Vec<f64> = (0..5 * fs as usize)
            .map(|i| {
                let t = (i as f64 - pre as f64) / fs;
                if t < 0.0 {
                    0.0
                } else {
                    -10.0 * t / 3.7
                }
            })
            .collect();
        EpochSet {
            fs,
            pre_samples: pre,
            accepted: vec![e.clone(), e],
            n_rejected: 0,
            n_out_of_range: 0,
        }
    }

    #[test]
    fn ramp_window_means() {
        let cnv = cnv_mean_amplitudes(&ramp_epochs(500.0)).unwrap();
        // window integrals of the ramp
        let late = -10.0 * (3150.0 / 3700.0);
        let early = -10.0 * (900.0 / 3700.0);
        let mid = -10.0 * (2050.0 / 3700.0);
        assert!((cnv.late_uv - late).abs() < 0.02 * late.abs());
        assert!((cnv.early_uv - early).abs() < 0.02 * early.abs());
        assert!((cnv.mid_uv - mid).abs() < 0.02 * mid.abs());
        assert!((cnv.late_uv + 8.51).abs() < 0.01);
        assert!((cnv.early_uv + 2.43).abs() < 0.01);

        let zero = EpochSet {
            accepted: vec![vec![0.0; 2500]; 3],
            ..ramp_epochs(500.0)
        };
        let z = cnv_mean_amplitudes(&zero).unwrap();
        assert_eq!((z.early_uv, z.mid_uv, z.late_uv), (0.0, 0.0, 0.0));
        let none = EpochSet {
            accepted: vec![],
            ..ramp_epochs(500.0)
        };
        assert!(cnv_mean_amplitudes(&none).is_err());
    }

    proptest! {
        #[test]
        fn average_reference_is_idempotent(seed in any::<u64>(), k in 2usize..8, n in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut chans: BTreeMap<String, Vec<f64>> = (0..k)
                .map(|i| (format!("c{i}"), gaussian(&mut rng, n, 20.0)))
                .collect();
            average_reference(&mut chans);
            let once = chans.clone();
            average_reference(&mut chans);
            for (a, b) in once.values().zip(chans.values()) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn baseline_correction_is_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 20..200)) {
            let mut e = v.clone();
            baseline_correct(&mut e, 5, 15);
            let once = e.clone();
            baseline_correct(&mut e, 5, 15);
            for (x, y) in once.iter().zip(&e) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
