//! QRS detection (Pan-Tompkins) and a synthetic ECG generator.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, FilterSpec};
use crate::error::{Error, Result};
use crate::streams::{resample_uniform, BlockSpan, SignalTrack};

pub const REFRACTORY_S: f64 = 0.2;
pub const MIN_DURATION_S: f64 = 10.0;
const MWI_S: f64 = 0.15;
const REFINE_S: f64 = 0.04;
const SEARCH_BACK_FACTOR: f64 = 1.66;
const T_WAVE_S: f64 = 0.36;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BeatSeries {
    pub r_times: Vec<f64>,
    pub ibi_ms: Vec<f64>,
    /// Session z-scores of `ibi_ms`; empty when undefined (fewer than two
    /// intervals or constant intervals).
    pub z_ibi: Vec<f64>,
}

impl BeatSeries {
    pub fn from_r_times(r_times: Vec<f64>) -> Self {
        let ibi_ms: Vec<f64> = r_times.windows(2).map(|w| (w[1] - w[0]) * 1000.0).collect();
        let z_ibi = if ibi_ms.len() >= 2 {
            dsp::zscore(&ibi_ms).unwrap_or_else(|e| {
                warn!("z_IBI undefined: {e}");
                Vec::new()
            })
        } else {
            Vec::new()
        };
        BeatSeries { r_times, ibi_ms, z_ibi }
    }

    /// Closing beat time of each interval.
    pub fn ibi_end_times(&self) -> &[f64] {
        self.r_times.get(1..).unwrap_or(&[])
    }

    /// Intervals (ms) whose closing beat lies in `span`, with their end times.
    pub fn ibis_within(&self, span: &BlockSpan) -> (Vec<f64>, Vec<f64>) {
        self.ibi_ms
            .iter()
            .zip(self.ibi_end_times())
            .filter(|(_, &t)| span.contains(t))
            .map(|(&i, &t)| (i, t))
            .unzip()
    }

    /// Mean session-z-scored IBI over intervals ending inside `span`.
    pub fn mean_z_ibi(&self, span: &BlockSpan) -> Option<f64> {
        if self.z_ibi.is_empty() {
            return None;
        }
        let zs: Vec<f64> = self
            .z_ibi
            .iter()
            .zip(self.ibi_end_times())
            .filter(|(_, &t)| span.contains(t))
            .map(|(&z, _)| z)
            .collect();
        (!zs.is_empty()).then(|| dsp::mean(&zs))
    }
}

/// Intermediate Pan-Tompkins signals, exposed for inspection.
#[derive(Debug, Clone)]
pub struct QrsStages {
    pub bandpassed: Vec<f64>,
    pub derivative: Vec<f64>,
    pub integrated: Vec<f64>,
}

fn stages(x: &[f64], fs: f64) -> Result<QrsStages> {
    let bp = dsp::design_butterworth(&FilterSpec::bandpass(2, 5.0, 15.0, fs))?;
    let bandpassed = dsp::filter_zero_phase(x, &bp);
    let n = x.len();
    let at = |i: isize| bandpassed[i.clamp(0, n as isize - 1) as usize];
    let derivative: Vec<f64> = (0..n as isize)
        .map(|i| (2.0 * at(i + 1) + at(i + 2) - at(i - 2) - 2.0 * at(i - 1)) * fs / 8.0)
        .collect();
    let sq: Vec<f64> = derivative.iter().map(|d| d * d).collect();
    // centered moving average via prefix sums
    let half = ((MWI_S * fs).round() as usize / 2).max(1);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + sq[i];
    }
    let integrated = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (2 * half + 1) as f64
        })
        .collect();
    Ok(QrsStages {
        bandpassed,
        derivative,
        integrated,
    })
}

/// Local maxima of `y`, thinned so no two are closer than `min_gap` samples
/// (taller first).
fn candidate_peaks(y: &[f64], min_gap: usize) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < y.len() {
        if y[i] > y[i - 1] {
            let mut j = i;
            while j + 1 < y.len() && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < y.len() && y[j + 1] < y[i] {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    let mut by_height = peaks.clone();
    by_height.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in by_height {
        let lo = kept.partition_point(|&k| k + min_gap <= p);
        if kept.get(lo).is_none_or(|&k| k >= p + min_gap) {
            kept.insert(lo, p);
        }
    }
    kept
}

struct Detector {
    spki: f64,
    npki: f64,
    beats: Vec<usize>,
    slopes: Vec<f64>,
}

impl Detector {
    fn thr1(&self) -> f64 {
        self.npki + 0.25 * (self.spki - self.npki)
    }

    fn mean_rr(&self) -> Option<f64> {
        if self.beats.len() < 2 {
            return None;
        }
        let k = self.beats.len().min(9);
        let recent = &self.beats[self.beats.len() - k..];
        Some((recent[k - 1] - recent[0]) as f64 / (k - 1) as f64)
    }
}

/// R-peak times from a single-lead ECG.
pub fn pan_tompkins(ecg: &SignalTrack) -> Result<BeatSeries> {
    let (t0, t1) = ecg
        .span()
        .ok_or_else(|| Error::InsufficientData("ECG stream is empty".into()))?;
    if t1 - t0 < MIN_DURATION_S {
        return Err(Error::InsufficientData(format!(
            "ECG spans {:.1} s, need {MIN_DURATION_S} s",
            t1 - t0
        )));
    }
    let fs = ecg.nominal_rate_hz();
    let uniform = resample_uniform(ecg, fs)?;
    let raw = uniform.values();
    let start = uniform.samples()[0].t;
    let r = detect_r_peaks(&raw, fs)?;
    if r.is_empty() {
        warn!("{}: no QRS complexes found", ecg.channel_id());
    }
    Ok(BeatSeries::from_r_times(
        r.into_iter().map(|i| start + i as f64 / fs).collect(),
    ))
}

/// Sample indices of R peaks in a uniformly sampled ECG.
pub fn detect_r_peaks(raw: &[f64], fs: f64) -> Result<Vec<usize>> {
    let st = stages(raw, fs)?;
    let mwi = &st.integrated;
    let refractory = (REFRACTORY_S * fs).round() as usize;
    // rounding residue of a flat input is not a signal
    if mwi.iter().cloned().fold(0.0, f64::max) < 1e-12 {
        return Ok(Vec::new());
    }
    let candidates = candidate_peaks(mwi, refractory);
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    // learning phase over the first two seconds
    let learn = mwi.len().min((2.0 * fs) as usize);
    let head = &mwi[..learn];
    let mut det = Detector {
        spki: 0.25 * head.iter().cloned().fold(0.0, f64::max),
        npki: 0.5 * dsp::mean(head),
        beats: Vec::new(),
        slopes: Vec::new(),
    };
    let slope_half = (0.075 * fs).round() as usize;
    let max_slope = |p: usize| -> f64 {
        let lo = p.saturating_sub(slope_half);
        let hi = (p + slope_half + 1).min(st.derivative.len());
        st.derivative[lo..hi].iter().fold(0.0, |m, d| m.max(d.abs()))
    };
    let mut noise: Vec<usize> = Vec::new();

    for &c in &candidates {
        // search back over skipped candidates when a beat is overdue
        if let (Some(rr), Some(&last)) = (det.mean_rr(), det.beats.last()) {
            if (c - last) as f64 > SEARCH_BACK_FACTOR * rr {
                let thr2 = 0.5 * det.thr1();
                let best = noise
                    .iter()
                    .copied()
                    .filter(|&p| p >= last + refractory && p + refractory <= c && mwi[p] >= thr2)
                    .max_by(|&a, &b| mwi[a].total_cmp(&mwi[b]));
                if let Some(p) = best {
                    det.spki = 0.25 * mwi[p] + 0.75 * det.spki;
                    det.beats.push(p);
                    det.slopes.push(max_slope(p));
                    noise.retain(|&q| q > p);
                }
            }
        }

        let peak = mwi[c];
        let mut is_beat = peak >= det.thr1();
        if let Some(&last) = det.beats.last() {
            if c < last + refractory {
                is_beat = false;
            } else if is_beat && ((c - last) as f64) < T_WAVE_S * fs {
                // shallow slope soon after a beat is a T wave
                let prev = *det.slopes.last().unwrap();
                if max_slope(c) < 0.5 * prev {
                    is_beat = false;
                }
            }
        }
        if is_beat {
            det.spki = 0.125 * peak + 0.875 * det.spki;
            det.beats.push(c);
            det.slopes.push(max_slope(c));
            noise.clear();
        } else {
            det.npki = 0.125 * peak + 0.875 * det.npki;
            noise.push(c);
        }
    }

    // refine each fiducial to the raw maximum nearby
    let reach = (REFINE_S * fs).round() as usize;
    let mut r: Vec<usize> = det
        .beats
        .iter()
        .map(|&b| {
            let lo = b.saturating_sub(reach);
            let hi = (b + reach + 1).min(raw.len());
            (lo..hi).max_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(b.cmp(&a))).unwrap()
        })
        .collect();
    r.sort_unstable();
    // refinement can pull two beats together; keep the taller
    let mut out: Vec<usize> = Vec::with_capacity(r.len());
    for i in r {
        match out.last() {
            Some(&prev) if i < prev + refractory => {
                if raw[i] > raw[prev] {
                    *out.last_mut().unwrap() = i;
                }
            }
            _ => out.push(i),
        }
    }
    Ok(out)
}

/// Shape of one synthetic heartbeat: Gaussian P, R and T waves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcgTemplate {
    pub r_amp_mv: f64,
    pub r_sigma_s: f64,
    pub p_amp_mv: f64,
    pub p_offset_s: f64,
    pub p_sigma_s: f64,
    pub t_amp_mv: f64,
    pub t_offset_s: f64,
    pub t_sigma_s: f64,
}

impl Default for EcgTemplate {
    fn default() -> Self {
        EcgTemplate {
            r_amp_mv: 1.0,
            r_sigma_s: 0.010,
            p_amp_mv: 0.15,
            p_offset_s: -0.16,
            p_sigma_s: 0.025,
            t_amp_mv: 0.3,
            t_offset_s: 0.25,
            t_sigma_s: 0.04,
        }
    }
}

impl EcgTemplate {
    fn waves(&self) -> [(f64, f64, f64); 3] {
        [
            (self.p_offset_s, self.p_amp_mv, self.p_sigma_s),
            (0.0, self.r_amp_mv, self.r_sigma_s),
            (self.t_offset_s, self.t_amp_mv, self.t_sigma_s),
        ]
    }
}

/// ECG with beats at `r_times`, sampled at `fs` over `[t0, t0 + n/fs)`.
/// With `snr_db` set, white noise is added at that ratio to the clean
/// signal's mean power.
pub fn synthesize_ecg<R: Rng + ?Sized>(
    r_times: &[f64],
    template: &EcgTemplate,
    fs: f64,
    t0: f64,
    n: usize,
    snr_db: Option<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for &rt in r_times {
        for (off, amp, sigma) in template.waves() {
            let center = rt + off;
            let lo = (((center - 5.0 * sigma - t0) * fs).floor().max(0.0)) as usize;
            let hi = ((((center + 5.0 * sigma - t0) * fs).ceil()).max(0.0) as usize).min(n);
            for (k, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                let d = (t0 + k as f64 / fs - center) / sigma;
                *v += amp * (-0.5 * d * d).exp();
            }
        }
    }
    if let Some(snr) = snr_db {
        let power = x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
        let sd = (power / 10f64.powf(snr / 10.0)).sqrt();
        for v in &mut x {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::Unit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FS: f64 = 250.0;

    fn ecg_track(x: &[f64]) -> SignalTrack {
        SignalTrack::from_uniform("ecg", Unit::Millivolt, FS, 0.0, x).unwrap()
    }

    /// Greedy one-to-one matching of detections to truth within `tol` seconds.
    fn score(truth: &[f64], found: &[f64], tol: f64) -> (f64, f64, f64) {
        let mut used = vec![false; found.len()];
        let mut hits = 0;
        let mut worst: f64 = 0.0;
        for &t in truth {
            let best = found
                .iter()
                .enumerate()
                .filter(|(i, &f)| !used[*i] && (f - t).abs() <= tol)
                .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()));
            if let Some((i, &f)) = best {
                used[i] = true;
                hits += 1;
                worst = worst.max((f - t).abs());
            }
        }
        (hits as f64 / truth.len() as f64, hits as f64 / found.len().max(1) as f64, worst)
    }

    #[test]
    fn clean_sixty_bpm() {
        let truth: Vec<f64> = (1..60).map(|k| k as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = synthesize_ecg(&truth, &EcgTemplate::default(), FS, 0.0, (60.0 * FS) as usize, None, &mut rng);
        let beats = pan_tompkins(&ecg_track(&x)).unwrap();
        let (recall, precision, worst) = score(&truth, &beats.r_times, 0.05);
        assert_eq!(recall, 1.0);
        assert_eq!(precision, 1.0);
        assert!(worst <= 1.0 / FS + 1e-9);
        for ibi in &beats.ibi_ms {
            assert!((ibi - 1000.0).abs() <= 4.0 + 1e-9, "ibi {ibi}");
        }
    }

    #[test]
    fn noisy_ten_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut truth = Vec::new();
        let mut t = 0.5;
        while t < 119.0 {
            truth.push(t);
            t += rng.gen_range(0.7..1.1);
        }
        let x = synthesize_ecg(&truth, &EcgTemplate::default(), FS, 0.0, (120.0 * FS) as usize, Some(10.0), &mut rng);
        let beats = pan_tompkins(&ecg_track(&x)).unwrap();
        let (recall, precision, worst) = score(&truth, &beats.r_times, 0.1);
        assert!(recall >= 0.99, "recall {recall}");
        assert!(precision >= 0.99, "precision {precision}");
        assert!(worst <= 0.02, "timing {worst}");
    }

    #[test]
    fn flatline_has_no_beats() {
        let beats = pan_tompkins(&ecg_track(&vec![0.2; 3000])).unwrap();
        assert!(beats.r_times.is_empty());
        assert!(beats.ibi_ms.is_empty());
        assert!(pan_tompkins(&ecg_track(&[0.0; 100])).is_err());
    }

    #[test]
    fn z_ibi_is_session_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = 0.0;
        let times: Vec<f64> = (0..200)
            .map(|_| {
                t += rng.gen_range(0.6..1.2);
                t
            })
            .collect();
        let b = BeatSeries::from_r_times(times);
        assert_eq!(b.ibi_ms.len(), 199);
        assert!(dsp::mean(&b.z_ibi).abs() < 1e-9);
        assert!((dsp::variance(&b.z_ibi) - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn refractory_holds_for_any_input(
            seed in any::<u64>(),
            spikes in proptest::collection::vec((0usize..3000, -3.0f64..3.0), 0..200),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x: Vec<f64> = (0..3000).map(|_| rng.gen_range(-0.5..0.5)).collect();
            for (i, a) in spikes {
                x[i] += a;
            }
            let beats = pan_tompkins(&ecg_track(&x)).unwrap();
            for w in beats.r_times.windows(2) {
                prop_assert!(w[1] - w[0] >= REFRACTORY_S - 1e-9);
            }
            prop_assert_eq!(beats.ibi_ms.len(), beats.r_times.len().saturating_sub(1));
        }
    }
}
