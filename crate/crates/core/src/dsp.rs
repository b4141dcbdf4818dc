//! Numerical kernels shared by the analysis pipelines.
//!
//! Butterworth filters are designed from the analog prototype, mapped through
//! the bilinear transform with cutoff prewarping, and realized as cascaded
//! second-order sections. Offline code filters forward-backward
//! ([`filter_zero_phase`]); the streaming engine uses [`filter_causal`].

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Band {
    Lowpass(f64),
    Highpass(f64),
    /// Lower and upper edge.
    Bandpass(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub band: Band,
    pub order: usize,
    pub fs_hz: f64,
}

impl FilterSpec {
    pub fn lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Self {
        FilterSpec {
            band: Band::Lowpass(cutoff_hz),
            order,
            fs_hz,
        }
    }

    pub fn highpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Self {
        FilterSpec {
            band: Band::Highpass(cutoff_hz),
            order,
            fs_hz,
        }
    }

    pub fn bandpass(order: usize, low_hz: f64, high_hz: f64, fs_hz: f64) -> Self {
        FilterSpec {
            band: Band::Bandpass(low_hz, high_hz),
            order,
            fs_hz,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Design("order must be at least 1".into()));
        }
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(Error::Design(format!("invalid sampling rate {}", self.fs_hz)));
        }
        let nyquist = self.fs_hz / 2.0;
        let inside = |f: f64| f.is_finite() && f > 0.0 && f < nyquist;
        let ok = match self.band {
            Band::Lowpass(f) | Band::Highpass(f) => inside(f),
            Band::Bandpass(lo, hi) => inside(lo) && inside(hi) && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Design(format!(
                "cutoff {:?} must lie strictly inside (0, {nyquist}) Hz",
                self.band
            )))
        }
    }
}

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Gain for a constant input.
    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Transposed direct form II state reached by a constant input `x`.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        let s2 = self.b2 * x - self.a2 * y;
        let s1 = self.b1 * x - self.a1 * y + s2;
        [s1, s2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub overall_gain: f64,
}

impl BiquadCascade {
    pub fn response_at(&self, f_hz: f64, fs_hz: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz / fs_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(self.overall_gain, 0.0), |acc, s| {
                acc * s.response(z_inv)
            })
    }

    pub fn magnitude_db(&self, f_hz: f64, fs_hz: f64) -> f64 {
        20.0 * self.response_at(f_hz, fs_hz).norm().log10()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

/// Group digital poles into conjugate pairs (or pairs of real poles), with a
/// lone real pole left over for odd counts.
fn pair_poles(poles: &[Complex64]) -> Vec<(Complex64, Option<Complex64>)> {
    const IM_EPS: f64 = 1e-12;
    let mut out = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for &p in poles {
        if p.im > IM_EPS {
            out.push((p, Some(p.conj())));
        } else if p.im.abs() <= IM_EPS {
            reals.push(p.re);
        }
    }
    reals.sort_by(f64::total_cmp);
    let mut it = reals.chunks(2);
    for chunk in it.by_ref() {
        let a = Complex64::new(chunk[0], 0.0);
        out.push((a, chunk.get(1).map(|&b| Complex64::new(b, 0.0))));
    }
    out
}

/// Butterworth design realized as second-order sections.
pub fn design_butterworth(spec: &FilterSpec) -> Result<BiquadCascade> {
    spec.validate()?;
    let n = spec.order;
    let fs = spec.fs_hz;
    let prototype: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64))
        .collect();

    // (analog poles, numerator of a full section, numerator of a first-order
    // section, reference point on the unit circle for unity gain)
    let (analog, full_num, half_num, z_ref): (Vec<Complex64>, [f64; 3], [f64; 3], Complex64) =
        match spec.band {
            Band::Lowpass(fc) => {
                let wc = prewarp(fc, fs);
                (
                    prototype.iter().map(|p| p * wc).collect(),
                    [1.0, 2.0, 1.0],
                    [1.0, 1.0, 0.0],
                    Complex64::new(1.0, 0.0),
                )
            }
            Band::Highpass(fc) => {
                let wc = prewarp(fc, fs);
                (
                    prototype.iter().map(|p| wc / p).collect(),
                    [1.0, -2.0, 1.0],
                    [1.0, -1.0, 0.0],
                    Complex64::new(-1.0, 0.0),
                )
            }
            Band::Bandpass(lo, hi) => {
                let (w1, w2) = (prewarp(lo, fs), prewarp(hi, fs));
                let w0 = (w1 * w2).sqrt();
                let bw = w2 - w1;
                let mut poles = Vec::with_capacity(2 * n);
                for p in &prototype {
                    let pb = p * bw;
                    let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
                    poles.push((pb + disc) / 2.0);
                    poles.push((pb - disc) / 2.0);
                }
                let center = 2.0 * (w0 / (2.0 * fs)).atan();
                (
                    poles,
                    [1.0, 0.0, -1.0],
                    [1.0, 0.0, -1.0],
                    Complex64::from_polar(1.0, center),
                )
            }
        };

    let digital: Vec<Complex64> = analog.iter().map(|&s| bilinear(s, fs)).collect();
    let z_inv = z_ref.inv();
    let mut sections = Vec::new();
    for (p, q) in pair_poles(&digital) {
        let (num, a1, a2) = match q {
            Some(q) => (full_num, -(p + q).re, (p * q).re),
            None => (half_num, -p.re, 0.0),
        };
        let mut s = Biquad {
            b0: num[0],
            b1: num[1],
            b2: num[2],
            a1,
            a2,
        };
        let g = s.response(z_inv).norm();
        s.b0 /= g;
        s.b1 /= g;
        s.b2 /= g;
        sections.push(s);
    }
    let cascade = BiquadCascade {
        sections,
        overall_gain: 1.0,
    };
    if !cascade.is_stable() {
        return Err(Error::Design(format!("unstable design for {spec:?}")));
    }
    Ok(cascade)
}

fn run_sections(x: &mut [f64], f: &BiquadCascade, init: Option<f64>) {
    for v in x.iter_mut() {
        *v *= f.overall_gain;
    }
    let mut level = init.map(|x0| x0 * f.overall_gain);
    for s in &f.sections {
        let [mut s1, mut s2] = match level {
            Some(x0) => s.steady_state(x0),
            None => [0.0, 0.0],
        };
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b0 * xin + s1;
            s1 = s.b1 * xin - s.a1 * y + s2;
            s2 = s.b2 * xin - s.a2 * y;
            *v = y;
        }
        level = level.map(|x0| x0 * s.dc_gain());
    }
}

/// Causal filtering from rest.
pub fn filter_causal(x: &[f64], f: &BiquadCascade) -> Vec<f64> {
    let mut y = x.to_vec();
    run_sections(&mut y, f, None);
    y
}

/// Forward-backward filtering with odd-reflection padding and steady-state
/// initial conditions, so constants pass unchanged and there is no phase lag.
pub fn filter_zero_phase(x: &[f64], f: &BiquadCascade) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * f.sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let x0 = ext[0];
    run_sections(&mut ext, f, Some(x0));
    ext.reverse();
    let y0 = ext[0];
    run_sections(&mut ext, f, Some(y0));
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population (divide-by-N) variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Sample (divide-by-N-1) variance.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn is_degenerate_spread(sigma: f64, m: f64) -> bool {
    sigma == 0.0 || sigma <= 1e-13 * m.abs()
}

/// Standardize with the population standard deviation.
pub fn zscore(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "z-score needs at least 2 values, got {}",
            x.len()
        )));
    }
    let m = mean(x);
    let sigma = std_dev(x);
    if is_degenerate_spread(sigma, m) {
        return Err(Error::Degenerate("z-score of a constant series".into()));
    }
    Ok(x.iter().map(|v| (v - m) / sigma).collect())
}

/// `fs * (z[i+1] - z[i])`.
pub fn diff_slope(z: &[f64], fs: f64) -> Result<Vec<f64>> {
    if z.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "slope needs at least 2 samples, got {}",
            z.len()
        )));
    }
    Ok(z.windows(2).map(|w| fs * (w[1] - w[0])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KurtosisConvention {
    /// `m4 / m2^2 - 3`; zero for a Gaussian.
    #[default]
    Excess,
    /// `m4 / m2^2`; three for a Gaussian.
    Raw,
}

pub fn kurtosis(x: &[f64], convention: KurtosisConvention) -> Result<f64> {
    if x.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "kurtosis needs at least 4 values, got {}",
            x.len()
        )));
    }
    let m = mean(x);
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = (v - m) * (v - m);
        (a + d, b + d * d)
    });
    let n = x.len() as f64;
    let (m2, m4) = (m2 / n, m4 / n);
    if is_degenerate_spread(m2.sqrt(), m) {
        return Err(Error::Degenerate("kurtosis of a constant series".into()));
    }
    let k = m4 / (m2 * m2);
    Ok(match convention {
        KurtosisConvention::Excess => k - 3.0,
        KurtosisConvention::Raw => k,
    })
}

pub fn kurtosis_excess(x: &[f64]) -> Result<f64> {
    kurtosis(x, KurtosisConvention::Excess)
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub density: Vec<f64>,
}

impl Psd {
    pub fn resolution(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Rectangle-rule integral over bins with `lo <= f < hi`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let df = self.resolution();
        self.freqs
            .iter()
            .zip(&self.density)
            .filter(|(&f, _)| f >= lo && f < hi)
            .map(|(_, &p)| p * df)
            .sum()
    }

    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.resolution()
    }

    pub fn peak_frequency(&self) -> Option<f64> {
        self.density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.freqs[i])
    }
}

/// Welch estimate with a periodic Hann window and per-segment mean removal.
/// `overlap` is in samples.
pub fn welch_psd(x: &[f64], fs: f64, segment_len: usize, overlap: usize) -> Result<Psd> {
    if segment_len < 2 || segment_len > x.len() {
        return Err(Error::InvalidArgument(format!(
            "segment length {segment_len} must be in [2, {}]",
            x.len()
        )));
    }
    if overlap >= segment_len {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} must be shorter than the segment ({segment_len})"
        )));
    }
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment_len as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let step = segment_len - overlap;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_len);
    let n_bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut n_segments = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    let mut start = 0;
    while start + segment_len <= x.len() {
        let seg = &x[start..start + segment_len];
        let m = mean(seg);
        for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((v - m) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        n_segments += 1;
        start += step;
    }
    let scale = 1.0 / (fs * wss * n_segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (segment_len % 2 == 0 && k == n_bins - 1) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let freqs = (0..n_bins)
        .map(|k| k as f64 * fs / segment_len as f64)
        .collect();
    Ok(Psd { freqs, density })
}
