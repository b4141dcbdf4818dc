//! Amplitude-envelope engine for the three intervention designs.
//!
//! The engine emits a control-rate gain curve in `[0.5, 1.0]` (a 6.02 dB
//! swing between "exhale" minima and "inhale" maxima). Fixed and
//! personalized tempo advance a cycle phase at a constant rate; the
//! personalized envelope maps the live, min-max normalized breath depth
//! through the same square-root law.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::breath::DepthNormalizer;
use crate::error::{Error, Result};
use crate::streams::SignalTrack;

pub const MIN_GAIN: f64 = 0.5;
pub const MAX_GAIN: f64 = 1.0;
pub const DEFAULT_CONTROL_RATE_HZ: f64 = 100.0;
pub const MIN_CONTROL_RATE_HZ: f64 = 20.0;
pub const FIXED_TEMPO_BPM: f64 = 6.0;
pub const PERSONALIZED_FRACTION: f64 = 0.75;
pub const PERSONALIZED_CAP_BPM: f64 = 15.0;
pub const AUDIO_RATE_HZ: u32 = 44_100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EnvelopeMode {
    FixedTempo { rate_bpm: f64 },
    PersonalizedTempo { baseline_bpm: f64 },
    PersonalizedEnvelope,
}

impl EnvelopeMode {
    pub fn fixed_tempo() -> Self {
        EnvelopeMode::FixedTempo {
            rate_bpm: FIXED_TEMPO_BPM,
        }
    }
}

/// Modulation rate of the tempo designs: 6 bpm for fixed tempo,
/// `min(0.75 * baseline, 15)` for personalized tempo.
pub fn effective_rate_bpm(mode: &EnvelopeMode) -> Result<f64> {
    match *mode {
        EnvelopeMode::FixedTempo { rate_bpm } => {
            if rate_bpm.is_finite() && rate_bpm > 0.0 {
                Ok(rate_bpm)
            } else {
                Err(Error::InvalidArgument(format!("rate must be positive, got {rate_bpm}")))
            }
        }
        EnvelopeMode::PersonalizedTempo { baseline_bpm } => {
            if baseline_bpm.is_finite() && baseline_bpm > 0.0 {
                Ok((PERSONALIZED_FRACTION * baseline_bpm).min(PERSONALIZED_CAP_BPM))
            } else {
                Err(Error::InvalidArgument(format!(
                    "baseline rate must be positive, got {baseline_bpm}"
                )))
            }
        }
        EnvelopeMode::PersonalizedEnvelope => Err(Error::NotApplicable(
            "the personalized envelope has no fixed rate".into(),
        )),
    }
}

/// Cycle shape: square-root rise to the peak, square-root fall after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeShape {
    /// Cycle fraction of the "inhale" apex, in (0, 1).
    pub peak_position: f64,
}

impl Default for EnvelopeShape {
    fn default() -> Self {
        EnvelopeShape { peak_position: 0.5 }
    }
}

impl EnvelopeShape {
    pub fn new(peak_position: f64) -> Result<Self> {
        if peak_position > 0.0 && peak_position < 1.0 {
            Ok(EnvelopeShape { peak_position })
        } else {
            Err(Error::InvalidArgument(format!(
                "peak position must be in (0, 1), got {peak_position}"
            )))
        }
    }

    pub fn gain(&self, phase: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&phase) {
            return Err(Error::InvalidArgument(format!("phase {phase} outside [0, 1)")));
        }
        let p = self.peak_position;
        let s = if phase < p {
            (phase / p).sqrt()
        } else {
            ((1.0 - phase) / (1.0 - p)).sqrt()
        };
        Ok(MIN_GAIN + (MAX_GAIN - MIN_GAIN) * s)
    }
}

/// Gain for a cycle phase with the symmetric default shape.
pub fn envelope_gain(phase: f64) -> Result<f64> {
    EnvelopeShape::default().gain(phase)
}

/// Gain for a normalized breath depth in `[0, 1]`.
pub fn depth_gain(depth: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&depth) {
        return Err(Error::InvalidArgument(format!("depth {depth} outside [0, 1]")));
    }
    Ok(MIN_GAIN + (MAX_GAIN - MIN_GAIN) * depth.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    pub control_rate_hz: f64,
    /// Time of the first gain, seconds.
    pub start_s: f64,
    pub gains: Vec<f64>,
}

impl GainCurve {
    pub fn time_of(&self, i: usize) -> f64 {
        self.start_s + i as f64 / self.control_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.gains.len() as f64 / self.control_rate_hz
    }

    /// Gain at time `t`, linear between ticks, held past the last tick.
    pub fn gain_at(&self, t: f64) -> f64 {
        let pos = ((t - self.start_s) * self.control_rate_hz).max(0.0);
        let i = pos.floor() as usize;
        match (self.gains.get(i), self.gains.get(i + 1)) {
            (Some(&a), Some(&b)) => a + (b - a) * (pos - i as f64),
            (Some(&a), None) => a,
            _ => *self.gains.last().unwrap_or(&MAX_GAIN),
        }
    }

    /// `t,gain` CSV with a header row.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,gain")?;
        for (i, g) in self.gains.iter().enumerate() {
            writeln!(out, "{},{}", self.time_of(i), g)?;
        }
        Ok(())
    }
}

/// Stateful engine advanced one control tick at a time.
#[derive(Debug, Clone)]
pub struct Engine {
    mode: EnvelopeMode,
    shape: EnvelopeShape,
    control_rate_hz: f64,
    /// Cycle advance per tick (tempo designs).
    step: f64,
    phase: f64,
    normalizer: DepthNormalizer,
    depth: f64,
}

impl Engine {
    pub fn new(mode: EnvelopeMode, control_rate_hz: f64) -> Result<Self> {
        Engine::with_shape(mode, EnvelopeShape::default(), control_rate_hz)
    }

    pub fn with_shape(mode: EnvelopeMode, shape: EnvelopeShape, control_rate_hz: f64) -> Result<Self> {
        if !(control_rate_hz.is_finite() && control_rate_hz >= MIN_CONTROL_RATE_HZ) {
            return Err(Error::InvalidArgument(format!(
                "control rate must be at least {MIN_CONTROL_RATE_HZ} Hz, got {control_rate_hz}"
            )));
        }
        let step = match mode {
            EnvelopeMode::PersonalizedEnvelope => 0.0,
            _ => effective_rate_bpm(&mode)? / 60.0 / control_rate_hz,
        };
        Ok(Engine {
            mode,
            shape,
            control_rate_hz,
            step,
            phase: 0.0,
            normalizer: DepthNormalizer::default(),
            depth: DepthNormalizer::NEUTRAL,
        })
    }

    pub fn mode(&self) -> EnvelopeMode {
        self.mode
    }

    pub fn control_rate_hz(&self) -> f64 {
        self.control_rate_hz
    }

    /// Cycle phase in `[0, 1)` of the next tick.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// Feed one breathing sample (personalized envelope only; ignored otherwise).
    pub fn push_breath(&mut self, t: f64, v: f64) {
        if matches!(self.mode, EnvelopeMode::PersonalizedEnvelope) {
            self.depth = self.normalizer.push(t, v);
        }
    }

    /// Gain for the current tick; then advance one tick.
    pub fn tick(&mut self) -> f64 {
        let gain = match self.mode {
            EnvelopeMode::PersonalizedEnvelope => {
                MIN_GAIN + (MAX_GAIN - MIN_GAIN) * self.depth.clamp(0.0, 1.0).sqrt()
            }
            _ => self
                .shape
                .gain(self.phase)
                .expect("phase is kept in [0, 1)"),
        };
        self.phase += self.step;
        if self.phase >= 1.0 {
            self.phase -= 1.0;
        }
        gain
    }

    /// Tick and publish the gain for a concurrent reader.
    pub fn tick_into(&mut self, handoff: &GainHandoff) -> f64 {
        let g = self.tick();
        handoff.publish(g);
        g
    }
}

/// What drives a rendered curve.
#[derive(Debug, Clone, Copy)]
pub enum RenderSource<'a> {
    /// Tempo designs: render this many seconds from t = 0.
    Duration(f64),
    /// Personalized envelope: follow this breathing track over its span.
    Breath(&'a SignalTrack),
}

pub fn render_gain_curve(mode: EnvelopeMode, source: RenderSource<'_>, control_rate_hz: f64) -> Result<GainCurve> {
    let mut engine = Engine::new(mode, control_rate_hz)?;
    match (mode, source) {
        (EnvelopeMode::PersonalizedEnvelope, RenderSource::Duration(_)) => Err(Error::InvalidArgument(
            "the personalized envelope needs a breathing stream".into(),
        )),
        (EnvelopeMode::PersonalizedEnvelope, RenderSource::Breath(track)) => {
            let samples = track.samples();
            let (t0, t1) = track.span().ok_or_else(|| {
                Error::InsufficientData("the breathing stream is empty".into())
            })?;
            let mut gains = Vec::with_capacity(((t1 - t0) * control_rate_hz) as usize + 1);
            let mut next = 0;
            let mut i = 0usize;
            loop {
                let t = t0 + i as f64 / control_rate_hz;
                if t > t1 {
                    break;
                }
                while next < samples.len() && samples[next].t <= t {
                    engine.push_breath(samples[next].t, samples[next].v);
                    next += 1;
                }
                gains.push(engine.tick());
                i += 1;
            }
            Ok(GainCurve {
                control_rate_hz,
                start_s: t0,
                gains,
            })
        }
        (_, RenderSource::Duration(duration_s)) => {
            if !(duration_s.is_finite() && duration_s >= 0.0) {
                return Err(Error::InvalidArgument(format!("invalid duration {duration_s}")));
            }
            let n = (duration_s * control_rate_hz).round() as usize;
            Ok(GainCurve {
                control_rate_hz,
                start_s: 0.0,
                gains: (0..n).map(|_| engine.tick()).collect(),
            })
        }
        (_, RenderSource::Breath(track)) => {
            let (t0, t1) = track.span().unwrap_or((0.0, 0.0));
            let n = ((t1 - t0) * control_rate_hz).round() as usize;
            Ok(GainCurve {
                control_rate_hz,
                start_s: t0,
                gains: (0..n).map(|_| engine.tick()).collect(),
            })
        }
    }
}

/// Multiply audio (at `sample_rate` Hz, starting at the curve's start) by the
/// gain curve, interpolating linearly between control ticks.
pub fn apply_gain(audio: &[f64], sample_rate: f64, curve: &GainCurve) -> Result<Vec<f64>> {
    if curve.gains.is_empty() {
        return Err(Error::InvalidArgument("empty gain curve".into()));
    }
    let audio_s = audio.len() as f64 / sample_rate;
    if audio_s > curve.duration_s() + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "audio lasts {audio_s:.3} s but the gain curve covers {:.3} s",
            curve.duration_s()
        )));
    }
    Ok(audio
        .iter()
        .enumerate()
        .map(|(i, &x)| x * curve.gain_at(curve.start_s + i as f64 / sample_rate))
        .collect())
}

/// A quiet three-partial drone in `[-0.9, 0.9]`, for audible demos.
pub fn drone(duration_s: f64, sample_rate: f64) -> Vec<f64> {
    use std::f64::consts::TAU;
    let partials = [(110.0, 0.45), (164.81, 0.3), (220.5, 0.15)];
    let n = (duration_s * sample_rate).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            partials
                .iter()
                .map(|&(f, a)| a * (TAU * f * t).sin())
                .sum()
        })
        .collect()
}

/// 16-bit PCM mono WAV.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Latest-value handoff between the ticking thread and a reader. Never blocks.
#[derive(Debug, Clone)]
pub struct GainHandoff(Arc<AtomicU64>);

impl Default for GainHandoff {
    fn default() -> Self {
        GainHandoff::new(MAX_GAIN)
    }
}

impl GainHandoff {
    pub fn new(initial: f64) -> Self {
        GainHandoff(Arc::new(AtomicU64::new(initial.to_bits())))
    }

    pub fn publish(&self, gain: f64) {
        self.0.store(gain.to_bits(), Ordering::Release);
    }

    pub fn latest(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Acquire))
    }
}
