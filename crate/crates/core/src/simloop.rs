//! Synthetic participants, protocol scheduling and the closed loop that
//! couples a simulated breather to the envelope engine.
//!
//! The breather is a noisy phase oscillator pulled toward a stimulus phase
//! (`dφ = (ω_n + K sin(φ_s − φ)) dt + σ dW`). Under the tempo designs the
//! stimulus is the engine's cycle phase; under the personalized envelope it
//! is the breather's own phase, delayed and biased. A slow "relaxation"
//! signal derived from the realized breathing rate then shapes the
//! synthetic EDA, ECG and EEG channels.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::breath::{self, BreathConfig};
use crate::engine::{self, Engine, EnvelopeMode};
use crate::error::{Error, Result};
use crate::physio::ecg::{synthesize_ecg, EcgTemplate};
use crate::streams::{Condition, EventMarker, Hand, MarkerKind, SessionRecording, SignalTrack, Unit};

pub const BREATH_RATE_HZ: f64 = 17.0;
pub const ECG_RATE_HZ: f64 = 250.0;
pub const EDA_RATE_HZ: f64 = 4.0;
pub const TRIALS_PER_BLOCK: usize = 40;
pub const FOREPERIOD_S: f64 = 4.5;
pub const WARNING_DURATION_S: f64 = 0.5;
pub const IMPERATIVE_DURATION_S: f64 = 0.3;
pub const ITI_RANGE_S: (f64, f64) = (2.0, 5.0);
pub const MAX_DT_S: f64 = 0.1;

// ---------------------------------------------------------------------------
// breather

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreatherParams {
    pub natural_rate_bpm: f64,
    /// rad/s
    pub coupling_k: f64,
    /// rad/√s
    pub phase_noise_sigma: f64,
    pub amplitude_nu: f64,
    pub seed: u64,
}

impl BreatherParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (6.0..=30.0).contains(&self.natural_rate_bpm)
            && self.coupling_k.is_finite()
            && self.coupling_k >= 0.0
            && self.phase_noise_sigma.is_finite()
            && self.phase_noise_sigma >= 0.0
            && self.amplitude_nu.is_finite()
            && self.amplitude_nu > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid breather parameters {self:?}")))
        }
    }

    pub fn natural_omega(&self) -> f64 {
        TAU * self.natural_rate_bpm / 60.0
    }
}

/// Oscillator state. The phase is unwrapped so realized rates can be read
/// off phase differences.
#[derive(Debug, Clone)]
pub struct Breather {
    pub params: BreatherParams,
    phase: f64,
    rng: ChaCha8Rng,
}

impl Breather {
    pub fn new(params: BreatherParams) -> Result<Self> {
        params.validate()?;
        Ok(Breather {
            params,
            phase: 0.0,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        })
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn value(&self) -> f64 {
        self.params.amplitude_nu * self.phase.sin()
    }

    /// Advance by `dt` and return the new breath value (nu).
    pub fn step(&mut self, stimulus_phase: Option<f64>, dt: f64) -> Result<f64> {
        if !(dt > 0.0 && dt <= MAX_DT_S) {
            return Err(Error::InvalidArgument(format!("dt {dt} outside (0, {MAX_DT_S}]")));
        }
        let p = &self.params;
        let pull = stimulus_phase.map_or(0.0, |s| p.coupling_k * (s - self.phase).sin());
        let mut dphi = (p.natural_omega() + pull) * dt;
        if p.phase_noise_sigma > 0.0 {
            let n: f64 = self.rng.sample(StandardNormal);
            dphi += p.phase_noise_sigma * dt.sqrt() * n;
        }
        self.phase += dphi;
        Ok(self.value())
    }
}

// ---------------------------------------------------------------------------
// protocol

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Seconds from block start.
    pub warning_t: f64,
    pub imperative_t: f64,
    /// Silent gap after this trial's stimuli.
    pub iti_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSchedule {
    pub trials: Vec<Trial>,
}

impl TrialSchedule {
    pub fn trial_length_s(iti_s: f64) -> f64 {
        FOREPERIOD_S + WARNING_DURATION_S + IMPERATIVE_DURATION_S + iti_s
    }

    /// Block length: every trial's foreperiod, stimuli and ITI.
    pub fn duration_s(&self) -> f64 {
        self.trials.iter().map(|t| Self::trial_length_s(t.iti_s)).sum()
    }
}

pub fn expected_block_length_s() -> f64 {
    TRIALS_PER_BLOCK as f64 * TrialSchedule::trial_length_s(0.5 * (ITI_RANGE_S.0 + ITI_RANGE_S.1))
}

/// 40 forewarned trials with uniform ITIs; each warning opens its trial.
pub fn schedule_block(seed: u64) -> TrialSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let trials = (0..TRIALS_PER_BLOCK)
        .map(|_| {
            let iti_s = rng.gen_range(ITI_RANGE_S.0..=ITI_RANGE_S.1);
            let trial = Trial {
                warning_t: t,
                imperative_t: t + FOREPERIOD_S,
                iti_s,
            };
            t += TrialSchedule::trial_length_s(iti_s);
            trial
        })
        .collect();
    TrialSchedule { trials }
}

/// Baseline first, then the three designs in a seeded random order.
pub fn assign_conditions(seed: u64) -> [Condition; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rest = Condition::INTERVENTIONS;
    rest.shuffle(&mut rng);
    [Condition::Baseline, rest[0], rest[1], rest[2]]
}

// ---------------------------------------------------------------------------
// cohort configuration

/// Which physiological channels to synthesize besides breathing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSet {
    pub ecg: bool,
    pub eda: bool,
    pub eeg_channels: usize,
    pub eeg_rate_hz: f64,
}

impl Default for ChannelSet {
    fn default() -> Self {
        ChannelSet {
            ecg: true,
            eda: true,
            eeg_channels: 16,
            eeg_rate_hz: 500.0,
        }
    }
}

impl ChannelSet {
    pub fn breathing_only() -> Self {
        ChannelSet {
            ecg: false,
            eda: false,
            eeg_channels: 0,
            eeg_rate_hz: 500.0,
        }
    }
}

/// Free parameters of the synthetic physiology. Magnitudes are arbitrary;
/// only their signs encode the expected direction of each effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Physiology {
    /// Time constant of the realized-rate average behind the relaxation signal.
    pub rate_tau_s: f64,
    /// Tonic EDA drift from task engagement, µS/s.
    pub eda_task_drift: f64,
    /// Tonic EDA decline per unit relaxation, µS/s.
    pub eda_relax_gain: f64,
    /// Fractional IBI lengthening per unit relaxation.
    pub ibi_relax_gain: f64,
    pub rsa_fraction: f64,
    pub ecg_snr_db: f64,
    /// Late CNV magnitude at rest, µV (negative-going).
    pub cnv_uv: f64,
    /// Fractional CNV shrinkage per unit relaxation.
    pub cnv_relax_gain: f64,
    pub eeg_noise_uv: f64,
    pub blink_rate_hz: f64,
    pub spiky_channel_probability: f64,
}

impl Default for Physiology {
    fn default() -> Self {
        Physiology {
            rate_tau_s: 20.0,
            eda_task_drift: 0.0005,
            eda_relax_gain: 0.02,
            ibi_relax_gain: 0.3,
            rsa_fraction: 0.03,
            ecg_snr_db: 20.0,
            cnv_uv: 8.0,
            cnv_relax_gain: 1.5,
            eeg_noise_uv: 6.0,
            blink_rate_hz: 0.05,
            spiky_channel_probability: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub control_rate_hz: f64,
    pub pre_roll_s: f64,
    pub gap_s: f64,
    pub tail_s: f64,
    /// Delay of the personalized-envelope self-coupling.
    pub pe_lag_s: f64,
    /// Phase bias of the personalized-envelope self-coupling, rad.
    pub pe_bias_rad: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            control_rate_hz: engine::DEFAULT_CONTROL_RATE_HZ,
            pre_roll_s: 30.0,
            gap_s: 20.0,
            tail_s: 10.0,
            pe_lag_s: 0.5,
            pe_bias_rad: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_participants: usize,
    pub rate_range_bpm: (f64, f64),
    pub coupling_range: (f64, f64),
    pub phase_noise_sigma: f64,
    pub amplitude_range_nu: (f64, f64),
    pub master_seed: u64,
    pub channels: ChannelSet,
    pub physiology: Physiology,
    pub loop_config: LoopConfig,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_participants: 19,
            rate_range_bpm: (10.0, 18.0),
            coupling_range: (0.3, 0.3),
            phase_noise_sigma: 0.15,
            amplitude_range_nu: (3.0, 6.0),
            master_seed: 0,
            channels: ChannelSet::default(),
            physiology: Physiology::default(),
            loop_config: LoopConfig::default(),
        }
    }
}

impl CohortSpec {
    pub fn with_coupling(k: f64, master_seed: u64) -> Self {
        CohortSpec {
            coupling_range: (k, k),
            master_seed,
            ..CohortSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.n_participants < 2 {
            return Err(Error::InvalidArgument("a cohort needs at least 2 participants".into()));
        }
        if !range_ok(self.rate_range_bpm) || self.rate_range_bpm.0 < 6.0 || self.rate_range_bpm.1 > 30.0 {
            return Err(Error::InvalidArgument(format!(
                "natural rate range {:?} must lie in [6, 30] bpm",
                self.rate_range_bpm
            )));
        }
        if !range_ok(self.coupling_range) || self.coupling_range.0 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "coupling range {:?} must be non-negative",
                self.coupling_range
            )));
        }
        if !range_ok(self.amplitude_range_nu) || self.amplitude_range_nu.0 <= 0.0 {
            return Err(Error::InvalidArgument("amplitude range must be positive".into()));
        }
        if !(self.phase_noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("phase noise must be non-negative".into()));
        }
        if self.channels.eeg_channels == 1 || self.channels.eeg_channels > 99 {
            return Err(Error::InvalidArgument(
                "EEG channel count must be 0 or between 2 and 99".into(),
            ));
        }
        if self.channels.eeg_channels > 0 && !(self.channels.eeg_rate_hz >= 50.0) {
            return Err(Error::InvalidArgument("EEG rate must be at least 50 Hz".into()));
        }
        Ok(())
    }
}

pub fn participant_id(index: usize) -> String {
    format!("P{:02}", index + 1)
}

pub fn eeg_channel_id(index: usize) -> String {
    format!("eeg_ch{:02}", index + 1)
}

/// Independent random stream per participant and purpose.
fn stream(master_seed: u64, participant: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(participant as u64 * 16 + purpose);
    rng
}

const STREAM_PARAMS: u64 = 0;
const STREAM_BREATH: u64 = 1;
const STREAM_PROTOCOL: u64 = 2;
const STREAM_EDA: u64 = 3;
const STREAM_ECG: u64 = 4;
const STREAM_EEG: u64 = 5;
const STREAM_DEPTH: u64 = 6;

// ---------------------------------------------------------------------------
// closed loop

/// What happened in one block, for inspection and tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockTrace {
    pub condition: Condition,
    pub start: f64,
    pub end: f64,
    /// Engine modulation rate for the tempo designs.
    pub stimulus_rate_bpm: Option<f64>,
    /// Mean breathing rate from the oscillator's phase advance.
    pub realized_rate_bpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipantTrace {
    pub params: BreatherParams,
    pub measured_baseline_bpm: f64,
    pub blocks: Vec<BlockTrace>,
}

#[derive(Debug, Clone)]
pub struct SimulatedSession {
    pub recording: SessionRecording,
    pub trace: ParticipantTrace,
}

struct Layout {
    order: [Condition; 4],
    blocks: Vec<(Condition, f64, f64, TrialSchedule)>,
    end_s: f64,
}

fn layout(order: [Condition; 4], rng: &mut ChaCha8Rng, cfg: &LoopConfig) -> Layout {
    let mut t = cfg.pre_roll_s;
    let mut blocks = Vec::with_capacity(4);
    for (i, c) in order.iter().enumerate() {
        let sched = schedule_block(rng.gen());
        let end = t + sched.duration_s();
        blocks.push((*c, t, end, sched));
        t = end + if i < 3 { cfg.gap_s } else { cfg.tail_s };
    }
    Layout {
        order,
        blocks,
        end_s: t,
    }
}

fn protocol_markers(lay: &Layout, rng: &mut ChaCha8Rng) -> Vec<EventMarker> {
    let mut markers = Vec::new();
    for (c, start, end, sched) in &lay.blocks {
        markers.push(EventMarker {
            t: *start,
            kind: MarkerKind::BlockStart(*c),
        });
        for tr in &sched.trials {
            markers.push(EventMarker {
                t: start + tr.warning_t,
                kind: MarkerKind::WarningStimulus,
            });
            markers.push(EventMarker {
                t: start + tr.imperative_t,
                kind: MarkerKind::ImperativeStimulus,
            });
            markers.push(EventMarker {
                t: start + tr.imperative_t + rng.gen_range(0.2..0.45),
                kind: MarkerKind::KeyPress,
            });
        }
        markers.push(EventMarker {
            t: *end,
            kind: MarkerKind::BlockEnd,
        });
    }
    markers
}

/// Breathing, oscillator phase and relaxation signal on the breath grid.
struct BreathRun {
    values: Vec<f64>,
    phases: Vec<f64>,
    relax: Vec<f64>,
    trace: ParticipantTrace,
}

/// Steps the breather and keeps the per-sample series.
struct Stepper {
    breather: Breather,
    omega_n: f64,
    alpha: f64,
    rate_avg: f64,
    amp_dev: f64,
    amp_rng: ChaCha8Rng,
    values: Vec<f64>,
    phases: Vec<f64>,
    relax: Vec<f64>,
}

impl Stepper {
    fn advance(&mut self, stim: Option<f64>) -> Result<f64> {
        let dt = 1.0 / BREATH_RATE_HZ;
        let prev = self.breather.phase();
        let v = self.breather.step(stim, dt)?;
        // depth wanders slowly around its mean
        self.amp_dev = 0.995 * self.amp_dev + 0.01 * gaussian(&mut self.amp_rng);
        let v = v * (1.0 + self.amp_dev);
        self.rate_avg += self.alpha * ((self.breather.phase() - prev) / dt - self.rate_avg);
        self.values.push(v);
        self.phases.push(self.breather.phase());
        self.relax.push((self.omega_n - self.rate_avg) / self.omega_n);
        Ok(v)
    }
}

fn run_breath(params: BreatherParams, amp_rng: ChaCha8Rng, lay: &Layout, spec: &CohortSpec) -> Result<BreathRun> {
    let cfg = &spec.loop_config;
    let dt = 1.0 / BREATH_RATE_HZ;
    let n = (lay.end_s * BREATH_RATE_HZ).floor() as usize + 1;
    let breather = Breather::new(params)?;
    let lag = (cfg.pe_lag_s * BREATH_RATE_HZ).round() as usize;
    let mut st = Stepper {
        omega_n: params.natural_omega(),
        alpha: dt / spec.physiology.rate_tau_s,
        rate_avg: params.natural_omega(),
        amp_dev: 0.0,
        amp_rng,
        values: vec![breather.value()],
        phases: vec![breather.phase()],
        relax: vec![0.0],
        breather,
    };
    let mut measured_baseline_bpm = f64::NAN;
    let mut blocks = Vec::new();

    for &(cond, start, end, _) in &lay.blocks {
        let first = (start * BREATH_RATE_HZ).ceil() as usize;
        let last = ((end * BREATH_RATE_HZ).floor() as usize).min(n - 1);
        while st.values.len() < first {
            st.advance(None)?;
        }

        let mode = match cond {
            Condition::Baseline => None,
            Condition::FixedTempo => Some(EnvelopeMode::fixed_tempo()),
            Condition::PersonalizedTempo => {
                if measured_baseline_bpm.is_nan() {
                    return Err(Error::Validation("PT block precedes the baseline block".into()));
                }
                Some(EnvelopeMode::PersonalizedTempo {
                    baseline_bpm: measured_baseline_bpm,
                })
            }
            Condition::PersonalizedEnvelope => Some(EnvelopeMode::PersonalizedEnvelope),
        };
        let mut eng = mode.map(|m| Engine::new(m, cfg.control_rate_hz)).transpose()?;
        let tick_dt = 1.0 / cfg.control_rate_hz;
        let mut ticks = 0usize;
        let mut gain_phase = 0.0;
        let phase_start = st.breather.phase();

        for k in first..=last {
            let t = k as f64 * dt;
            // the engine runs ahead to the breath sample's time
            if let Some(e) = eng.as_mut() {
                while start + ticks as f64 * tick_dt <= t {
                    gain_phase = e.phase();
                    e.tick();
                    ticks += 1;
                }
            }
            let stim = match cond {
                Condition::Baseline => None,
                Condition::FixedTempo | Condition::PersonalizedTempo => Some(TAU * gain_phase - PI / 2.0),
                Condition::PersonalizedEnvelope => Some(st.phases[k.saturating_sub(lag)] - cfg.pe_bias_rad),
            };
            let v = st.advance(stim)?;
            if let Some(e) = eng.as_mut() {
                e.push_breath(t, v);
            }
        }

        let dur = (last + 1 - first) as f64 * dt;
        blocks.push(BlockTrace {
            condition: cond,
            start,
            end,
            stimulus_rate_bpm: mode.and_then(|m| engine::effective_rate_bpm(&m).ok()),
            realized_rate_bpm: (st.breather.phase() - phase_start) / TAU / dur * 60.0,
        });

        if cond == Condition::Baseline {
            let tr = SignalTrack::from_uniform(
                "breathing",
                Unit::Nu,
                BREATH_RATE_HZ,
                first as f64 * dt,
                &st.values[first..=last],
            )?;
            measured_baseline_bpm = breath::baseline_rate_from_track(&tr, &BreathConfig::default())?;
        }
    }
    while st.values.len() < n {
        st.advance(None)?;
    }
    Ok(BreathRun {
        values: st.values,
        phases: st.phases,
        relax: st.relax,
        trace: ParticipantTrace {
            params,
            measured_baseline_bpm,
            blocks,
        },
    })
}

/// Linear lookup on the breath grid.
fn at_time(series: &[f64], t: f64) -> f64 {
    let pos = (t * BREATH_RATE_HZ).max(0.0);
    let i = pos.floor() as usize;
    match (series.get(i), series.get(i + 1)) {
        (Some(&a), Some(&b)) => a + (b - a) * (pos - i as f64),
        (Some(&a), None) => a,
        _ => *series.last().unwrap_or(&0.0),
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn synth_eda(run: &BreathRun, end_s: f64, phys: &Physiology, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = (end_s * EDA_RATE_HZ).floor() as usize + 1;
    let dt = 1.0 / EDA_RATE_HZ;
    let mut level = rng.gen_range(2.0..8.0);
    let right_gain = rng.gen_range(0.9..1.1);
    let (mut wander_l, mut wander_r) = (0.0, 0.0);
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        let r = at_time(&run.relax, t);
        level += (phys.eda_task_drift - phys.eda_relax_gain * r) * dt;
        level = level.max(0.05);
        wander_l = 0.999 * wander_l + 0.002 * gaussian(rng);
        wander_r = 0.999 * wander_r + 0.002 * gaussian(rng);
        left.push(level + wander_l + 0.003 * gaussian(rng));
        right.push(right_gain * level + wander_r + 0.003 * gaussian(rng));
    }
    (left, right)
}

fn synth_ecg(run: &BreathRun, end_s: f64, phys: &Physiology, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base_ibi = 60.0 / rng.gen_range(60.0..80.0);
    let mut beats = Vec::new();
    let mut t = rng.gen_range(0.2..0.8);
    while t < end_s - 0.5 {
        beats.push(t);
        let r = at_time(&run.relax, t);
        let phase = at_time(&run.phases, t);
        let ibi = base_ibi * (1.0 + phys.ibi_relax_gain * r) * (1.0 + phys.rsa_fraction * phase.sin())
            + 0.01 * base_ibi * gaussian(rng);
        t += ibi.clamp(0.35, 1.8);
    }
    let n = (end_s * ECG_RATE_HZ).floor() as usize + 1;
    synthesize_ecg(&beats, &EcgTemplate::default(), ECG_RATE_HZ, 0.0, n, Some(phys.ecg_snr_db), rng)
}

/// Slow negative ramp from the warning toward the imperative, released after.
fn cnv_shape(tau: f64) -> f64 {
    match tau {
        t if t < 0.3 => 0.0,
        t if t < 3.9 => (t - 0.3) / 3.6,
        t if t < FOREPERIOD_S => 1.0,
        t if t < FOREPERIOD_S + 0.5 => 1.0 - (t - FOREPERIOD_S) / 0.5,
        _ => 0.0,
    }
}

fn synth_eeg(
    run: &BreathRun,
    markers: &[EventMarker],
    end_s: f64,
    channels: &ChannelSet,
    phys: &Physiology,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let fs = channels.eeg_rate_hz;
    let n = (end_s * fs).floor() as usize + 1;
    let nch = channels.eeg_channels;
    // channel 0 is Cz and carries the full CNV
    let weights: Vec<f64> = (0..nch).map(|c| if c == 0 { 1.0 } else { rng.gen_range(0.1..0.7) }).collect();
    let rho: f64 = (-2.0 * PI * 8.0 / fs).exp();
    let innovation = phys.eeg_noise_uv * (1.0 - rho * rho).sqrt();
    let mut out: Vec<Vec<f64>> = (0..nch)
        .map(|_| {
            let mut x = phys.eeg_noise_uv * gaussian(rng);
            let offset = rng.gen_range(-20.0..20.0);
            (0..n)
                .map(|_| {
                    x = rho * x + innovation * gaussian(rng);
                    offset + x
                })
                .collect()
        })
        .collect();

    let cnv_len = ((FOREPERIOD_S + 0.5) * fs).ceil() as usize;
    let shape: Vec<f64> = (0..cnv_len).map(|i| cnv_shape(i as f64 / fs)).collect();
    for m in markers.iter().filter(|m| m.kind == MarkerKind::WarningStimulus) {
        let r = at_time(&run.relax, m.t);
        let amp = -phys.cnv_uv * (1.0 - phys.cnv_relax_gain * r).clamp(0.2, 2.0);
        let i0 = (m.t * fs).round() as usize;
        for (c, ch) in out.iter_mut().enumerate() {
            let a = amp * weights[c];
            for (j, s) in shape.iter().enumerate() {
                if let Some(v) = ch.get_mut(i0 + j) {
                    *v += a * s;
                }
            }
        }
    }

    // eye blinks on two frontal channels
    if nch >= 3 {
        let blink_len = (0.3 * fs) as usize;
        let mut t = 0.0;
        loop {
            t += -rng.gen::<f64>().max(1e-12).ln() / phys.blink_rate_hz;
            if t >= end_s {
                break;
            }
            let i0 = (t * fs) as usize;
            let amp = rng.gen_range(60.0..120.0);
            for ch in out.iter_mut().skip(1).take(2) {
                for j in 0..blink_len {
                    if let Some(v) = ch.get_mut(i0 + j) {
                        *v += amp * (PI * j as f64 / blink_len as f64).sin();
                    }
                }
            }
        }
    }

    // an occasional channel with a bad contact
    if nch >= 4 && rng.gen::<f64>() < phys.spiky_channel_probability {
        let c = rng.gen_range(3..nch);
        let mut i = 0;
        while i < n {
            out[c][i] += rng.gen_range(200.0..400.0) * if rng.gen() { 1.0 } else { -1.0 };
            i += (rng.gen_range(1.0..3.0) * fs) as usize;
        }
    }
    out
}

/// One participant of the cohort.
pub fn run_participant(spec: &CohortSpec, index: usize) -> Result<SimulatedSession> {
    spec.validate()?;
    let mut prng = stream(spec.master_seed, index, STREAM_PARAMS);
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let params = BreatherParams {
        natural_rate_bpm: draw(&mut prng, spec.rate_range_bpm),
        coupling_k: draw(&mut prng, spec.coupling_range),
        phase_noise_sigma: spec.phase_noise_sigma,
        amplitude_nu: draw(&mut prng, spec.amplitude_range_nu),
        seed: stream(spec.master_seed, index, STREAM_BREATH).gen(),
    };
    let dominant_hand = if prng.gen::<f64>() < 0.9 { Hand::Right } else { Hand::Left };

    let mut proto = stream(spec.master_seed, index, STREAM_PROTOCOL);
    let order = assign_conditions(proto.gen());
    let lay = layout(order, &mut proto, &spec.loop_config);
    let markers = protocol_markers(&lay, &mut proto);

    let run = run_breath(params, stream(spec.master_seed, index, STREAM_DEPTH), &lay, spec)?;

    let mut tracks = BTreeMap::new();
    tracks.insert(
        "breathing".to_string(),
        SignalTrack::from_uniform("breathing", Unit::Nu, BREATH_RATE_HZ, 0.0, &run.values)?,
    );
    if spec.channels.eda {
        let mut rng = stream(spec.master_seed, index, STREAM_EDA);
        let (l, r) = synth_eda(&run, lay.end_s, &spec.physiology, &mut rng);
        for (id, v) in [("eda_left", l), ("eda_right", r)] {
            tracks.insert(id.to_string(), SignalTrack::from_uniform(id, Unit::Microsiemens, EDA_RATE_HZ, 0.0, &v)?);
        }
    }
    if spec.channels.ecg {
        let mut rng = stream(spec.master_seed, index, STREAM_ECG);
        let v = synth_ecg(&run, lay.end_s, &spec.physiology, &mut rng);
        tracks.insert("ecg".to_string(), SignalTrack::from_uniform("ecg", Unit::Millivolt, ECG_RATE_HZ, 0.0, &v)?);
    }
    if spec.channels.eeg_channels > 0 {
        let mut rng = stream(spec.master_seed, index, STREAM_EEG);
        let chans = synth_eeg(&run, &markers, lay.end_s, &spec.channels, &spec.physiology, &mut rng);
        for (c, v) in chans.iter().enumerate() {
            let id = eeg_channel_id(c);
            tracks.insert(
                id.clone(),
                SignalTrack::from_uniform(&id, Unit::Microvolt, spec.channels.eeg_rate_hz, 0.0, v)?,
            );
        }
    }

    Ok(SimulatedSession {
        recording: SessionRecording {
            participant_id: participant_id(index),
            tracks,
            markers,
            condition_order: lay.order.to_vec(),
            dominant_hand,
            cz_channel: eeg_channel_id(0),
        },
        trace: run.trace,
    })
}

/// Every participant of the cohort, simulated in parallel.
pub fn run_closed_loop(spec: &CohortSpec) -> Result<Vec<SimulatedSession>> {
    spec.validate()?;
    (0..spec.n_participants)
        .into_par_iter()
        .map(|i| run_participant(spec, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::validate_recording;
    use proptest::prelude::*;

    fn quiet(rate: f64, k: f64) -> BreatherParams {
        BreatherParams {
            natural_rate_bpm: rate,
            coupling_k: k,
            phase_noise_sigma: 0.0,
            amplitude_nu: 3.0,
            seed: 1,
        }
    }

    /// Realized rate over the second half of `dur` seconds with a stimulus at `stim_bpm`.
    fn realized(p: BreatherParams, stim_bpm: Option<f64>, dur: f64) -> f64 {
        let dt = 1.0 / BREATH_RATE_HZ;
        let mut b = Breather::new(p).unwrap();
        let n = (dur / dt) as usize;
        let mut mid = 0.0;
        for k in 0..n {
            let t = k as f64 * dt;
            b.step(stim_bpm.map(|r| TAU * r / 60.0 * t), dt).unwrap();
            if k == n / 2 {
                mid = b.phase();
            }
        }
        (b.phase() - mid) / TAU / ((n - 1 - n / 2) as f64 * dt) * 60.0
    }

    #[test]
    fn free_oscillator_twelve_bpm() {
        let mut b = Breather::new(quiet(12.0, 0.0)).unwrap();
        let dt = 1.0 / BREATH_RATE_HZ;
        let mut v = vec![b.value()];
        for _ in 1..(60.0 * BREATH_RATE_HZ) as usize {
            v.push(b.step(None, dt).unwrap());
        }
        let peaks = breath::prominent_peaks(&v, 2.0);
        assert_eq!(peaks.len(), 12);
        for w in peaks.windows(2) {
            let iri_ms = (w[1] - w[0]) as f64 / BREATH_RATE_HZ * 1000.0;
            assert!((iri_ms - 5000.0).abs() <= 1000.0 / BREATH_RATE_HZ);
        }
        assert!(b.step(None, 0.2).is_err());
    }

    #[test]
    fn locks_within_range() {
        let r = realized(quiet(12.0, 0.5), Some(9.0), 300.0);
        assert!((r - 9.0).abs() <= 0.02 * 9.0, "rate {r}");
    }

    #[test]
    fn no_lock_outside_range() {
        let r = realized(quiet(12.0, 0.5), Some(3.0), 600.0);
        assert!(r > 3.0 && r < 12.0 && r > 7.5, "rate {r}");
        // Adler drift rate: ω_s + sqrt(Δ² − K²)
        let (ws, wn) = (TAU * 3.0 / 60.0, TAU * 12.0 / 60.0);
        let expect = (ws + ((wn - ws).powi(2) - 0.25).sqrt()) * 60.0 / TAU;
        assert!((r - expect).abs() < 0.05, "{r} vs {expect}");
    }

    #[test]
    fn schedule_examples() {
        assert!((expected_block_length_s() - 352.0).abs() < 1e-9);
        let a = schedule_block(5);
        assert_eq!(a, schedule_block(5));
        assert_eq!(a.trials.len(), 40);
        for t in &a.trials {
            assert!((t.imperative_t - t.warning_t - 4.5).abs() < 1e-12);
        }
        // 10^4 ITI draws
        let itis: Vec<f64> = (0..250u64)
            .flat_map(|s| schedule_block(s).trials.into_iter().map(|t| t.iti_s))
            .collect();
        assert_eq!(itis.len(), 10_000);
        assert!(itis.iter().all(|i| (2.0..=5.0).contains(i)));
        let mean_len = (0..200u64).map(|s| schedule_block(s).duration_s()).sum::<f64>() / 200.0;
        assert!((mean_len - 352.0).abs() < 3.0, "mean block {mean_len}");
    }

    #[test]
    fn condition_orders_are_uniform() {
        let mut counts: BTreeMap<[Condition; 4], usize> = BTreeMap::new();
        for s in 0..6000u64 {
            let o = assign_conditions(s);
            assert_eq!(o[0], Condition::Baseline);
            *counts.entry(o).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / 6000.0 - 1.0 / 6.0).abs() < 0.02);
        }
        assert_eq!(assign_conditions(9), assign_conditions(9));
    }

    fn small_spec(k: f64, seed: u64) -> CohortSpec {
        CohortSpec {
            n_participants: 2,
            channels: ChannelSet {
                ecg: true,
                eda: true,
                eeg_channels: 4,
                eeg_rate_hz: 100.0,
            },
            ..CohortSpec::with_coupling(k, seed)
        }
    }

    #[test]
    fn sessions_are_valid_and_deterministic() {
        let spec = small_spec(0.3, 4);
        let a = run_closed_loop(&spec).unwrap();
        let b = run_closed_loop(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.recording, y.recording);
            validate_recording(&x.recording).unwrap();
            assert_eq!(x.recording.condition_order[0], Condition::Baseline);
            assert_eq!(x.recording.blocks().len(), 4);
            for tr in x.recording.tracks.values() {
                assert!(tr.samples().windows(2).all(|w| w[1].t > w[0].t));
                assert!(tr.samples().iter().all(|s| s.v.is_finite()));
            }
        }
        // breathing does not depend on which other channels are synthesized
        let lean = CohortSpec {
            channels: ChannelSet::breathing_only(),
            ..spec
        };
        let c = run_participant(&lean, 0).unwrap();
        assert_eq!(c.recording.tracks["breathing"], a[0].recording.tracks["breathing"]);
        assert_eq!(c.recording.tracks.len(), 1);
    }

    #[test]
    fn tempo_designs_slow_breathing() {
        let spec = CohortSpec {
            channels: ChannelSet::breathing_only(),
            n_participants: 3,
            ..CohortSpec::with_coupling(0.3, 11)
        };
        for s in run_closed_loop(&spec).unwrap() {
            let base = s.trace.blocks.iter().find(|b| b.condition == Condition::Baseline).unwrap();
            for b in &s.trace.blocks {
                if b.condition != Condition::Baseline {
                    assert!(b.realized_rate_bpm < base.realized_rate_bpm, "{:?}", s.trace);
                }
                if b.condition == Condition::PersonalizedTempo {
                    let pt = b.stimulus_rate_bpm.unwrap();
                    assert!(pt <= 15.0);
                    assert!((pt - (0.75 * s.trace.measured_baseline_bpm).min(15.0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pt_stimulus_is_capped_for_fast_breathers() {
        let spec = CohortSpec {
            channels: ChannelSet::breathing_only(),
            n_participants: 2,
            rate_range_bpm: (24.0, 30.0),
            ..CohortSpec::with_coupling(0.3, 2)
        };
        for s in run_closed_loop(&spec).unwrap() {
            let pt = s.trace.blocks.iter().find(|b| b.condition == Condition::PersonalizedTempo).unwrap();
            assert_eq!(pt.stimulus_rate_bpm, Some(15.0));
        }
    }

    #[test]
    fn envelope_reacts_within_one_tick_and_one_sample() {
        // breath depth steps from shallow to deep; the loop drives the engine
        let fs = BREATH_RATE_HZ;
        let step_at = 40.0;
        let v: Vec<f64> = (0..(60.0 * fs) as usize)
            .map(|k| {
                let t = k as f64 / fs;
                if t < step_at {
                    (TAU * t / 5.0).sin()
                } else {
                    6.0
                }
            })
            .collect();
        let tr = SignalTrack::from_uniform("breathing", Unit::Nu, fs, 0.0, &v).unwrap();
        let curve = engine::render_gain_curve(EnvelopeMode::PersonalizedEnvelope, engine::RenderSource::Breath(&tr), 100.0).unwrap();
        let before = curve.gain_at(step_at - 0.2);
        let first_change = (0..curve.gains.len())
            .map(|i| (curve.time_of(i), curve.gains[i]))
            .find(|&(t, g)| t >= step_at - 1.0 / fs && g != before && g == 1.0)
            .unwrap();
        let first_sample = (step_at * fs).ceil() / fs;
        assert!(first_change.0 - first_sample <= 1.0 / 100.0 + 1.0 / fs + 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn entrainment_is_monotone(natural in 10.0f64..16.0, d1 in 0.05f64..0.2, d2 in 0.05f64..0.2) {
            // stimulus rates inside the locking range, K = 0.5 rad/s ≈ 4.8 bpm
            let p = quiet(natural, 0.5);
            let (s_hi, s_lo) = (natural * (1.0 - d1.min(d2)), natural * (1.0 - d1.max(d2) - 0.02));
            let r_hi = realized(p, Some(s_hi), 200.0);
            let r_lo = realized(p, Some(s_lo), 200.0);
            prop_assert!(r_lo < r_hi);
        }
    }
}
