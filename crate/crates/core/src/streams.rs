//! Time-series data model for a recording session.
//!
//! Every physiological channel is a [`SignalTrack`] of timestamped samples
//! (seconds since session start). Event markers carry the block structure
//! and the reaction-time trial stimuli. Sessions are exchanged as
//! record-per-line JSON plus a small JSON manifest describing the channels.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed relative disagreement between nominal and empirical rate.
const RATE_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Nu,
    Microsiemens,
    Microvolt,
    Millivolt,
    Unitless,
}

/// Experimental condition of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "ft")]
    FixedTempo,
    #[serde(rename = "pt")]
    PersonalizedTempo,
    #[serde(rename = "pe")]
    PersonalizedEnvelope,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Baseline,
        Condition::FixedTempo,
        Condition::PersonalizedTempo,
        Condition::PersonalizedEnvelope,
    ];

    pub const INTERVENTIONS: [Condition; 3] = [
        Condition::FixedTempo,
        Condition::PersonalizedTempo,
        Condition::PersonalizedEnvelope,
    ];

    /// Token used in files ("baseline", "ft", "pt", "pe").
    pub fn token(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::FixedTempo => "ft",
            Condition::PersonalizedTempo => "pt",
            Condition::PersonalizedEnvelope => "pe",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            Condition::Baseline => "Baseline",
            Condition::FixedTempo => "FT",
            Condition::PersonalizedTempo => "PT",
            Condition::PersonalizedEnvelope => "PE",
        };
        f.write_str(label)
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "b" => Ok(Condition::Baseline),
            "ft" | "fixed_tempo" => Ok(Condition::FixedTempo),
            "pt" | "personalized_tempo" => Ok(Condition::PersonalizedTempo),
            "pe" | "personalized_envelope" => Ok(Condition::PersonalizedEnvelope),
            other => Err(Error::InvalidArgument(format!("unknown condition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    #[default]
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerKind {
    BlockStart(Condition),
    WarningStimulus,
    ImperativeStimulus,
    KeyPress,
    BlockEnd,
}

impl MarkerKind {
    fn token(self) -> &'static str {
        match self {
            MarkerKind::BlockStart(_) => "block_start",
            MarkerKind::WarningStimulus => "warning",
            MarkerKind::ImperativeStimulus => "imperative",
            MarkerKind::KeyPress => "key_press",
            MarkerKind::BlockEnd => "block_end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventMarker {
    pub t: f64,
    pub kind: MarkerKind,
}

/// One channel's samples. Timestamps are strictly increasing and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrack {
    channel_id: String,
    unit: Unit,
    nominal_rate_hz: f64,
    samples: Vec<Sample>,
}

impl SignalTrack {
    pub fn new(
        channel_id: impl Into<String>,
        unit: Unit,
        nominal_rate_hz: f64,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let channel_id = channel_id.into();
        if !(nominal_rate_hz.is_finite() && nominal_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{channel_id}: nominal rate must be positive, got {nominal_rate_hz}"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.t >= 0.0) {
                return Err(Error::Ingest(format!(
                    "{channel_id}: sample {i} has invalid timestamp {}",
                    s.t
                )));
            }
            if !s.v.is_finite() {
                return Err(Error::Ingest(format!(
                    "{channel_id}: sample {i} has non-finite value"
                )));
            }
            if i > 0 && samples[i - 1].t >= s.t {
                return Err(Error::Ingest(format!(
                    "{channel_id}: timestamps not strictly increasing at sample {i}"
                )));
            }
        }
        Ok(SignalTrack {
            channel_id,
            unit,
            nominal_rate_hz,
            samples,
        })
    }

    /// Track with samples at `t0 + k / fs`.
    pub fn from_uniform(
        channel_id: impl Into<String>,
        unit: Unit,
        fs: f64,
        t0: f64,
        values: &[f64],
    ) -> Result<Self> {
        let samples = values
            .iter()
            .enumerate()
            .map(|(k, &v)| Sample {
                t: t0 + k as f64 / fs,
                v,
            })
            .collect();
        SignalTrack::new(channel_id, unit, fs, samples)
    }

    pub fn channel_id(&self) -> &str {
        &self.channel_id
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn nominal_rate_hz(&self) -> f64 {
        self.nominal_rate_hz
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.v).collect()
    }

    /// `[first, last]` timestamps, if any samples exist.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    /// Median of the instantaneous rates `1 / Δt`.
    pub fn empirical_rate_hz(&self) -> Option<f64> {
        if self.samples.len() < 2 {
            return None;
        }
        let mut rates: Vec<f64> = self
            .samples
            .windows(2)
            .map(|w| 1.0 / (w[1].t - w[0].t))
            .collect();
        rates.sort_by(f64::total_cmp);
        let n = rates.len();
        Some(if n % 2 == 1 {
            rates[n / 2]
        } else {
            0.5 * (rates[n / 2 - 1] + rates[n / 2])
        })
    }

    /// Samples with `start <= t <= end`.
    pub fn slice_time(&self, start: f64, end: f64) -> SignalTrack {
        let lo = self.samples.partition_point(|s| s.t < start);
        let hi = self.samples.partition_point(|s| s.t <= end);
        SignalTrack {
            channel_id: self.channel_id.clone(),
            unit: self.unit,
            nominal_rate_hz: self.nominal_rate_hz,
            samples: self.samples[lo..hi.max(lo)].to_vec(),
        }
    }
}

/// Linear interpolation of `track` onto the grid `t0 + k / fs`.
pub fn resample_uniform(track: &SignalTrack, fs: f64) -> Result<SignalTrack> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling rate must be positive, got {fs}")));
    }
    let s = track.samples();
    if s.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: resampling needs at least 2 samples, got {}",
            track.channel_id(),
            s.len()
        )));
    }
    let t0 = s[0].t;
    let t_end = s[s.len() - 1].t;
    let mut out = Vec::with_capacity(((t_end - t0) * fs) as usize + 1);
    let mut j = 0;
    let mut k = 0usize;
    loop {
        let t = t0 + k as f64 / fs;
        if t > t_end {
            break;
        }
        while j + 2 < s.len() && s[j + 1].t <= t {
            j += 1;
        }
        let (a, b) = (s[j], s[j + 1]);
        let v = if t == a.t {
            a.v
        } else if t == b.t {
            b.v
        } else {
            a.v + (b.v - a.v) * ((t - a.t) / (b.t - a.t))
        };
        out.push(Sample { t, v });
        k += 1;
    }
    SignalTrack::new(track.channel_id(), track.unit(), fs, out)
}

/// All data for one participant session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecording {
    pub participant_id: String,
    pub tracks: BTreeMap<String, SignalTrack>,
    pub markers: Vec<EventMarker>,
    pub condition_order: Vec<Condition>,
    pub dominant_hand: Hand,
    pub cz_channel: String,
}

/// Time range of one block and its condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpan {
    pub condition: Condition,
    pub start: f64,
    pub end: f64,
}

impl BlockSpan {
    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Tracks and markers restricted to one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockView {
    pub span: BlockSpan,
    pub tracks: BTreeMap<String, SignalTrack>,
    pub markers: Vec<EventMarker>,
}

impl SessionRecording {
    /// Block spans in marker order.
    pub fn blocks(&self) -> Vec<BlockSpan> {
        let mut out = Vec::new();
        let mut open: Option<(Condition, f64)> = None;
        for m in &self.markers {
            match m.kind {
                MarkerKind::BlockStart(c) => open = Some((c, m.t)),
                MarkerKind::BlockEnd => {
                    if let Some((condition, start)) = open.take() {
                        out.push(BlockSpan {
                            condition,
                            start,
                            end: m.t,
                        });
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn block(&self, cond: Condition) -> Result<BlockSpan> {
        self.blocks()
            .into_iter()
            .find(|b| b.condition == cond)
            .ok_or_else(|| {
                Error::NotFound(format!(
                    "participant {}: no {cond} block",
                    self.participant_id
                ))
            })
    }

    pub fn slice_block(&self, cond: Condition) -> Result<BlockView> {
        let span = self.block(cond)?;
        let tracks = self
            .tracks
            .iter()
            .map(|(id, tr)| (id.clone(), tr.slice_time(span.start, span.end)))
            .collect();
        let markers = self
            .markers
            .iter()
            .filter(|m| span.contains(m.t))
            .copied()
            .collect();
        Ok(BlockView {
            span,
            tracks,
            markers,
        })
    }

    /// Manifest describing this recording (offsets already applied, so zero).
    pub fn manifest(&self) -> SessionManifest {
        SessionManifest {
            participant_id: self.participant_id.clone(),
            condition_order: self.condition_order.clone(),
            channels: self
                .tracks
                .iter()
                .map(|(id, tr)| {
                    (
                        id.clone(),
                        ChannelSpec {
                            unit: tr.unit(),
                            nominal_rate_hz: tr.nominal_rate_hz(),
                            offset_s: 0.0,
                        },
                    )
                })
                .collect(),
            eda_clock_offset_s: 0.0,
            dominant_hand: self.dominant_hand,
            cz_channel: self.cz_channel.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub unit: Unit,
    pub nominal_rate_hz: f64,
    /// Constant added to every timestamp of this channel at load.
    #[serde(default)]
    pub offset_s: f64,
}

fn default_cz() -> String {
    "eeg_ch01".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub participant_id: String,
    pub condition_order: Vec<Condition>,
    pub channels: BTreeMap<String, ChannelSpec>,
    /// Added to every `eda_*` channel on top of its own offset.
    #[serde(default)]
    pub eda_clock_offset_s: f64,
    #[serde(default)]
    pub dominant_hand: Hand,
    #[serde(default = "default_cz")]
    pub cz_channel: String,
}

impl SessionManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: SessionManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("manifest: {e}"),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        validate_condition_order(&self.condition_order)?;
        for (id, spec) in &self.channels {
            if !(spec.nominal_rate_hz.is_finite() && spec.nominal_rate_hz > 0.0) {
                return Err(Error::Validation(format!("{id}: nominal rate must be positive")));
            }
            if !spec.offset_s.is_finite() {
                return Err(Error::Validation(format!("{id}: offset must be finite")));
            }
        }
        if !self.eda_clock_offset_s.is_finite() {
            return Err(Error::Validation("EDA clock offset must be finite".into()));
        }
        Ok(())
    }

    fn offset_for(&self, channel: &str) -> f64 {
        let own = self.channels.get(channel).map_or(0.0, |c| c.offset_s);
        if channel.starts_with("eda") {
            own + self.eda_clock_offset_s
        } else {
            own
        }
    }
}

/// Baseline first, then each intervention exactly once.
pub fn validate_condition_order(order: &[Condition]) -> Result<()> {
    if order.len() != 4 {
        return Err(Error::Validation(format!(
            "condition order must list 4 conditions, got {}",
            order.len()
        )));
    }
    if order[0] != Condition::Baseline {
        return Err(Error::Validation("the first condition must be baseline".into()));
    }
    for c in Condition::INTERVENTIONS {
        let n = order.iter().filter(|&&o| o == c).count();
        if n != 1 {
            return Err(Error::Validation(format!(
                "condition {c} appears {n} times in condition order"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestWarning {
    DuplicateTimestamp { channel: String, t: f64 },
    RateMismatch { channel: String, nominal_hz: f64, empirical_hz: f64 },
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestWarning::DuplicateTimestamp { channel, t } => {
                write!(f, "{channel}: duplicate timestamp {t}, keeping the last value")
            }
            IngestWarning::RateMismatch {
                channel,
                nominal_hz,
                empirical_hz,
            } => write!(
                f,
                "{channel}: nominal rate {nominal_hz} Hz differs from empirical {empirical_hz:.3} Hz"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub recording: SessionRecording,
    pub warnings: Vec<IngestWarning>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    t: f64,
    ch: Option<String>,
    v: Option<f64>,
    marker: Option<String>,
    #[serde(default)]
    cond: Option<String>,
}

fn parse_marker(kind: &str, cond: Option<&str>, line: usize) -> Result<MarkerKind> {
    let bad = |message: String| Error::Parse { line, message };
    Ok(match kind {
        "block_start" => {
            let c = cond.ok_or_else(|| bad("block_start marker needs a condition".into()))?;
            MarkerKind::BlockStart(c.parse().map_err(|e: Error| bad(e.to_string()))?)
        }
        "warning" => MarkerKind::WarningStimulus,
        "imperative" => MarkerKind::ImperativeStimulus,
        "key_press" => MarkerKind::KeyPress,
        "block_end" => MarkerKind::BlockEnd,
        other => return Err(bad(format!("unknown marker kind {other:?}"))),
    })
}

/// Parse a record-per-line session and check every recording invariant.
pub fn ingest<R: BufRead>(manifest: &SessionManifest, source: R) -> Result<Ingested> {
    manifest.validate()?;
    let mut samples: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    let mut markers = Vec::new();
    let mut warnings = Vec::new();

    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match (raw.ch, raw.v, raw.marker) {
            (Some(ch), Some(v), None) => {
                if !manifest.channels.contains_key(&ch) {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("channel {ch:?} is not declared in the manifest"),
                    });
                }
                if !v.is_finite() || !raw.t.is_finite() {
                    return Err(Error::Ingest(format!("line {lineno}: non-finite value")));
                }
                let t = raw.t + manifest.offset_for(&ch);
                if t < 0.0 {
                    return Err(Error::Ingest(format!(
                        "line {lineno}: negative timestamp {t} after offset"
                    )));
                }
                let buf = samples.entry(ch.clone()).or_default();
                match buf.last_mut() {
                    Some(last) if last.t == t => {
                        warnings.push(IngestWarning::DuplicateTimestamp { channel: ch, t });
                        last.v = v;
                    }
                    Some(last) if last.t > t => {
                        return Err(Error::Ingest(format!(
                            "line {lineno}: {ch} timestamp {t} precedes {}",
                            last.t
                        )));
                    }
                    _ => buf.push(Sample { t, v }),
                }
            }
            (None, None, Some(kind)) => {
                if !(raw.t.is_finite() && raw.t >= 0.0) {
                    return Err(Error::Ingest(format!(
                        "line {lineno}: invalid marker time {}",
                        raw.t
                    )));
                }
                markers.push(EventMarker {
                    t: raw.t,
                    kind: parse_marker(&kind, raw.cond.as_deref(), lineno)?,
                });
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "expected either {t, ch, v} or {t, marker, cond}".into(),
                })
            }
        }
    }

    if samples.is_empty() && markers.is_empty() {
        return Err(Error::EmptySession);
    }

    let mut tracks = BTreeMap::new();
    for (ch, s) in samples {
        let spec = &manifest.channels[&ch];
        let track = SignalTrack::new(ch.clone(), spec.unit, spec.nominal_rate_hz, s)?;
        if let Some(emp) = track.empirical_rate_hz() {
            if (emp - spec.nominal_rate_hz).abs() > RATE_TOLERANCE * spec.nominal_rate_hz {
                warnings.push(IngestWarning::RateMismatch {
                    channel: ch.clone(),
                    nominal_hz: spec.nominal_rate_hz,
                    empirical_hz: emp,
                });
            }
        }
        tracks.insert(ch, track);
    }
    for w in &warnings {
        warn!("{w}");
    }

    let recording = SessionRecording {
        participant_id: manifest.participant_id.clone(),
        tracks,
        markers,
        condition_order: manifest.condition_order.clone(),
        dominant_hand: manifest.dominant_hand,
        cz_channel: manifest.cz_channel.clone(),
    };
    validate_recording(&recording)?;
    Ok(Ingested {
        recording,
        warnings,
    })
}

/// Marker ordering, block nesting and coverage checks.
pub fn validate_recording(rec: &SessionRecording) -> Result<()> {
    validate_condition_order(&rec.condition_order)?;
    for w in rec.markers.windows(2) {
        if w[1].t < w[0].t {
            return Err(Error::Validation(format!(
                "markers out of order at t = {}",
                w[1].t
            )));
        }
    }
    let spans: Vec<(f64, f64)> = rec.tracks.values().filter_map(SignalTrack::span).collect();
    let mut open: Option<Condition> = None;
    let mut seen: Vec<Condition> = Vec::new();
    let mut last_end: Option<f64> = None;
    for m in &rec.markers {
        if !spans.iter().any(|&(a, b)| a <= m.t && m.t <= b) {
            return Err(Error::Validation(format!(
                "marker {} at t = {} lies outside every track",
                m.kind.token(),
                m.t
            )));
        }
        match m.kind {
            MarkerKind::BlockStart(c) => {
                if let Some(o) = open {
                    return Err(Error::Validation(format!(
                        "block {c} starts at t = {} inside open block {o}",
                        m.t
                    )));
                }
                if seen.contains(&c) {
                    return Err(Error::Validation(format!("block {c} appears twice")));
                }
                if !rec.condition_order.contains(&c) {
                    return Err(Error::Validation(format!(
                        "block {c} is not in the condition order"
                    )));
                }
                if last_end.is_some_and(|e| m.t <= e) {
                    return Err(Error::Validation(format!(
                        "block {c} at t = {} touches the previous block",
                        m.t
                    )));
                }
                seen.push(c);
                open = Some(c);
            }
            MarkerKind::BlockEnd => {
                if open.take().is_none() {
                    return Err(Error::Validation(format!(
                        "block_end at t = {} without an open block",
                        m.t
                    )));
                }
                last_end = Some(m.t);
            }
            _ => {}
        }
    }
    if let Some(o) = open {
        return Err(Error::Validation(format!("block {o} is never closed")));
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleLine<'a> {
    t: f64,
    ch: &'a str,
    v: f64,
}

#[derive(Serialize)]
struct MarkerLine {
    t: f64,
    marker: &'static str,
    cond: Option<&'static str>,
}

struct Head {
    t: f64,
    track: usize,
    idx: usize,
}

impl PartialEq for Head {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Head {}
impl PartialOrd for Head {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Head {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.track.cmp(&self.track))
    }
}

/// Write the recording as time-ordered JSON lines. Markers precede samples
/// sharing the same timestamp.
pub fn write_jsonl<W: Write>(rec: &SessionRecording, mut out: W) -> std::io::Result<()> {
    let tracks: Vec<&SignalTrack> = rec.tracks.values().collect();
    let mut heap = BinaryHeap::new();
    for (i, tr) in tracks.iter().enumerate() {
        if let Some(s) = tr.samples().first() {
            heap.push(Head {
                t: s.t,
                track: i,
                idx: 0,
            });
        }
    }
    let mut markers = rec.markers.iter().peekable();
    let write_marker = |out: &mut W, m: &EventMarker| -> std::io::Result<()> {
        let cond = match m.kind {
            MarkerKind::BlockStart(c) => Some(c.token()),
            _ => None,
        };
        serde_json::to_writer(
            &mut *out,
            &MarkerLine {
                t: m.t,
                marker: m.kind.token(),
                cond,
            },
        )?;
        out.write_all(b"\n")
    };
    while let Some(head) = heap.pop() {
        while let Some(m) = markers.next_if(|m| m.t <= head.t) {
            write_marker(&mut out, m)?;
        }
        let tr = tracks[head.track];
        let s = tr.samples()[head.idx];
        serde_json::to_writer(
            &mut out,
            &SampleLine {
                t: s.t,
                ch: tr.channel_id(),
                v: s.v,
            },
        )?;
        out.write_all(b"\n")?;
        if let Some(next) = tr.samples().get(head.idx + 1) {
            heap.push(Head {
                t: next.t,
                track: head.track,
                idx: head.idx + 1,
            });
        }
    }
    for m in markers {
        write_marker(&mut out, m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> SessionManifest {
        let mut channels = BTreeMap::new();
        channels.insert(
            "breathing".to_string(),
            ChannelSpec {
                unit: Unit::Nu,
                nominal_rate_hz: 17.0,
                offset_s: 0.0,
            },
        );
        channels.insert(
            "eda_left".to_string(),
            ChannelSpec {
                unit: Unit::Microsiemens,
                nominal_rate_hz: 4.0,
                offset_s: 0.0,
            },
        );
        SessionManifest {
            participant_id: "P01".into(),
            condition_order: vec![
                Condition::Baseline,
                Condition::PersonalizedTempo,
                Condition::FixedTempo,
                Condition::PersonalizedEnvelope,
            ],
            channels,
            eda_clock_offset_s: 0.0,
            dominant_hand: Hand::Right,
            cz_channel: default_cz(),
        }
    }

    #[test]
    fn three_breathing_samples_at_17_hz() {
        let text = format!(
            "{{\"t\":0.0,\"ch\":\"breathing\",\"v\":1.0}}\n\
             {{\"t\":{},\"ch\":\"breathing\",\"v\":2.0}}\n\
             {{\"t\":{},\"ch\":\"breathing\",\"v\":3.0}}\n",
            1.0 / 17.0,
            2.0 / 17.0
        );
        let got = ingest(&manifest(), text.as_bytes()).unwrap();
        let tr = &got.recording.tracks["breathing"];
        assert_eq!(tr.len(), 3);
        assert_eq!(tr.nominal_rate_hz(), 17.0);
        assert!(got.warnings.is_empty());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            ingest(&manifest(), "".as_bytes()),
            Err(Error::EmptySession)
        ));
        assert!(matches!(
            ingest(&manifest(), "\n\n".as_bytes()),
            Err(Error::EmptySession)
        ));
    }

    #[test]
    fn duplicate_timestamp_keeps_last() {
        let text = "{\"t\":1.0,\"ch\":\"breathing\",\"v\":1.0}\n{\"t\":1.0,\"ch\":\"breathing\",\"v\":7.5}\n";
        let got = ingest(&manifest(), text.as_bytes()).unwrap();
        let tr = &got.recording.tracks["breathing"];
        assert_eq!(tr.samples(), &[Sample { t: 1.0, v: 7.5 }]);
        assert!(matches!(
            got.warnings[0],
            IngestWarning::DuplicateTimestamp { .. }
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"t\":0.0,\"ch\":\"breathing\",\"v\":1.0}\n{\"t\":oops}\n";
        match ingest(&manifest(), text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_value_is_rejected() {
        let text = "{\"t\":0.0,\"ch\":\"breathing\",\"v\":1e400}\n";
        assert!(ingest(&manifest(), text.as_bytes()).is_err());
    }

    #[test]
    fn marker_outside_tracks_is_rejected() {
        let text = "{\"t\":0.0,\"ch\":\"breathing\",\"v\":1.0}\n{\"t\":1.0,\"ch\":\"breathing\",\"v\":1.0}\n{\"t\":5.0,\"marker\":\"warning\",\"cond\":null}\n";
        assert!(matches!(
            ingest(&manifest(), text.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let text = "{\"t\":1.0,\"ch\":\"breathing\",\"v\":1.0}\n{\"t\":0.5,\"ch\":\"breathing\",\"v\":1.0}\n";
        assert!(matches!(
            ingest(&manifest(), text.as_bytes()),
            Err(Error::Ingest(_))
        ));
    }

    #[test]
    fn eda_offset_applied_at_load() {
        let mut m = manifest();
        m.eda_clock_offset_s = 2.5;
        let text = "{\"t\":1.0,\"ch\":\"eda_left\",\"v\":3.0}\n{\"t\":1.0,\"ch\":\"breathing\",\"v\":3.0}\n";
        let rec = ingest(&m, text.as_bytes()).unwrap().recording;
        assert_eq!(rec.tracks["eda_left"].samples()[0].t, 3.5);
        assert_eq!(rec.tracks["breathing"].samples()[0].t, 1.0);
    }

    #[test]
    fn condition_order_rules() {
        use Condition::*;
        assert!(validate_condition_order(&[Baseline, FixedTempo, PersonalizedTempo, PersonalizedEnvelope]).is_ok());
        assert!(validate_condition_order(&[FixedTempo, Baseline, PersonalizedTempo, PersonalizedEnvelope]).is_err());
        assert!(validate_condition_order(&[Baseline, FixedTempo, FixedTempo, PersonalizedEnvelope]).is_err());
        assert!(validate_condition_order(&[Baseline, FixedTempo, PersonalizedTempo]).is_err());
    }

    fn block_session() -> SessionRecording {
        let fs = 17.0;
        let n = (600.0 * fs) as usize;
        let values: Vec<f64> = (0..n).map(|k| (k as f64 * 0.01).sin()).collect();
        let track = SignalTrack::from_uniform("breathing", Unit::Nu, fs, 0.0, &values).unwrap();
        let mut tracks = BTreeMap::new();
        tracks.insert("breathing".to_string(), track);
        SessionRecording {
            participant_id: "P01".into(),
            tracks,
            markers: vec![
                EventMarker {
                    t: 100.0,
                    kind: MarkerKind::BlockStart(Condition::Baseline),
                },
                EventMarker {
                    t: 520.0,
                    kind: MarkerKind::BlockEnd,
                },
            ],
            condition_order: manifest().condition_order,
            dominant_hand: Hand::Right,
            cz_channel: default_cz(),
        }
    }

    #[test]
    fn slice_block_counts_samples() {
        let rec = block_session();
        validate_recording(&rec).unwrap();
        let view = rec.slice_block(Condition::Baseline).unwrap();
        let tr = &view.tracks["breathing"];
        // grid points k/17 in [100, 520]: k = 1700 ..= 8840
        assert_eq!(tr.len(), 7141);
        assert!(tr.samples().iter().all(|s| (100.0..=520.0).contains(&s.t)));
        assert_eq!(view.markers.len(), 2);
    }

    #[test]
    fn slice_missing_condition_errors() {
        let rec = block_session();
        assert!(matches!(
            rec.slice_block(Condition::PersonalizedTempo),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn slice_of_empty_track() {
        let mut rec = block_session();
        rec.tracks.insert(
            "ecg".into(),
            SignalTrack::new("ecg", Unit::Millivolt, 250.0, vec![]).unwrap(),
        );
        let view = rec.slice_block(Condition::Baseline).unwrap();
        assert!(view.tracks["ecg"].is_empty());
    }

    #[test]
    fn resample_is_exact_for_affine() {
        let ts = [0.0, 0.13, 0.41, 0.5, 1.27, 2.0, 2.93, 3.0];
        let samples = ts.iter().map(|&t| Sample { t, v: 2.0 * t }).collect();
        let tr = SignalTrack::new("x", Unit::Unitless, 3.0, samples).unwrap();
        let out = resample_uniform(&tr, 4.0).unwrap();
        assert_eq!(out.len(), 13);
        for (k, s) in out.samples().iter().enumerate() {
            assert_eq!(s.t, k as f64 / 4.0);
            assert!((s.v - 2.0 * s.t).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_single_sample_errors() {
        let tr = SignalTrack::new("x", Unit::Unitless, 4.0, vec![Sample { t: 0.0, v: 1.0 }]).unwrap();
        assert!(resample_uniform(&tr, 4.0).is_err());
    }

    #[test]
    fn resample_sinusoid_within_interpolation_bound() {
        // Irregular 17 Hz-ish sampling of a 0.3 Hz sinusoid; the oracle is
        // the analytic signal itself. Linear interpolation error is bounded
        // by h^2/8 * max|v''|.
        let f = 0.3;
        let w = 2.0 * std::f64::consts::PI * f;
        let mut t = 0.0;
        let mut samples = Vec::new();
        let mut k = 0u32;
        while t <= 60.0 {
            samples.push(Sample { t, v: (w * t).sin() });
            k += 1;
            t = k as f64 / 17.0 + 0.01 * ((k * 7919) % 13) as f64 / 13.0;
        }
        let tr = SignalTrack::new("x", Unit::Nu, 17.0, samples).unwrap();
        let out = resample_uniform(&tr, 17.0).unwrap();
        let h = 1.0 / 17.0 + 0.01;
        let bound = h * h / 8.0 * w * w;
        for s in out.samples() {
            assert!(((w * s.t).sin() - s.v).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn resample_idempotent_on_uniform() {
        let values: Vec<f64> = (0..500).map(|k| (k as f64 * 0.37).cos()).collect();
        let tr = SignalTrack::from_uniform("x", Unit::Nu, 17.0, 0.0, &values).unwrap();
        let out = resample_uniform(&tr, 17.0).unwrap();
        assert_eq!(out.len(), tr.len());
        for (a, b) in out.samples().iter().zip(tr.samples()) {
            assert!((a.v - b.v).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_mismatch_warns() {
        let mut text = String::new();
        for k in 0..20 {
            text.push_str(&format!("{{\"t\":{},\"ch\":\"breathing\",\"v\":0.5}}\n", k as f64 / 30.0));
        }
        let got = ingest(&manifest(), text.as_bytes()).unwrap();
        assert!(matches!(got.warnings[0], IngestWarning::RateMismatch { .. }));
    }
}
