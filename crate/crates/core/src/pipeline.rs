//! Session-to-metrics analysis, the metrics CSV format, and the statistics
//! report built from it.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::breath::{self, BreathConfig};
use crate::error::{Error, Result};
use crate::physio::{self, EegConfig};
use crate::stats::{self, AnovaResult, BoxStats, PairwiseResult, TVariant};
use crate::streams::{Condition, Hand, MarkerKind, SessionRecording, SignalTrack};

pub const METRICS_HEADER: &str = "participant,condition,metric,value";
pub const NA: &str = "NA";

/// Metric names in output order.
pub const METRICS: [&str; 16] = [
    "mean_z_iri",
    "var_z_iri",
    "eda_slope_left",
    "eda_slope_right",
    "mean_z_ibi",
    "sdnn_ms",
    "rmssd_ms",
    "pnn50_fraction",
    "lf_power",
    "hf_power",
    "lf_hf_ratio",
    "sd1_ms",
    "sd2_ms",
    "cnv_early",
    "cnv_mid",
    "cnv_late",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub breath: BreathConfig,
    pub eeg: EegConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub participant: String,
    pub condition: Condition,
    pub metric: String,
    /// `None` when the metric is undefined for this block.
    pub value: Option<f64>,
}

type BlockValues = BTreeMap<Condition, BTreeMap<&'static str, Option<f64>>>;

fn note<T>(what: &str, pid: &str, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("{pid}: {what} unavailable: {e}");
            None
        }
    }
}

/// Every metric for every condition of one session.
pub fn analyze_session(rec: &SessionRecording, cfg: &AnalysisConfig) -> Result<Vec<MetricRow>> {
    let pid = rec.participant_id.as_str();
    let mut spans = BTreeMap::new();
    for c in Condition::ALL {
        spans.insert(c, rec.block(c)?);
    }
    let mut values: BlockValues = Condition::ALL
        .iter()
        .map(|&c| (c, METRICS.iter().map(|&m| (m, None)).collect()))
        .collect();
    let mut set = |c: Condition, m: &'static str, v: Option<f64>| {
        values.get_mut(&c).expect("all conditions present").insert(m, v);
    };

    // respiration
    let raw = rec
        .tracks
        .get("breathing")
        .ok_or_else(|| Error::NotFound(format!("participant {pid}: no breathing channel")))?;
    let filtered = breath::preprocess(raw, &cfg.breath)?;
    let peaks = breath::detect_breath_peaks(&filtered, cfg.breath.min_prominence);
    let iri = breath::compute_iri(&peaks)?;
    let z = breath::session_z_iri(&iri.intervals_ms)?;
    let block_list: Vec<_> = spans.values().copied().collect();
    for m in breath::block_breath_metrics(&z, &iri.interval_end_times, &block_list) {
        set(m.condition, "mean_z_iri", m.mean_z_iri);
        set(m.condition, "var_z_iri", m.var_z_iri);
    }

    // skin conductance, both hands
    for (id, metric, side) in [("eda_left", "eda_slope_left", Hand::Left), ("eda_right", "eda_slope_right", Hand::Right)] {
        let Some(track) = rec.tracks.get(id) else { continue };
        let Some(z) = note(id, pid, physio::eda_preprocess(track)) else { continue };
        for (c, span) in &spans {
            let v = note(id, pid, physio::eda_block_metric(&z, span, side)).map(|m| m.slope_metric);
            set(*c, metric, v);
        }
    }

    // heart
    if let Some(ecg) = rec.tracks.get("ecg") {
        if let Some(beats) = note("ECG", pid, physio::pan_tompkins(ecg)) {
            for (c, span) in &spans {
                set(*c, "mean_z_ibi", beats.mean_z_ibi(span));
                let (ibis, _) = beats.ibis_within(span);
                match physio::hrv_features(&ibis) {
                    Ok(h) => {
                        for (name, v) in h.named() {
                            set(*c, name, Some(v));
                        }
                    }
                    Err(Error::BlockExcluded(why)) => warn!("{pid} {c}: HRV block excluded: {why}"),
                    Err(e) => warn!("{pid} {c}: HRV unavailable: {e}"),
                }
            }
        }
    }

    // cortex
    let eeg: Vec<&SignalTrack> = rec
        .tracks
        .iter()
        .filter(|(id, _)| id.starts_with("eeg_"))
        .map(|(_, t)| t)
        .collect();
    if !eeg.is_empty() {
        if let Some(clean) = note("EEG", pid, physio::eeg_preprocess(&eeg, &cfg.eeg)) {
            match clean.channel(&rec.cz_channel) {
                None => warn!("{pid}: {} rejected or missing; CNV unavailable", rec.cz_channel),
                Some(cz) => {
                    for (c, span) in &spans {
                        let markers: Vec<_> = rec
                            .markers
                            .iter()
                            .filter(|m| m.kind == MarkerKind::WarningStimulus && span.contains(m.t))
                            .copied()
                            .collect();
                        let epochs = physio::epoch_and_reject(cz, clean.fs, clean.t0, &markers, &cfg.eeg);
                        if let Some(cnv) = note("CNV", pid, physio::cnv_mean_amplitudes(&epochs)) {
                            set(*c, "cnv_early", Some(cnv.early_uv));
                            set(*c, "cnv_mid", Some(cnv.mid_uv));
                            set(*c, "cnv_late", Some(cnv.late_uv));
                        }
                    }
                }
            }
        }
    }

    Ok(values
        .into_iter()
        .flat_map(|(c, per)| {
            METRICS.iter().map(move |&m| MetricRow {
                participant: pid.to_string(),
                condition: c,
                metric: m.to_string(),
                value: per[m],
            })
        })
        .collect())
}

// ---------------------------------------------------------------------------
// metrics CSV

/// C-style `%.9g`.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return NA.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..9).contains(&exp) {
        trim(&format!("{:.*}", (8 - exp) as usize, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        let v = r.value.map_or_else(|| NA.to_string(), format_sig9);
        writeln!(out, "{},{},{},{}", r.participant, r.condition.token(), r.metric, v)?;
    }
    Ok(())
}

pub fn read_metrics_csv<R: BufRead>(input: R) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Parse { line: line_no, message };
        if i == 0 {
            if line.trim_end() != METRICS_HEADER {
                return Err(bad(format!("expected header {METRICS_HEADER:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        let [participant, cond, metric, value] = fields[..] else {
            return Err(bad(format!("expected 4 fields, got {}", fields.len())));
        };
        let condition: Condition = cond.parse().map_err(|e: Error| bad(e.to_string()))?;
        let value = if value == NA {
            None
        } else {
            Some(value.parse::<f64>().map_err(|e| bad(format!("value {value:?}: {e}")))?)
        };
        rows.push(MetricRow {
            participant: participant.to_string(),
            condition,
            metric: metric.to_string(),
            value,
        });
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("metrics file has no rows".into()));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// statistics report

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsOptions {
    /// Drop |z| > 3 values per condition before testing.
    pub drop_outliers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledAnova {
    #[serde(flatten)]
    pub result: AnovaResult,
    pub significance: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledPairwise {
    #[serde(flatten)]
    pub result: PairwiseResult,
    pub significance: &'static str,
}

/// Baseline against one intervention, by every available test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub a: Condition,
    pub b: Condition,
    pub tests: Vec<LabeledPairwise>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub n: BTreeMap<Condition, usize>,
    pub removed_outliers: BTreeMap<Condition, Vec<f64>>,
    pub box_stats: BTreeMap<Condition, BoxStats>,
    pub anova: Option<LabeledAnova>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anova_error: Option<String>,
    pub pairwise: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub options: StatsOptions,
    pub legend: BTreeMap<&'static str, &'static str>,
    pub metrics: Vec<MetricReport>,
}

fn legend() -> BTreeMap<&'static str, &'static str> {
    [
        ("****", "p <= 1e-4"),
        ("***", "1e-4 < p <= .001"),
        ("**", ".001 < p <= .01"),
        ("*", ".01 < p <= .05"),
        ("ns", ".05 < p <= .1"),
    ]
    .into_iter()
    .collect()
}

pub fn build_report(rows: &[MetricRow], opts: StatsOptions) -> StatsReport {
    // metric -> condition -> values, in first-seen metric order
    let mut order: Vec<&str> = Vec::new();
    let mut data: BTreeMap<&str, BTreeMap<Condition, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        if !data.contains_key(r.metric.as_str()) {
            order.push(&r.metric);
        }
        let per = data.entry(&r.metric).or_default();
        let slot = per.entry(r.condition).or_default();
        if let Some(v) = r.value.filter(|v| v.is_finite()) {
            slot.push(v);
        }
    }

    let metrics = order
        .into_iter()
        .map(|metric| {
            let mut groups = data.remove(metric).unwrap_or_default();
            let mut removed_outliers = BTreeMap::new();
            if opts.drop_outliers {
                for (c, vals) in groups.iter_mut() {
                    let (kept, removed) = stats::z_outlier_filter(vals);
                    if !removed.is_empty() {
                        removed_outliers.insert(*c, removed);
                    }
                    *vals = kept;
                }
            }
            let n = groups.iter().map(|(c, v)| (*c, v.len())).collect();
            let box_stats = groups
                .iter()
                .filter_map(|(c, v)| stats::box_stats(v).ok().map(|b| (*c, b)))
                .collect();
            let present: Vec<&[f64]> = Condition::ALL
                .iter()
                .filter_map(|c| groups.get(c).map(Vec::as_slice))
                .collect();
            let (anova, anova_error) = match stats::one_way_anova(&present) {
                Ok(result) => (
                    Some(LabeledAnova {
                        result,
                        significance: stats::significance_label(result.p_value),
                    }),
                    None,
                ),
                Err(e) => (None, Some(e.to_string())),
            };
            let empty = Vec::new();
            let base = groups.get(&Condition::Baseline).unwrap_or(&empty);
            let pairwise = Condition::INTERVENTIONS
                .iter()
                .map(|&c| {
                    let other = groups.get(&c).unwrap_or(&empty);
                    let mut tests = Vec::new();
                    let mut errors = Vec::new();
                    let attempts = [
                        stats::independent_t(base, other, TVariant::Student),
                        stats::independent_t(base, other, TVariant::Welch),
                        stats::mann_whitney_u(base, other),
                    ];
                    for r in attempts {
                        match r {
                            Ok(result) => tests.push(LabeledPairwise {
                                result,
                                significance: stats::significance_label(result.p_value),
                            }),
                            Err(e) => errors.push(e.to_string()),
                        }
                    }
                    Comparison {
                        a: Condition::Baseline,
                        b: c,
                        tests,
                        errors,
                    }
                })
                .collect();
            MetricReport {
                metric: metric.to_string(),
                n,
                removed_outliers,
                box_stats,
                anova,
                anova_error,
                pairwise,
            }
        })
        .collect();
    StatsReport {
        options: opts,
        legend: legend(),
        metrics,
    }
}

impl StatsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn metric(&self, name: &str) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}
