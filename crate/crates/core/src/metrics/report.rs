use std::collections::BTreeMap;

use super::events::{continuity, event_f1};
use super::structure::{boundary_hit_rate, entropy_scores, pairwise_f};
use crate::error::{Error, Result};
use crate::postproc::{check_segments, AnalysisResult, Segment};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnotatedBeat {
    pub time: f64,
    /// 1 marks a downbeat.
    pub bar_position: u32,
}

/// Ground truth for one track.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub beats: Vec<AnnotatedBeat>,
    pub segments: Vec<Segment>,
    pub duration: f64,
}

impl Annotation {
    pub fn validate(&self) -> Result<()> {
        if self.beats.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::Input("annotated beats not strictly ascending".into()));
        }
        if self.beats.iter().any(|b| b.bar_position == 0) {
            return Err(Error::Input("bar positions start at 1".into()));
        }
        check_segments(&self.segments, self.duration)
    }

    pub fn beat_times(&self) -> Vec<f64> {
        self.beats.iter().map(|b| b.time).collect()
    }

    pub fn downbeat_times(&self) -> Vec<f64> {
        self.beats.iter().filter(|b| b.bar_position == 1).map(|b| b.time).collect()
    }

    /// Segment starts after the first.
    pub fn boundary_times(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Task {
    Beat,
    Downbeat,
    Segment,
    Label,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Beat, Task::Downbeat, Task::Segment, Task::Label];

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "beat" => Ok(Task::Beat),
            "downbeat" => Ok(Task::Downbeat),
            "segment" => Ok(Task::Segment),
            "label" => Ok(Task::Label),
            other => Err(Error::Input(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub beat_tolerance: f64,
    pub boundary_window: f64,
    pub boundary_endpoints: bool,
    pub frame: f64,
    pub tasks: Vec<Task>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            beat_tolerance: 0.07,
            boundary_window: 0.5,
            boundary_endpoints: true,
            frame: 0.1,
            tasks: Task::ALL.to_vec(),
        }
    }
}

/// Named scores of one track (or a corpus mean), keyed like
/// `beat_f1`, `segment_hr5f`, `label_pwf`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub scores: BTreeMap<String, f64>,
}

/// Table columns, in display order.
pub const TABLE_COLUMNS: [(&str, &str); 9] = [
    ("beat_f1", "Beat F1"),
    ("beat_cmlt", "CMLt"),
    ("beat_amlt", "AMLt"),
    ("downbeat_f1", "Downbeat F1"),
    ("downbeat_cmlt", "CMLt"),
    ("downbeat_amlt", "AMLt"),
    ("segment_hr5f", "HR.5F"),
    ("label_pwf", "PWF"),
    ("label_sf", "Sf"),
];

impl MetricsReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.scores.get(key).copied()
    }

    fn put(&mut self, key: &str, v: f64) {
        self.scores.insert(key.to_string(), v);
    }

    /// Flat JSON object, keys sorted, newline-terminated.
    pub fn to_json(&self) -> String {
        let body: Vec<String> = self
            .scores
            .iter()
            .map(|(k, v)| format!("{}:{}", serde_json::Value::from(k.as_str()), fmt_score(*v)))
            .collect();
        format!("{{{}}}\n", body.join(","))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, f64> =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("metrics report: {e}")))?;
        Ok(Self { scores: map })
    }
}

fn fmt_score(v: f64) -> String {
    format!("{v:.6}")
}

/// Applies every requested metric to one track.
pub fn evaluate_track(result: &AnalysisResult, reference: &Annotation, opts: &EvalOptions) -> Result<MetricsReport> {
    if (result.duration - reference.duration).abs() > 1.0 {
        return Err(Error::Input(format!(
            "durations differ: estimate {:.3} s, reference {:.3} s",
            result.duration, reference.duration
        )));
    }
    let mut rep = MetricsReport::default();
    for task in &opts.tasks {
        match task {
            Task::Beat | Task::Downbeat => {
                let (est, refs, key) = if *task == Task::Beat {
                    (&result.beats, reference.beat_times(), "beat")
                } else {
                    (&result.downbeats, reference.downbeat_times(), "downbeat")
                };
                let f = event_f1(est, &refs, opts.beat_tolerance)?;
                let (cml, aml) = continuity(est, &refs)?;
                rep.put(&format!("{key}_f1"), f.f);
                rep.put(&format!("{key}_precision"), f.precision);
                rep.put(&format!("{key}_recall"), f.recall);
                rep.put(&format!("{key}_cmlt"), cml);
                rep.put(&format!("{key}_amlt"), aml);
            }
            Task::Segment => {
                let hr = boundary_hit_rate(
                    &result.segments,
                    &reference.segments,
                    opts.boundary_window,
                    opts.boundary_endpoints,
                )?;
                rep.put("segment_hr5f", hr.f);
                rep.put("segment_precision", hr.precision);
                rep.put("segment_recall", hr.recall);
            }
            Task::Label => {
                let pw = pairwise_f(&result.segments, &reference.segments, opts.frame)?;
                let s = entropy_scores(&result.segments, &reference.segments, opts.frame)?;
                rep.put("label_pwf", pw.f);
                rep.put("label_pw_precision", pw.precision);
                rep.put("label_pw_recall", pw.recall);
                rep.put("label_sf", s.sf);
                rep.put("label_s_over", s.over);
                rep.put("label_s_under", s.under);
            }
        }
    }
    Ok(rep)
}

/// Unweighted mean of each score over the reports that carry it.
pub fn aggregate(reports: &[MetricsReport]) -> MetricsReport {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in reports {
        for (k, v) in &r.scores {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    MetricsReport {
        scores: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
    }
}

/// Plain-text table of the headline scores, one row per named report.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<name_w$}", "track");
    for (_, title) in TABLE_COLUMNS {
        out += &format!("  {title:>11}");
    }
    out.push('\n');
    for (name, rep) in rows {
        out += &format!("{name:<name_w$}");
        for (key, _) in TABLE_COLUMNS {
            match rep.get(key) {
                Some(v) => out += &format!("  {v:>11.3}"),
                None => out += &format!("  {:>11}", "-"),
            }
        }
        out.push('\n');
    }
    out
}
