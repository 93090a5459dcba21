use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::FrameActivations;
use crate::postproc::{AnalysisResult, Segment};
use crate::scalar::Scalar;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDoc {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

/// Per-frame model outputs kept for debugging.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationsDoc {
    pub beat: Vec<f64>,
    pub downbeat: Vec<f64>,
    pub boundary: Vec<f64>,
    /// One probability row per frame.
    pub labels: Vec<Vec<f64>>,
}

/// Serialized analysis of one track.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub track_id: String,
    pub fps: f64,
    pub duration: f64,
    pub beats: Vec<f64>,
    pub downbeats: Vec<f64>,
    pub segments: Vec<SegmentDoc>,
    #[serde(default)]
    pub activations: Option<ActivationsDoc>,
}

impl ResultDocument {
    pub fn new<T: Scalar>(
        result: &AnalysisResult,
        track_id: &str,
        fps: f64,
        activations: Option<&FrameActivations<T>>,
    ) -> Result<Self> {
        result.validate()?;
        let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        let activations = activations.map(|a| {
            let v = a.labels.last_dim().max(1);
            ActivationsDoc {
                beat: f(&a.beat),
                downbeat: f(&a.downbeat),
                boundary: f(&a.boundary),
                labels: a.labels.data().chunks(v).map(f).collect(),
            }
        });
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            track_id: track_id.to_string(),
            fps,
            duration: result.duration,
            beats: result.beats.clone(),
            downbeats: result.downbeats.clone(),
            segments: result
                .segments
                .iter()
                .map(|s| SegmentDoc {
                    start: s.start,
                    end: s.end,
                    label: s.label.clone(),
                })
                .collect(),
            activations,
        })
    }

    /// The analysis this document describes, checked for consistency.
    pub fn to_result(&self) -> Result<AnalysisResult> {
        let segments: Vec<Segment> = self
            .segments
            .iter()
            .map(|s| Segment {
                start: s.start,
                end: s.end,
                label: s.label.clone(),
            })
            .collect();
        let r = AnalysisResult {
            beats: self.beats.clone(),
            downbeats: self.downbeats.clone(),
            boundary_times: segments.iter().skip(1).map(|s| s.start).collect(),
            segments,
            duration: self.duration,
        };
        r.validate()?;
        Ok(r)
    }

    /// Canonical JSON: keys sorted, times with exactly three decimals,
    /// activations with six, two-space indentation, trailing newline.
    pub fn to_json(&self) -> String {
        let times = |v: &[f64]| list(v.iter().map(|&t| fixed(t, 3)));
        let probs = |v: &[f64]| list(v.iter().map(|&t| fixed(t, 6)));
        let mut fields: Vec<(&str, String)> = vec![
            ("beats", times(&self.beats)),
            ("downbeats", times(&self.downbeats)),
            ("duration", fixed(self.duration, 3)),
            ("fps", self.fps.to_string()),
            ("schema_version", self.schema_version.to_string()),
            ("segments", {
                let items: Vec<String> = self
                    .segments
                    .iter()
                    .map(|s| {
                        format!(
                            "{{\"end\": {}, \"label\": {}, \"start\": {}}}",
                            fixed(s.end, 3),
                            quote(&s.label),
                            fixed(s.start, 3)
                        )
                    })
                    .collect();
                block(&items, "    ")
            }),
            ("track_id", quote(&self.track_id)),
        ];
        if let Some(a) = &self.activations {
            let rows: Vec<String> = a.labels.iter().map(|r| probs(r)).collect();
            let inner = [
                ("beat", probs(&a.beat)),
                ("boundary", probs(&a.boundary)),
                ("downbeat", probs(&a.downbeat)),
                ("labels", block(&rows, "      ")),
            ];
            let body: Vec<String> = inner.iter().map(|(k, v)| format!("    {}: {v}", quote(k))).collect();
            fields.push(("activations", format!("{{\n{}\n  }}", body.join(",\n"))));
        }
        fields.sort_by(|a, b| a.0.cmp(b.0));
        let body: Vec<String> = fields.iter().map(|(k, v)| format!("  {}: {v}", quote(k))).collect();
        format!("{{\n{}\n}}\n", body.join(",\n"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported schema version {}", doc.schema_version)));
        }
        Ok(doc)
    }
}

fn fixed(v: f64, decimals: usize) -> String {
    // avoid "-0.000"
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn list(items: impl Iterator<Item = String>) -> String {
    format!("[{}]", items.collect::<Vec<_>>().join(", "))
}

fn block(items: &[String], indent: &str) -> String {
    if items.is_empty() {
        return "[]".into();
    }
    let outer = &indent[2..];
    let body: Vec<String> = items.iter().map(|i| format!("{indent}{i}")).collect();
    format!("[\n{}\n{outer}]", body.join(",\n"))
}

/// Canonical JSON of `result`.
pub fn serialize_result<T: Scalar>(
    result: &AnalysisResult,
    track_id: &str,
    fps: f64,
    activations: Option<&FrameActivations<T>>,
) -> Result<String> {
    Ok(ResultDocument::new(result, track_id, fps, activations)?.to_json())
}
