use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::metrics::AnnotatedBeat;
use crate::postproc::Segment;

/// Label given to a track with no segment lines, and to unknown spans.
pub const FALLBACK_LABEL: &str = "misc";
/// Label of the span before the first annotated start.
pub const LEAD_IN_LABEL: &str = "silence";

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// UTF-8 view of `bytes`, or a parse error at the line of the first bad byte.
pub fn decode_utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        parse_err(line, "invalid UTF-8")
    })
}

/// Non-blank, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn time(line: usize, field: &str) -> Result<f64> {
    let t: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("bad time {field:?}")))?;
    if !t.is_finite() || t < 0.0 {
        return Err(parse_err(line, format!("time {field} must be finite and >= 0")));
    }
    Ok(t)
}

/// Parses `<time>\t<bar position>` lines (any whitespace separates). Times
/// must strictly increase; position 1 marks a downbeat.
pub fn parse_beat_annotation(text: &str) -> Result<Vec<AnnotatedBeat>> {
    let mut out: Vec<AnnotatedBeat> = Vec::new();
    for (n, line) in content_lines(text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [t, pos] = fields[..] else {
            return Err(parse_err(n, format!("expected 2 fields, found {}", fields.len())));
        };
        let t = time(n, t)?;
        let bar_position: u32 = pos
            .parse()
            .ok()
            .filter(|&p| p >= 1)
            .ok_or_else(|| parse_err(n, format!("bar position {pos:?} must be a positive integer")))?;
        if let Some(prev) = out.last() {
            if t <= prev.time {
                return Err(parse_err(n, format!("time {t} does not follow {}", prev.time)));
            }
        }
        out.push(AnnotatedBeat { time: t, bar_position });
    }
    Ok(out)
}

/// Raw-to-merged label map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MergeTable {
    map: HashMap<String, String>,
}

impl MergeTable {
    /// The table shipped in `data/label_merge.txt`.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/label_merge.txt")).expect("shipped table parses")
    }

    /// `<raw> <merged>` lines; `#` comments and blank lines skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (n, line) in content_lines(text) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [from, to] = fields[..] else {
                return Err(parse_err(n, "expected `<raw> <merged>`"));
            };
            map.insert(from.to_lowercase(), to.to_lowercase());
        }
        Ok(Self { map })
    }

    pub fn insert(&mut self, from: &str, to: &str) {
        self.map.insert(from.to_lowercase(), to.to_lowercase());
    }

    /// Lower-cases, strips trailing digits and separators (`verse2` →
    /// `verse`), then maps through the table.
    pub fn apply(&self, raw: &str) -> String {
        let lower = raw.trim().to_lowercase();
        let base = lower.trim_end_matches(|c: char| c.is_ascii_digit() || c == '_' || c == '-' || c == ' ');
        let base = if base.is_empty() { lower.as_str() } else { base };
        for key in [lower.as_str(), base] {
            if let Some(m) = self.map.get(key) {
                return m.clone();
            }
        }
        base.to_string()
    }
}

/// Parses `<start> <label>` lines into spans tiling `[0, duration]`.
///
/// Each span closes at the next start, the last at `duration`. A gap before
/// the first start becomes a `silence` span, and an empty file one `misc`
/// span. Labels may contain spaces and go through `merge`.
pub fn parse_segment_annotation(text: &str, duration: f64, merge: &MergeTable) -> Result<Vec<Segment>> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Input(format!("duration {duration} must be positive")));
    }
    let mut starts: Vec<(f64, String)> = Vec::new();
    for (n, line) in content_lines(text) {
        let (t, label) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| parse_err(n, "expected `<start> <label>`"))?;
        let t = time(n, t)?;
        let label = merge.apply(label);
        if label.is_empty() {
            return Err(parse_err(n, "empty label"));
        }
        if t >= duration {
            return Err(parse_err(n, format!("start {t} is not before the track end {duration}")));
        }
        if let Some((prev, _)) = starts.last() {
            if t <= *prev {
                return Err(parse_err(n, format!("start {t} does not follow {prev}")));
            }
        }
        starts.push((t, label));
    }
    if starts.is_empty() {
        starts.push((0.0, FALLBACK_LABEL.into()));
    } else if starts[0].0 > 0.0 {
        starts.insert(0, (0.0, LEAD_IN_LABEL.into()));
    }
    let ends: Vec<f64> = starts.iter().skip(1).map(|s| s.0).chain([duration]).collect();
    Ok(starts
        .into_iter()
        .zip(ends)
        .map(|((start, label), end)| Segment { start, end, label })
        .collect())
}

/// Beat annotation text that [`parse_beat_annotation`] reads back, times at
/// microsecond resolution.
pub fn format_beat_annotation(beats: &[AnnotatedBeat]) -> String {
    beats.iter().map(|b| format!("{:.6}\t{}\n", b.time, b.bar_position)).collect()
}

/// Segment annotation text: one `<start> <label>` line per span.
pub fn format_segment_annotation(segments: &[Segment]) -> String {
    segments.iter().map(|s| format!("{:.6} {}\n", s.start, s.label)).collect()
}
