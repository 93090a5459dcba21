use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

/// Checks that `segments` tile `[0, duration]` in order.
pub fn check_segments(segments: &[Segment], duration: f64) -> Result<()> {
    let Some(first) = segments.first() else {
        return Err(Error::Input("no segments".into()));
    };
    if first.start.abs() > 1e-9 {
        return Err(Error::Input(format!("first segment starts at {}", first.start)));
    }
    for w in segments.windows(2) {
        if (w[0].end - w[1].start).abs() > 1e-9 {
            return Err(Error::Input(format!("gap or overlap at {}", w[0].end)));
        }
    }
    for s in segments {
        if s.end <= s.start {
            return Err(Error::Input(format!("empty segment at {}", s.start)));
        }
    }
    let last = segments.last().map_or(0.0, |s| s.end);
    if (last - duration).abs() > 1e-9 {
        return Err(Error::Input(format!("segments end at {last}, track at {duration}")));
    }
    Ok(())
}

/// Splits `[0, duration]` at `boundaries` and labels each span with the
/// argmax of its mean frame distribution (lower index on ties).
///
/// `labels` is row-major `[frames, vocab.len()]`. Spans shorter than a frame
/// use the frame their start falls in.
pub fn label_segments(
    labels: &[f64],
    fps: f64,
    boundaries: &[f64],
    duration: f64,
    vocab: &[String],
) -> Result<Vec<Segment>> {
    let v = vocab.len();
    if v == 0 || !labels.len().is_multiple_of(v) {
        return Err(Error::dim("label_segments", format!("{} values for vocab {v}", labels.len())));
    }
    if !(duration > 0.0) {
        return Err(Error::Input(format!("duration {duration} must be positive")));
    }
    let frames = labels.len() / v;
    let mut edges = vec![0.0];
    for &b in boundaries {
        if !(b > *edges.last().unwrap() && b < duration) {
            return Err(Error::Input(format!(
                "boundary {b} not strictly increasing inside (0, {duration})"
            )));
        }
        edges.push(b);
    }
    edges.push(duration);
    let mut out = Vec::with_capacity(edges.len() - 1);
    for w in edges.windows(2) {
        let label = if frames == 0 {
            0
        } else {
            let last = frames - 1;
            let mut lo = ((w[0] * fps).ceil() as usize).min(last);
            let mut hi = ((w[1] * fps).ceil() as usize).min(frames);
            if hi <= lo {
                lo = ((w[0] * fps).floor() as usize).min(last);
                hi = lo + 1;
            }
            let mut mean = vec![0.0; v];
            for row in labels[lo * v..hi * v].chunks(v) {
                mean.iter_mut().zip(row).for_each(|(m, p)| *m += p);
            }
            let mut best = 0;
            for (i, &m) in mean.iter().enumerate() {
                if m > mean[best] {
                    best = i;
                }
            }
            best
        };
        out.push(Segment {
            start: w[0],
            end: w[1],
            label: vocab[label].clone(),
        });
    }
    Ok(out)
}
