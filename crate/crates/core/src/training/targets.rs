use super::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::Annotation;

/// Per-frame training targets of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTargets {
    pub beat: Vec<f64>,
    pub downbeat: Vec<f64>,
    pub boundary: Vec<f64>,
    /// Index into the label vocabulary.
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl TrainingTargets {
    pub fn frames(&self) -> usize {
        self.mask.len()
    }

    /// Frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let r = start..start + len;
        Self {
            beat: self.beat[r.clone()].to_vec(),
            downbeat: self.downbeat[r.clone()].to_vec(),
            boundary: self.boundary[r.clone()].to_vec(),
            labels: self.labels[r.clone()].to_vec(),
            mask: self.mask[r].to_vec(),
        }
    }
}

/// Longest difference between annotation and spectrogram length accepted.
pub const DURATION_SLACK_SECONDS: f64 = 1.0;

fn event_frame(t: f64, fps: f64, frames: usize, what: &str) -> Result<usize> {
    let end = frames as f64 / fps;
    if !(0.0..=end).contains(&t) {
        return Err(Error::Input(format!("{what} at {t} s outside [0, {end}]")));
    }
    Ok(((t * fps).round() as usize).min(frames - 1))
}

fn raise(v: &mut [f64], i: usize, w: f64) {
    v[i] = v[i].max(w);
}

/// Encodes `ann` on a `frames`-long grid. Events land on their nearest frame
/// with weight 1; beat and downbeat neighbors within `beat_widen_frames` get
/// `beat_widen_weight`, boundary neighbors a linear ramp reaching zero just
/// past `boundary_widen_seconds`. Frames past the annotated duration are
/// masked out.
pub fn build_targets(
    ann: &Annotation,
    fps: f64,
    frames: usize,
    cfg: &TrainConfig,
    vocab: &[String],
) -> Result<TrainingTargets> {
    if frames == 0 || !(fps > 0.0) {
        return Err(Error::Input(format!("cannot build targets for {frames} frames at {fps} fps")));
    }
    let span = frames as f64 / fps;
    if (ann.duration - span).abs() > DURATION_SLACK_SECONDS {
        return Err(Error::Input(format!(
            "annotation lasts {} s, spectrogram {span} s",
            ann.duration
        )));
    }
    ann.validate()?;
    let mut beat = vec![0.0; frames];
    let mut downbeat = vec![0.0; frames];
    let mut boundary = vec![0.0; frames];
    let wf = cfg.beat_widen_frames;
    let spread = |v: &mut [f64], f: usize| {
        for g in f.saturating_sub(wf)..(f + wf + 1).min(frames) {
            raise(v, g, cfg.beat_widen_weight);
        }
        raise(v, f, 1.0);
    };
    for b in &ann.beats {
        let f = event_frame(b.time, fps, frames, "beat")?;
        spread(&mut beat, f);
        if b.bar_position == 1 {
            spread(&mut downbeat, f);
        }
    }
    let reach = (cfg.boundary_widen_seconds * fps).round() as usize;
    for t in ann.boundary_times() {
        let f = event_frame(t, fps, frames, "boundary")?;
        for g in f.saturating_sub(reach)..(f + reach + 1).min(frames) {
            let d = g.abs_diff(f) as f64;
            raise(&mut boundary, g, 1.0 - d / (reach as f64 + 1.0));
        }
    }
    let mut labels = vec![0; frames];
    let mut mask = vec![false; frames];
    let mut seg = 0;
    for f in 0..frames {
        let t = f as f64 / fps;
        if t >= ann.duration {
            break;
        }
        while ann.segments[seg].end <= t {
            seg += 1;
        }
        let name = &ann.segments[seg].label;
        labels[f] = vocab
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::Input(format!("label {name:?} is not in the vocabulary")))?;
        mask[f] = true;
    }
    Ok(TrainingTargets {
        beat,
        downbeat,
        boundary,
        labels,
        mask,
    })
}
