//! From frame activations to beats, downbeats and labeled segments.

mod boundaries;
mod dbn;
mod segments;

pub use boundaries::{pick_boundaries, EDGE_SECONDS, NORM_WINDOW_SECONDS, PEAK_RADIUS_SECONDS};
pub use dbn::{dbn_decode, BeatGrid, DbnConfig};
pub use segments::{check_segments, label_segments, Segment};

use crate::error::{Error, Result};
use crate::model::FrameActivations;
use crate::scalar::Scalar;

/// Decoded events of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisResult {
    pub beats: Vec<f64>,
    /// Subset of `beats`.
    pub downbeats: Vec<f64>,
    pub segments: Vec<Segment>,
    /// Internal boundaries; the segment starts after the first.
    pub boundary_times: Vec<f64>,
    pub duration: f64,
}

impl AnalysisResult {
    pub fn validate(&self) -> Result<()> {
        if self.beats.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("beats not strictly ascending".into()));
        }
        for d in &self.downbeats {
            let i = self.beats.partition_point(|b| b < &(d - 1e-3));
            if self.beats.get(i).is_none_or(|b| (b - d).abs() > 1e-3) {
                return Err(Error::Input(format!("downbeat {d} is not a beat")));
            }
        }
        check_segments(&self.segments, self.duration)
    }
}

/// Full post-processing chain. Tracks shorter than one second get no beats.
pub fn analyze_activations<T: Scalar>(
    acts: &FrameActivations<T>,
    vocab: &[String],
    dbn: &DbnConfig,
) -> Result<AnalysisResult> {
    let f = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.to_f64_lossy().clamp(0.0, 1.0)).collect() };
    let (beat, downbeat, boundary) = (f(&acts.beat), f(&acts.downbeat), f(&acts.boundary));
    let frames = beat.len();
    if frames == 0 {
        return Err(Error::Input("no frames".into()));
    }
    let duration = frames as f64 / acts.fps;
    let grid = if frames as f64 >= acts.fps {
        dbn_decode(&beat, &downbeat, acts.fps, dbn)?
    } else {
        BeatGrid {
            beats: Vec::new(),
            downbeats: Vec::new(),
            beats_per_bar: 0,
            log_likelihood: 0.0,
        }
    };
    let boundary_times = pick_boundaries(&boundary, acts.fps)?;
    let labels = f(acts.labels.data());
    let segments = label_segments(&labels, acts.fps, &boundary_times, duration, vocab)?;
    Ok(AnalysisResult {
        beats: grid.beats,
        downbeats: grid.downbeats,
        segments,
        boundary_times,
        duration,
    })
}
