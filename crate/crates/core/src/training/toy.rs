//! Synthetic stem spectrograms with planted beats, bars and sections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::{StemSpectrogram, STEM_NAMES};
use crate::metrics::{AnnotatedBeat, Annotation};
use crate::model::ModelConfig;
use crate::numerics::Tensor;
use crate::postproc::Segment;
use crate::scalar::Scalar;

/// Shortest toy track.
pub const MIN_TOY_SECONDS: f64 = 10.0;
/// Sections are at least this long when the track allows it.
pub const MIN_SECTION_SECONDS: f64 = 7.0;

/// Everything a toy track is rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyPlan {
    pub frames: usize,
    pub fps: f64,
    pub bpm: f64,
    pub beats_per_bar: u32,
    /// Time of the first beat.
    pub offset: f64,
    /// Bar position of the first beat, 1-based.
    pub first_position: u32,
    /// `(start frame, label index)`; the first starts at 0.
    pub sections: Vec<(usize, usize)>,
}

impl ToyPlan {
    /// Draws a plan: 90 to 150 BPM, 3 or 4 beats per bar, a random pickup,
    /// and 2 to 4 sections whose consecutive labels differ.
    pub fn sample<R: Rng>(rng: &mut R, duration: f64, fps: f64, vocab: usize) -> Result<Self> {
        if !(duration >= MIN_TOY_SECONDS) {
            return Err(Error::Input(format!("toy tracks need >= {MIN_TOY_SECONDS} s, got {duration}")));
        }
        if vocab < 2 {
            return Err(Error::Config("toy tracks need at least two labels".into()));
        }
        let frames = (duration * fps).round() as usize;
        let duration = frames as f64 / fps;
        let min_len = MIN_SECTION_SECONDS.min(duration / 2.0);
        let most = ((duration / min_len).floor() as usize).clamp(2, 4);
        let n = rng.gen_range(2..=most);
        let shares: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = shares.iter().sum();
        let spare = duration - n as f64 * min_len;
        let mut sections = Vec::with_capacity(n);
        let mut start = 0.0;
        let mut prev = usize::MAX;
        for share in &shares {
            let mut label = rng.gen_range(0..vocab);
            while label == prev {
                label = rng.gen_range(0..vocab);
            }
            sections.push(((start * fps).round() as usize, label));
            prev = label;
            start += min_len + spare * share / total;
        }
        let beats_per_bar = rng.gen_range(3..=4);
        Ok(Self {
            frames,
            fps,
            bpm: rng.gen_range(90.0..150.0),
            beats_per_bar,
            offset: rng.gen_range(0.1..0.6),
            first_position: rng.gen_range(1..=beats_per_bar),
            sections,
        })
    }

    pub fn duration(&self) -> f64 {
        self.frames as f64 / self.fps
    }

    pub fn beat_times(&self) -> Vec<f64> {
        let ibi = 60.0 / self.bpm;
        (0..)
            .map(|k| self.offset + k as f64 * ibi)
            .take_while(|&t| t < self.duration())
            .collect()
    }

    /// Bar position of beat `k`.
    pub fn position(&self, k: usize) -> u32 {
        ((self.first_position - 1) as usize + k) as u32 % self.beats_per_bar + 1
    }

    /// Section index of every frame.
    pub fn section_of_frames(&self) -> Vec<usize> {
        let mut out = vec![0; self.frames];
        for (i, &(start, _)) in self.sections.iter().enumerate() {
            out[start..].iter_mut().for_each(|s| *s = i);
        }
        out
    }

    pub fn annotation(&self, vocab: &[String]) -> Annotation {
        let beats = self
            .beat_times()
            .into_iter()
            .enumerate()
            .map(|(k, time)| AnnotatedBeat {
                time,
                bar_position: self.position(k),
            })
            .collect();
        let mut segments: Vec<Segment> = self
            .sections
            .iter()
            .map(|&(start, label)| Segment {
                start: start as f64 / self.fps,
                end: 0.0,
                label: vocab[label].clone(),
            })
            .collect();
        for i in 0..segments.len() {
            segments[i].end = segments.get(i + 1).map_or(self.duration(), |s| s.start);
        }
        Annotation {
            beats,
            segments,
            duration: self.duration(),
        }
    }
}

/// Band-energy profile of every label, shared by a whole dataset.
fn label_profiles<R: Rng>(rng: &mut R, vocab: usize, bands: usize) -> Vec<Vec<f64>> {
    (0..vocab)
        .map(|_| (0..bands).map(|_| rng.gen_range(0.1..1.0)).collect())
        .collect()
}

/// Index of the percussive stem.
fn drum_stem(stems: usize) -> usize {
    if stems > 1 {
        1
    } else {
        0
    }
}

/// Renders `plan` as `[stems, frames, bands]`. The percussive stem carries
/// decaying bursts on every beat, low-heavy on downbeats and high-heavy
/// elsewhere; the other stems hold the section's band profile. Every stem
/// gets uniform noise.
pub fn render_toy<T: Scalar, R: Rng>(
    plan: &ToyPlan,
    profiles: &[Vec<f64>],
    stems: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let bands = profiles.first().map_or(0, Vec::len);
    if stems == 0 || bands == 0 {
        return Err(Error::Config("toy rendering needs stems and bands".into()));
    }
    let frames = plan.frames;
    let mut x = vec![0.0f64; stems * frames * bands];
    let at = |s: usize, f: usize, b: usize| (s * frames + f) * bands + b;
    let section = plan.section_of_frames();
    let drums = drum_stem(stems);
    for s in 0..stems {
        let level = 0.5 + 0.1 * s as f64;
        for f in 0..frames {
            let profile = &profiles[plan.sections[section[f]].1];
            for b in 0..bands {
                let tonal = if s == drums && stems > 1 { 0.0 } else { level * profile[b] };
                x[at(s, f, b)] = tonal + rng.gen_range(0.0..0.05);
            }
        }
    }
    let low = bands.div_ceil(2);
    for (k, t) in plan.beat_times().into_iter().enumerate() {
        let start = (t * plan.fps).round() as usize;
        let (lo_amp, hi_amp) = if plan.position(k) == 1 { (1.2, 0.4) } else { (0.3, 0.8) };
        for j in 0..5 {
            let f = start + j;
            if f >= frames {
                break;
            }
            let decay = (-(j as f64) / 1.5).exp();
            for b in 0..bands {
                let amp = if b < low { lo_amp } else { hi_amp };
                x[at(drums, f, b)] += amp * decay;
            }
        }
    }
    Tensor::new([stems, frames, bands], x.into_iter().map(T::lit).collect())
}

/// Stem names for `n` stems.
pub fn stem_names(n: usize) -> Vec<String> {
    if n == STEM_NAMES.len() {
        STEM_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("stem{i}")).collect()
    }
}

/// One toy track: its plan, spectrogram and annotation.
#[derive(Clone, Debug)]
pub struct ToyTrack<T> {
    pub plan: ToyPlan,
    pub spec: StemSpectrogram<T>,
    pub annotation: Annotation,
}

/// `n_tracks` synthetic tracks shaped for `cfg` (stems, bands, frame rate,
/// vocabulary). Deterministic in `seed`.
pub fn make_toy_dataset<T: Scalar>(
    seed: u64,
    n_tracks: usize,
    duration: f64,
    cfg: &ModelConfig,
) -> Result<Vec<ToyTrack<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = label_profiles(&mut rng, cfg.labels.len(), cfg.bands);
    (0..n_tracks)
        .map(|_| {
            let plan = ToyPlan::sample(&mut rng, duration, cfg.fps, cfg.labels.len())?;
            let values = render_toy(&plan, &profiles, cfg.num_stems, &mut rng)?;
            let spec = StemSpectrogram::new(stem_names(cfg.num_stems), values, cfg.fps)?;
            let annotation = plan.annotation(&cfg.labels);
            Ok(ToyTrack {
                plan,
                spec,
                annotation,
            })
        })
        .collect()
}

/// The label profiles `make_toy_dataset` draws for `seed`.
pub fn toy_profiles(seed: u64, cfg: &ModelConfig) -> Vec<Vec<f64>> {
    label_profiles(&mut ChaCha8Rng::seed_from_u64(seed), cfg.labels.len(), cfg.bands)
}
