use rayon::prelude::*;

use crate::error::{Error, Result};

/// Emission floor, keeps every path finite.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DbnConfig {
    pub min_bpm: f64,
    pub max_bpm: f64,
    pub beats_per_bar: Vec<usize>,
    /// Tempo-change penalty rate.
    pub transition_lambda: f64,
    /// The first `1/observation_lambda` of each beat period is the beat
    /// window.
    pub observation_lambda: f64,
}

impl Default for DbnConfig {
    fn default() -> Self {
        Self {
            min_bpm: 55.0,
            max_bpm: 215.0,
            beats_per_bar: vec![3, 4],
            transition_lambda: 100.0,
            observation_lambda: 16.0,
        }
    }
}

impl DbnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_bpm > 0.0 && self.min_bpm < self.max_bpm) {
            return Err(Error::Config(format!(
                "need 0 < min_bpm < max_bpm (got {}, {})",
                self.min_bpm, self.max_bpm
            )));
        }
        if self.beats_per_bar.is_empty() || self.beats_per_bar.iter().any(|&b| b < 2) {
            return Err(Error::Config("beats-per-bar candidates must be >= 2".into()));
        }
        if self.transition_lambda < 0.0 || self.observation_lambda <= 1.0 {
            return Err(Error::Config("need transition_lambda >= 0 and observation_lambda > 1".into()));
        }
        Ok(())
    }

    /// Inclusive beat-period range in frames.
    pub fn tempo_range(&self, fps: f64) -> Result<(usize, usize)> {
        let lo = (fps * 60.0 / self.max_bpm).ceil().max(1.0) as usize;
        let hi = (fps * 60.0 / self.min_bpm).floor() as usize;
        if hi < lo {
            return Err(Error::Config(format!("no integer beat period between {} and {} bpm at {fps} fps", self.min_bpm, self.max_bpm)));
        }
        Ok((lo, hi))
    }
}

/// Decoded beat grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BeatGrid {
    pub beats: Vec<f64>,
    pub downbeats: Vec<f64>,
    pub beats_per_bar: usize,
    pub log_likelihood: f64,
}

struct Lattice {
    taus: Vec<usize>,
    bars: usize,
    /// Start of the `(tempo j, bar position b)` run of phases.
    offsets: Vec<usize>,
    states: usize,
    /// `log_trans[to * J + from]`.
    log_trans: Vec<f64>,
    obs_lambda: f64,
}

impl Lattice {
    fn new(lo: usize, hi: usize, bars: usize, lambda: f64, obs_lambda: f64) -> Self {
        let taus: Vec<usize> = (lo..=hi).collect();
        let mut offsets = Vec::with_capacity(taus.len() * bars);
        let mut at = 0;
        for &tau in &taus {
            for _ in 0..bars {
                offsets.push(at);
                at += tau;
            }
        }
        let j = taus.len();
        let mut log_trans = vec![0.0; j * j];
        for (from, &tf) in taus.iter().enumerate() {
            let row: Vec<f64> = taus
                .iter()
                .map(|&tt| -lambda * (tt as f64 / tf as f64 - 1.0).abs())
                .collect();
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for (to, v) in row.into_iter().enumerate() {
                log_trans[to * j + from] = v - lse;
            }
        }
        Self {
            taus,
            bars,
            offsets,
            states: at,
            log_trans,
            obs_lambda,
        }
    }

    fn offset(&self, j: usize, b: usize) -> usize {
        self.offsets[j * self.bars + b]
    }

    /// Phases `0..w` with `phase < tau / obs_lambda`.
    fn window_len(&self, tau: usize) -> usize {
        (0..tau).take_while(|&p| (p as f64) < tau as f64 / self.obs_lambda).count()
    }

    /// Adds the frame's emission log-probabilities to `score`.
    fn emit(&self, score: &mut [f64], obs: [f64; 3], windows: &[usize]) {
        for (j, &tau) in self.taus.iter().enumerate() {
            let w = windows[j];
            for b in 0..self.bars {
                let o = self.offset(j, b);
                let window = if b == 0 { obs[0] } else { obs[1] };
                score[o..o + w].iter_mut().for_each(|s| *s += window);
                score[o + w..o + tau].iter_mut().for_each(|s| *s += obs[2]);
            }
        }
    }

    /// Best log-likelihood and the decoded `(frame, downbeat, window length)`
    /// of each beat.
    fn run(&self, obs: &[[f64; 3]]) -> (f64, Vec<(usize, bool, usize)>) {
        let j_count = self.taus.len();
        let frames = obs.len();
        let windows: Vec<usize> = self.taus.iter().map(|&tau| self.window_len(tau)).collect();
        let mut prev = vec![-(self.states as f64).ln(); self.states];
        self.emit(&mut prev, obs[0], &windows);
        let mut next = vec![0.0; self.states];
        // back[t][b * J + j]: source tempo for entering phase 0 at frame t
        let mut back = vec![0u16; frames * self.bars * j_count];
        let mut ends = vec![0.0; self.bars * j_count];
        for t in 1..frames {
            for b in 0..self.bars {
                for (jf, &tf) in self.taus.iter().enumerate() {
                    ends[b * j_count + jf] = prev[self.offset(jf, b) + tf - 1];
                }
            }
            for (j, &tau) in self.taus.iter().enumerate() {
                for b in 0..self.bars {
                    let o = self.offset(j, b);
                    next[o + 1..o + tau].copy_from_slice(&prev[o..o + tau - 1]);
                    let pb = (b + self.bars - 1) % self.bars;
                    let src = &ends[pb * j_count..(pb + 1) * j_count];
                    let lt = &self.log_trans[j * j_count..(j + 1) * j_count];
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for (jf, (e, l)) in src.iter().zip(lt).enumerate() {
                        let v = e + l;
                        if v > best {
                            best = v;
                            arg = jf;
                        }
                    }
                    next[o] = best;
                    back[(t * self.bars + b) * j_count + j] = arg as u16;
                }
            }
            self.emit(&mut next, obs[t], &windows);
            std::mem::swap(&mut prev, &mut next);
        }

        let (mut best_state, mut best) = (0, f64::NEG_INFINITY);
        for (i, &v) in prev.iter().enumerate() {
            if v > best {
                best = v;
                best_state = i;
            }
        }
        // locate (j, b, phase) of the final state
        let slot = self.offsets.partition_point(|&o| o <= best_state) - 1;
        let (mut j, mut b) = (slot / self.bars, slot % self.bars);
        let mut phase = best_state - self.offsets[slot];
        let mut t = frames - 1;
        let mut events = Vec::new();
        loop {
            if phase > t {
                break;
            }
            let t0 = t - phase;
            events.push((t0, b == 0, windows[j]));
            if t0 == 0 {
                break;
            }
            let jf = back[(t0 * self.bars + b) * j_count + j] as usize;
            b = (b + self.bars - 1) % self.bars;
            j = jf;
            phase = self.taus[jf] - 1;
            t = t0 - 1;
        }
        events.reverse();
        (best, events)
    }
}

fn check_activation(name: &str, a: &[f64]) -> Result<()> {
    if let Some(v) = a.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("{name} activation {v} outside [0, 1]")));
    }
    Ok(())
}

/// Exact Viterbi decoding of the bar-pointer model, one run per
/// beats-per-bar candidate; the most likely candidate wins (ties go to the
/// earlier candidate).
pub fn dbn_decode(beat: &[f64], downbeat: &[f64], fps: f64, cfg: &DbnConfig) -> Result<BeatGrid> {
    cfg.validate()?;
    if beat.is_empty() || beat.len() != downbeat.len() {
        return Err(Error::Input(format!(
            "activations of length {} and {}",
            beat.len(),
            downbeat.len()
        )));
    }
    check_activation("beat", beat)?;
    check_activation("downbeat", downbeat)?;
    if (beat.len() as f64) < fps {
        return Err(Error::Input(format!("{} frames is shorter than one second", beat.len())));
    }
    let (lo, hi) = cfg.tempo_range(fps)?;
    if hi - lo + 1 > u16::MAX as usize {
        return Err(Error::Config("tempo grid too fine".into()));
    }
    let non_window = cfg.observation_lambda - 1.0;
    let obs: Vec<[f64; 3]> = beat
        .iter()
        .zip(downbeat)
        .map(|(&b, &d)| {
            [
                d.clamp(FLOOR, 1.0).ln(),
                b.clamp(FLOOR, 1.0).ln(),
                ((1.0 - b - d).clamp(FLOOR, 1.0) / non_window).ln(),
            ]
        })
        .collect();
    let runs: Vec<(f64, Vec<(usize, bool, usize)>)> = cfg
        .beats_per_bar
        .par_iter()
        .map(|&bars| Lattice::new(lo, hi, bars, cfg.transition_lambda, cfg.observation_lambda).run(&obs))
        .collect();
    let mut pick = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.0 > runs[pick].0 {
            pick = i;
        }
    }
    let (ll, events) = &runs[pick];
    // every frame of a beat window scores the same, so place each beat on
    // the strongest activation inside its window (earliest on ties), keeping
    // the spacing to the previous placed beat within the tempo range
    let strength = |t: usize| beat[t] + downbeat[t];
    let mut placed: Vec<(usize, bool)> = Vec::with_capacity(events.len());
    for &(t0, down, w) in events {
        let end = (t0 + w).min(beat.len());
        let (lo_t, hi_t) = match placed.last() {
            Some(&(p, _)) => (p + lo - 1, p + hi + 1),
            None => (0, usize::MAX),
        };
        let mut best: Option<usize> = None;
        for t in (t0..end).filter(|t| (lo_t..=hi_t).contains(t)) {
            if best.is_none_or(|b| strength(t) > strength(b)) {
                best = Some(t);
            }
        }
        let t = best.unwrap_or_else(|| lo_t.clamp(t0, end - 1));
        placed.push((t, down));
    }
    Ok(BeatGrid {
        beats: placed.iter().map(|&(t, _)| t as f64 / fps).collect(),
        downbeats: placed.iter().filter(|e| e.1).map(|&(t, _)| t as f64 / fps).collect(),
        beats_per_bar: cfg.beats_per_bar[pick],
        log_likelihood: *ll,
    })
}
