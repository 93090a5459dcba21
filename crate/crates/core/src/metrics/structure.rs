use std::collections::HashMap;

use super::events::{harmonic, match_count, Prf};
use crate::error::{Error, Result};
use crate::postproc::Segment;

/// Segment starts plus the final end; with `endpoints` false, only the
/// internal boundaries.
pub fn segment_boundaries(segments: &[Segment], endpoints: bool) -> Vec<f64> {
    let mut out: Vec<f64> = segments.iter().map(|s| s.start).collect();
    if let Some(last) = segments.last() {
        out.push(last.end);
    }
    if !endpoints && out.len() >= 2 {
        out.pop();
        out.remove(0);
    } else if !endpoints {
        out.clear();
    }
    out
}

/// Boundary hit rate: one-to-one matching of boundaries within `window`
/// seconds.
pub fn boundary_hit_rate(est: &[Segment], reference: &[Segment], window: f64, endpoints: bool) -> Result<Prf> {
    if !(window >= 0.0) {
        return Err(Error::Parameter(format!("window {window} must be non-negative")));
    }
    let e = segment_boundaries(est, endpoints);
    let r = segment_boundaries(reference, endpoints);
    Ok(Prf::from_counts(match_count(&e, &r, window), e.len(), r.len()))
}

/// Frame label indices sampled at `0, frame, 2·frame, …` below `duration`.
/// Time not covered by any segment gets its own label.
fn sample_labels(segments: &[Segment], duration: f64, frame: f64, ids: &mut HashMap<String, usize>) -> Vec<usize> {
    let n = (duration / frame - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let t = i as f64 * frame;
        while k < segments.len() && segments[k].end <= t {
            k += 1;
        }
        let label = match segments.get(k) {
            Some(s) if s.start <= t => s.label.as_str(),
            _ => "\u{0}uncovered",
        };
        let next = ids.len();
        out.push(*ids.entry(label.to_string()).or_insert(next));
    }
    out
}

/// Joint label counts `[ref label][est label]` of the frame sampling.
struct Contingency {
    counts: Vec<Vec<usize>>,
    frames: usize,
}

impl Contingency {
    fn new(est: &[Segment], reference: &[Segment], frame: f64) -> Result<Self> {
        if !(frame > 0.0) {
            return Err(Error::Parameter(format!("frame {frame} must be positive")));
        }
        let end = |s: &[Segment]| s.last().map_or(0.0, |x| x.end);
        let duration = end(reference);
        if !(duration > 0.0) {
            return Err(Error::Input("reference segmentation has zero duration".into()));
        }
        let (mut re, mut es) = (HashMap::new(), HashMap::new());
        let r = sample_labels(reference, duration, frame, &mut re);
        let e = sample_labels(est, duration, frame, &mut es);
        let mut counts = vec![vec![0; es.len()]; re.len()];
        for (a, b) in r.iter().zip(&e) {
            counts[*a][*b] += 1;
        }
        Ok(Self { counts, frames: r.len() })
    }

    fn ref_totals(&self) -> Vec<usize> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    fn est_totals(&self) -> Vec<usize> {
        let cols = self.counts.first().map_or(0, |r| r.len());
        (0..cols).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }
}

fn pairs(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Pairwise frame-clustering F-measure. Counts same-label frame pairs
/// through the label contingency table.
pub fn pairwise_f(est: &[Segment], reference: &[Segment], frame: f64) -> Result<Prf> {
    let c = Contingency::new(est, reference, frame)?;
    let agree: f64 = c.counts.iter().flatten().map(|&n| pairs(n)).sum();
    let ref_pairs: f64 = c.ref_totals().into_iter().map(pairs).sum();
    let est_pairs: f64 = c.est_totals().into_iter().map(pairs).sum();
    // no pairs on a side means nothing can be wrong there
    let p = if est_pairs > 0.0 { agree / est_pairs } else { 1.0 };
    let r = if ref_pairs > 0.0 { agree / ref_pairs } else { 1.0 };
    Ok(Prf {
        f: harmonic(p, r),
        precision: p,
        recall: r,
    })
}

/// Normalized conditional-entropy scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyScores {
    pub sf: f64,
    pub over: f64,
    pub under: f64,
}

/// `S_over = 1 - H(est|ref)/log2(#est labels)`,
/// `S_under = 1 - H(ref|est)/log2(#ref labels)`, and their harmonic mean.
/// A single-label side scores 1.
pub fn entropy_scores(est: &[Segment], reference: &[Segment], frame: f64) -> Result<EntropyScores> {
    let c = Contingency::new(est, reference, frame)?;
    let n = c.frames as f64;
    let (rt, et) = (c.ref_totals(), c.est_totals());
    let mut h_est_given_ref = 0.0;
    let mut h_ref_given_est = 0.0;
    for (a, row) in c.counts.iter().enumerate() {
        for (e, &k) in row.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let p = k as f64 / n;
            h_est_given_ref -= p * (k as f64 / rt[a] as f64).log2();
            h_ref_given_est -= p * (k as f64 / et[e] as f64).log2();
        }
    }
    let score = |h: f64, labels: usize| {
        if labels <= 1 {
            1.0
        } else {
            (1.0 - h / (labels as f64).log2()).clamp(0.0, 1.0)
        }
    };
    let used = |t: &[usize]| t.iter().filter(|&&k| k > 0).count();
    let over = score(h_est_given_ref, used(&et));
    let under = score(h_ref_given_est, used(&rt));
    let sf = if over == 0.0 || under == 0.0 { 0.0 } else { harmonic(over, under) };
    Ok(EntropyScores { sf, over, under })
}
