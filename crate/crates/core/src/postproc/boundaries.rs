use crate::error::{Error, Result};

/// Sliding-mean normalization window.
pub const NORM_WINDOW_SECONDS: f64 = 24.0;
/// Half-width of the peak-isolation window.
pub const PEAK_RADIUS_SECONDS: f64 = 6.0;
/// Boundaries closer than this to either end of the track are dropped.
pub const EDGE_SECONDS: f64 = 1.0;

/// Segment boundary times from a boundary activation.
///
/// Subtracts a centered 24 s moving mean (truncated at the edges) and keeps
/// frames whose normalized value is positive and the strict maximum of its
/// ±6 s neighborhood, earliest frame winning ties.
pub fn pick_boundaries(boundary: &[f64], fps: f64) -> Result<Vec<f64>> {
    if !(fps > 0.0) {
        return Err(Error::Parameter(format!("fps {fps} must be positive")));
    }
    if let Some(v) = boundary.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("boundary activation {v} outside [0, 1]")));
    }
    let n = boundary.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let half = (NORM_WINDOW_SECONDS * fps / 2.0).round() as usize;
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in boundary.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let norm: Vec<f64> = (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            boundary[t] - (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    // summation roundoff on flat stretches must not read as a peak
    let peak = boundary.iter().copied().fold(0.0, f64::max);
    let floor = 1e-9 * peak;

    let radius = (PEAK_RADIUS_SECONDS * fps).round() as usize;
    let duration = n as f64 / fps;
    let mut out = Vec::new();
    for t in 0..n {
        let v = norm[t];
        if v <= floor {
            continue;
        }
        let lo = t.saturating_sub(radius);
        let hi = (t + radius + 1).min(n);
        let earlier_ok = norm[lo..t].iter().all(|&u| u < v);
        let later_ok = norm[t + 1..hi].iter().all(|&u| u <= v);
        if earlier_ok && later_ok {
            let time = t as f64 / fps;
            if time >= EDGE_SECONDS && time <= duration - EDGE_SECONDS {
                out.push(time);
            }
        }
    }
    Ok(out)
}
