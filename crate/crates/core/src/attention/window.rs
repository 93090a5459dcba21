use crate::error::{Error, Result};

/// Indices attended to by position `i` of a length-`len` sequence under a
/// neighborhood of `k` positions with dilation `d`.
///
/// The window is the `k`-long run of the coset `{j : j ≡ i (mod d)}` centered
/// on `i`, shifted inward at the sequence ends so it never leaves
/// `[0, len)`. Cosets shorter than `k` are returned whole.
pub fn neighborhood_window_1d(i: usize, len: usize, k: usize, d: usize) -> Result<Vec<usize>> {
    let (start, size) = window_span(i, len, k, d)?;
    let phase = i % d;
    Ok((start..start + size).map(|q| phase + q * d).collect())
}

/// Window as (first coset position, number of positions). Coset position `q`
/// maps to sequence index `i % d + q * d`.
pub(crate) fn window_span(i: usize, len: usize, k: usize, d: usize) -> Result<(usize, usize)> {
    if i >= len {
        return Err(Error::Index { index: i, len });
    }
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Parameter(format!("kernel size {k} must be odd")));
    }
    if d == 0 {
        return Err(Error::Parameter("dilation must be >= 1".into()));
    }
    let phase = i % d;
    let coset_len = (len - phase).div_ceil(d);
    let size = k.min(coset_len);
    let pos = i / d;
    let start = pos.saturating_sub(k / 2).min(coset_len - size);
    Ok((start, size))
}

/// Single-layer window span: `(frames, seconds)`.
pub fn receptive_field(k: usize, d: usize, fps: f64) -> Result<(usize, f64)> {
    if k == 0 || d == 0 || fps <= 0.0 {
        return Err(Error::Parameter(format!(
            "receptive_field needs k >= 1, d >= 1, fps > 0 (got {k}, {d}, {fps})"
        )));
    }
    let frames = (k - 1) * d + 1;
    Ok((frames, frames as f64 / fps))
}
