//! Dense masked attention used as the reference for the sparse kernels.

use super::layer::{AttentionConfig, AttentionWeights};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// How a (query, key) pair indexes the relative bias table.
#[derive(Clone, Copy, Debug)]
pub enum BiasLayout {
    /// Ignore the bias table.
    None,
    /// One sequence; offset `(j - i) / dilation`.
    Sequence { dilation: usize },
    /// Row-major `rows × frames` grid, non-dilated.
    Grid { rows: usize, frames: usize },
}

impl BiasLayout {
    fn index(self, i: usize, j: usize, k: usize) -> Result<Option<usize>> {
        let off = |a: usize, b: usize| b as isize - a as isize;
        let reach = k as isize - 1;
        match self {
            BiasLayout::None => Ok(None),
            BiasLayout::Sequence { dilation } => {
                let d = off(i, j);
                if d % dilation as isize != 0 || (d / dilation as isize).abs() > reach {
                    return Err(Error::Contract(format!(
                        "pair ({i}, {j}) has no relative bias entry"
                    )));
                }
                Ok(Some((d / dilation as isize + reach) as usize))
            }
            BiasLayout::Grid { rows, frames } => {
                if i >= rows * frames || j >= rows * frames {
                    return Err(Error::Index {
                        index: i.max(j),
                        len: rows * frames,
                    });
                }
                let ds = off(i / frames, j / frames);
                let dt = off(i % frames, j % frames);
                if ds.abs() > reach || dt.abs() > reach {
                    return Err(Error::Contract(format!(
                        "pair ({i}, {j}) has no relative bias entry"
                    )));
                }
                let span = 2 * reach + 1;
                Ok(Some(((ds + reach) * span + dt + reach) as usize))
            }
        }
    }
}

fn project<T: Scalar>(x: &[f64], w: &Tensor<T>, b: Option<&Tensor<T>>, n: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for r in 0..n {
        for o in 0..c {
            let mut acc = b.map_or(0.0, |b| b.data()[o].to_f64_lossy());
            for i in 0..c {
                acc += x[r * c + i] * w.data()[i * c + o].to_f64_lossy();
            }
            out[r * c + o] = acc;
        }
    }
    out
}

/// Softmax attention over all pairs allowed by `mask` (row-major `N × N`),
/// with the same projections and relative bias as the sparse kernels.
/// `x` is any `[.., C]` tensor whose rows are the `N` positions.
pub fn full_attention_oracle<T: Scalar>(
    x: &Tensor<T>,
    w: &AttentionWeights<T>,
    cfg: &AttentionConfig,
    mask: &[bool],
    layout: BiasLayout,
) -> Result<Tensor<T>> {
    let c = x.last_dim();
    let n = x.len() / c.max(1);
    cfg.validate(c)?;
    if mask.len() != n * n {
        return Err(Error::dim("full_attention_oracle", format!("mask of {} for N = {n}", mask.len())));
    }
    if let Some(row) = (0..n).find(|&i| !mask[i * n..(i + 1) * n].iter().any(|&m| m)) {
        return Err(Error::Contract(format!("mask row {row} attends to nothing")));
    }
    let heads = cfg.num_heads;
    let hd = c / heads;
    let xs: Vec<f64> = x.data().iter().map(|v| v.to_f64_lossy()).collect();
    let q = project(&xs, &w.query_w, Some(&w.query_b), n, c);
    let k = project(&xs, &w.key_w, None, n, c);
    let v = project(&xs, &w.value_w, Some(&w.value_b), n, c);
    let table = w.rel_bias.as_ref();
    let bias_len = table.map_or(0, |t| t.shape()[1]);

    let mut att = vec![0.0; n * c];
    for h in 0..heads {
        for i in 0..n {
            let mut logits = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if !mask[i * n + j] {
                    continue;
                }
                let mut dot = 0.0;
                for e in 0..hd {
                    dot += q[i * c + h * hd + e] * k[j * c + h * hd + e];
                }
                let mut l = dot / (hd as f64).sqrt();
                if let (Some(t), Some(idx)) = (table, layout.index(i, j, cfg.kernel_size)?) {
                    l += t.data()[h * bias_len + idx].to_f64_lossy();
                }
                logits[j] = l;
            }
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..n {
                let p = exps[j] / total;
                for e in 0..hd {
                    att[i * c + h * hd + e] += p * v[j * c + h * hd + e];
                }
            }
        }
    }
    let out = project(&att, &w.out_w, Some(&w.out_b), n, c);
    Tensor::new(x.shape(), out.into_iter().map(T::lit).collect())
}
