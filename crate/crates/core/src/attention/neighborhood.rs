//! Sparse attention over precomputed neighbor lists.

use std::rc::Rc;

use rand::Rng;
use rayon::prelude::*;

use super::window::window_span;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Per-query key lists for a flattened set of `n` positions.
///
/// Each query owns a fixed-stride row of `width` slots of which the first
/// `len[q]` are used. Slot entries carry the key index and the index into the
/// per-head relative bias table.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    n: usize,
    width: usize,
    bias_len: usize,
    len: Vec<u32>,
    keys: Vec<u32>,
    rel: Vec<u32>,
    // key -> (query, slot) pairs, in ascending query order
    rev_offsets: Vec<usize>,
    rev: Vec<(u32, u32)>,
}

impl Neighborhood {
    /// `batch` independent sequences of `frames` positions each, dilated
    /// windows of `k` positions. Bias index is `(j - i) / d + k - 1`.
    pub fn dilated_1d(batch: usize, frames: usize, k: usize, d: usize) -> Result<Self> {
        let width = k;
        let n = batch * frames;
        let mut b = Builder::new(n, width, 2 * k - 1);
        for s in 0..batch {
            for i in 0..frames {
                let (start, size) = window_span(i, frames, k, d)?;
                let phase = i % d;
                let q = s * frames + i;
                for p in start..start + size {
                    let j = phase + p * d;
                    let rel = (p + k - 1 - i / d) as u32;
                    b.push(q, (s * frames + j) as u32, rel);
                }
            }
        }
        Ok(b.finish())
    }

    /// Two-axis grid of `rows × frames` positions (row-major), non-dilated
    /// `k × k` windows. Rows hold instruments. A `k` wider than `rows` leaves
    /// the out-of-range cells out of the window, which is the same as
    /// zero-padding them and masking them out of the softmax.
    pub fn grid_2d(rows: usize, frames: usize, k: usize) -> Result<Self> {
        let width = k * k;
        let n = rows * frames;
        let span = 2 * k - 1;
        let mut b = Builder::new(n, width, span * span);
        for s in 0..rows {
            let (rs, rn) = window_span(s, rows, k, 1)?;
            for t in 0..frames {
                let (ts, tn) = window_span(t, frames, k, 1)?;
                let q = s * frames + t;
                for s2 in rs..rs + rn {
                    for t2 in ts..ts + tn {
                        let rel = (s2 + k - 1 - s) * span + (t2 + k - 1 - t);
                        b.push(q, (s2 * frames + t2) as u32, rel as u32);
                    }
                }
            }
        }
        Ok(b.finish())
    }

    pub fn positions(&self) -> usize {
        self.n
    }

    pub fn bias_len(&self) -> usize {
        self.bias_len
    }

    /// `(key, bias index)` pairs attended to by `query`.
    pub fn neighbors(&self, query: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let row = query * self.width;
        (0..self.len[query] as usize)
            .map(move |j| (self.keys[row + j] as usize, self.rel[row + j] as usize))
    }

    /// Dense `n × n` boolean mask of attended pairs.
    pub fn dense_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n * self.n];
        for q in 0..self.n {
            for (k, _) in self.neighbors(q) {
                mask[q * self.n + k] = true;
            }
        }
        mask
    }
}

struct Builder {
    nb: Neighborhood,
}

impl Builder {
    fn new(n: usize, width: usize, bias_len: usize) -> Self {
        Self {
            nb: Neighborhood {
                n,
                width,
                bias_len,
                len: vec![0; n],
                keys: vec![0; n * width],
                rel: vec![0; n * width],
                rev_offsets: Vec::new(),
                rev: Vec::new(),
            },
        }
    }

    fn push(&mut self, q: usize, key: u32, rel: u32) {
        let nb = &mut self.nb;
        let slot = nb.len[q] as usize;
        debug_assert!(slot < nb.width && (rel as usize) < nb.bias_len);
        nb.keys[q * nb.width + slot] = key;
        nb.rel[q * nb.width + slot] = rel;
        nb.len[q] += 1;
    }

    fn finish(mut self) -> Neighborhood {
        let nb = &mut self.nb;
        let mut counts = vec![0usize; nb.n + 1];
        for q in 0..nb.n {
            for j in 0..nb.len[q] as usize {
                counts[nb.keys[q * nb.width + j] as usize + 1] += 1;
            }
        }
        for i in 0..nb.n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut rev = vec![(0u32, 0u32); counts[nb.n]];
        for q in 0..nb.n {
            for j in 0..nb.len[q] as usize {
                let key = nb.keys[q * nb.width + j] as usize;
                rev[fill[key]] = (q as u32, j as u32);
                fill[key] += 1;
            }
        }
        nb.rev_offsets = counts;
        nb.rev = rev;
        self.nb
    }
}

impl<T: Scalar> Tape<T> {
    /// Multi-head attention restricted to `nb`.
    ///
    /// `q`, `k`, `v` are [N, C] projections; `bias` is the [heads, bias_len]
    /// relative position table (`None` for no bias). With `attn_dropout`,
    /// attention probabilities are dropped with the given rate.
    pub fn neighborhood_attention(
        &self,
        q: &Var<T>,
        k: &Var<T>,
        v: &Var<T>,
        bias: Option<&Var<T>>,
        nb: Rc<Neighborhood>,
        heads: usize,
        attn_dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> Result<Var<T>> {
        let shape = q.shape();
        if shape.len() != 2 || shape[0] != nb.n || k.shape() != shape || v.shape() != shape {
            return Err(Error::dim(
                "neighborhood_attention",
                format!(
                    "q {:?}, k {:?}, v {:?} for {} positions",
                    q.shape(),
                    k.shape(),
                    v.shape(),
                    nb.n
                ),
            ));
        }
        let c = shape[1];
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(Error::Parameter(format!("{heads} heads do not divide {c}")));
        }
        if let Some(b) = bias {
            if b.shape() != [heads, nb.bias_len] {
                return Err(Error::dim(
                    "neighborhood_attention",
                    format!("bias {:?}, expected [{heads}, {}]", b.shape(), nb.bias_len),
                ));
            }
        }
        let hd = c / heads;
        let scale = T::one() / T::lit(hd as f64).sqrt();
        let stride = nb.width * heads;

        // Dropout mask entries are 0 or 1/(1-p); `None` means all ones.
        let keep_mask: Option<Vec<T>> = match attn_dropout {
            Some((p, rng)) if p > 0.0 => {
                if p >= 1.0 {
                    return Err(Error::Parameter(format!("dropout rate {p} not in [0, 1)")));
                }
                let keep = T::lit(1.0 / (1.0 - p));
                Some(
                    (0..nb.n * stride)
                        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
                        .collect(),
                )
            }
            _ => None,
        };

        let (qd, kd, vd) = (q.value().data(), k.value().data(), v.value().data());
        let bd = bias.map(|b| b.value().data());
        let mut out = vec![T::zero(); nb.n * c];
        let mut probs = vec![T::zero(); nb.n * stride];
        let nbr = &*nb;
        let km = keep_mask.as_deref();
        out.par_chunks_mut(c)
            .zip(probs.par_chunks_mut(stride))
            .enumerate()
            .for_each(|(i, (orow, prow))| {
                let len = nbr.len[i] as usize;
                let base = i * nbr.width;
                let mut logits = vec![T::zero(); len];
                for h in 0..heads {
                    let qh = &qd[i * c + h * hd..][..hd];
                    let mut mx = T::neg_infinity();
                    for (j, l) in logits.iter_mut().enumerate() {
                        let key = nbr.keys[base + j] as usize;
                        let kh = &kd[key * c + h * hd..][..hd];
                        let mut dot = T::zero();
                        for (&a, &b) in qh.iter().zip(kh) {
                            dot += a * b;
                        }
                        *l = dot * scale;
                        if let Some(bd) = bd {
                            *l += bd[h * nbr.bias_len + nbr.rel[base + j] as usize];
                        }
                        mx = mx.max(*l);
                    }
                    let mut total = T::zero();
                    for l in logits.iter_mut() {
                        *l = (*l - mx).exp();
                        total += *l;
                    }
                    let oh = &mut orow[h * hd..(h + 1) * hd];
                    for (j, l) in logits.iter().enumerate() {
                        let p = *l / total;
                        prow[j * heads + h] = p;
                        let a = match km {
                            Some(m) => p * m[i * stride + j * heads + h],
                            None => p,
                        };
                        if a == T::zero() {
                            continue;
                        }
                        let key = nbr.keys[base + j] as usize;
                        let vh = &vd[key * c + h * hd..][..hd];
                        for (o, &vv) in oh.iter_mut().zip(vh) {
                            *o += a * vv;
                        }
                    }
                }
            });

        let y = Tensor::new([nb.n, c], out)?;
        let (qs, ks, vs) = (q.rc(), k.rc(), v.rc());
        let has_bias = bias.is_some();
        let backward = Box::new(move |g: &Tensor<T>, need: &[bool]| {
            let gd = g.data();
            let (qd, kd, vd) = (qs.data(), ks.data(), vs.data());
            let nbr = &*nb;
            let km = keep_mask.as_deref();
            let weight = |i: usize, j: usize, h: usize| {
                let p = probs[i * stride + j * heads + h];
                match km {
                    Some(m) => p * m[i * stride + j * heads + h],
                    None => p,
                }
            };

            // d(logit) per (query, slot, head), plus dq which is query-local.
            let mut dlogit = vec![T::zero(); nbr.n * stride];
            let mut dq = vec![T::zero(); nbr.n * c];
            dlogit
                .par_chunks_mut(stride)
                .zip(dq.par_chunks_mut(c))
                .enumerate()
                .for_each(|(i, (dl, dqr))| {
                    let len = nbr.len[i] as usize;
                    let base = i * nbr.width;
                    for h in 0..heads {
                        let gh = &gd[i * c + h * hd..][..hd];
                        let mut dot = T::zero();
                        for j in 0..len {
                            let key = nbr.keys[base + j] as usize;
                            let vh = &vd[key * c + h * hd..][..hd];
                            let mut da = T::zero();
                            for (&a, &b) in gh.iter().zip(vh) {
                                da += a * b;
                            }
                            let dp = match km {
                                Some(m) => da * m[i * stride + j * heads + h],
                                None => da,
                            };
                            dl[j * heads + h] = dp;
                            dot += dp * probs[i * stride + j * heads + h];
                        }
                        for j in 0..len {
                            let p = probs[i * stride + j * heads + h];
                            let d = p * (dl[j * heads + h] - dot);
                            dl[j * heads + h] = d;
                            let key = nbr.keys[base + j] as usize;
                            let kh = &kd[key * c + h * hd..][..hd];
                            let dqh = &mut dqr[h * hd..(h + 1) * hd];
                            for (o, &kv) in dqh.iter_mut().zip(kh) {
                                *o += d * scale * kv;
                            }
                        }
                    }
                });

            // dk and dv gather over the reverse index in ascending query order.
            let mut dk = vec![T::zero(); nbr.n * c];
            let mut dv = vec![T::zero(); nbr.n * c];
            dk.par_chunks_mut(c)
                .zip(dv.par_chunks_mut(c))
                .enumerate()
                .for_each(|(key, (dkr, dvr))| {
                    for &(i, j) in &nbr.rev[nbr.rev_offsets[key]..nbr.rev_offsets[key + 1]] {
                        let (i, j) = (i as usize, j as usize);
                        for h in 0..heads {
                            let d = dlogit[i * stride + j * heads + h] * scale;
                            let a = weight(i, j, h);
                            let qh = &qd[i * c + h * hd..][..hd];
                            let gh = &gd[i * c + h * hd..][..hd];
                            let r = h * hd..(h + 1) * hd;
                            for ((o, &qv), (ov, &gv)) in dkr[r.clone()]
                                .iter_mut()
                                .zip(qh)
                                .zip(dvr[r].iter_mut().zip(gh))
                            {
                                *o += d * qv;
                                *ov += a * gv;
                            }
                        }
                    }
                });

            let mut grads = vec![
                need[0].then(|| Tensor::new([nbr.n, c], dq).unwrap()),
                need[1].then(|| Tensor::new([nbr.n, c], dk).unwrap()),
                need[2].then(|| Tensor::new([nbr.n, c], dv).unwrap()),
            ];
            if has_bias {
                grads.push(need[3].then(|| {
                    let mut db = vec![T::zero(); heads * nbr.bias_len];
                    for i in 0..nbr.n {
                        let base = i * nbr.width;
                        for j in 0..nbr.len[i] as usize {
                            let rel = nbr.rel[base + j] as usize;
                            for h in 0..heads {
                                db[h * nbr.bias_len + rel] += dlogit[i * stride + j * heads + h];
                            }
                        }
                    }
                    Tensor::new([heads, nbr.bias_len], db).unwrap()
                }));
            }
            grads
        });
        match bias {
            Some(b) => self.record("neighborhood_attention", y, &[q, k, v, b], backward),
            None => self.record("neighborhood_attention", y, &[q, k, v], backward),
        }
    }
}
