//! Differentiable ops recorded on a [`Tape`].

use std::f64::consts::PI;

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::tensor::strides;
use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn same_shape<T: Scalar>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    fn unary(
        &self,
        op: &'static str,
        x: &Var<T>,
        f: impl Fn(T) -> T,
        df: fn(T, T) -> T,
    ) -> Result<Var<T>> {
        let y = x.value().map(f);
        let (xs, ys) = (x.rc(), std::rc::Rc::new(y.clone()));
        self.record(
            op,
            y,
            &[x],
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(xs.data().iter().zip(ys.data()))
                    .map(|(&gv, (&xv, &yv))| gv * df(xv, yv))
                    .collect();
                vec![Some(Tensor::new(g.shape(), data).unwrap())]
            }),
        )
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("add", a, b)?;
        let mut y = a.to_tensor();
        y.add_assign(b.value())?;
        self.record(
            "add",
            y,
            &[a, b],
            Box::new(|g, need| {
                need.iter()
                    .map(|&n| n.then(|| g.clone()))
                    .collect()
            }),
        )
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", a, b)?;
        let data = a
            .value()
            .data()
            .iter()
            .zip(b.value().data())
            .map(|(&x, &y)| x * y)
            .collect();
        let y = Tensor::new(a.shape(), data)?;
        let (av, bv) = (a.rc(), b.rc());
        self.record(
            "mul",
            y,
            &[a, b],
            Box::new(move |g, need| {
                let prod = |other: &Tensor<T>| {
                    let d = g
                        .data()
                        .iter()
                        .zip(other.data())
                        .map(|(&gv, &o)| gv * o)
                        .collect();
                    Tensor::new(g.shape(), d).unwrap()
                };
                vec![need[0].then(|| prod(&bv)), need[1].then(|| prod(&av))]
            }),
        )
    }

    pub fn scale(&self, x: &Var<T>, s: T) -> Result<Var<T>> {
        let y = x.value().map(|v| v * s);
        self.record(
            "scale",
            y,
            &[x],
            Box::new(move |g, _| vec![Some(g.map(|v| v * s))]),
        )
    }

    /// Adds `bias` [C] along the last axis of `x`.
    pub fn add_bias(&self, x: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let c = x.value().last_dim();
        if bias.shape() != [c] {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} for input {:?}", bias.shape(), x.shape()),
            ));
        }
        let mut y = x.to_tensor();
        for row in y.data_mut().chunks_mut(c) {
            for (v, &b) in row.iter_mut().zip(bias.value().data()) {
                *v += b;
            }
        }
        self.record(
            "add_bias",
            y,
            &[x, bias],
            Box::new(move |g, need| {
                let db = need[1].then(|| column_sums(g.data(), c));
                vec![need[0].then(|| g.clone()), db]
            }),
        )
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = Tensor::scalar(x.value().sum());
        let shape = x.shape().to_vec();
        self.record(
            "sum",
            y,
            &[x],
            Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.data()[0]))]),
        )
    }

    /// `a [m,k] · b [k,n]`.
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let y = Tensor::new([m, n], kernels::gemm(a.value().data(), b.value().data(), m, k, n))?;
        let (av, bv) = (a.rc(), b.rc());
        self.record(
            "matmul",
            y,
            &[a, b],
            Box::new(move |g, need| {
                let da = need[0].then(|| {
                    Tensor::new([m, k], kernels::gemm_nt(g.data(), bv.data(), m, n, k)).unwrap()
                });
                let db = need[1].then(|| {
                    Tensor::new([k, n], kernels::gemm_tn(av.data(), g.data(), m, k, n)).unwrap()
                });
                vec![da, db]
            }),
        )
    }

    /// Affine map over the last axis: `x [.., in] · w [in, out] + b [out]`.
    pub fn linear(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let sw = w.shape();
        let din = x.value().last_dim();
        if sw.len() != 2 || sw[0] != din || x.shape().is_empty() {
            return Err(Error::dim(
                "linear",
                format!("input {:?} with weight {sw:?}", x.shape()),
            ));
        }
        let dout = sw[1];
        if let Some(b) = b {
            if b.shape() != [dout] {
                return Err(Error::dim("linear", format!("bias {:?}", b.shape())));
            }
        }
        let rows = x.value().len() / din.max(1);
        let mut data = kernels::gemm(x.value().data(), w.value().data(), rows, din, dout);
        if let Some(b) = b {
            for row in data.chunks_mut(dout) {
                for (v, &bb) in row.iter_mut().zip(b.value().data()) {
                    *v += bb;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let y = Tensor::new(shape, data)?;
        let (xv, wv) = (x.rc(), w.rc());
        let backward: super::tape::BackwardFn<T> = Box::new(move |g, need| {
            let dx = need[0].then(|| {
                Tensor::new(
                    xv.shape(),
                    kernels::gemm_nt(g.data(), wv.data(), rows, dout, din),
                )
                .unwrap()
            });
            let dw = need[1].then(|| {
                Tensor::new([din, dout], kernels::gemm_tn(xv.data(), g.data(), rows, din, dout))
                    .unwrap()
            });
            let mut out = vec![dx, dw];
            if need.len() > 2 {
                out.push(need[2].then(|| column_sums(g.data(), dout)));
            }
            out
        });
        match b {
            Some(b) => self.record("linear", y, &[x, w, b], backward),
            None => self.record("linear", y, &[x, w], backward),
        }
    }

    /// Concatenates along the last axis.
    pub fn concat_last(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat_last", format!("{sa:?} ++ {sb:?}")));
        }
        let (ca, cb) = (a.value().last_dim(), b.value().last_dim());
        let rows = a.value().len() / ca.max(1);
        let mut data = Vec::with_capacity(a.value().len() + b.value().len());
        for r in 0..rows {
            data.extend_from_slice(&a.value().data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&b.value().data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let y = Tensor::new(shape, data)?;
        let (sa, sb) = (sa.to_vec(), sb.to_vec());
        self.record(
            "concat_last",
            y,
            &[a, b],
            Box::new(move |g, need| {
                let w = ca + cb;
                let part = |off: usize, c: usize, shape: &[usize]| {
                    let d = g
                        .data()
                        .chunks(w)
                        .flat_map(|row| row[off..off + c].iter().copied())
                        .collect();
                    Tensor::new(shape, d).unwrap()
                };
                vec![
                    need[0].then(|| part(0, ca, &sa)),
                    need[1].then(|| part(ca, cb, &sb)),
                ]
            }),
        )
    }

    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let y = x.to_tensor().reshape(shape)?;
        let orig = x.shape().to_vec();
        self.record(
            "reshape",
            y,
            &[x],
            Box::new(move |g, _| vec![Some(g.clone().reshape(orig.clone()).unwrap())]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, x: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
        let y = permute_tensor(x.value(), perm)?;
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.record(
            "permute",
            y,
            &[x],
            Box::new(move |g, _| vec![Some(permute_tensor(g, &inv).unwrap())]),
        )
    }

    /// Mean over the leading axis: [S, ..] → [..].
    pub fn mean_axis0(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = self.reduce_axis0(x, true)?;
        let shape = y.shape()[1..].to_vec();
        self.reshape(&y, &shape)
    }

    /// Sum over the leading axis, keeping it: [S, ..] → [1, ..].
    pub fn sum_axis0(&self, x: &Var<T>) -> Result<Var<T>> {
        self.reduce_axis0(x, false)
    }

    fn reduce_axis0(&self, x: &Var<T>, mean: bool) -> Result<Var<T>> {
        let shape = x.shape();
        if shape.is_empty() || shape[0] == 0 {
            return Err(Error::dim("reduce_axis0", format!("{shape:?}")));
        }
        let s = shape[0];
        let rest = x.value().len() / s;
        let w = if mean { T::one() / T::lit(s as f64) } else { T::one() };
        let mut data = vec![T::zero(); rest];
        for chunk in x.value().data().chunks(rest) {
            for (d, &v) in data.iter_mut().zip(chunk) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|d| *d *= w);
        let mut out_shape = shape.to_vec();
        out_shape[0] = 1;
        let y = Tensor::new(out_shape, data)?;
        let in_shape = shape.to_vec();
        self.record(
            "reduce_axis0",
            y,
            &[x],
            Box::new(move |g, _| {
                let d: Vec<T> = (0..s).flat_map(|_| g.data().iter().map(|&v| v * w)).collect();
                vec![Some(Tensor::new(in_shape.clone(), d).unwrap())]
            }),
        )
    }

    pub fn elu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary(
            "elu",
            x,
            |v| if v > T::zero() { v } else { v.exp() - T::one() },
            |xv, yv| if xv > T::zero() { T::one() } else { yv + T::one() },
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary("gelu", x, gelu, |xv, _| {
            let half = T::lit(0.5);
            let cdf = half * (T::one() + (xv * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
            let pdf = (-(xv * xv) * half).exp() * T::lit(1.0 / (2.0 * PI).sqrt());
            cdf + xv * pdf
        })
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary("sigmoid", x, sigmoid, |_, yv| yv * (T::one() - yv))
    }

    pub fn softmax(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        if axis >= x.shape().len() {
            return Err(Error::dim("softmax", format!("axis {axis} of {:?}", x.shape())));
        }
        let y = softmax_tensor(x.value(), axis);
        let ys = std::rc::Rc::new(y.clone());
        self.record(
            "softmax",
            y,
            &[x],
            Box::new(move |g, _| {
                let (outer, n, inner) = split_axis(ys.shape(), axis);
                let mut dx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: T = (0..n).map(|j| ys.data()[idx(j)] * g.data()[idx(j)]).sum();
                        for j in 0..n {
                            dx[idx(j)] = ys.data()[idx(j)] * (g.data()[idx(j)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(ys.shape(), dx).unwrap())]
            }),
        )
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&self, x: &Var<T>, gain: &Var<T>, bias: &Var<T>, eps: T) -> Result<Var<T>> {
        let c = x.value().last_dim();
        if c == 0 || gain.shape() != [c] || bias.shape() != [c] {
            return Err(Error::dim(
                "layer_norm",
                format!("input {:?}, gain {:?}, bias {:?}", x.shape(), gain.shape(), bias.shape()),
            ));
        }
        if eps <= T::zero() {
            return Err(Error::Parameter("layer_norm eps must be positive".into()));
        }
        let rows = x.value().len() / c;
        let cn = T::lit(c as f64);
        let mut xhat = vec![T::zero(); rows * c];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let xr = &x.value().data()[r * c..(r + 1) * c];
            let mean = xr.iter().copied().sum::<T>() / cn;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for (h, &v) in xhat[r * c..(r + 1) * c].iter_mut().zip(xr) {
                *h = (v - mean) * rs;
            }
        }
        let (gv, bv) = (gain.value().data(), bias.value().data());
        let y_data = xhat
            .chunks(c)
            .flat_map(|row| row.iter().zip(gv.iter().zip(bv)).map(|(&h, (&g, &b))| h * g + b))
            .collect();
        let y = Tensor::new(x.shape(), y_data)?;
        let gain_rc = gain.rc();
        let shape = x.shape().to_vec();
        self.record(
            "layer_norm",
            y,
            &[x, gain, bias],
            Box::new(move |g, need| {
                let gd = g.data();
                let gn = gain_rc.data();
                let dx = need[0].then(|| {
                    let mut dx = vec![T::zero(); rows * c];
                    for r in 0..rows {
                        let h = &xhat[r * c..(r + 1) * c];
                        let gr = &gd[r * c..(r + 1) * c];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            let dh = gr[j] * gn[j];
                            m1 += dh;
                            m2 += dh * h[j];
                        }
                        m1 /= cn;
                        m2 /= cn;
                        for j in 0..c {
                            dx[r * c + j] = rstd[r] * (gr[j] * gn[j] - m1 - h[j] * m2);
                        }
                    }
                    Tensor::new(shape.clone(), dx).unwrap()
                });
                let dgain = need[1].then(|| {
                    let mut d = vec![T::zero(); c];
                    for (gr, h) in gd.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            d[j] += gr[j] * h[j];
                        }
                    }
                    Tensor::new([c], d).unwrap()
                });
                let dbias = need[2].then(|| column_sums(gd, c));
                vec![dx, dgain, dbias]
            }),
        )
    }

    /// Batched cross-correlation: x [B, cin, h, w], kernels [cout, cin, kh, kw].
    pub fn conv2d(
        &self,
        x: &Var<T>,
        kernels: &Var<T>,
        bias: Option<&Var<T>>,
        padding: (usize, usize),
    ) -> Result<Var<T>> {
        let (sx, sk) = (x.shape(), kernels.shape());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
            return Err(Error::dim("conv2d", format!("input {sx:?}, kernels {sk:?}")));
        }
        let geom = ConvGeom {
            batch: sx[0],
            cin: sx[1],
            h: sx[2],
            w: sx[3],
            cout: sk[0],
            kh: sk[2],
            kw: sk[3],
            ph: padding.0,
            pw: padding.1,
        };
        if geom.kh == 0
            || geom.kw == 0
            || geom.kh > geom.h + 2 * geom.ph
            || geom.kw > geom.w + 2 * geom.pw
        {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {}x{} larger than padded input", geom.kh, geom.kw),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [geom.cout] {
                return Err(Error::dim("conv2d", format!("bias {:?}", b.shape())));
            }
        }
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let mut data = kernels::conv2d_forward(x.value().data(), kernels.value().data(), &geom);
        if let Some(b) = bias {
            for (i, plane) in data.chunks_mut(oh * ow).enumerate() {
                let bv = b.value().data()[i % geom.cout];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let y = Tensor::new([geom.batch, geom.cout, oh, ow], data)?;
        let (xv, kv) = (x.rc(), kernels.rc());
        let backward: super::tape::BackwardFn<T> = Box::new(move |g, need| {
            let dx = need[0].then(|| {
                Tensor::new(xv.shape(), kernels::conv2d_backward_input(g.data(), kv.data(), &geom))
                    .unwrap()
            });
            let dk = need[1].then(|| {
                Tensor::new(kv.shape(), kernels::conv2d_backward_kernel(g.data(), xv.data(), &geom))
                    .unwrap()
            });
            let mut out = vec![dx, dk];
            if need.len() > 2 {
                out.push(need[2].then(|| {
                    let mut d = vec![T::zero(); geom.cout];
                    for (i, plane) in g.data().chunks(oh * ow).enumerate() {
                        d[i % geom.cout] += plane.iter().copied().sum::<T>();
                    }
                    Tensor::new([geom.cout], d).unwrap()
                }));
            }
            out
        });
        match bias {
            Some(b) => self.record("conv2d", y, &[x, kernels, b], backward),
            None => self.record("conv2d", y, &[x, kernels], backward),
        }
    }

    /// Non-overlapping max over `width` along `axis`. A ragged tail is
    /// padded by repeating the final element.
    pub fn maxpool(&self, x: &Var<T>, axis: usize, width: usize) -> Result<Var<T>> {
        if width < 1 {
            return Err(Error::Parameter("maxpool width must be >= 1".into()));
        }
        if axis >= x.shape().len() {
            return Err(Error::dim("maxpool", format!("axis {axis} of {:?}", x.shape())));
        }
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let m = n.div_ceil(width);
        let xd = x.value().data();
        let mut data = Vec::with_capacity(outer * m * inner);
        let mut argmax = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for j in 0..m {
                for i in 0..inner {
                    let lo = j * width;
                    let hi = ((j + 1) * width).min(n);
                    let mut best = (o * n + lo) * inner + i;
                    for p in lo + 1..hi {
                        let idx = (o * n + p) * inner + i;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    data.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = m;
        let y = Tensor::new(shape, data)?;
        let in_shape = x.shape().to_vec();
        self.record(
            "maxpool",
            y,
            &[x],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(in_shape.clone());
                let d = dx.data_mut();
                for (&idx, &gv) in argmax.iter().zip(g.data()) {
                    d[idx] += gv;
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Inverted dropout with keep probability `1 - p`. Identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, x: &Var<T>, p: f64, rng: &mut R) -> Result<Var<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout rate {p} not in [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x.clone());
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask = Tensor::from_fn(x.shape(), |_| {
            if rng.gen::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let mask = self.constant(mask);
        self.mul(x, &mask)
    }

    /// Masked mean of binary cross-entropy with logits against soft targets.
    pub fn bce_with_logits(&self, logits: &Var<T>, targets: &[T], mask: &[bool]) -> Result<Var<T>> {
        let n = logits.value().len();
        if targets.len() != n || mask.len() != n {
            return Err(Error::dim(
                "bce_with_logits",
                format!("{n} logits, {} targets, {} mask", targets.len(), mask.len()),
            ));
        }
        if logits.value().data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("bce_with_logits input"));
        }
        let count = mask.iter().filter(|&&m| m).count().max(1);
        let inv = T::one() / T::lit(count as f64);
        let z = logits.value().data();
        let mut total = T::zero();
        for i in 0..n {
            if mask[i] {
                let (zi, yi) = (z[i], targets[i]);
                total += zi.max(T::zero()) - zi * yi + (T::one() + (-zi.abs()).exp()).ln();
            }
        }
        let y = Tensor::scalar(total * inv);
        let zs = logits.rc();
        let targets = targets.to_vec();
        let mask = mask.to_vec();
        self.record(
            "bce_with_logits",
            y,
            &[logits],
            Box::new(move |g, _| {
                let gv = g.data()[0] * inv;
                let d = (0..targets.len())
                    .map(|i| {
                        if mask[i] {
                            gv * (sigmoid(zs.data()[i]) - targets[i])
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![Some(Tensor::new(zs.shape(), d).unwrap())]
            }),
        )
    }

    /// Masked mean categorical cross-entropy; logits [N, V], one class per row.
    pub fn cross_entropy(&self, logits: &Var<T>, classes: &[usize], mask: &[bool]) -> Result<Var<T>> {
        let s = logits.shape();
        if s.len() != 2 || classes.len() != s[0] || mask.len() != s[0] {
            return Err(Error::dim(
                "cross_entropy",
                format!("logits {s:?}, {} classes, {} mask", classes.len(), mask.len()),
            ));
        }
        let v = s[1];
        if let Some(&bad) = classes.iter().zip(mask).find(|(&c, &m)| m && c >= v).map(|(c, _)| c) {
            return Err(Error::Index { index: bad, len: v });
        }
        if logits.value().data().iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("cross_entropy input"));
        }
        let probs = softmax_tensor(logits.value(), 1);
        let count = mask.iter().filter(|&&m| m).count().max(1);
        let inv = T::one() / T::lit(count as f64);
        let z = logits.value().data();
        let mut total = T::zero();
        for (r, (&c, &m)) in classes.iter().zip(mask).enumerate() {
            if m {
                let row = &z[r * v..(r + 1) * v];
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
                total += lse - row[c];
            }
        }
        let y = Tensor::scalar(total * inv);
        let classes = classes.to_vec();
        let mask = mask.to_vec();
        self.record(
            "cross_entropy",
            y,
            &[logits],
            Box::new(move |g, _| {
                let gv = g.data()[0] * inv;
                let mut d = probs.clone();
                for (r, row) in d.data_mut().chunks_mut(v).enumerate() {
                    if mask[r] {
                        row[classes[r]] -= T::one();
                        row.iter_mut().for_each(|x| *x *= gv);
                    } else {
                        row.iter_mut().for_each(|x| *x = T::zero());
                    }
                }
                vec![Some(d)]
            }),
        )
    }
}

fn column_sums<T: Scalar>(data: &[T], c: usize) -> Tensor<T> {
    let mut d = vec![T::zero(); c];
    for row in data.chunks(c) {
        for (a, &b) in d.iter_mut().zip(row) {
            *a += b;
        }
    }
    Tensor::new([c], d).unwrap()
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn gelu<T: Scalar>(v: T) -> T {
    T::lit(0.5) * v * (T::one() + (v * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Numerically stable softmax along `axis`.
pub fn softmax_tensor<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut y = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mx = (0..n).map(|j| xd[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..n {
                let e = (xd[idx(j)] - mx).exp();
                y[idx(j)] = e;
                total += e;
            }
            for j in 0..n {
                y[idx(j)] /= total;
            }
        }
    }
    Tensor::new(x.shape(), y).unwrap()
}

pub(crate) fn permute_tensor<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let nd = x.ndim();
    let mut seen = vec![false; nd];
    if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::dim("permute", format!("{perm:?} for {:?}", x.shape())));
    }
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut data = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; nd];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(&i, &s)| i * s).sum();
        data.push(x.data()[off]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, data)
}
