//! Raw slice kernels behind the tape ops.
//!
//! Parallel variants split work over disjoint output rows, and every row is
//! reduced in a fixed order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::scalar::Scalar;

const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m,n] = a[m,k] · b[k,n]`.
pub fn gemm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    if n == 0 {
        return out;
    }
    let row = |(i, o): (usize, &mut [T])| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `out[m,k] = a[m,n] · b[k,n]ᵀ`.
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    if k == 0 {
        return out;
    }
    let row = |(i, o): (usize, &mut [T])| {
        let ar = &a[i * n..(i + 1) * n];
        for (p, ov) in o.iter_mut().enumerate() {
            let br = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in ar.iter().zip(br) {
                acc += x * y;
            }
            *ov = acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        out.chunks_mut(k).enumerate().for_each(row);
    }
    out
}

/// `out[k,n] = a[m,k]ᵀ · b[m,n]`.
pub fn gemm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    if n == 0 {
        return out;
    }
    let row = |(i, o): (usize, &mut [T])| {
        for r in 0..m {
            let av = a[r * k + i];
            if av == T::zero() {
                continue;
            }
            let br = &b[r * n..(r + 1) * n];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// Geometry of a batched 2D cross-correlation.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.ph + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pw + 1 - self.kw
    }

    /// Output column range `[lo, hi)` for which input column `ox + dx - pw`
    /// is in bounds, and the matching input offset.
    #[inline]
    fn col_span(&self, dx: usize) -> (usize, usize) {
        let ow = self.out_w();
        let lo = self.pw.saturating_sub(dx);
        let hi = (self.w + self.pw).saturating_sub(dx).min(ow);
        (lo, hi.max(lo))
    }
}

/// x: [batch, cin, h, w], k: [cout, cin, kh, kw] → [batch, cout, oh, ow].
pub fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let mut out = vec![T::zero(); g.batch * g.cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(bc, o)| {
        let (b, co) = (bc / g.cout, bc % g.cout);
        for ci in 0..g.cin {
            let xin = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
            for dy in 0..g.kh {
                for dx in 0..g.kw {
                    let kv = k[((co * g.cin + ci) * g.kh + dy) * g.kw + dx];
                    if kv == T::zero() {
                        continue;
                    }
                    let (lo, hi) = g.col_span(dx);
                    for oy in 0..oh {
                        let iy = oy + dy;
                        if iy < g.ph || iy - g.ph >= g.h {
                            continue;
                        }
                        let xr = &xin[(iy - g.ph) * g.w..][..g.w];
                        let orow = &mut o[oy * ow..(oy + 1) * ow];
                        for ox in lo..hi {
                            orow[ox] += kv * xr[ox + dx - g.pw];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient with respect to the input.
pub fn conv2d_backward_input<T: Scalar>(dy_: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = g.h * g.w;
    let mut dx_ = vec![T::zero(); g.batch * g.cin * plane];
    dx_.par_chunks_mut(plane).enumerate().for_each(|(bc, dxin)| {
        let (b, ci) = (bc / g.cin, bc % g.cin);
        for co in 0..g.cout {
            let dout = &dy_[(b * g.cout + co) * oh * ow..][..oh * ow];
            for dy in 0..g.kh {
                for dx in 0..g.kw {
                    let kv = k[((co * g.cin + ci) * g.kh + dy) * g.kw + dx];
                    if kv == T::zero() {
                        continue;
                    }
                    let (lo, hi) = g.col_span(dx);
                    for oy in 0..oh {
                        let iy = oy + dy;
                        if iy < g.ph || iy - g.ph >= g.h {
                            continue;
                        }
                        let xr = &mut dxin[(iy - g.ph) * g.w..][..g.w];
                        let orow = &dout[oy * ow..(oy + 1) * ow];
                        for ox in lo..hi {
                            xr[ox + dx - g.pw] += kv * orow[ox];
                        }
                    }
                }
            }
        }
    });
    dx_
}

/// Gradient with respect to the kernel.
pub fn conv2d_backward_kernel<T: Scalar>(dy_: &[T], x: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let taps = g.cin * g.kh * g.kw;
    let mut dk = vec![T::zero(); g.cout * taps];
    dk.par_chunks_mut(taps).enumerate().for_each(|(co, dkr)| {
        for b in 0..g.batch {
            let dout = &dy_[(b * g.cout + co) * oh * ow..][..oh * ow];
            for ci in 0..g.cin {
                let xin = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                for dy in 0..g.kh {
                    for dx in 0..g.kw {
                        let (lo, hi) = g.col_span(dx);
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let iy = oy + dy;
                            if iy < g.ph || iy - g.ph >= g.h {
                                continue;
                            }
                            let xr = &xin[(iy - g.ph) * g.w..][..g.w];
                            let orow = &dout[oy * ow..(oy + 1) * ow];
                            for ox in lo..hi {
                                acc += orow[ox] * xr[ox + dx - g.pw];
                            }
                        }
                        dkr[(ci * g.kh + dy) * g.kw + dx] += acc;
                    }
                }
            }
        }
    });
    dk
}
