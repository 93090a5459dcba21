use std::rc::Rc;

use rand::Rng;

use super::neighborhood::Neighborhood;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    /// Window length per axis; odd.
    pub kernel_size: usize,
    pub dilation: usize,
    pub num_heads: usize,
    pub relative_bias: bool,
}

impl AttentionConfig {
    pub fn new(kernel_size: usize, dilation: usize, num_heads: usize) -> Self {
        Self {
            kernel_size,
            dilation,
            num_heads,
            relative_bias: true,
        }
    }

    pub fn validate(&self, embed_dim: usize) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size {} must be odd and positive",
                self.kernel_size
            )));
        }
        if self.dilation == 0 {
            return Err(Error::Config("dilation must be >= 1".into()));
        }
        if self.num_heads == 0 || !embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide embedding dim {embed_dim}",
                self.num_heads
            )));
        }
        Ok(())
    }
}

/// Which neighborhood shape an attention module covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    /// Dilated windows along time.
    Temporal,
    /// Instrument × time windows.
    Grid,
}

impl AttentionKind {
    /// Relative bias entries per head.
    pub fn bias_len(self, k: usize) -> usize {
        match self {
            AttentionKind::Temporal => 2 * k - 1,
            AttentionKind::Grid => (2 * k - 1) * (2 * k - 1),
        }
    }
}

/// Learnable tensors of one attention module, generic over the slot type so
/// the same layout holds plain tensors or tape variables. Projection weights
/// are `[C_in, C_out]` so they apply as `x · W + b`.
///
/// The key projection has no bias: it would shift every logit of a query by
/// the same amount, which the softmax cancels, so its gradient is always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<P> {
    pub query_w: P,
    pub query_b: P,
    pub key_w: P,
    pub value_w: P,
    pub value_b: P,
    pub out_w: P,
    pub out_b: P,
    /// `[heads, bias_len]`.
    pub rel_bias: Option<P>,
}

pub type AttentionWeights<T> = AttentionParams<Tensor<T>>;
/// [`AttentionWeights`] bound to a tape.
pub type AttentionVars<T> = AttentionParams<Var<T>>;

impl<P> AttentionParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> AttentionParams<Q> {
        AttentionParams {
            query_w: f(&self.query_w),
            query_b: f(&self.query_b),
            key_w: f(&self.key_w),
            value_w: f(&self.value_w),
            value_b: f(&self.value_b),
            out_w: f(&self.out_w),
            out_b: f(&self.out_b),
            rel_bias: self.rel_bias.as_ref().map(f),
        }
    }

    /// Visits every slot with a stable name, in a fixed order.
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        let slots = [
            ("query.weight", &self.query_w),
            ("query.bias", &self.query_b),
            ("key.weight", &self.key_w),
            ("value.weight", &self.value_w),
            ("value.bias", &self.value_b),
            ("out.weight", &self.out_w),
            ("out.bias", &self.out_b),
        ];
        for (name, p) in slots {
            f(format!("{prefix}.{name}"), p);
        }
        if let Some(b) = &self.rel_bias {
            f(format!("{prefix}.rel_bias"), b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        for p in [
            &mut self.query_w,
            &mut self.query_b,
            &mut self.key_w,
            &mut self.value_w,
            &mut self.value_b,
            &mut self.out_w,
            &mut self.out_b,
        ] {
            f(p);
        }
        if let Some(b) = &mut self.rel_bias {
            f(b);
        }
    }
}

impl<T: Scalar> AttentionWeights<T> {
    /// Uniform(-1/√C, 1/√C) projections, zero biases and bias table.
    pub fn random<R: Rng>(
        rng: &mut R,
        c: usize,
        cfg: &AttentionConfig,
        kind: AttentionKind,
    ) -> Self {
        let bound = 1.0 / (c as f64).sqrt();
        let mut mat = || Tensor::from_fn([c, c], |_| T::lit(rng.gen_range(-bound..bound)));
        let (query_w, key_w, value_w, out_w) = (mat(), mat(), mat(), mat());
        Self {
            query_w,
            key_w,
            value_w,
            out_w,
            query_b: Tensor::zeros([c]),
            value_b: Tensor::zeros([c]),
            out_b: Tensor::zeros([c]),
            rel_bias: cfg
                .relative_bias
                .then(|| Tensor::zeros([cfg.num_heads, kind.bias_len(cfg.kernel_size)])),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.query_w.shape()[0]
    }

    pub fn bind(&self, tape: &Tape<T>) -> AttentionVars<T> {
        self.map(&mut |t| tape.constant(t.clone()))
    }
}

/// Projects `x` [B, T, C] (or any [.., C] whose rows match `nb`), attends
/// within `nb`, and applies the output projection.
pub fn attend<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    w: &AttentionVars<T>,
    nb: Rc<Neighborhood>,
    heads: usize,
    attn_dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    let c = *shape.last().unwrap_or(&0);
    let n = x.value().len() / c.max(1);
    let q = tape.linear(x, &w.query_w, Some(&w.query_b))?;
    let k = tape.linear(x, &w.key_w, None)?;
    let v = tape.linear(x, &w.value_w, Some(&w.value_b))?;
    let flat = [n, c];
    let (q, k, v) = (
        tape.reshape(&q, &flat)?,
        tape.reshape(&k, &flat)?,
        tape.reshape(&v, &flat)?,
    );
    let a = tape.neighborhood_attention(&q, &k, &v, w.rel_bias.as_ref(), nb, heads, attn_dropout)?;
    let a = tape.reshape(&a, &shape)?;
    tape.linear(&a, &w.out_w, Some(&w.out_b))
}

fn check_weights<T: Scalar>(
    w: &AttentionWeights<T>,
    c: usize,
    cfg: &AttentionConfig,
    kind: AttentionKind,
) -> Result<()> {
    cfg.validate(c)?;
    let sq = [c, c];
    let v = [c];
    let ok = w.query_w.shape() == sq
        && w.key_w.shape() == sq
        && w.value_w.shape() == sq
        && w.out_w.shape() == sq
        && w.query_b.shape() == v
        && w.value_b.shape() == v
        && w.out_b.shape() == v;
    if !ok {
        return Err(Error::dim("attention", format!("weights inconsistent with C = {c}")));
    }
    match (&w.rel_bias, cfg.relative_bias) {
        (Some(b), true) if b.shape() == [cfg.num_heads, kind.bias_len(cfg.kernel_size)] => Ok(()),
        (None, false) => Ok(()),
        _ => Err(Error::dim("attention", "relative bias table does not match config")),
    }
}

fn bias_if<T: Scalar>(w: &AttentionVars<T>, cfg: &AttentionConfig) -> AttentionVars<T> {
    let mut w = w.clone();
    if !cfg.relative_bias {
        w.rel_bias = None;
    }
    w
}

/// 1D dilated neighborhood attention over `x` [T, C].
pub fn na1d<T: Scalar>(x: &Tensor<T>, w: &AttentionWeights<T>, cfg: &AttentionConfig) -> Result<Tensor<T>> {
    if x.ndim() != 2 || x.shape()[0] == 0 {
        return Err(Error::dim("na1d", format!("expected [T >= 1, C], got {:?}", x.shape())));
    }
    let (t, c) = (x.shape()[0], x.shape()[1]);
    check_weights(w, c, cfg, AttentionKind::Temporal)?;
    let nb = Rc::new(Neighborhood::dilated_1d(1, t, cfg.kernel_size, cfg.dilation)?);
    let tape = Tape::inference();
    let vars = bias_if(&w.bind(&tape), cfg);
    let y = attend(&tape, &tape.constant(x.clone()), &vars, nb, cfg.num_heads, None)?;
    Ok(y.to_tensor())
}

/// 2D neighborhood attention over the (instrument, time) grid of
/// `x` [S, T, C], non-dilated, `k × k` windows.
pub fn na2d<T: Scalar>(x: &Tensor<T>, w: &AttentionWeights<T>, cfg: &AttentionConfig) -> Result<Tensor<T>> {
    if x.ndim() != 3 || x.shape()[0] == 0 || x.shape()[1] == 0 {
        return Err(Error::dim("na2d", format!("expected [S, T, C], got {:?}", x.shape())));
    }
    let (s, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    check_weights(w, c, cfg, AttentionKind::Grid)?;
    let nb = Rc::new(Neighborhood::grid_2d(s, t, cfg.kernel_size)?);
    let tape = Tape::inference();
    let vars = bias_if(&w.bind(&tape), cfg);
    let y = attend(&tape, &tape.constant(x.clone()), &vars, nb, cfg.num_heads, None)?;
    Ok(y.to_tensor())
}
