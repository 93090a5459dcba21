use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Kernel (time, freq) and padding of the three conv layers.
const PLAN: [((usize, usize), (usize, usize)); 3] = [((3, 3), (1, 1)), ((3, 3), (1, 1)), ((1, 3), (0, 1))];

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub bands: usize,
    pub channels: usize,
    /// Frequency max-pool width after each conv.
    pub pools: [usize; 3],
    pub embed_dim: usize,
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let need: usize = self.pools.iter().product();
        if self.pools.contains(&0) {
            return Err(Error::Config("pool widths must be >= 1".into()));
        }
        if self.bands < need {
            return Err(Error::Config(format!(
                "{} bands cannot feed pools {:?} (need >= {need})",
                self.bands, self.pools
            )));
        }
        if self.channels == 0 || self.embed_dim == 0 {
            return Err(Error::Config("front-end channels and embedding dim must be positive".into()));
        }
        Ok(())
    }

    /// Frequency bins left after pooling.
    pub fn pooled_bands(&self) -> usize {
        self.pools.iter().fold(self.bands, |b, &p| b.div_ceil(p))
    }

    pub fn param_count(&self) -> usize {
        let ch = self.channels;
        let convs: usize = PLAN
            .iter()
            .enumerate()
            .map(|(i, ((kh, kw), _))| {
                let cin = if i == 0 { 1 } else { ch };
                ch * cin * kh * kw + ch
            })
            .sum();
        convs + (ch * self.pooled_bands() + 1) * self.embed_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendParams<P> {
    /// `[(kernel [cout, cin, kh, kw], bias [cout]); 3]`.
    pub convs: Vec<(P, P)>,
    /// `[channels · pooled_bands, C]`.
    pub proj_w: P,
    pub proj_b: P,
}

pub type FrontendWeights<T> = FrontendParams<Tensor<T>>;
pub type FrontendVars<T> = FrontendParams<Var<T>>;

impl<P> FrontendParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> FrontendParams<Q> {
        FrontendParams {
            convs: self.convs.iter().map(|(k, b)| (f(k), f(b))).collect(),
            proj_w: f(&self.proj_w),
            proj_b: f(&self.proj_b),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        for (i, (k, b)) in self.convs.iter().enumerate() {
            f(format!("{prefix}.conv{i}.weight"), k);
            f(format!("{prefix}.conv{i}.bias"), b);
        }
        f(format!("{prefix}.proj.weight"), &self.proj_w);
        f(format!("{prefix}.proj.bias"), &self.proj_b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        for (k, b) in &mut self.convs {
            f(k);
            f(b);
        }
        f(&mut self.proj_w);
        f(&mut self.proj_b);
    }
}

pub(crate) fn fan_in_uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}

impl<T: Scalar> FrontendWeights<T> {
    pub fn random<R: Rng>(rng: &mut R, cfg: &FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let ch = cfg.channels;
        let convs = PLAN
            .iter()
            .enumerate()
            .map(|(i, ((kh, kw), _))| {
                let cin = if i == 0 { 1 } else { ch };
                (
                    fan_in_uniform(rng, &[ch, cin, *kh, *kw], cin * kh * kw),
                    Tensor::zeros([ch]),
                )
            })
            .collect();
        let flat = ch * cfg.pooled_bands();
        Ok(Self {
            convs,
            proj_w: fan_in_uniform(rng, &[flat, cfg.embed_dim], flat),
            proj_b: Tensor::zeros([cfg.embed_dim]),
        })
    }
}

/// Conv stack on `x` [S, T, bands] with shared weights across stems;
/// returns [S, T, C]. Dropout runs only when `dropout` is given.
pub fn frontend_vars<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    w: &FrontendVars<T>,
    cfg: &FrontendConfig,
    mut dropout: Option<(f64, &mut dyn RngCore)>,
) -> Result<Var<T>> {
    cfg.validate()?;
    let shape = x.shape().to_vec();
    if shape.len() != 3 || shape[2] != cfg.bands {
        return Err(Error::dim(
            "frontend",
            format!("expected [S, T, {}], got {shape:?}", cfg.bands),
        ));
    }
    let (s, t) = (shape[0], shape[1]);
    let mut h = tape.reshape(x, &[s, 1, t, cfg.bands])?;
    for (((k, b), (_, pad)), &pool) in w.convs.iter().zip(PLAN).zip(&cfg.pools) {
        h = tape.conv2d(&h, k, Some(b), pad)?;
        h = tape.elu(&h)?;
        if let Some((p, rng)) = dropout.as_mut() {
            h = tape.dropout(&h, *p, &mut **rng)?;
        }
        h = tape.maxpool(&h, 3, pool)?;
    }
    let f = cfg.pooled_bands();
    let h = tape.permute(&h, &[0, 2, 1, 3])?;
    let h = tape.reshape(&h, &[s, t, cfg.channels * f])?;
    tape.linear(&h, &w.proj_w, Some(&w.proj_b))
}

/// Per-stem, per-frame embeddings [S, T, C] of a spectrogram [S, T, bands].
pub fn frontend_forward<T: Scalar>(
    spec: &Tensor<T>,
    w: &FrontendWeights<T>,
    cfg: &FrontendConfig,
) -> Result<Tensor<T>> {
    let tape = Tape::inference();
    let vars = w.map(&mut |p| tape.constant(p.clone()));
    Ok(frontend_vars(&tape, &tape.constant(spec.clone()), &vars, cfg, None)?.to_tensor())
}
