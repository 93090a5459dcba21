use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::attention::{AttentionConfig, AttentionKind, AttentionParams, AttentionWeights};
use crate::error::{Error, Result};
use crate::frontend::{fan_in_uniform, FrontendParams, FrontendWeights};
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Layer-norm gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<P> {
    pub gain: P,
    pub bias: P,
}

/// Dense layer `x · W + b` with `W` as `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<P> {
    pub dina_norm: NormParams<P>,
    pub dina1: AttentionParams<P>,
    /// Absent when the second dilated branch is ablated.
    pub dina2: Option<AttentionParams<P>>,
    pub mlp_norm: NormParams<P>,
    pub fc1: LinearParams<P>,
    pub fc2: LinearParams<P>,
    pub inst_norm: NormParams<P>,
    /// 2D grid attention, or plain 1D attention when instrument attention
    /// is ablated.
    pub inst: AttentionParams<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    pub frontend: FrontendParams<P>,
    pub blocks: Vec<BlockParams<P>>,
    pub beat: LinearParams<P>,
    pub downbeat: LinearParams<P>,
    pub boundary: LinearParams<P>,
    pub label: LinearParams<P>,
}

pub type ModelVars<T> = ModelParams<Var<T>>;

impl<P> NormParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> NormParams<Q> {
        NormParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
}

impl<P> LinearParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> LinearParams<Q> {
        LinearParams {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<P> ModelParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ModelParams<Q> {
        ModelParams {
            frontend: self.frontend.map(f),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    dina_norm: b.dina_norm.map(f),
                    dina1: b.dina1.map(f),
                    dina2: b.dina2.as_ref().map(|a| a.map(f)),
                    mlp_norm: b.mlp_norm.map(f),
                    fc1: b.fc1.map(f),
                    fc2: b.fc2.map(f),
                    inst_norm: b.inst_norm.map(f),
                    inst: b.inst.map(f),
                })
                .collect(),
            beat: self.beat.map(f),
            downbeat: self.downbeat.map(f),
            boundary: self.boundary.map(f),
            label: self.label.map(f),
        }
    }

    /// Every slot with its stable name, in storage order (the order `map`
    /// visits them).
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a P)) {
        self.frontend.visit("frontend", f);
        for (l, b) in self.blocks.iter().enumerate() {
            let p = format!("block{l}");
            f(format!("{p}.dina_norm.gain"), &b.dina_norm.gain);
            f(format!("{p}.dina_norm.bias"), &b.dina_norm.bias);
            b.dina1.visit(&format!("{p}.dina1"), f);
            if let Some(a) = &b.dina2 {
                a.visit(&format!("{p}.dina2"), f);
            }
            f(format!("{p}.mlp_norm.gain"), &b.mlp_norm.gain);
            f(format!("{p}.mlp_norm.bias"), &b.mlp_norm.bias);
            f(format!("{p}.fc1.weight"), &b.fc1.weight);
            f(format!("{p}.fc1.bias"), &b.fc1.bias);
            f(format!("{p}.fc2.weight"), &b.fc2.weight);
            f(format!("{p}.fc2.bias"), &b.fc2.bias);
            f(format!("{p}.inst_norm.gain"), &b.inst_norm.gain);
            f(format!("{p}.inst_norm.bias"), &b.inst_norm.bias);
            b.inst.visit(&format!("{p}.inst"), f);
        }
        for (name, h) in [
            ("head.beat", &self.beat),
            ("head.downbeat", &self.downbeat),
            ("head.boundary", &self.boundary),
            ("head.label", &self.label),
        ] {
            f(format!("{name}.weight"), &h.weight);
            f(format!("{name}.bias"), &h.bias);
        }
    }

    /// Same order as [`ModelParams::visit`].
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        self.frontend.visit_mut(f);
        for b in &mut self.blocks {
            f(&mut b.dina_norm.gain);
            f(&mut b.dina_norm.bias);
            b.dina1.visit_mut(f);
            if let Some(a) = &mut b.dina2 {
                a.visit_mut(f);
            }
            for p in [
                &mut b.mlp_norm.gain,
                &mut b.mlp_norm.bias,
                &mut b.fc1.weight,
                &mut b.fc1.bias,
                &mut b.fc2.weight,
                &mut b.fc2.bias,
                &mut b.inst_norm.gain,
                &mut b.inst_norm.bias,
            ] {
                f(p);
            }
            b.inst.visit_mut(f);
        }
        for h in [&mut self.beat, &mut self.downbeat, &mut self.boundary, &mut self.label] {
            f(&mut h.weight);
            f(&mut h.bias);
        }
    }

    /// Slots in storage order.
    pub fn slots(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.visit(&mut |_, p| out.push(p));
        out
    }

    /// Names in storage order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(name));
        out
    }

    /// Same layout, filled from `slots` given in storage order.
    pub fn fill<Q: Clone>(&self, slots: &[Q]) -> Result<ModelParams<Q>> {
        let n = self.slots().len();
        if slots.len() != n {
            return Err(Error::dim("model params", format!("{} slots for a layout of {n}", slots.len())));
        }
        let mut it = slots.iter();
        Ok(self.map(&mut |_| it.next().unwrap().clone()))
    }
}

pub type ModelTensors<T> = ModelParams<Tensor<T>>;

/// Configuration plus parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    pub config: ModelConfig,
    pub params: ModelTensors<T>,
}

fn norm<T: Scalar>(n: usize) -> NormParams<Tensor<T>> {
    NormParams {
        gain: Tensor::full([n], T::one()),
        bias: Tensor::zeros([n]),
    }
}

fn linear<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, out: usize) -> LinearParams<Tensor<T>> {
    LinearParams {
        weight: fan_in_uniform(rng, &[fan_in, out], fan_in),
        bias: Tensor::zeros([out]),
    }
}

fn attention_cfg(cfg: &ModelConfig, d: usize) -> AttentionConfig {
    AttentionConfig::new(cfg.kernel_size, d, cfg.num_heads)
}

impl<T: Scalar> ModelWeights<T> {
    /// Fan-in uniform weights, zero biases and bias tables, unit norm gains.
    /// Deterministic in `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.embed_dim;
        let frontend = FrontendWeights::random(&mut rng, &cfg.frontend())?;
        let inst_kind = if cfg.use_instrument_attention {
            AttentionKind::Grid
        } else {
            AttentionKind::Temporal
        };
        let blocks = (0..cfg.num_blocks)
            .map(|l| {
                let a1 = attention_cfg(cfg, cfg.dilation(l, 0)?);
                let a2 = attention_cfg(cfg, cfg.dilation(l, 1)?);
                let hidden = cfg.mlp_ratio * c;
                Ok(BlockParams {
                    dina_norm: norm(c),
                    dina1: AttentionWeights::random(&mut rng, c, &a1, AttentionKind::Temporal),
                    dina2: cfg
                        .use_second_dina
                        .then(|| AttentionWeights::random(&mut rng, c, &a2, AttentionKind::Temporal)),
                    mlp_norm: norm(2 * c),
                    fc1: linear(&mut rng, 2 * c, hidden),
                    fc2: linear(&mut rng, hidden, c),
                    inst_norm: norm(c),
                    inst: AttentionWeights::random(&mut rng, c, &attention_cfg(cfg, 1), inst_kind),
                })
            })
            .collect::<Result<_>>()?;
        let params = ModelParams {
            frontend,
            blocks,
            beat: linear(&mut rng, c, 1),
            downbeat: linear(&mut rng, c, 1),
            boundary: linear(&mut rng, c, 1),
            label: linear(&mut rng, c, cfg.labels.len()),
        };
        Ok(Self {
            config: cfg.clone(),
            params,
        })
    }

    /// Checks that names and shapes are exactly what `config` implies and
    /// that every value is finite.
    pub fn validate(&self) -> Result<()> {
        let expected = Self::init(&self.config, 0)?.layout();
        let got = self.layout();
        if got.len() != expected.len() {
            return Err(Error::Format(format!(
                "{} parameter tensors, config implies {}",
                got.len(),
                expected.len()
            )));
        }
        for ((gn, gs), (en, es)) in got.iter().zip(&expected) {
            if gn != en || gs != es {
                return Err(Error::Format(format!("parameter {gn} {gs:?}, config implies {en} {es:?}")));
            }
        }
        if self.params.slots().iter().any(|t| !t.all_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.slots().iter().map(|t| t.len()).sum()
    }

    /// Binds every tensor to `tape`: as leaves when `trainable`, else as
    /// constants.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> ModelVars<T> {
        self.params.map(&mut |t| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    /// `(name, shape)` of every tensor in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.params.visit(&mut |name, t| out.push((name, t.shape().to_vec())));
        out
    }
}

/// Exact scalar parameter count implied by `cfg`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let c = cfg.embed_dim;
    let k = cfg.kernel_size;
    let heads = cfg.num_heads;
    let attn = |kind: AttentionKind| 4 * c * c + 3 * c + heads * kind.bias_len(k);
    let inst_kind = if cfg.use_instrument_attention {
        AttentionKind::Grid
    } else {
        AttentionKind::Temporal
    };
    let hidden = cfg.mlp_ratio * c;
    let block = attn(AttentionKind::Temporal) * (1 + cfg.use_second_dina as usize)
        + attn(inst_kind)
        + 2 * c + 4 * c + 2 * c
        + (2 * c * hidden + hidden)
        + (hidden * c + c);
    let heads_total = 3 * (c + 1) + (c + 1) * cfg.labels.len();
    cfg.frontend().param_count() + cfg.num_blocks * block + heads_total
}
