use std::collections::HashMap;
use std::rc::Rc;

use rand::RngCore;

use super::config::ModelConfig;
use super::weights::{BlockParams, LinearParams, ModelVars, ModelWeights, NormParams};
use crate::attention::{attend, Neighborhood};
use crate::error::{Error, Result};
use crate::frontend::{frontend_vars, StemSpectrogram};
use crate::numerics::{softmax_tensor, sigmoid, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::scalar::Scalar;

/// Per-frame probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameActivations<T> {
    pub beat: Vec<T>,
    pub downbeat: Vec<T>,
    pub boundary: Vec<T>,
    /// `[T, vocab]`, rows sum to one.
    pub labels: Tensor<T>,
    pub fps: f64,
}

impl<T: Scalar> FrameActivations<T> {
    pub fn frames(&self) -> usize {
        self.beat.len()
    }
}

/// Pre-activation head outputs on a tape.
pub struct Logits<T> {
    /// `[T]` each.
    pub beat: Var<T>,
    pub downbeat: Var<T>,
    pub boundary: Var<T>,
    /// `[T, vocab]`.
    pub labels: Var<T>,
}

/// Neighborhood index tables, built once per (kind, dilation).
struct Neighborhoods {
    stems: usize,
    frames: usize,
    k: usize,
    cache: HashMap<(bool, usize), Rc<Neighborhood>>,
}

impl Neighborhoods {
    fn temporal(&mut self, d: usize) -> Result<Rc<Neighborhood>> {
        self.get(false, d)
    }

    fn grid(&mut self) -> Result<Rc<Neighborhood>> {
        self.get(true, 1)
    }

    fn get(&mut self, grid: bool, d: usize) -> Result<Rc<Neighborhood>> {
        if let Some(nb) = self.cache.get(&(grid, d)) {
            return Ok(nb.clone());
        }
        let nb = Rc::new(if grid {
            Neighborhood::grid_2d(self.stems, self.frames, self.k)?
        } else {
            Neighborhood::dilated_1d(self.stems, self.frames, self.k, d)?
        });
        self.cache.insert((grid, d), nb.clone());
        Ok(nb)
    }
}

/// Dropout only in training mode; identity otherwise.
struct Dropper<'r> {
    rng: Option<&'r mut dyn RngCore>,
}

impl Dropper<'_> {
    fn apply<T: Scalar>(&mut self, tape: &Tape<T>, x: Var<T>, p: f64) -> Result<Var<T>> {
        match self.rng.as_deref_mut() {
            Some(rng) if p > 0.0 => tape.dropout(&x, p, rng),
            _ => Ok(x),
        }
    }

    fn attention(&mut self, p: f64) -> Option<(f64, &mut dyn RngCore)> {
        match self.rng.as_deref_mut() {
            Some(rng) if p > 0.0 => Some((p, rng)),
            _ => None,
        }
    }
}

fn norm<T: Scalar>(tape: &Tape<T>, x: &Var<T>, n: &NormParams<Var<T>>) -> Result<Var<T>> {
    tape.layer_norm(x, &n.gain, &n.bias, T::lit(LAYER_NORM_EPS))
}

fn dense<T: Scalar>(tape: &Tape<T>, x: &Var<T>, l: &LinearParams<Var<T>>) -> Result<Var<T>> {
    tape.linear(x, &l.weight, Some(&l.bias))
}

fn block<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    w: &BlockParams<Var<T>>,
    l: usize,
    cfg: &ModelConfig,
    nbs: &mut Neighborhoods,
    drop: &mut Dropper<'_>,
) -> Result<Var<T>> {
    let heads = cfg.num_heads;
    let rates = &cfg.dropout;
    let h = norm(tape, x, &w.dina_norm)?;
    let a = attend(tape, &h, &w.dina1, nbs.temporal(cfg.dilation(l, 0)?)?, heads, drop.attention(rates.attention))?;
    let a = drop.apply(tape, a, rates.skip)?;
    let left = tape.add(x, &a)?;
    let right = match &w.dina2 {
        Some(w2) => {
            let b = attend(tape, &h, w2, nbs.temporal(cfg.dilation(l, 1)?)?, heads, drop.attention(rates.attention))?;
            let b = drop.apply(tape, b, rates.skip)?;
            tape.add(x, &b)?
        }
        None => x.clone(),
    };
    let u = tape.concat_last(&left, &right)?;
    let m = dense(tape, &norm(tape, &u, &w.mlp_norm)?, &w.fc1)?;
    let m = tape.gelu(&m)?;
    let m = drop.apply(tape, m, rates.mlp)?;
    let m = dense(tape, &m, &w.fc2)?;
    let y1 = tape.add(x, &m)?;

    let nb = if cfg.use_instrument_attention {
        nbs.grid()?
    } else {
        nbs.temporal(1)?
    };
    let g = attend(tape, &norm(tape, &y1, &w.inst_norm)?, &w.inst, nb, heads, drop.attention(rates.attention))?;
    let g = drop.apply(tape, g, rates.skip)?;
    tape.add(&y1, &g)
}

/// One transformer module on `x` [S, T, C] in evaluation mode.
pub fn transformer_module_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &ModelWeights<T>,
    l: usize,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 || s[2] != cfg.embed_dim || s[1] == 0 || s[0] == 0 {
        return Err(Error::dim("transformer module", format!("expected [S, T, {}], got {s:?}", cfg.embed_dim)));
    }
    let w = weights
        .params
        .blocks
        .get(l)
        .ok_or(Error::Index { index: l, len: weights.params.blocks.len() })?;
    let tape = Tape::inference();
    let vars = bind_block(&tape, w);
    let mut nbs = Neighborhoods {
        stems: s[0],
        frames: s[1],
        k: cfg.kernel_size,
        cache: HashMap::new(),
    };
    let y = block(&tape, &tape.constant(x.clone()), &vars, l, cfg, &mut nbs, &mut Dropper { rng: None })?;
    Ok(y.to_tensor())
}

fn bind_block<T: Scalar>(tape: &Tape<T>, w: &BlockParams<Tensor<T>>) -> BlockParams<Var<T>> {
    let c = |t: &Tensor<T>| tape.constant(t.clone());
    BlockParams {
        dina_norm: NormParams { gain: c(&w.dina_norm.gain), bias: c(&w.dina_norm.bias) },
        dina1: w.dina1.map(&mut |t| c(t)),
        dina2: w.dina2.as_ref().map(|a| a.map(&mut |t| c(t))),
        mlp_norm: NormParams { gain: c(&w.mlp_norm.gain), bias: c(&w.mlp_norm.bias) },
        fc1: LinearParams { weight: c(&w.fc1.weight), bias: c(&w.fc1.bias) },
        fc2: LinearParams { weight: c(&w.fc2.weight), bias: c(&w.fc2.bias) },
        inst_norm: NormParams { gain: c(&w.inst_norm.gain), bias: c(&w.inst_norm.bias) },
        inst: w.inst.map(&mut |t| c(t)),
    }
}

/// Full network on a spectrogram `x` [S, T, bands] with parameters bound
/// to `tape`. Passing `rng` switches dropout on.
pub fn model_logits<T: Scalar>(
    tape: &Tape<T>,
    vars: &ModelVars<T>,
    cfg: &ModelConfig,
    x: &Tensor<T>,
    rng: Option<&mut dyn RngCore>,
) -> Result<Logits<T>> {
    let s = x.shape();
    if s.len() != 3 || s[0] != cfg.num_stems || s[2] != cfg.bands {
        return Err(Error::dim(
            "model",
            format!("expected [{}, T, {}], got {s:?}", cfg.num_stems, cfg.bands),
        ));
    }
    let frames = s[1];
    if frames == 0 {
        return Err(Error::Input("spectrogram has no frames".into()));
    }
    let mut drop = Dropper { rng };
    let mut input = tape.constant(x.clone());
    if !cfg.use_demix {
        input = tape.sum_axis0(&input)?;
    }
    let stems = cfg.model_stems();
    let mut h = frontend_vars(tape, &input, &vars.frontend, &cfg.frontend(), drop.attention(cfg.dropout.conv))?;
    let mut nbs = Neighborhoods {
        stems,
        frames,
        k: cfg.kernel_size,
        cache: HashMap::new(),
    };
    for (l, w) in vars.blocks.iter().enumerate() {
        h = block(tape, &h, w, l, cfg, &mut nbs, &mut drop)?;
    }
    let pooled = tape.mean_axis0(&h)?;
    let pooled = tape.reshape(&pooled, &[frames, cfg.embed_dim])?;
    let scalar_head = |p: &LinearParams<Var<T>>| -> Result<Var<T>> {
        let y = dense(tape, &pooled, p)?;
        tape.reshape(&y, &[frames])
    };
    Ok(Logits {
        beat: scalar_head(&vars.beat)?,
        downbeat: scalar_head(&vars.downbeat)?,
        boundary: scalar_head(&vars.boundary)?,
        labels: dense(tape, &pooled, &vars.label)?,
    })
}

impl<T: Scalar> Logits<T> {
    pub fn activations(&self, fps: f64) -> FrameActivations<T> {
        let sig = |v: &Var<T>| v.value().data().iter().map(|&x| sigmoid(x)).collect();
        FrameActivations {
            beat: sig(&self.beat),
            downbeat: sig(&self.downbeat),
            boundary: sig(&self.boundary),
            labels: softmax_tensor(self.labels.value(), 1),
            fps,
        }
    }
}

/// Evaluation-mode forward pass.
pub fn model_forward<T: Scalar>(spec: &StemSpectrogram<T>, weights: &ModelWeights<T>) -> Result<FrameActivations<T>> {
    let cfg = &weights.config;
    weights.validate()?;
    if (spec.fps - cfg.fps).abs() > 1e-9 * cfg.fps {
        return Err(Error::Input(format!(
            "spectrogram is at {} fps, model expects {}",
            spec.fps, cfg.fps
        )));
    }
    if spec.num_stems() != cfg.num_stems {
        return Err(Error::Input(format!(
            "spectrogram has {} stems, model expects {}",
            spec.num_stems(),
            cfg.num_stems
        )));
    }
    let tape = Tape::inference();
    let vars = weights.bind(&tape, false);
    let logits = model_logits(&tape, &vars, cfg, &spec.values, None)?;
    Ok(logits.activations(cfg.fps))
}
