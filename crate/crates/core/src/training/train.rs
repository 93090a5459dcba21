use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::optim::{radam_step, swa_update, RAdamState};
use super::{build_targets, multitask_loss, TrainConfig, TrainingTargets};
use crate::error::{Error, Result};
use crate::frontend::StemSpectrogram;
use crate::metrics::Annotation;
use crate::model::{model_logits, ModelConfig, ModelWeights};
use crate::numerics::{Tape, Tensor};
use crate::scalar::Scalar;

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub swa_active: bool,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record serializes")
    }
}

/// Line-delimited JSON of a whole history.
pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history.iter().map(|r| r.to_json_line() + "\n").collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

pub struct TrainOutcome<T> {
    /// The weight average when any snapshot was taken, else the last weights.
    pub weights: ModelWeights<T>,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
    pub swa_models: usize,
}

struct Prepared<'a, T> {
    values: &'a Tensor<T>,
    targets: TrainingTargets,
}

fn prepare<'a, T: Scalar>(
    set: &'a [(StemSpectrogram<T>, Annotation)],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Vec<Prepared<'a, T>>> {
    set.iter()
        .map(|(spec, ann)| {
            if (spec.fps - model.fps).abs() > 1e-9 * model.fps {
                return Err(Error::Input(format!("track at {} fps, model at {}", spec.fps, model.fps)));
            }
            Ok(Prepared {
                values: &spec.values,
                targets: build_targets(ann, spec.fps, spec.frames(), cfg, &model.labels)?,
            })
        })
        .collect()
}

/// Frames `start..start + len` of a `[S, T, F]` tensor.
fn time_slice<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let (s, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::with_capacity(s * len * f);
    for stem in 0..s {
        let base = (stem * t + start) * f;
        out.extend_from_slice(&x.data()[base..base + len * f]);
    }
    Tensor::new([s, len, f], out).expect("slice shape")
}

fn flat<T: Scalar>(w: &ModelWeights<T>) -> Vec<Tensor<T>> {
    w.params.slots().into_iter().cloned().collect()
}

/// Loss and parameter gradients of one track in training mode.
fn track_gradients<T: Scalar>(
    w: &ModelWeights<T>,
    cfg: &TrainConfig,
    x: &Tensor<T>,
    targets: &TrainingTargets,
    rng: &mut dyn RngCore,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let tape = Tape::new();
    let vars = w.bind(&tape, true);
    let logits = model_logits(&tape, &vars, &w.config, x, Some(rng))?;
    let loss = multitask_loss(&tape, &logits, targets, cfg)?;
    let grads = tape.backward(&loss)?;
    let g = vars.slots().into_iter().map(|v| grads.get_or_zeros(v)).collect();
    Ok((loss.value().data()[0].to_f64_lossy(), g))
}

/// Mean evaluation-mode loss over `set`.
fn mean_loss<T: Scalar>(w: &ModelWeights<T>, cfg: &TrainConfig, set: &[Prepared<T>]) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let losses: Vec<f64> = set
        .par_iter()
        .map(|p| {
            let tape = Tape::inference();
            let vars = w.bind(&tape, false);
            let logits = model_logits(&tape, &vars, &w.config, p.values, None)?;
            let loss = multitask_loss(&tape, &logits, &p.targets, cfg)?;
            Ok(loss.value().data()[0].to_f64_lossy())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / set.len() as f64)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Diverged {
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn train<T: Scalar>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    data: &[(StemSpectrogram<T>, Annotation)],
    validation: &[(StemSpectrogram<T>, Annotation)],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    let init = ModelWeights::init(model, cfg.seed)?;
    train_from(init, cfg, data, validation, on_epoch)
}

/// Epoch loop: seeded shuffle, a random chunk of each long track, RAdam on
/// the batch-mean gradient, then validation. A validation plateau scales
/// the learning rate by `decay_factor`; from `swa_first_epoch` on the rate
/// is `swa_lr` and each epoch's weights join the running average. Stops
/// after `patience_epochs` epochs without a new validation minimum.
///
/// Every random draw comes from one generator seeded by `cfg.seed`, and the
/// update loop is sequential, so runs are reproducible bit for bit.
pub fn train_from<T: Scalar>(
    mut weights: ModelWeights<T>,
    cfg: &TrainConfig,
    data: &[(StemSpectrogram<T>, Annotation)],
    validation: &[(StemSpectrogram<T>, Annotation)],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    weights.validate()?;
    if data.is_empty() {
        return Err(Error::Input("no training tracks".into()));
    }
    let model = weights.config.clone();
    let train_set = prepare(data, &model, cfg)?;
    let val_set = prepare(validation, &model, cfg)?;
    let chunk = ((cfg.chunk_seconds * model.fps).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = RAdamState::new(&flat(&weights));
    let mut swa: Option<Vec<Tensor<T>>> = None;
    let mut swa_models = 0;
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let (mut since_best, mut since_decay) = (0, 0);
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let swa_active = epoch >= cfg.swa_first_epoch();
        let step_lr = if swa_active { cfg.swa_lr } else { lr };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor<T>>> = None;
            for &i in batch {
                let p = &train_set[i];
                let frames = p.targets.frames();
                let (x, targets);
                let (x_ref, t_ref) = if frames > chunk {
                    let start = rng.gen_range(0..=frames - chunk);
                    x = time_slice(p.values, start, chunk);
                    targets = p.targets.slice(start, chunk);
                    (&x, &targets)
                } else {
                    (p.values, &p.targets)
                };
                let (loss, g) =
                    track_gradients(&weights, cfg, x_ref, t_ref, &mut rng).map_err(|e| diverged(epoch, e))?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("training loss {loss}"),
                    });
                }
                loss_sum += loss;
                match &mut acc {
                    None => acc = Some(g),
                    Some(a) => {
                        for (s, gi) in a.iter_mut().zip(&g) {
                            s.add_assign(gi)?;
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = T::one() / T::lit(batch.len() as f64);
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            let mut params = flat(&weights);
            radam_step(&mut params, &grads, &mut state, step_lr, cfg.weight_decay)
                .map_err(|e| diverged(epoch, e))?;
            weights.params = weights.params.fill(&params)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = mean_loss(&weights, cfg, &val_set).map_err(|e| diverged(epoch, e))?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        if swa_active {
            let current = flat(&weights);
            match &mut swa {
                None => swa = Some(current),
                Some(avg) => swa_update(avg, &current, swa_models)?,
            }
            swa_models += 1;
        }
        if val_loss < best {
            best = val_loss;
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
        }
        if !swa_active && since_decay >= cfg.plateau_epochs {
            lr *= cfg.decay_factor;
            since_decay = 0;
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: step_lr,
            swa_active,
        };
        on_epoch(&record);
        history.push(record);
        if since_best >= cfg.patience_epochs {
            stop = StopReason::Patience;
            break;
        }
    }
    if let Some(avg) = swa {
        weights.params = weights.params.fill(&avg)?;
    }
    Ok(TrainOutcome {
        weights,
        history,
        stop,
        swa_models,
    })
}
