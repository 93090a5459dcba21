use crate::error::{Error, Result};

/// Optimizer, schedule and target-encoding settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning rate once weight averaging is active.
    pub swa_lr: f64,
    /// Learning-rate multiplier on a validation plateau.
    pub decay_factor: f64,
    pub weight_decay: f64,
    /// Epochs without a new validation minimum before stopping.
    pub patience_epochs: usize,
    /// Epochs without a new validation minimum that count as a plateau.
    pub plateau_epochs: usize,
    pub max_epochs: usize,
    /// Fraction of `max_epochs` after which snapshots are averaged.
    pub swa_start: f64,
    pub chunk_seconds: f64,
    pub batch_size: usize,
    /// Beat and downbeat targets spread this many frames each way.
    pub beat_widen_frames: usize,
    pub beat_widen_weight: f64,
    /// Half-width of the triangular boundary target.
    pub boundary_widen_seconds: f64,
    /// Beat, downbeat, boundary, label.
    pub task_weights: [f64; 4],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            swa_lr: 0.15,
            decay_factor: 0.3,
            weight_decay: 0.00025,
            patience_epochs: 30,
            plateau_epochs: 5,
            max_epochs: 300,
            swa_start: 0.25,
            chunk_seconds: 300.0,
            batch_size: 1,
            beat_widen_frames: 2,
            beat_widen_weight: 0.5,
            boundary_widen_seconds: 0.5,
            task_weights: [1.0; 4],
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for the synthetic overfit run: a constant 0.005 rate
    /// throughout, averaging over the last fifth of 400 epochs, no early stop.
    pub fn toy() -> Self {
        Self {
            swa_lr: 0.005,
            swa_start: 0.8,
            max_epochs: 400,
            patience_epochs: 400,
            plateau_epochs: 400,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be finite and >= 0")))
            }
        };
        finite_nonneg("lr", self.lr)?;
        finite_nonneg("swa_lr", self.swa_lr)?;
        finite_nonneg("weight_decay", self.weight_decay)?;
        finite_nonneg("beat_widen_weight", self.beat_widen_weight)?;
        finite_nonneg("boundary_widen_seconds", self.boundary_widen_seconds)?;
        for w in self.task_weights {
            finite_nonneg("task weight", w)?;
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay_factor {} must be in (0, 1]", self.decay_factor)));
        }
        if self.patience_epochs == 0 || self.plateau_epochs == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "patience, plateau, max_epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.swa_start) {
            return Err(Error::Config(format!("swa_start {} must be in [0, 1]", self.swa_start)));
        }
        if !(self.chunk_seconds > 0.0) {
            return Err(Error::Config(format!("chunk_seconds {} must be positive", self.chunk_seconds)));
        }
        if self.beat_widen_weight > 1.0 {
            return Err(Error::Config("beat_widen_weight must be <= 1".into()));
        }
        Ok(())
    }

    /// First epoch (1-based) whose weights enter the average.
    pub fn swa_first_epoch(&self) -> usize {
        (self.swa_start * self.max_epochs as f64).ceil() as usize + 1
    }

    /// Serializes as sorted `key=value` lines.
    pub fn to_record(&self) -> String {
        let tw = self.task_weights.map(|w| w.to_string()).join(",");
        let mut lines = vec![
            format!("batch_size={}", self.batch_size),
            format!("beat_widen_frames={}", self.beat_widen_frames),
            format!("beat_widen_weight={}", self.beat_widen_weight),
            format!("boundary_widen_seconds={}", self.boundary_widen_seconds),
            format!("chunk_seconds={}", self.chunk_seconds),
            format!("decay_factor={}", self.decay_factor),
            format!("lr={}", self.lr),
            format!("max_epochs={}", self.max_epochs),
            format!("patience_epochs={}", self.patience_epochs),
            format!("plateau_epochs={}", self.plateau_epochs),
            format!("seed={}", self.seed),
            format!("swa_lr={}", self.swa_lr),
            format!("swa_start={}", self.swa_start),
            format!("task_weights={tw}"),
            format!("weight_decay={}", self.weight_decay),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }

    /// Applies one `key=value` override; `Ok(false)` if the key is not a
    /// training key.
    pub fn set(&mut self, assignment: &str) -> std::result::Result<bool, String> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {assignment:?}"))?;
        let (key, value) = (key.trim(), value.trim());
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<V, String> {
            v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "swa_lr" => self.swa_lr = num(key, value)?,
            "decay_factor" => self.decay_factor = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "patience_epochs" => self.patience_epochs = num(key, value)?,
            "plateau_epochs" => self.plateau_epochs = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "swa_start" => self.swa_start = num(key, value)?,
            "chunk_seconds" => self.chunk_seconds = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "beat_widen_frames" => self.beat_widen_frames = num(key, value)?,
            "beat_widen_weight" => self.beat_widen_weight = num(key, value)?,
            "boundary_widen_seconds" => self.boundary_widen_seconds = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "task_weights" => {
                let parts: Vec<f64> = value.split(',').map(|p| num(key, p.trim())).collect::<std::result::Result<_, _>>()?;
                self.task_weights = parts
                    .try_into()
                    .map_err(|_| "task_weights needs four values".to_string())?;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}
