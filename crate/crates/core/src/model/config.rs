use crate::attention::receptive_field;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;

pub const DEFAULT_LABELS: [&str; 8] = [
    "intro", "verse", "chorus", "bridge", "inst", "outro", "silence", "misc",
];

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutRates {
    pub conv: f64,
    pub mlp: f64,
    pub attention: f64,
    pub skip: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        Self {
            conv: 0.2,
            mlp: 0.2,
            attention: 0.2,
            skip: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub embed_dim: usize,
    pub kernel_size: usize,
    pub dilation_base: usize,
    pub num_heads: usize,
    pub num_stems: usize,
    pub labels: Vec<String>,
    pub fps: f64,
    /// Hidden width of the block MLP as a multiple of C.
    pub mlp_ratio: usize,
    pub bands: usize,
    pub frontend_channels: usize,
    pub frontend_pools: [usize; 3],
    pub use_second_dina: bool,
    pub use_instrument_attention: bool,
    pub use_dilation: bool,
    pub use_demix: bool,
    pub dropout: DropoutRates,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_blocks: 11,
            embed_dim: 24,
            kernel_size: 5,
            dilation_base: 2,
            num_heads: 4,
            num_stems: 4,
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
            fps: 100.0,
            mlp_ratio: 8,
            bands: 81,
            frontend_channels: 64,
            frontend_pools: [3, 3, 3],
            use_second_dina: true,
            use_instrument_attention: true,
            use_dilation: true,
            use_demix: true,
            dropout: DropoutRates::default(),
        }
    }
}

impl ModelConfig {
    /// Nine blocks, k = 3, C = 16, dilations growing by 3.
    pub fn small() -> Self {
        Self {
            num_blocks: 9,
            embed_dim: 16,
            kernel_size: 3,
            dilation_base: 3,
            mlp_ratio: 2,
            frontend_channels: 8,
            ..Self::default()
        }
    }

    /// Two blocks, C = 16, two heads, two stems, nine bands, one 3-wide
    /// frequency pool. Used for gradient checks and the toy training run.
    pub fn tiny() -> Self {
        Self {
            num_blocks: 2,
            embed_dim: 16,
            kernel_size: 3,
            num_heads: 2,
            num_stems: 2,
            bands: 9,
            frontend_channels: 8,
            frontend_pools: [3, 1, 1],
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "small" => Ok(Self::small()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::Config("num_blocks must be >= 1".into()));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide C = {}",
                self.num_heads, self.embed_dim
            )));
        }
        if self.dilation_base == 0 || self.num_stems == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("dilation base, stems and mlp ratio must be positive".into()));
        }
        if self.labels.is_empty() {
            return Err(Error::Config("label vocabulary is empty".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config(format!("fps {} must be positive", self.fps)));
        }
        let d = &self.dropout;
        if [d.conv, d.mlp, d.attention, d.skip].iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        self.dilation(self.num_blocks - 1, 1)?;
        self.frontend().validate()
    }

    /// Dilation of DiNA branch `branch` (0 or 1) in block `l`.
    pub fn dilation(&self, l: usize, branch: usize) -> Result<usize> {
        if !self.use_dilation {
            return Ok(1);
        }
        let base = u32::try_from(l)
            .ok()
            .and_then(|l| self.dilation_base.checked_pow(l))
            .and_then(|d| d.checked_mul(branch + 1))
            .ok_or_else(|| Error::Config(format!("dilation overflows at block {l}")))?;
        Ok(base)
    }

    /// Stems the blocks see: the mixture counts as one.
    pub fn model_stems(&self) -> usize {
        if self.use_demix {
            self.num_stems
        } else {
            1
        }
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig {
            bands: self.bands,
            channels: self.frontend_channels,
            pools: self.frontend_pools,
            embed_dim: self.embed_dim,
        }
    }

    /// Widest single-layer window in frames.
    pub fn max_window_frames(&self) -> usize {
        let d = self.dilation(self.num_blocks - 1, 1).unwrap_or(usize::MAX / self.kernel_size);
        receptive_field(self.kernel_size, d, self.fps).map_or(usize::MAX, |(f, _)| f)
    }

    /// Warning text when the widest window exceeds `frames`.
    pub fn length_warning(&self, frames: usize) -> Option<String> {
        let w = self.max_window_frames();
        (w > frames).then(|| {
            format!("widest attention window spans {w} frames but the input has {frames}; distant layers see truncated windows")
        })
    }

    /// Serializes as sorted `key=value` lines.
    pub fn to_record(&self) -> String {
        let b = |v: bool| if v { "true" } else { "false" };
        let pools = self.frontend_pools.map(|p| p.to_string()).join(",");
        let mut lines = vec![
            format!("bands={}", self.bands),
            format!("dilation_base={}", self.dilation_base),
            format!("dropout_attention={}", self.dropout.attention),
            format!("dropout_conv={}", self.dropout.conv),
            format!("dropout_mlp={}", self.dropout.mlp),
            format!("dropout_skip={}", self.dropout.skip),
            format!("embed_dim={}", self.embed_dim),
            format!("fps={}", self.fps),
            format!("frontend_channels={}", self.frontend_channels),
            format!("frontend_pools={pools}"),
            format!("kernel_size={}", self.kernel_size),
            format!("labels={}", self.labels.join(",")),
            format!("mlp_ratio={}", self.mlp_ratio),
            format!("num_blocks={}", self.num_blocks),
            format!("num_heads={}", self.num_heads),
            format!("num_stems={}", self.num_stems),
            format!("use_demix={}", b(self.use_demix)),
            format!("use_dilation={}", b(self.use_dilation)),
            format!("use_instrument_attention={}", b(self.use_instrument_attention)),
            format!("use_second_dina={}", b(self.use_second_dina)),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown keys are errors.
    pub fn from_record(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.set(line).map_err(|msg| Error::Parse { line: n + 1, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, assignment: &str) -> std::result::Result<(), String> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {assignment:?}"))?;
        let (key, value) = (key.trim(), value.trim());
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<V, String> {
            v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("bad value {v:?} for {key}")),
            }
        }
        match key {
            "bands" => self.bands = num(key, value)?,
            "dilation_base" => self.dilation_base = num(key, value)?,
            "dropout_attention" => self.dropout.attention = num(key, value)?,
            "dropout_conv" => self.dropout.conv = num(key, value)?,
            "dropout_mlp" => self.dropout.mlp = num(key, value)?,
            "dropout_skip" => self.dropout.skip = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "fps" => self.fps = num(key, value)?,
            "frontend_channels" => self.frontend_channels = num(key, value)?,
            "frontend_pools" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| num(key, p.trim()))
                    .collect::<std::result::Result<_, _>>()?;
                self.frontend_pools = parts
                    .try_into()
                    .map_err(|_| format!("{key} needs three widths"))?;
            }
            "kernel_size" => self.kernel_size = num(key, value)?,
            "labels" => self.labels = value.split(',').map(|s| s.trim().to_string()).collect(),
            "mlp_ratio" => self.mlp_ratio = num(key, value)?,
            "num_blocks" => self.num_blocks = num(key, value)?,
            "num_heads" => self.num_heads = num(key, value)?,
            "num_stems" => self.num_stems = num(key, value)?,
            "use_demix" => self.use_demix = flag(key, value)?,
            "use_dilation" => self.use_dilation = flag(key, value)?,
            "use_instrument_attention" => self.use_instrument_attention = flag(key, value)?,
            "use_second_dina" => self.use_second_dina = flag(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }
}
