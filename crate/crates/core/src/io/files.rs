use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Model and training settings from one `key=value` file. An optional
/// `preset=<name>` line picks the model base; training keys override
/// `train_base` and everything else goes to the model config.
pub fn parse_config_file(text: &str, train_base: &TrainConfig) -> Result<(ModelConfig, TrainConfig)> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let mut model = ModelConfig::default();
    for (n, line) in &lines {
        if let Some(name) = line.strip_prefix("preset=") {
            model = ModelConfig::preset(name.trim()).map_err(|e| Error::Parse {
                line: *n,
                msg: e.to_string(),
            })?;
        }
    }
    let mut train = train_base.clone();
    for (n, line) in lines {
        if line.starts_with("preset=") {
            continue;
        }
        let err = |msg: String| Error::Parse { line: n, msg };
        if !train.set(line).map_err(err)? {
            model.set(line).map_err(err)?;
        }
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}
