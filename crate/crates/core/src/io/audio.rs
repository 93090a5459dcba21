use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::{compute_logspec, SpectrogramConfig, StemSpectrogram};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Mono samples in [-1, 1] and the sample rate of a WAV file. Channels are
/// averaged.
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f32>, u32)> {
    let fmt_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut reader = hound::WavReader::open(path).map_err(fmt_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>().map_err(fmt_err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(fmt_err)?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Spectrograms of `<dir>/<name>.wav` for every stem name. All stems must
/// share the configured sample rate; shorter stems are zero-padded to the
/// longest.
pub fn load_stem_dir<T: Scalar>(
    dir: &Path,
    names: &[String],
    cfg: &SpectrogramConfig,
) -> Result<StemSpectrogram<T>> {
    let mut audio = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join(format!("{name}.wav"));
        if !path.is_file() {
            return Err(Error::Input(format!("missing stem {}", path.display())));
        }
        let (samples, rate) = read_wav_mono(&path)?;
        if rate != cfg.sample_rate {
            return Err(Error::Input(format!(
                "{} is at {rate} Hz, expected {} Hz",
                path.display(),
                cfg.sample_rate
            )));
        }
        audio.push(samples);
    }
    let longest = audio.iter().map(Vec::len).max().unwrap_or(0);
    let named = names
        .iter()
        .zip(audio)
        .map(|(n, mut a)| {
            a.resize(longest, 0.0);
            Ok((n.clone(), compute_logspec::<T>(&a, cfg)?))
        })
        .collect::<Result<Vec<(String, Tensor<T>)>>>()?;
    StemSpectrogram::from_stems(named, cfg.fps())
}
