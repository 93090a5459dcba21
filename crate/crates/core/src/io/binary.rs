//! Little-endian binary containers for spectrograms and model weights.

use crate::error::{Error, Result};
use crate::frontend::StemSpectrogram;
use crate::model::{ModelConfig, ModelWeights};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const SPECTROGRAM_MAGIC: &[u8; 4] = b"AIO1";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"AIOW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Longest string or dimension list accepted when reading.
const MAX_NAME: usize = 1 << 16;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in 32 bits")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn f32s<T: Scalar>(&mut self, data: &[T]) {
        self.0.reserve(4 * data.len());
        for v in data {
            self.0.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        if n > MAX_NAME {
            return Err(Error::Format(format!("string of {n} bytes")));
        }
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("string is not UTF-8".into()))
    }

    fn f32s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    }

    fn magic(&mut self, m: &[u8; 4]) -> Result<()> {
        if self.take(4).ok() != Some(&m[..]) {
            return Err(Error::Format(format!("missing {} header", String::from_utf8_lossy(m))));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// `AIO1`, stems, frames, bands (u32), fps (f64), stem names, then the
/// `[stems, frames, bands]` values as f32.
pub fn encode_spectrogram<T: Scalar>(spec: &StemSpectrogram<T>) -> Result<Vec<u8>> {
    let mut w = Writer(SPECTROGRAM_MAGIC.to_vec());
    w.u32(spec.num_stems())?;
    w.u32(spec.frames())?;
    w.u32(spec.bands())?;
    w.f64(spec.fps);
    for s in &spec.stems {
        w.str(s)?;
    }
    w.f32s(spec.values.data());
    Ok(w.0)
}

pub fn decode_spectrogram<T: Scalar>(bytes: &[u8]) -> Result<StemSpectrogram<T>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(SPECTROGRAM_MAGIC)?;
    let (s, t, f) = (r.u32()?, r.u32()?, r.u32()?);
    let fps = r.f64()?;
    let names = (0..s).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let n = s
        .checked_mul(t)
        .and_then(|v| v.checked_mul(f))
        .ok_or_else(|| Error::Format("spectrogram too large".into()))?;
    let values = r.f32s(n)?;
    r.finish()?;
    StemSpectrogram::new(names, Tensor::new([s, t, f], values)?, fps)
}

/// `AIOW`, version, the config record, the tensor count, then per tensor
/// its name, rank, dimensions and f32 values, in storage order.
pub fn encode_weights<T: Scalar>(weights: &ModelWeights<T>) -> Result<Vec<u8>> {
    let mut w = Writer(WEIGHTS_MAGIC.to_vec());
    w.u32(WEIGHTS_VERSION as usize)?;
    w.str(&weights.config.to_record())?;
    let mut named = Vec::new();
    weights.params.visit(&mut |name, t| named.push((name, t)));
    w.u32(named.len())?;
    for (name, t) in named {
        w.str(&name)?;
        w.u32(t.ndim())?;
        for &d in t.shape() {
            w.u32(d)?;
        }
        w.f32s(t.data());
    }
    Ok(w.0)
}

/// Reads a weight file and checks every name and shape against its config.
pub fn decode_weights<T: Scalar>(bytes: &[u8]) -> Result<ModelWeights<T>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(WEIGHTS_MAGIC)?;
    let version = r.u32()?;
    if version != WEIGHTS_VERSION as usize {
        return Err(Error::Format(format!("weight file version {version}")));
    }
    let config = ModelConfig::from_record(&r.str()?)?;
    let template = ModelWeights::<T>::init(&config, 0)?;
    let layout = template.layout();
    let count = r.u32()?;
    if count != layout.len() {
        return Err(Error::Format(format!("{count} tensors, config implies {}", layout.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in &layout {
        let got = r.str()?;
        if &got != name {
            return Err(Error::Format(format!("expected tensor {name}, found {got}")));
        }
        let rank = r.u32()?;
        if rank > 8 {
            return Err(Error::Format(format!("{name} has rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::Format(format!("{name} has shape {dims:?}, config implies {shape:?}")));
        }
        let n = dims.iter().product();
        tensors.push(Tensor::new(dims, r.f32s(n)?)?);
    }
    r.finish()?;
    let weights = ModelWeights {
        params: template.params.fill(&tensors)?,
        config,
    };
    weights.validate()?;
    Ok(weights)
}
