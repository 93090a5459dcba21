use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Default stem order.
pub const STEM_NAMES: [&str; 4] = ["bass", "drums", "other", "vocals"];

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub bands_per_octave: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_offset: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100,
            fft_size: 2048,
            hop: 441,
            bands_per_octave: 12,
            fmin: 30.0,
            fmax: 17_000.0,
            log_offset: 1.0,
        }
    }
}

impl SpectrogramConfig {
    pub fn fps(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || !(self.sample_rate as usize).is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "hop {} must divide the sample rate {}",
                self.hop, self.sample_rate
            )));
        }
        if self.fft_size < 2 || self.bands_per_octave == 0 {
            return Err(Error::Config("fft size and bands per octave must be positive".into()));
        }
        if !(self.fmin > 0.0 && self.fmin < self.fmax) || self.log_offset <= 0.0 {
            return Err(Error::Config(format!(
                "need 0 < fmin < fmax and log offset > 0 (got {}, {}, {})",
                self.fmin, self.fmax, self.log_offset
            )));
        }
        Ok(())
    }

    /// Number of filterbank bands this configuration yields.
    pub fn bands(&self) -> Result<usize> {
        Ok(Filterbank::new(self)?.len())
    }
}

/// Triangular filters on log-spaced center frequencies (A4 = 440 Hz
/// reference), snapped to FFT bins with duplicates removed; each filter has
/// unit area.
#[derive(Clone, Debug)]
pub struct Filterbank {
    filters: Vec<(usize, Vec<f64>)>,
    centers: Vec<f64>,
}

impl Filterbank {
    pub fn new(cfg: &SpectrogramConfig) -> Result<Self> {
        cfg.validate()?;
        let n_bins = cfg.fft_size / 2;
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let bpo = cfg.bands_per_octave as f64;
        let lo = (bpo * (cfg.fmin / 440.0).log2()).floor() as i64;
        let hi = (bpo * (cfg.fmax / 440.0).log2()).ceil() as i64;
        let mut bins: Vec<usize> = (lo..=hi)
            .map(|e| 440.0 * 2f64.powf(e as f64 / bpo))
            .filter(|&f| f >= cfg.fmin && f <= cfg.fmax)
            .map(|f| ((f / bin_hz).round() as usize).min(n_bins - 1))
            .collect();
        bins.dedup();
        if bins.len() < 3 {
            return Err(Error::Config("frequency range too narrow for a filterbank".into()));
        }
        let mut filters = Vec::with_capacity(bins.len() - 2);
        let mut centers = Vec::with_capacity(bins.len() - 2);
        for w in bins.windows(3) {
            let (start, center, stop) = (w[0], w[1], w[2]);
            let mut tri: Vec<f64> = (start..stop)
                .map(|b| {
                    if b <= center {
                        (b - start) as f64 / (center - start) as f64
                    } else {
                        (stop - b) as f64 / (stop - center) as f64
                    }
                })
                .collect();
            let area: f64 = tri.iter().sum();
            tri.iter_mut().for_each(|v| *v /= area);
            filters.push((start, tri));
            centers.push(center as f64 * bin_hz);
        }
        Ok(Self { filters, centers })
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Center frequency of each band in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    fn apply(&self, mag: &[f64], out: &mut [f64]) {
        for ((start, tri), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = tri.iter().zip(&mag[*start..]).map(|(w, m)| w * m).sum();
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Log-magnitude filterbank spectrogram `[T, bands]` with
/// `T = ceil(len / hop)`. Frames are centered on `t · hop` with reflection at
/// both ends.
pub fn compute_logspec<T: Scalar>(samples: &[f32], cfg: &SpectrogramConfig) -> Result<Tensor<T>> {
    if samples.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("waveform"));
    }
    let fb = Filterbank::new(cfg)?;
    let n = cfg.fft_size;
    let frames = samples.len().div_ceil(cfg.hop);
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    let bands = fb.len();
    let mut out = vec![0.0f64; frames * bands];
    out.par_chunks_mut(bands).enumerate().for_each(|(t, row)| {
        let first = (t * cfg.hop) as isize - (n / 2) as isize;
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| {
                let s = samples[reflect(first + i as isize, samples.len())] as f64;
                Complex::new(s * window[i], 0.0)
            })
            .collect();
        fft.process(&mut buf);
        let mag: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
        fb.apply(&mag, row);
        for v in row.iter_mut() {
            *v = (cfg.log_offset + *v).log10() - cfg.log_offset.log10();
        }
    });
    Tensor::new([frames, bands], out.into_iter().map(T::lit).collect())
}

/// Per-stem log spectrograms sharing frame count and band layout.
#[derive(Clone, Debug, PartialEq)]
pub struct StemSpectrogram<T> {
    pub stems: Vec<String>,
    /// `[S, T, bands]`.
    pub values: Tensor<T>,
    pub fps: f64,
}

impl<T: Scalar> StemSpectrogram<T> {
    pub fn new(stems: Vec<String>, values: Tensor<T>, fps: f64) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 || s[0] != stems.len() || s[0] == 0 {
            return Err(Error::dim(
                "stem spectrogram",
                format!("{} stem names for values {s:?}", stems.len()),
            ));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Input(format!("frame rate {fps} must be positive")));
        }
        if !values.all_finite() {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self { stems, values, fps })
    }

    /// Stacks per-stem `[T, bands]` spectrograms.
    pub fn from_stems(named: Vec<(String, Tensor<T>)>, fps: f64) -> Result<Self> {
        let Some((_, first)) = named.first() else {
            return Err(Error::Input("no stems".into()));
        };
        let shape = first.shape().to_vec();
        let mut data = Vec::with_capacity(named.len() * first.len());
        let mut stems = Vec::with_capacity(named.len());
        for (name, t) in named {
            if t.shape() != shape.as_slice() || shape.len() != 2 {
                return Err(Error::dim(
                    "stem spectrogram",
                    format!("stem {name} has shape {:?}, expected {shape:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.data());
            stems.push(name);
        }
        let values = Tensor::new([stems.len(), shape[0], shape[1]], data)?;
        Self::new(stems, values, fps)
    }

    pub fn num_stems(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.fps
    }
}
