//! Short-time DCT analysis/synthesis and WAV I/O.
//!
//! All transform arithmetic is double precision. The network consumes
//! spectrograms through [`Spectrogram::to_tensor`], which narrows to the
//! model's scalar type.

mod dct;
mod stdct;
pub mod wav;

pub use dct::{dct2, idct2, DctPlan};
pub use stdct::{istdct, stdct, Stdct};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Engine sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;
/// Analysis window length in samples (20 ms at 16 kHz).
pub const WINDOW_LEN: usize = 320;
/// Hop in samples (10 ms at 16 kHz).
pub const HOP: usize = 160;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * factor).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Samples `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.samples.len())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "slice {start}+{len} out of range for {} samples",
                    self.samples.len()
                ))
            })?;
        Ok(Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Framing parameters plus the analysis (= synthesis) window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpec {
    window_len: usize,
    hop: usize,
    window: Vec<f64>,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self::sqrt_hann(WINDOW_LEN, HOP).expect("default frame spec is valid")
    }
}

impl FrameSpec {
    /// Square root of the periodic Hann window. With `hop == window_len / 2`
    /// the squared window overlap-adds to exactly one.
    pub fn sqrt_hann(window_len: usize, hop: usize) -> Result<Self> {
        if window_len < 2 || !window_len.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "window length must be even and >= 2, got {window_len}"
            )));
        }
        if hop == 0 || hop > window_len {
            return Err(Error::invalid(format!("invalid hop {hop}")));
        }
        let n = window_len as f64;
        let window = (0..window_len)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos();
                hann.max(0.0).sqrt()
            })
            .collect();
        Ok(Self {
            window_len,
            hop,
            window,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        (self.padded_len(len) - self.window_len) / self.hop + 1
    }

    /// Signal length after padding: `hop` zeros in front, `hop` zeros plus
    /// enough extra to complete the last hop at the back.
    pub fn padded_len(&self, len: usize) -> usize {
        len + 2 * self.hop + self.tail_fill(len)
    }

    fn tail_fill(&self, len: usize) -> usize {
        (self.hop - len % self.hop) % self.hop
    }
}

/// Frames x bins STDCT coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<f64>,
    frames: usize,
    spec: FrameSpec,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn new(data: Vec<f64>, frames: usize, spec: FrameSpec, sample_rate: u32) -> Result<Self> {
        let bins = spec.window_len();
        if data.len() != frames * bins {
            return Err(Error::shape(
                "spectrogram",
                format!("{} values for {frames} frames x {bins} bins", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrogram contains non-finite values"));
        }
        Ok(Self {
            data,
            frames,
            spec,
            sample_rate,
        })
    }

    pub fn zeros_like(other: &Spectrogram) -> Self {
        Self {
            data: vec![0.0; other.data.len()],
            ..other.clone()
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.spec.window_len()
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.frames, self.bins()]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let b = self.bins();
        &self.data[t * b..(t + 1) * b]
    }

    pub fn spec(&self) -> &FrameSpec {
        &self.spec
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// View as a `[1, 1, frames, bins]` network tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            vec![1, 1, self.frames, self.bins()],
            self.data.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("spectrogram shape is consistent")
    }

    /// Rebuild from a network tensor shaped `[1, 1, frames, bins]`, keeping
    /// this spectrogram's framing metadata.
    pub fn with_tensor<T: Real>(&self, t: &Tensor<T>) -> Result<Self> {
        let want = [1, 1, self.frames, self.bins()];
        if t.shape() != want {
            return Err(Error::mismatch("spectrogram", &want, t.shape()));
        }
        Spectrogram::new(
            t.data().iter().map(|v| v.as_f64()).collect(),
            self.frames,
            self.spec.clone(),
            self.sample_rate,
        )
    }
}
