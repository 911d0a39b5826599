use std::path::Path;

use crate::dsp::{FrameSpec, Stdct, Waveform, SAMPLE_RATE, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, Mfnet, ModelConfig, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub wave: Waveform,
    pub frames: usize,
    /// Samples that fell outside [-1, 1] before clipping.
    pub clipped_samples: usize,
}

/// A network with frozen weights. Shareable across threads.
#[derive(Debug, Clone)]
pub struct Enhancer {
    net: Mfnet,
    params: ParamStore<f32>,
    stdct: Stdct,
}

impl Enhancer {
    pub fn new(cfg: ModelConfig, params: ParamStore<f32>) -> Result<Self> {
        let net = Mfnet::new(cfg)?;
        net.check_params(&params)?;
        Ok(Self {
            net,
            params,
            stdct: Stdct::new(FrameSpec::default())?,
        })
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let (cfg, params) = load_checkpoint(path)?;
        Self::new(cfg, params)
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    /// Transform, run the network, resynthesise to the input length, clip.
    pub fn enhance(&self, noisy: &Waveform) -> Result<Enhanced> {
        if noisy.sample_rate() != SAMPLE_RATE {
            return Err(Error::UnsupportedFormat(format!(
                "expected {SAMPLE_RATE} Hz input, got {} Hz",
                noisy.sample_rate()
            )));
        }
        if noisy.len() < WINDOW_LEN {
            return Err(Error::invalid(format!(
                "input has {} samples, need at least {WINDOW_LEN}",
                noisy.len()
            )));
        }
        let spec = self.stdct.analyze(noisy)?;
        let out = self.net.enhance_spectrogram(&self.params, &spec)?;
        let wave = self.stdct.synthesize(&out, noisy.len())?;
        let mut clipped_samples = 0;
        let samples = wave
            .samples()
            .iter()
            .map(|&v| {
                if v.abs() > 1.0 {
                    clipped_samples += 1;
                }
                v.clamp(-1.0, 1.0)
            })
            .collect();
        Ok(Enhanced {
            wave: Waveform::new(samples, SAMPLE_RATE)?,
            frames: spec.frames(),
            clipped_samples,
        })
    }
}
