use super::{DctPlan, FrameSpec, Spectrogram, Waveform};
use crate::error::{Error, Result};

/// A frame spec with its DCT planned once, for repeated analysis/synthesis.
#[derive(Debug, Clone)]
pub struct Stdct {
    spec: FrameSpec,
    plan: DctPlan,
}

impl Default for Stdct {
    fn default() -> Self {
        Self::new(FrameSpec::default()).expect("default frame spec is valid")
    }
}

impl Stdct {
    pub fn new(spec: FrameSpec) -> Result<Self> {
        let plan = DctPlan::new(spec.window_len())?;
        Ok(Self { spec, plan })
    }

    pub fn spec(&self) -> &FrameSpec {
        &self.spec
    }

    pub fn analyze(&self, wave: &Waveform) -> Result<Spectrogram> {
        let win = self.spec.window_len();
        let hop = self.spec.hop();
        if wave.len() < win {
            return Err(Error::invalid(format!(
                "waveform of {} samples is shorter than the {win}-sample window",
                wave.len()
            )));
        }
        let mut padded = vec![0.0; self.spec.padded_len(wave.len())];
        padded[hop..hop + wave.len()].copy_from_slice(wave.samples());

        let frames = self.spec.frame_count(wave.len());
        let mut data = vec![0.0; frames * win];
        for (t, out) in data.chunks_exact_mut(win).enumerate() {
            let src = &padded[t * hop..t * hop + win];
            for ((o, s), w) in out.iter_mut().zip(src).zip(self.spec.window()) {
                *o = s * w;
            }
            self.plan.forward(out)?;
        }
        Spectrogram::new(data, frames, self.spec.clone(), wave.sample_rate())
    }

    pub fn synthesize(&self, spec_out: &Spectrogram, out_len: usize) -> Result<Waveform> {
        if spec_out.spec() != &self.spec {
            return Err(Error::invalid("spectrogram framing differs from synthesis framing"));
        }
        let win = self.spec.window_len();
        let hop = self.spec.hop();
        let frames = spec_out.frames();
        if out_len < win || self.spec.frame_count(out_len) != frames {
            return Err(Error::invalid(format!(
                "output length {out_len} is inconsistent with {frames} frames"
            )));
        }
        let mut acc = vec![0.0; self.spec.padded_len(out_len)];
        let mut buf = vec![0.0; win];
        for t in 0..frames {
            buf.copy_from_slice(spec_out.frame(t));
            self.plan.inverse(&mut buf)?;
            let dst = &mut acc[t * hop..t * hop + win];
            for ((d, b), w) in dst.iter_mut().zip(&buf).zip(self.spec.window()) {
                *d += b * w;
            }
        }
        Waveform::new(acc[hop..hop + out_len].to_vec(), spec_out.sample_rate())
    }
}

/// Short-time DCT of `wave`: zero-pad, frame at stride `hop`, window, DCT-II.
pub fn stdct(wave: &Waveform, spec: &FrameSpec) -> Result<Spectrogram> {
    Stdct::new(spec.clone())?.analyze(wave)
}

/// Inverse of [`stdct`] by windowed overlap-add, trimmed to `out_len`.
pub fn istdct(spec_out: &Spectrogram, out_len: usize) -> Result<Waveform> {
    Stdct::new(spec_out.spec().clone())?.synthesize(spec_out, out_len)
}
