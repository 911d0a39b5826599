//! Spectral training loss and waveform metrics.

use serde::{Deserialize, Serialize};

use crate::dsp::{Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

/// Reported value for an infinite dB ratio.
pub const DB_CAP: f64 = 99.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gamma: 0.5 }
    }
}

impl LossWeights {
    pub fn new(gamma: f64) -> Result<Self> {
        let w = Self { gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.gamma) {
            Ok(())
        } else {
            Err(Error::invalid(format!("gamma {} outside [0, 1]", self.gamma)))
        }
    }
}

fn check_pair(target: &Spectrogram, pred: &Spectrogram) -> Result<()> {
    if target.shape() != pred.shape() {
        return Err(Error::mismatch("loss", &target.shape(), &pred.shape()));
    }
    Ok(())
}

/// Mean of `(|s| - |p|)^2` over all bins.
pub fn loss_abs(target: &Spectrogram, pred: &Spectrogram) -> Result<f64> {
    check_pair(target, pred)?;
    Ok(mean_sq(target.data(), pred.data(), |v| v.abs()))
}

/// Mean of `(s - p)^2` over all bins.
pub fn loss_polar(target: &Spectrogram, pred: &Spectrogram) -> Result<f64> {
    check_pair(target, pred)?;
    Ok(mean_sq(target.data(), pred.data(), |v| v))
}

pub fn loss_mfnet(target: &Spectrogram, pred: &Spectrogram, w: LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.gamma * loss_abs(target, pred)? + (1.0 - w.gamma) * loss_polar(target, pred)?)
}

fn mean_sq(a: &[f64], b: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (f(x) - f(y)).powi(2)).sum();
    s / a.len() as f64
}

/// Tape version of [`loss_abs`].
pub fn loss_abs_on<T: Real>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    let a = tape.abs(target)?;
    let b = tape.abs(pred)?;
    let d = tape.sub(a, b)?;
    let d = tape.square(d)?;
    tape.mean(d)
}

/// Tape version of [`loss_polar`].
pub fn loss_polar_on<T: Real>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    let d = tape.sub(target, pred)?;
    let d = tape.square(d)?;
    tape.mean(d)
}

/// Tape version of [`loss_mfnet`]. Terms with zero weight are skipped.
pub fn loss_mfnet_on<T: Real>(
    tape: &mut Tape<T>,
    target: Var,
    pred: Var,
    w: LossWeights,
) -> Result<Var> {
    w.validate()?;
    if w.gamma == 1.0 {
        return loss_abs_on(tape, target, pred);
    }
    if w.gamma == 0.0 {
        return loss_polar_on(tape, target, pred);
    }
    let a = loss_abs_on(tape, target, pred)?;
    let p = loss_polar_on(tape, target, pred)?;
    let a = tape.scale(a, T::of(w.gamma))?;
    let p = tape.scale(p, T::of(1.0 - w.gamma))?;
    tape.add(a, p)
}

fn check_waves(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::invalid(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    Ok(())
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return DB_CAP;
    }
    if num == 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// `10 log10(|s|^2 / |s - e|^2)`, capped at +-99.99 dB.
pub fn snr_db(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_waves(reference, estimate)?;
    let s = reference.samples();
    let num: f64 = s.iter().map(|v| v * v).sum();
    if num == 0.0 {
        return Err(Error::invalid("reference signal is all zeros"));
    }
    let den: f64 = s
        .iter()
        .zip(estimate.samples())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(ratio_db(num, den))
}

/// Scale-invariant SDR on zero-mean copies of both signals.
pub fn si_sdr_db(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_waves(reference, estimate)?;
    let centered = |w: &Waveform| {
        let m = w.samples().iter().sum::<f64>() / w.len().max(1) as f64;
        w.samples().iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let s = centered(reference);
    let e = centered(estimate);
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let ee: f64 = e.iter().map(|v| v * v).sum();
    if ss == 0.0 || ee == 0.0 {
        return Err(Error::invalid("SI-SDR needs two non-constant signals"));
    }
    let alpha = s.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / ss;
    let target: f64 = alpha * alpha * ss;
    let err: f64 = s
        .iter()
        .zip(&e)
        .map(|(a, b)| (b - alpha * a).powi(2))
        .sum();
    // Residual at rounding level counts as exact.
    if err <= ee * 1e-20 {
        return Ok(DB_CAP);
    }
    Ok(ratio_db(target, err))
}

/// One evaluation result as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub file: String,
    pub snr_db: f64,
    pub si_sdr_db: f64,
    pub frames: usize,
}

impl MetricRecord {
    pub fn measure(file: impl Into<String>, reference: &Waveform, estimate: &Waveform) -> Result<Self> {
        let spec = crate::dsp::FrameSpec::default();
        Ok(Self {
            file: file.into(),
            snr_db: snr_db(reference, estimate)?,
            si_sdr_db: si_sdr_db(reference, estimate)?,
            frames: spec.frame_count(reference.len()),
        })
    }
}
