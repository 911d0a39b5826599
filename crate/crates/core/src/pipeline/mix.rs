use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{wav::read_wav, Waveform};
use crate::error::{Error, Result};

/// Peak ceiling applied to mixtures.
pub const PEAK_LIMIT: f64 = 0.99;

/// One manifest entry: which clean and noise files to mix, at what SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: Waveform,
    /// Clean signal with the same peak scaling as `noisy`.
    pub clean: Waveform,
    /// Gain applied to the noise before adding.
    pub noise_gain: f64,
    /// Gain applied to both signals after mixing.
    pub peak_gain: f64,
}

/// Adds `noise` to `clean` at `snr_db`.
///
/// The noise is read from a seed-derived offset and looped to the clean
/// length. If the mixture peaks above [`PEAK_LIMIT`], both outputs are
/// scaled down by the same factor.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Mixture> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::invalid(format!(
            "clean is {} Hz, noise is {} Hz",
            clean.sample_rate(),
            noise.sample_rate()
        )));
    }
    let min_len = clean.sample_rate() as usize;
    if clean.len() < min_len || noise.len() < min_len {
        return Err(Error::invalid("clean and noise must each be at least 1 s long"));
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("target SNR must be finite"));
    }
    let se = clean.energy();
    if se == 0.0 {
        return Err(Error::invalid("clean signal is silent"));
    }
    let offset = ChaCha8Rng::seed_from_u64(seed).gen_range(0..noise.len());
    let looped: Vec<f64> = noise
        .samples()
        .iter()
        .cycle()
        .skip(offset)
        .take(clean.len())
        .copied()
        .collect();
    let ne: f64 = looped.iter().map(|v| v * v).sum();
    if ne == 0.0 {
        return Err(Error::invalid("noise signal is silent"));
    }
    let alpha = (se / (ne * 10f64.powf(snr_db / 10.0))).sqrt();
    let noisy: Vec<f64> = clean
        .samples()
        .iter()
        .zip(&looped)
        .map(|(s, n)| s + alpha * n)
        .collect();
    let peak = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak_gain = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    let sr = clean.sample_rate();
    Ok(Mixture {
        noisy: Waveform::new(noisy.iter().map(|v| v * peak_gain).collect(), sr)?,
        clean: clean.scaled(peak_gain),
        noise_gain: alpha,
        peak_gain,
    })
}

/// Parses a JSON list of [`MixSpec`]. Relative paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<MixSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut specs: Vec<MixSpec> = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    if specs.is_empty() {
        return Err(Error::invalid(format!("{}: manifest is empty", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    for s in &mut specs {
        for p in [&mut s.clean_path, &mut s.noise_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(specs)
}

/// Reads and mixes every manifest entry.
pub fn materialize(specs: &[MixSpec]) -> Result<Vec<Mixture>> {
    specs
        .iter()
        .map(|s| {
            let clean = read_wav(&s.clean_path)?;
            let noise = read_wav(&s.noise_path)?;
            mix_at_snr(&clean, &noise, s.snr_db, s.seed)
        })
        .collect()
}
