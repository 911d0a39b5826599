//! Deterministic synthetic signals for toy training and tests.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;

/// Voiced, syllable-like tone: gliding f0 with 1/k harmonics below 4 kHz,
/// gated by raised-cosine bursts of 120-260 ms. Peak 0.5.
pub fn speech_like(len: usize, sample_rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let f0_base = rng.gen_range(110.0..190.0);
    let glide = rng.gen_range(0.3..1.2);

    let mut env = vec![0.0; len];
    let mut pos = (rng.gen_range(0.02..0.08) * sr) as usize;
    while pos < len {
        let dur = (rng.gen_range(0.12..0.26) * sr) as usize;
        let gain = rng.gen_range(0.5..1.0);
        for i in 0..dur.min(len - pos) {
            env[pos + i] = gain * (0.5 - 0.5 * (2.0 * PI * i as f64 / dur as f64).cos());
        }
        pos += dur + (rng.gen_range(0.04..0.12) * sr) as usize;
    }

    let mut phase = 0.0;
    let mut out = Vec::with_capacity(len);
    for (n, e) in env.iter().enumerate() {
        let t = n as f64 / sr;
        let f0 = f0_base * (1.0 + 0.15 * (2.0 * PI * glide * t).sin());
        phase += 2.0 * PI * f0 / sr;
        let harmonics = (4000.0 / f0) as usize;
        let v: f64 = (1..=harmonics).map(|k| (k as f64 * phase).sin() / k as f64).sum();
        out.push(e * v);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    Waveform::new(out, sample_rate).expect("finite by construction")
}

/// Uniform white noise in [-1, 1).
pub fn white_noise(len: usize, sample_rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Waveform::new(v, sample_rate).expect("finite by construction")
}
