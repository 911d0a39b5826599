//! Shared inputs for the criterion benches.

use mfnet_core::synth::{speech_like, white_noise};
use mfnet_core::{Tensor, Waveform};

/// `secs` seconds of speech-like signal plus white noise at 16 kHz.
pub fn noisy_clip(secs: usize, seed: u64) -> Waveform {
    let n = secs * 16_000;
    let s = speech_like(n, 16_000, seed);
    let w = white_noise(n, 16_000, seed + 1);
    let mixed = s.samples().iter().zip(w.samples()).map(|(a, b)| a + 0.1 * b).collect();
    Waveform::new(mixed, 16_000).expect("valid clip")
}

/// Deterministic tensor with values in [-1, 1].
pub fn wavy_tensor(shape: &[usize], phase: f32) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| (i as f32 * 0.37 + phase).sin()).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape matches")
}
