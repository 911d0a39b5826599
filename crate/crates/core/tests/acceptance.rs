//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfnet_core::dsp::{dct2, istdct, stdct, FrameSpec, HOP, WINDOW_LEN};
use mfnet_core::gradsuite::{Registry, DEFAULT_SEEDS, THRESHOLD};
use mfnet_core::model::{apply_head, count_params_and_macs, default_frame_rate};
use mfnet_core::objectives::{loss_abs, loss_mfnet, loss_polar, snr_db, LossWeights};
use mfnet_core::pipeline::{mix_at_snr, train, Enhancer};
use mfnet_core::synth::{speech_like, white_noise};
use mfnet_core::{HeadMode, Mfnet, ModelConfig, Spectrogram, Tape, Tensor, TrainConfig, Waveform};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

const STDCT_RMS: f64 = 1e-6;
const STDCT_BUDGET: Duration = Duration::from_secs(5);
const COLA_TOL: f64 = 1e-12;
const PARSEVAL_TOL: f64 = 1e-10;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const IDENTITY_RMS: f64 = 1e-6;
const LOSS_PAIRS: usize = 1000;
const MACS_BAND: (f64, f64) = (3e9, 1.2e10);
const MACS_REFERENCE: f64 = 6.09e9;
const TOY_STEPS: usize = 500;
const TOY_LOSS_RATIO: f64 = 0.1;
const TOY_SNR_GAIN_DB: f64 = 10.0;
const TOY_BUDGET: Duration = Duration::from_secs(600);
const MIX_TARGETS_DB: [f64; 5] = [-9.0, -3.0, 0.0, 9.0, 15.0];
const MIX_TOL_DB: f64 = 1e-6;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn random_wave(len: usize, rng: &mut ChaCha8Rng) -> Waveform {
    Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16_000).unwrap()
}

fn frame_spec() -> FrameSpec {
    FrameSpec::sqrt_hann(WINDOW_LEN, HOP).unwrap()
}

fn stdct_reconstruction() -> Outcome {
    let spec = frame_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = random_wave(16_000, &mut rng);
        let y = istdct(&stdct(&x, &spec).map_err(e2s)?, x.len()).map_err(e2s)?;
        ensure(y.len() == x.len(), || format!("length {} != {}", y.len(), x.len()))?;
        worst = worst.max(rms_diff(x.samples(), y.samples()));
    }
    let took = start.elapsed();
    ensure(worst < STDCT_RMS, || format!("worst RMS {worst:.3e}"))?;
    ensure(took < STDCT_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("worst RMS {worst:.2e} over 100 signals in {:.2}s", took.as_secs_f64()))
}

fn cola_and_parseval() -> Outcome {
    let spec = frame_spec();
    let w = spec.window();
    let mut cola_err = 0.0f64;
    for n in 0..HOP {
        let s: f64 = (0..WINDOW_LEN / HOP).map(|k| w[n + k * HOP].powi(2)).sum();
        cola_err = cola_err.max((s - 1.0).abs());
    }
    ensure(cola_err <= COLA_TOL, || format!("overlap sum error {cola_err:.3e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut parseval_err = 0.0f64;
    for _ in 0..200 {
        let frame: Vec<f64> = w.iter().map(|wi| wi * rng.gen_range(-1.0..1.0)).collect();
        let coeffs = dct2(&frame).map_err(e2s)?;
        let et: f64 = frame.iter().map(|v| v * v).sum();
        let ec: f64 = coeffs.iter().map(|v| v * v).sum();
        parseval_err = parseval_err.max((et - ec).abs());
    }
    // Same property through the full analysis path.
    let x = random_wave(16_000, &mut rng);
    let s = stdct(&x, &spec).map_err(e2s)?;
    let padded: Vec<f64> = std::iter::repeat_n(0.0, HOP)
        .chain(x.samples().iter().copied())
        .chain(std::iter::repeat(0.0))
        .take(spec.padded_len(x.len()))
        .collect();
    for t in 0..s.frames() {
        let et: f64 = (0..WINDOW_LEN).map(|n| (w[n] * padded[t * HOP + n]).powi(2)).sum();
        let ec: f64 = s.frame(t).iter().map(|v| v * v).sum();
        parseval_err = parseval_err.max((et - ec).abs());
    }
    ensure(parseval_err <= PARSEVAL_TOL, || format!("energy error {parseval_err:.3e}"))?;
    Ok(format!("overlap sum error {cola_err:.1e}, energy error {parseval_err:.1e}"))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let results = Registry::standard().run(None, DEFAULT_SEEDS).map_err(e2s)?;
    let took = start.elapsed();
    for name in ["glfb", "mfnet_mini"] {
        ensure(results.iter().any(|r| r.name == name), || format!("case {name} missing"))?;
    }
    let failing: Vec<String> = results
        .iter()
        .filter(|r| !r.passed || r.seeds < DEFAULT_SEEDS)
        .map(|r| format!("{} ({:.2e})", r.name, r.max_rel_error))
        .collect();
    ensure(failing.is_empty(), || format!("failing: {}", failing.join(", ")))?;
    ensure(took < GRAD_BUDGET, || format!("took {took:?}"))?;
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(format!(
        "{} cases x {DEFAULT_SEEDS} seeds, worst {worst:.2e} < {THRESHOLD:e}, {:.1}s",
        results.len(),
        took.as_secs_f64()
    ))
}

fn architecture() -> Outcome {
    let cfg = ModelConfig::default();
    ensure(
        cfg.base_channels == 16
            && cfg.encoder_depths == [1, 1, 8, 4]
            && cfg.bottleneck_depth == 6
            && cfg.decoder_depths == [1, 1, 1, 1],
        || format!("default config is {cfg:?}"),
    )?;
    let net = Mfnet::new(cfg).map_err(e2s)?;
    let mut params = net.init_params::<f32>(3);
    perturb(&mut params, 0.05, 3);
    let expected = vec![16, 32, 64, 128, 256, 128, 64, 32, 16];
    for t in [17usize, 64, 100] {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let x = tape.constant(Tensor::<f32>::full(&[1, 1, t, WINDOW_LEN], 0.1));
        let mut trace = Vec::new();
        let raw = net.forward_raw(&mut tape, &vars, x, Some(&mut trace)).map_err(e2s)?;
        ensure(trace == expected, || format!("T={t}: trace {trace:?}"))?;
        let y = net.forward(&mut tape, &vars, x).map_err(e2s)?;
        for v in [raw, y] {
            ensure(tape.shape(v) == [1, 1, t, WINDOW_LEN], || {
                format!("T={t}: output shape {:?}", tape.shape(v))
            })?;
        }
    }
    Ok(format!("trace {expected:?}, shapes kept for T in {{17, 64, 100}}"))
}

fn perturb(params: &mut mfnet_core::ParamStore<f32>, scale: f32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

fn identity_start() -> Outcome {
    let cfg = ModelConfig::default();
    let net = Mfnet::new(cfg.clone()).map_err(e2s)?;
    let mut params = net.init_params::<f32>(11);
    net.zero_branches(&mut params);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_wave(16_000, &mut rng).scaled(0.5);
    let noisy = stdct(&x, &frame_spec()).map_err(e2s)?;
    let out = net.enhance_spectrogram(&params, &noisy).map_err(e2s)?;
    // The network runs in f32, so the reference is the f32-rounded input.
    let want: Vec<f64> = noisy.data().iter().map(|&v| v as f32 as f64).collect();
    let mismatches = out.data().iter().zip(&want).filter(|(a, b)| a != b).count();
    ensure(mismatches == 0, || format!("{mismatches} spectrogram bins differ"))?;

    let enhanced = Enhancer::new(cfg, params).map_err(e2s)?.enhance(&x).map_err(e2s)?;
    let rms = rms_diff(enhanced.wave.samples(), x.samples());
    ensure(enhanced.wave.len() == x.len(), || "length changed".into())?;
    ensure(rms < IDENTITY_RMS, || format!("waveform RMS {rms:.3e}"))?;
    Ok(format!("spectrogram exact, waveform RMS {rms:.2e}"))
}

fn head_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let shape = [2, 1, 8, 32];
    let n: usize = shape.iter().product();
    for trial in 0..200 {
        let scale = 10f32.powi(rng.gen_range(-3..4));
        let raw: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let noisy: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let mut tape = Tape::<f32>::new();
        let r = tape.constant(Tensor::from_vec(shape.to_vec(), raw.clone()).map_err(e2s)?);
        let x = tape.constant(Tensor::from_vec(shape.to_vec(), noisy.clone()).map_err(e2s)?);
        let m = apply_head(&mut tape, HeadMode::Masking, r, x).map_err(e2s)?;
        let over = tape.value(m).data().iter().zip(&noisy).filter(|(o, i)| o.abs() > i.abs()).count();
        ensure(over == 0, || format!("trial {trial}: {over} masked bins exceed the input"))?;
        let s = apply_head(&mut tape, HeadMode::MapReverseNoise, r, x).map_err(e2s)?;
        let exact = tape.value(s).data().iter().zip(raw.iter().zip(&noisy)).all(|(o, (a, b))| o.to_bits() == (a + b).to_bits());
        ensure(exact, || format!("trial {trial}: reverse-noise output is not raw + noisy"))?;
    }

    // Same contracts at the boundary of a trained-looking network.
    for head in [HeadMode::Masking, HeadMode::MapReverseNoise] {
        let net = Mfnet::new(ModelConfig::uniform(4, 1, head)).map_err(e2s)?;
        let mut params = net.init_params::<f32>(5);
        perturb(&mut params, 0.2, 6);
        let input: Vec<f32> = (0..64 * 32).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_vec(vec![1, 1, 64, 32], input.clone()).map_err(e2s)?);
        let raw = net.forward_raw(&mut tape, &vars, x, None).map_err(e2s)?;
        let y = net.forward(&mut tape, &vars, x).map_err(e2s)?;
        let (raw, y) = (tape.value(raw).data(), tape.value(y).data());
        let ok = match head {
            HeadMode::Masking => y.iter().zip(&input).all(|(o, i)| o.abs() <= i.abs()),
            _ => y.iter().zip(raw.iter().zip(&input)).all(|(o, (a, b))| o.to_bits() == (a + b).to_bits()),
        };
        ensure(ok, || format!("{head} contract broken on the network output"))?;
    }
    Ok("200 random head inputs and 2 network outputs".into())
}

fn random_spectrogram(frames: usize, rng: &mut ChaCha8Rng) -> Spectrogram {
    let scale = 10f64.powi(rng.gen_range(-2..3));
    let data = (0..frames * WINDOW_LEN).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
    Spectrogram::new(data, frames, frame_spec(), 16_000).unwrap()
}

fn loss_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let gammas = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];
    for _ in 0..LOSS_PAIRS {
        let s = random_spectrogram(3, &mut rng);
        let p = random_spectrogram(3, &mut rng);
        for &g in &gammas {
            let w = LossWeights::new(g).map_err(e2s)?;
            let z = loss_mfnet(&s, &s, w).map_err(e2s)?;
            ensure(z == 0.0, || format!("loss(S, S, {g}) = {z:e}"))?;
        }
        let (a, pl) = (loss_abs(&s, &p).map_err(e2s)?, loss_polar(&s, &p).map_err(e2s)?);
        ensure(a <= pl, || format!("abs {a:e} > polar {pl:e}"))?;
        let at1 = loss_mfnet(&s, &p, LossWeights::new(1.0).map_err(e2s)?).map_err(e2s)?;
        let at0 = loss_mfnet(&s, &p, LossWeights::new(0.0).map_err(e2s)?).map_err(e2s)?;
        ensure(at1 == a, || format!("gamma=1 gives {at1:e}, abs loss is {a:e}"))?;
        ensure(at0 == pl, || format!("gamma=0 gives {at0:e}, polar loss is {pl:e}"))?;
    }
    Ok(format!("{LOSS_PAIRS} pairs, {} gammas", gammas.len()))
}

fn macs_band() -> Outcome {
    let acc = count_params_and_macs(&ModelConfig::default(), default_frame_rate()).map_err(e2s)?;
    let m = acc.macs_per_second;
    let detail = format!(
        "{m:.3e} MACs/s vs reference {MACS_REFERENCE:.2e} (ratio {:.3}), band [{:.0e}, {:.1e}], {} params",
        m / MACS_REFERENCE,
        MACS_BAND.0,
        MACS_BAND.1,
        acc.params
    );
    ensure((MACS_BAND.0..=MACS_BAND.1).contains(&m), || detail.clone())?;
    Ok(detail)
}

fn toy_pair() -> mfnet_core::pipeline::Mixture {
    let clean = speech_like(16_000, 16_000, 1);
    let noise = white_noise(16_000, 16_000, 2);
    mix_at_snr(&clean, &noise, 0.0, 0).unwrap()
}

fn toy_model(head: HeadMode) -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        encoder_depths: [1, 1, 2, 1],
        bottleneck_depth: 2,
        decoder_depths: [1, 1, 1, 1],
        head,
    }
}

fn toy_convergence() -> Outcome {
    let pair = toy_pair();
    let cfg = TrainConfig { total_epochs: TOY_STEPS, ..TrainConfig::default() };
    let base = snr_db(&pair.clean, &pair.noisy).map_err(e2s)?;
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut errors = Vec::new();
    for head in [HeadMode::MapReverseNoise, HeadMode::MapSpeech, HeadMode::Masking] {
        let mcfg = toy_model(head);
        let out = train(std::slice::from_ref(&pair), &cfg, &mcfg, None).map_err(e2s)?;
        let ratio = out.final_loss() / out.initial_loss();
        let enhanced = Enhancer::new(mcfg, out.params).map_err(e2s)?.enhance(&pair.noisy).map_err(e2s)?;
        let gain = snr_db(&pair.clean, &enhanced.wave).map_err(e2s)? - base;
        notes.push(format!("{head} ratio {ratio:.4} gain {gain:+.1} dB"));
        if ratio >= TOY_LOSS_RATIO || gain < TOY_SNR_GAIN_DB || out.curve.len() != TOY_STEPS {
            errors.push(head.to_string());
        }
    }
    let took = start.elapsed();
    let detail = format!("{}; {:.0}s", notes.join("; "), took.as_secs_f64());
    ensure(errors.is_empty() && took < TOY_BUDGET, || detail.clone())?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let pair = toy_pair();
    let cfg = TrainConfig { total_epochs: 6, warmup_epochs: 2, checkpoint_every: 3, seed: 9, ..TrainConfig::default() };
    let mcfg = ModelConfig::uniform(4, 1, HeadMode::MapReverseNoise);
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(e2s)?;
        let out = train(std::slice::from_ref(&pair), &cfg, &mcfg, Some(dir.path())).map_err(e2s)?;
        let mut files = Vec::new();
        for p in &out.checkpoints {
            files.push(std::fs::read(p).map_err(e2s)?);
        }
        files.push(std::fs::read(dir.path().join("loss_curve.json")).map_err(e2s)?);
        let bits: Vec<u64> = out.curve.iter().map(|p| p.loss.to_bits()).collect();
        runs.push((bits, files));
    }
    ensure(runs[0].0 == runs[1].0, || "loss curves differ".into())?;
    ensure(runs[0].1 == runs[1].1, || "checkpoint or curve bytes differ".into())?;
    Ok(format!("{} steps, {} files identical", runs[0].0.len(), runs[0].1.len()))
}

fn mixing_accuracy() -> Outcome {
    let clean = speech_like(24_000, 16_000, 41);
    let noise = white_noise(20_000, 16_000, 42);
    let mut worst = 0.0f64;
    let mut limited = 0;
    for (i, &target) in MIX_TARGETS_DB.iter().enumerate() {
        let m = mix_at_snr(&clean, &noise, target, i as u64).map_err(e2s)?;
        let se: f64 = m.clean.samples().iter().map(|v| v * v).sum();
        let ne: f64 = m.noisy.samples().iter().zip(m.clean.samples()).map(|(y, s)| (y - s).powi(2)).sum();
        let got = 10.0 * (se / ne).log10();
        worst = worst.max((got - target).abs());
        if m.peak_gain < 1.0 {
            limited += 1;
        }
    }
    ensure(worst <= MIX_TOL_DB, || format!("worst error {worst:.3e} dB"))?;
    Ok(format!("worst error {worst:.1e} dB, {limited} of 5 peak-limited"))
}

fn main() {
    let checks: [Check; 11] = [
        ("stdct perfect reconstruction", stdct_reconstruction),
        ("cola and parseval", cola_and_parseval),
        ("gradient suite", gradient_suite),
        ("architecture conformance", architecture),
        ("identity start", identity_start),
        ("head contracts", head_contracts),
        ("loss algebra", loss_algebra),
        ("macs band", macs_band),
        ("toy convergence", toy_convergence),
        ("determinism", determinism),
        ("mixing accuracy", mixing_accuracy),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
