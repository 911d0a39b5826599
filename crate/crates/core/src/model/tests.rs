use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::grad_check;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn glfb_alone(c: usize) -> (Glfb, Vec<ParamSpec>) {
    let mut sink = ParamSink::default();
    let g = Glfb::build(&mut sink, "g", c);
    (g, sink.specs)
}

fn store_for(specs: &[ParamSpec], seed: u64) -> ParamStore<f64> {
    ParamStore::from_parts(
        specs.iter().map(|s| s.name.clone()).collect(),
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| random(&s.shape, seed * 1000 + i as u64))
            .collect(),
    )
    .unwrap()
}

#[test]
fn glfb_with_zero_weights_is_identity() {
    let (g, specs) = glfb_alone(3);
    let mut store = store_for(&specs, 1);
    for c in g.convs() {
        for id in [c.weight, c.bias] {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let x = random(&[1, 3, 4, 8], 2);
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let y = glfb_forward(&mut tape, xv, &g.bind(&vars)).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn glfb_branch_zeroing_alone_is_identity() {
    let (g, specs) = glfb_alone(2);
    let mut store = store_for(&specs, 3);
    for c in g.branch_outputs() {
        for id in [c.weight, c.bias] {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let x = random(&[2, 2, 4, 4], 4);
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let y = glfb_forward(&mut tape, xv, &g.bind(&vars)).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn glfb_preserves_shape() {
    let (g, specs) = glfb_alone(16);
    let store = store_for(&specs, 5).cast::<f32>();
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape, false);
    let xv = tape.constant(random(&[1, 16, 8, 16], 6).cast());
    let y = glfb_forward(&mut tape, xv, &g.bind(&vars)).unwrap();
    assert_eq!(tape.shape(y), &[1, 16, 8, 16]);
}

#[test]
fn glfb_rejects_wrong_channels() {
    let (g, specs) = glfb_alone(2);
    let store = store_for(&specs, 5);
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape, false);
    let xv = tape.constant(random(&[1, 4, 2, 2], 6));
    let err = glfb_forward(&mut tape, xv, &g.bind(&vars)).unwrap_err();
    assert!(matches!(err, Error::Shape { op: "glfb", .. }), "{err}");
}

#[test]
fn glfb_input_gradient_matches_finite_differences() {
    let (g, specs) = glfb_alone(2);
    for seed in 0..10 {
        let store = store_for(&specs, seed);
        let probe = random(&[1, 2, 2, 4], 100 + seed);
        let report = grad_check(
            |tape, x| {
                let vars = store.bind(tape, false);
                let y = glfb_forward(tape, x, &g.bind(&vars))?;
                let p = tape.constant(probe.clone());
                let y = tape.mul(y, p)?;
                tape.sum(y)
            },
            &random(&[1, 2, 2, 4], 200 + seed),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "seed {seed}: {report:?}");
    }
}

#[test]
fn channel_plan_matches_doubling_rule() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.channel_plan(), vec![16, 32, 64, 128, 256, 128, 64, 32, 16]);
    for n in 1..6 {
        let p = ModelConfig::uniform(n, 1, HeadMode::Masking).channel_plan();
        assert_eq!(p, [1, 2, 4, 8, 16, 8, 4, 2, 1].map(|k| k * n));
    }
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    let c = ModelConfig { bottleneck_depth: 0, ..ModelConfig::default() };
    assert!(Mfnet::new(c).is_err());
    let c = ModelConfig { base_channels: 0, ..ModelConfig::default() };
    assert!(Mfnet::new(c).is_err());
    let mut c = ModelConfig::default();
    c.decoder_depths[2] = 0;
    assert!(c.validate().is_err());
}

#[test]
fn head_modes_serialize_as_snake_case() {
    let cfg = ModelConfig::uniform(2, 1, HeadMode::MapReverseNoise);
    let s = serde_json::to_string(&cfg).unwrap();
    assert!(s.contains("\"map_reverse_noise\""), "{s}");
    let back: ModelConfig = serde_json::from_str(&s).unwrap();
    assert_eq!(back, cfg);
    assert!(serde_json::from_str::<ModelConfig>(r#"{"width": 3}"#).is_err());
    let partial: ModelConfig = serde_json::from_str(r#"{"head": "masking"}"#).unwrap();
    assert_eq!(partial.base_channels, 16);
    assert_eq!(partial.head, HeadMode::Masking);
}

#[test]
fn trace_and_shapes_for_small_width() {
    let cfg = ModelConfig::uniform(2, 1, HeadMode::MapSpeech);
    let net = Mfnet::new(cfg).unwrap();
    let params = net.init_params::<f32>(0);
    for t in [1, 16, 17, 31, 40] {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let x = tape.constant(random(&[1, 1, t, 32], t as u64).cast());
        let mut trace = Vec::new();
        let y = net.forward_raw(&mut tape, &vars, x, Some(&mut trace)).unwrap();
        assert_eq!(trace, vec![2, 4, 8, 16, 32, 16, 8, 4, 2]);
        assert_eq!(tape.shape(y), &[1, 1, t, 32]);
    }
}

#[test]
fn frequency_must_tile_and_spectrogram_must_have_320_bins() {
    let net = Mfnet::new(ModelConfig::uniform(1, 1, HeadMode::MapSpeech)).unwrap();
    let params = net.init_params::<f32>(0);
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(&[1, 1, 16, 40]));
    assert!(matches!(
        net.forward(&mut tape, &vars, x),
        Err(Error::Shape { op: "mfnet", .. })
    ));

    let spec = crate::dsp::FrameSpec::sqrt_hann(64, 32).unwrap();
    let s = Spectrogram::new(vec![0.0; 64 * 3], 3, spec, 16000).unwrap();
    assert!(net.enhance_spectrogram(&params, &s).is_err());
}

#[test]
fn zero_branch_reverse_noise_model_is_identity() {
    let net = Mfnet::new(ModelConfig::uniform(2, 1, HeadMode::MapReverseNoise)).unwrap();
    let mut params = net.init_params::<f32>(9);
    net.zero_branches(&mut params);
    let wave = crate::dsp::Waveform::new(
        random(&[4000], 3).into_data(),
        crate::dsp::SAMPLE_RATE,
    )
    .unwrap();
    let spec = crate::dsp::stdct(&wave, &Default::default()).unwrap();
    let out = net.enhance_spectrogram(&params, &spec).unwrap();
    let narrowed: Vec<f64> = spec.data().iter().map(|&v| v as f32 as f64).collect();
    assert_eq!(out.data(), &narrowed[..]);
}

#[test]
fn fresh_init_has_zero_output_projection() {
    let net = Mfnet::new(ModelConfig::uniform(2, 1, HeadMode::MapSpeech)).unwrap();
    let params = net.init_params::<f64>(1);
    let end = net.output_projection();
    assert!(params.get(end.weight).data().iter().all(|&v| v == 0.0));
    assert!(params.get(end.bias).data().iter().all(|&v| v == 0.0));
    assert_eq!(params.name(end.weight), "ending.weight");
    assert_eq!(net.init_params::<f64>(1), params);
    assert_ne!(net.init_params::<f64>(2), params);
}

#[test]
fn masking_head_never_amplifies() {
    let net = Mfnet::new(ModelConfig::uniform(2, 1, HeadMode::Masking)).unwrap();
    for seed in 0..5 {
        let mut params = net.init_params::<f64>(seed);
        // give the output projection weight so the mask is not constant
        let end = *net.output_projection();
        *params.get_mut(end.weight) = random(&[1, 2, 3, 3], seed + 50);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let noisy = random(&[1, 1, 20, 32], seed + 70).cast::<f64>();
        let x = tape.constant(noisy.clone());
        let y = net.forward(&mut tape, &vars, x).unwrap();
        for (o, n) in tape.value(y).data().iter().zip(noisy.data()) {
            assert!(o.abs() <= n.abs(), "{o} vs {n}");
        }
    }
}

#[test]
fn reverse_noise_head_adds_input_bitwise() {
    let mut tape = Tape::<f32>::new();
    let raw = tape.constant(random(&[1, 1, 3, 4], 1).cast());
    let noisy = tape.constant(random(&[1, 1, 3, 4], 2).cast());
    let out = apply_head(&mut tape, HeadMode::MapReverseNoise, raw, noisy).unwrap();
    let expect: Vec<f32> = tape
        .value(raw)
        .data()
        .iter()
        .zip(tape.value(noisy).data())
        .map(|(a, b)| a + b)
        .collect();
    assert_eq!(tape.value(out).data(), &expect[..]);
    let out = apply_head(&mut tape, HeadMode::MapSpeech, raw, noisy).unwrap();
    assert_eq!(out, raw);
}

/// Parameter count from layer algebra, independent of the layout code.
pub(crate) fn hand_param_count(cfg: &ModelConfig) -> usize {
    let glfb = |c: usize| 7 * c * c + 31 * c;
    let n = cfg.base_channels;
    let mut total = (9 * n + n) + (9 * n + 1);
    let mut c = n;
    for &d in &cfg.encoder_depths {
        total += d * glfb(c) + 8 * c * c + 2 * c;
        c *= 2;
    }
    total += cfg.bottleneck_depth * glfb(c);
    for &u in &cfg.decoder_depths {
        total += 2 * c * c + 2 * c;
        c /= 2;
        total += u * glfb(c);
    }
    total
}

#[test]
fn param_count_matches_layer_algebra() {
    let n1 = ModelConfig::uniform(1, 1, HeadMode::MapReverseNoise);
    // n=1, all depths 1, by hand:
    // intro 10, ending 10, GLFBs at 1,2,4,8,16,8,4,2,1 -> sum of 7c^2+31c,
    // downs 8c^2+2c at 1,2,4,8, ups 2c^2+2c at 16,8,4,2.
    let glfbs: usize = [1, 2, 4, 8, 16, 8, 4, 2, 1].iter().map(|c| 7 * c * c + 31 * c).sum();
    let downs: usize = [1, 2, 4, 8].iter().map(|c| 8 * c * c + 2 * c).sum();
    let ups: usize = [16, 8, 4, 2].iter().map(|c| 2 * c * c + 2 * c).sum();
    assert_eq!(glfbs, 4408);
    let by_hand = 10 + 10 + glfbs + downs + ups;
    assert_eq!(Mfnet::new(n1.clone()).unwrap().param_count(), by_hand);
    for cfg in [n1, ModelConfig::default(), ModelConfig::uniform(3, 2, HeadMode::Masking)] {
        let net = Mfnet::new(cfg.clone()).unwrap();
        assert_eq!(net.param_count(), hand_param_count(&cfg));
        assert_eq!(net.init_params::<f32>(0).numel(), net.param_count());
    }
}

#[test]
fn single_pointwise_conv_macs() {
    assert_eq!(Conv2dSpec::pointwise(2, 2).macs(10, 10), 400);
}

#[test]
fn macs_scale_quadratically_with_width() {
    let base = count_params_and_macs(&ModelConfig::default(), 100.0).unwrap();
    let wide = count_params_and_macs(
        &ModelConfig { base_channels: 32, ..ModelConfig::default() },
        100.0,
    )
    .unwrap();
    let ratio = wide.macs_per_second / base.macs_per_second;
    assert!((3.8..4.0).contains(&ratio), "ratio {ratio}");
    assert_eq!(base.params, hand_param_count(&ModelConfig::default()));
    assert_eq!(default_frame_rate(), 100.0);
}

#[test]
fn macs_match_a_traced_forward_count() {
    // Per-conv MACs summed from the shapes a real forward pass produces.
    let cfg = ModelConfig::uniform(2, 1, HeadMode::MapSpeech);
    let acc = count_params_and_macs(&cfg, 16.0).unwrap();
    let per_c = |c: u64, hw: u64| -> u64 {
        // pc1 + dw + pc2 + pc3 + pc4 on hw, sca on 1x1
        (2 * c * c + 2 * c * 9 + c * c + 2 * c * c + c * c) * hw + c * c
    };
    let (t, f) = (16u64, 320u64);
    let mut expect = 9 * 2 * t * f + 9 * 2 * t * f;
    let mut c = 2u64;
    let mut hw = t * f;
    for _ in 0..4 {
        expect += per_c(c, hw) + 2 * c * c * 4 * (hw / 4);
        c *= 2;
        hw /= 4;
    }
    expect += per_c(c, hw);
    for _ in 0..4 {
        expect += 2 * c * c * hw;
        c /= 2;
        hw *= 4;
        expect += per_c(c, hw);
    }
    assert_eq!(acc.macs_per_block, expect);
    assert_eq!(acc.macs_per_second, expect as f64);
}
