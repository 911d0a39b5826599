//! Named finite-difference checks over every differentiable op, one GLFB and
//! a miniature network.
//!
//! Each case takes a seed, builds random f64 inputs, reduces the op output to
//! a scalar with a random probe, and checks the gradient of every input.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{glfb_forward, Glfb, HeadMode, Init, Mfnet, ModelConfig, ParamSink, ParamSpec};
use crate::nn::{self, Conv2dParams, Conv2dSpec};
use crate::objectives::{loss_mfnet_on, LossWeights};
use crate::tensor::{grad_check_coords, GradCheckReport, Tape, Tensor, Var};

/// Pass threshold on the relative error.
pub const THRESHOLD: f64 = 1e-4;
/// Seeds per case.
pub const DEFAULT_SEEDS: u64 = 10;
const EPS: f64 = 1e-5;
/// The full network's layer norms over two channels have large third
/// derivatives; a smaller step keeps truncation error below the threshold.
const NET_EPS: f64 = 1e-6;

pub type CheckFn = dyn Fn(u64) -> Result<GradCheckReport> + Send + Sync;

#[derive(Clone)]
pub struct GradCase {
    pub name: String,
    check: Arc<CheckFn>,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        check: impl Fn(u64) -> Result<GradCheckReport> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            check: Arc::new(check),
        }
    }

    pub fn run(&self, seed: u64) -> Result<GradCheckReport> {
        (self.check)(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub seeds: u64,
    pub coords_checked: usize,
    pub passed: bool,
}

#[derive(Clone, Default)]
pub struct Registry {
    cases: Vec<GradCase>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn register(&mut self, case: GradCase) {
        self.cases.retain(|c| c.name != case.name);
        self.cases.push(case);
    }

    pub fn names(&self) -> Vec<&str> {
        self.cases.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&GradCase> {
        self.cases.iter().find(|c| c.name == name)
    }

    /// Runs one case (`Some(name)`) or all of them over seeds `0..seeds`.
    pub fn run(&self, scope: Option<&str>, seeds: u64) -> Result<Vec<CaseResult>> {
        let selected: Vec<&GradCase> = match scope {
            None | Some("all") => self.cases.iter().collect(),
            Some(name) => vec![self
                .get(name)
                .ok_or_else(|| Error::invalid(format!("unknown gradient case '{name}'")))?],
        };
        selected.into_iter().map(|c| run_case(c, seeds)).collect()
    }

    /// Every op, a GLFB and a miniature network.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        for case in standard_cases() {
            r.register(case);
        }
        r
    }
}

fn run_case(case: &GradCase, seeds: u64) -> Result<CaseResult> {
    let mut out = CaseResult {
        name: case.name.clone(),
        max_rel_error: 0.0,
        worst_seed: 0,
        seeds,
        coords_checked: 0,
        passed: true,
    };
    for seed in 0..seeds {
        let r = case.run(seed)?;
        out.coords_checked += r.coords_checked;
        // NaN compares false, so test it explicitly.
        if r.max_rel_error > out.max_rel_error || r.max_rel_error.is_nan() {
            out.max_rel_error = r.max_rel_error;
            out.worst_seed = seed;
        }
    }
    out.passed = out.max_rel_error < THRESHOLD;
    Ok(out)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
        .expect("valid shape")
}

/// Values in +-[0.2, 1), away from kinks at zero.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = uniform(shape, 0.2, 1.0, rng);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Scalar `sum(y * probe)` with a seeded probe matching `y`'s shape.
fn probe_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let p = uniform(tape.shape(y), -1.0, 1.0, &mut rng);
    let p = tape.constant(p);
    let y = tape.mul(y, p)?;
    tape.sum(y)
}

/// Checks the gradient of every input of `f`. Inputs with more than
/// `max_coords` elements are checked on a seeded sample of coordinates.
pub fn check_inputs<F>(
    inputs: &[Tensor<f64>],
    max_coords: usize,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_inputs_limited(inputs, |_| max_coords, EPS, seed, f)
}

/// [`check_inputs`] with a per-input coordinate budget.
fn check_inputs_limited<F>(
    inputs: &[Tensor<f64>],
    limit: impl Fn(usize) -> usize,
    eps: f64,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de);
    let mut total: Option<GradCheckReport> = None;
    for k in 0..inputs.len() {
        let n = inputs[k].numel();
        let max_coords = limit(k);
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let r = grad_check_coords(
            |tape, x| {
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| if j == k { x } else { tape.constant(t.clone()) })
                    .collect();
                f(tape, &vars)
            },
            &inputs[k],
            eps,
            &coords,
        )?;
        total = Some(match total {
            None => r,
            Some(mut acc) => {
                acc.coords_checked += r.coords_checked;
                if r.max_rel_error > acc.max_rel_error || r.max_rel_error.is_nan() {
                    acc.max_rel_error = r.max_rel_error;
                    acc.worst_index = r.worst_index;
                    acc.analytic = r.analytic;
                    acc.numeric = r.numeric;
                }
                acc
            }
        });
    }
    total.ok_or_else(|| Error::invalid("no inputs to check"))
}

fn conv_case(name: &str, spec: Conv2dSpec, h: usize, w: usize) -> GradCase {
    GradCase::new(name, move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            uniform(&[2, spec.in_channels, h, w], -1.0, 1.0, &mut rng),
            uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng),
            uniform(&[spec.out_channels], -1.0, 1.0, &mut rng),
        ];
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            let p = Conv2dParams { spec, weight: v[1], bias: Some(v[2]) };
            let y = nn::conv2d(tape, v[0], &p)?;
            probe_sum(tape, y, seed)
        })
    })
}

/// Unary op on a random `shape` input, reduced by a probe.
fn unary_case(
    name: &str,
    shape: &'static [usize],
    away_from_zero: bool,
    op: fn(&mut Tape<f64>, Var) -> Result<Var>,
) -> GradCase {
    GradCase::new(name, move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = if away_from_zero {
            off_zero(shape, &mut rng)
        } else {
            uniform(shape, -1.5, 1.5, &mut rng)
        };
        check_inputs(&[x], usize::MAX, seed, |tape, v| {
            let y = op(tape, v[0])?;
            if tape.value(y).numel() == 1 {
                // already scalar; scale so the probe path is still exercised
                tape.scale(y, 0.7)
            } else {
                probe_sum(tape, y, seed)
            }
        })
    })
}

fn binary_case(name: &str, op: fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> GradCase {
    GradCase::new(name, move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            uniform(&[2, 3], -1.0, 1.0, &mut rng),
            uniform(&[2, 3], -1.0, 1.0, &mut rng),
        ];
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            let y = op(tape, v[0], v[1])?;
            probe_sum(tape, y, seed)
        })
    })
}

/// Random parameters for a layout: `init_params` plus a perturbation so
/// zero-initialised tensors still carry gradient.
fn perturbed(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    specs
        .iter()
        .map(|s| {
            let base = match s.init {
                Init::Ones => 1.0,
                _ => 0.0,
            };
            let scale = match s.init {
                Init::FanInUniform { fan_in } => 1.0 / (fan_in as f64).sqrt(),
                _ => 0.3,
            };
            let mut t = uniform(&s.shape, -scale, scale, rng);
            t.data_mut().iter_mut().for_each(|v| *v += base);
            t
        })
        .collect()
}

fn glfb_case() -> GradCase {
    GradCase::new("glfb", |seed| {
        let mut sink = ParamSink::default();
        let g = Glfb::build(&mut sink, "g", 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = vec![uniform(&[1, 2, 2, 4], -1.0, 1.0, &mut rng)];
        inputs.extend(perturbed(sink.specs(), &mut rng));
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            let y = glfb_forward(tape, v[0], &g.bind(&v[1..]))?;
            probe_sum(tape, y, seed)
        })
    })
}

/// Width 2, every depth 1, one 16x32 map. Cycles the head by seed. All
/// input coordinates and a sample of each parameter tensor are checked.
fn mfnet_case() -> GradCase {
    GradCase::new("mfnet_mini", |seed| {
        let heads = [HeadMode::MapReverseNoise, HeadMode::MapSpeech, HeadMode::Masking];
        let cfg = ModelConfig::uniform(2, 1, heads[seed as usize % 3]);
        let net = Mfnet::new(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&[1, 1, 16, 32], -1.0, 1.0, &mut rng);
        let params = perturbed(net.param_specs(), &mut rng);
        let mut inputs = vec![x];
        inputs.extend(params);
        let limit = |k: usize| if k == 0 { usize::MAX } else { 4 };
        check_inputs_limited(&inputs, limit, NET_EPS, seed, |tape, v| {
            let y = net.forward(tape, &v[1..], v[0])?;
            probe_sum(tape, y, seed)
        })
    })
}

fn standard_cases() -> Vec<GradCase> {
    let mut v = vec![
        binary_case("add", |t, a, b| t.add(a, b)),
        binary_case("sub", |t, a, b| t.sub(a, b)),
        binary_case("mul", |t, a, b| t.mul(a, b)),
        unary_case("scale", &[2, 3], false, |t, a| t.scale(a, -1.7)),
        unary_case("sigmoid", &[8], false, |t, a| t.sigmoid(a)),
        unary_case("abs", &[2, 4], true, |t, a| t.abs(a)),
        unary_case("square", &[2, 4], false, |t, a| t.square(a)),
        unary_case("sum", &[3, 4], false, |t, a| t.sum(a)),
        unary_case("mean", &[3, 4], false, |t, a| t.mean(a)),
        conv_case("conv2d_dense3x3", Conv2dSpec::dense3x3(2, 3), 4, 5),
        conv_case("conv2d_pointwise", Conv2dSpec::pointwise(3, 2), 3, 4),
        conv_case("conv2d_depthwise3x3", Conv2dSpec::depthwise3x3(3), 4, 4),
        conv_case(
            "conv2d_strided",
            Conv2dSpec::new(2, 2, (3, 3), (2, 2), (1, 1), 1).expect("valid spec"),
            5,
            5,
        ),
        unary_case("pixel_shuffle", &[1, 8, 2, 3], false, nn::pixel_shuffle),
        unary_case("simple_gate", &[1, 4, 2, 3], false, nn::simple_gate),
        unary_case("global_avg_pool", &[1, 3, 2, 4], false, nn::global_avg_pool),
        unary_case("pad_frames", &[1, 2, 3, 4], false, |t, a| nn::pad_frames(t, a, 5)),
        unary_case("crop_frames", &[1, 2, 5, 4], false, |t, a| nn::crop_frames(t, a, 3)),
    ];
    v.push(GradCase::new("matmul", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [uniform(&[3, 4], -1.0, 1.0, &mut rng), uniform(&[4, 2], -1.0, 1.0, &mut rng)];
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            let y = tape.matmul(v[0], v[1])?;
            probe_sum(tape, y, seed)
        })
    }));
    v.push(GradCase::new("downsample", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = Conv2dSpec::down2x2(2);
        let inputs = [
            uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng),
            uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng),
            uniform(&[4], -1.0, 1.0, &mut rng),
        ];
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            let p = Conv2dParams { spec, weight: v[1], bias: Some(v[2]) };
            let y = nn::downsample(tape, v[0], &p)?;
            probe_sum(tape, y, seed)
        })
    }));
    v.push(GradCase::new("upsample", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = Conv2dSpec::pointwise(4, 8);
        let inputs = [
            uniform(&[1, 4, 2, 3], -1.0, 1.0, &mut rng),
            uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng),
            uniform(&[8], -1.0, 1.0, &mut rng),
        ];
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            let p = Conv2dParams { spec, weight: v[1], bias: Some(v[2]) };
            let y = nn::upsample(tape, v[0], &p)?;
            probe_sum(tape, y, seed)
        })
    }));
    v.push(GradCase::new("layer_norm_channel", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            uniform(&[1, 4, 2, 2], -1.0, 1.0, &mut rng),
            uniform(&[4], 0.5, 1.5, &mut rng),
            uniform(&[4], -0.5, 0.5, &mut rng),
        ];
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            let y = nn::layer_norm_channel(tape, v[0], v[1], v[2])?;
            probe_sum(tape, y, seed)
        })
    }));
    v.push(GradCase::new("channel_scale", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut rng),
            uniform(&[2, 3, 1, 1], -1.0, 1.0, &mut rng),
        ];
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            let y = nn::channel_scale(tape, v[0], v[1])?;
            probe_sum(tape, y, seed)
        })
    }));
    v.push(GradCase::new("simple_channel_attention", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = Conv2dSpec::pointwise(2, 2);
        let inputs = [
            uniform(&[1, 2, 2, 2], -1.0, 1.0, &mut rng),
            uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng),
            uniform(&[2], -1.0, 1.0, &mut rng),
        ];
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            let p = Conv2dParams { spec, weight: v[1], bias: Some(v[2]) };
            let y = nn::simple_channel_attention(tape, v[0], &p)?;
            probe_sum(tape, y, seed)
        })
    }));
    v.push(GradCase::new("loss_mfnet", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [off_zero(&[2, 4], &mut rng), off_zero(&[2, 4], &mut rng)];
        let gamma = [0.5, 0.0, 1.0, 0.25, 0.8][seed as usize % 5];
        check_inputs(&inputs, usize::MAX, seed, |tape, v| {
            loss_mfnet_on(tape, v[0], v[1], LossWeights { gamma })
        })
    }));
    v.push(glfb_case());
    v.push(mfnet_case());
    v
}
