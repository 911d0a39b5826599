//! The UNet-shaped enhancement network.
//!
//! ```text
//! input [B,1,T,F]
//!   -> 3x3 projection 1 -> n
//!   -> 4 x (d_i GLFBs, keep skip, 2x2/2 downsample C -> 2C)
//!   -> m GLFBs at 16n
//!   -> 4 x (upsample C -> C/2, + skip, u_i GLFBs)
//!   -> 3x3 projection n -> 1
//!   -> head (mask / map speech / map reverse noise)
//! ```
//!
//! Sampling halves both time and frequency. F must be a multiple of 16; T is
//! zero-padded up to one and the output cropped back.

mod accounting;
mod checkpoint;
mod glfb;

pub use accounting::{count_params_and_macs, default_frame_rate, Accounting};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_VERSION};
pub use glfb::{glfb_forward, Glfb, GlfbParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{Spectrogram, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::nn::{conv2d, downsample, pad_frames, crop_frames, upsample, Conv2dParams, Conv2dSpec};
use crate::tensor::{dims4, Real, Tape, Tensor, Var};

/// Number of 2x sampling stages; T and F must be divisible by 2^4.
pub const STAGES: usize = 4;
const ALIGN: usize = 1 << STAGES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// `sigmoid(raw) * noisy`
    Masking,
    /// `raw`
    MapSpeech,
    /// `raw + noisy`
    #[default]
    MapReverseNoise,
}

impl std::fmt::Display for HeadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadMode::Masking => "masking",
            HeadMode::MapSpeech => "map_speech",
            HeadMode::MapReverseNoise => "map_reverse_noise",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub encoder_depths: [usize; STAGES],
    pub bottleneck_depth: usize,
    pub decoder_depths: [usize; STAGES],
    pub head: HeadMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            encoder_depths: [1, 1, 8, 4],
            bottleneck_depth: 6,
            decoder_depths: [1, 1, 1, 1],
            head: HeadMode::MapReverseNoise,
        }
    }
}

impl ModelConfig {
    /// Uniform depth `d` everywhere.
    pub fn uniform(base_channels: usize, d: usize, head: HeadMode) -> Self {
        Self {
            base_channels,
            encoder_depths: [d; STAGES],
            bottleneck_depth: d,
            decoder_depths: [d; STAGES],
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::invalid("base_channels must be at least 1"));
        }
        let depths = self
            .encoder_depths
            .iter()
            .chain(&self.decoder_depths)
            .chain(std::iter::once(&self.bottleneck_depth));
        if depths.into_iter().any(|&d| d == 0) {
            return Err(Error::invalid("every block depth must be at least 1"));
        }
        Ok(())
    }

    /// `[n, 2n, 4n, 8n, 16n, 8n, 4n, 2n, n]`
    pub fn channel_plan(&self) -> Vec<usize> {
        let n = self.base_channels;
        let down = (0..=STAGES).map(|i| n << i);
        let up = (0..STAGES).rev().map(|i| n << i);
        down.chain(up).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    FanInUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLayer {
    pub spec: Conv2dSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvLayer {
    pub fn bind(&self, vars: &[Var]) -> Conv2dParams {
        Conv2dParams {
            spec: self.spec,
            weight: vars[self.weight.0],
            bias: Some(vars[self.bias.0]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormLayer {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl NormLayer {
    pub fn bind(&self, vars: &[Var]) -> (Var, Var) {
        (vars[self.gain.0], vars[self.bias.0])
    }
}

/// Collects parameter specs while the architecture is laid out.
#[derive(Default)]
pub(crate) struct ParamSink {
    specs: Vec<ParamSpec>,
}

impl ParamSink {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    pub(crate) fn conv(&mut self, name: &str, spec: Conv2dSpec) -> ConvLayer {
        let [o, i, kh, kw] = spec.weight_shape();
        ConvLayer {
            spec,
            weight: self.add(
                format!("{name}.weight"),
                vec![o, i, kh, kw],
                Init::FanInUniform { fan_in: i * kh * kw },
            ),
            bias: self.add(format!("{name}.bias"), vec![o], Init::Zeros),
        }
    }

    pub(crate) fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub(crate) fn norm(&mut self, name: &str, c: usize) -> NormLayer {
        NormLayer {
            gain: self.add(format!("{name}.gain"), vec![c], Init::Ones),
            bias: self.add(format!("{name}.bias"), vec![c], Init::Zeros),
        }
    }
}

/// Named, ordered model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::invalid("parameter names and tensors differ in count"));
        }
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Puts every tensor on `tape` as a leaf, in store order.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect()
    }
}

/// Network layout for a [`ModelConfig`]. Holds no weights.
#[derive(Debug, Clone)]
pub struct Mfnet {
    cfg: ModelConfig,
    specs: Vec<ParamSpec>,
    intro: ConvLayer,
    encoders: Vec<Vec<Glfb>>,
    downs: Vec<ConvLayer>,
    middle: Vec<Glfb>,
    ups: Vec<ConvLayer>,
    decoders: Vec<Vec<Glfb>>,
    ending: ConvLayer,
}

impl Mfnet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.base_channels;
        let mut sink = ParamSink::default();
        let intro = sink.conv("intro", Conv2dSpec::dense3x3(1, n));
        let mut encoders = Vec::new();
        let mut downs = Vec::new();
        let mut c = n;
        for (i, &d) in cfg.encoder_depths.iter().enumerate() {
            encoders.push(
                (0..d)
                    .map(|j| Glfb::build(&mut sink, &format!("enc{i}.{j}"), c))
                    .collect(),
            );
            downs.push(sink.conv(&format!("down{i}"), Conv2dSpec::down2x2(c)));
            c *= 2;
        }
        let middle = (0..cfg.bottleneck_depth)
            .map(|j| Glfb::build(&mut sink, &format!("mid.{j}"), c))
            .collect();
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        for (i, &u) in cfg.decoder_depths.iter().enumerate() {
            ups.push(sink.conv(&format!("up{i}"), Conv2dSpec::pointwise(c, 2 * c)));
            c /= 2;
            decoders.push(
                (0..u)
                    .map(|j| Glfb::build(&mut sink, &format!("dec{i}.{j}"), c))
                    .collect(),
            );
        }
        let ending = sink.conv("ending", Conv2dSpec::dense3x3(n, 1));
        // Output projection starts at zero so the reverse-noise head starts
        // as the identity.
        for id in [ending.weight, ending.bias] {
            sink.specs[id.0].init = Init::Zeros;
        }
        Ok(Self {
            cfg,
            specs: sink.specs,
            intro,
            encoders,
            downs,
            middle,
            ups,
            decoders,
            ending,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }

    /// Every GLFB in execution order.
    pub fn blocks(&self) -> impl Iterator<Item = &Glfb> {
        self.encoders
            .iter()
            .flatten()
            .chain(&self.middle)
            .chain(self.decoders.iter().flatten())
    }

    pub fn output_projection(&self) -> &ConvLayer {
        &self.ending
    }

    /// Deterministic initial weights for `seed`.
    pub fn init_params<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = self
            .specs
            .iter()
            .map(|s| {
                let n = s.shape.iter().product();
                let data = match s.init {
                    Init::Zeros => vec![T::zero(); n],
                    Init::Ones => vec![T::one(); n],
                    Init::FanInUniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
                    }
                };
                Tensor::from_vec(s.shape.clone(), data).expect("spec shapes are valid")
            })
            .collect();
        ParamStore {
            names: self.specs.iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    /// Zeroes the two branch projections of every GLFB and the output
    /// projection: each block becomes the identity and the raw output is 0.
    pub fn zero_branches<T: Real>(&self, params: &mut ParamStore<T>) {
        let layers = self
            .blocks()
            .flat_map(|b| b.branch_outputs())
            .chain(std::iter::once(&self.ending));
        for layer in layers {
            for id in [layer.weight, layer.bias] {
                params.get_mut(id).data_mut().fill(T::zero());
            }
        }
    }

    /// Checks that `params` matches this layout name by name and shape by
    /// shape.
    pub fn check_params<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                self.specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in self.specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::invalid(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Network body without the head: `[B,1,T,F] -> [B,1,T,F]`.
    ///
    /// When `trace` is given, the channel count after each encoder stage,
    /// the bottleneck and each decoder stage is appended to it.
    pub fn forward_raw<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        mut trace: Option<&mut Vec<usize>>,
    ) -> Result<Var> {
        let [_, c, t, f] = dims4("mfnet", tape.shape(x))?;
        if c != 1 {
            return Err(Error::shape("mfnet", format!("expected 1 input channel, got {c}")));
        }
        if f % ALIGN != 0 {
            return Err(Error::shape(
                "mfnet",
                format!("frequency extent {f} is not a multiple of {ALIGN}"),
            ));
        }
        let t_pad = t.div_ceil(ALIGN) * ALIGN;
        let mut note = |tape: &Tape<T>, v: Var| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(tape.shape(v)[1]);
            }
        };

        let mut h = if t_pad != t { pad_frames(tape, x, t_pad)? } else { x };
        h = conv2d(tape, h, &self.intro.bind(vars))?;
        let mut skips = Vec::with_capacity(STAGES);
        for (blocks, down) in self.encoders.iter().zip(&self.downs) {
            for b in blocks {
                h = glfb_forward(tape, h, &b.bind(vars))?;
            }
            note(tape, h);
            skips.push(h);
            h = downsample(tape, h, &down.bind(vars))?;
        }
        for b in &self.middle {
            h = glfb_forward(tape, h, &b.bind(vars))?;
        }
        note(tape, h);
        for (blocks, up) in self.decoders.iter().zip(&self.ups) {
            h = upsample(tape, h, &up.bind(vars))?;
            let skip = skips.pop().expect("one skip per stage");
            h = tape.add(h, skip)?;
            for b in blocks {
                h = glfb_forward(tape, h, &b.bind(vars))?;
            }
            note(tape, h);
        }
        h = conv2d(tape, h, &self.ending.bind(vars))?;
        if t_pad != t {
            h = crop_frames(tape, h, t)?;
        }
        Ok(h)
    }

    /// Full network including the configured head.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &[Var], noisy: Var) -> Result<Var> {
        let raw = self.forward_raw(tape, vars, noisy, None)?;
        apply_head(tape, self.cfg.head, raw, noisy)
    }

    /// Runs the network on one spectrogram with frozen weights.
    pub fn enhance_spectrogram<T: Real>(
        &self,
        params: &ParamStore<T>,
        noisy: &Spectrogram,
    ) -> Result<Spectrogram> {
        if noisy.bins() != WINDOW_LEN {
            return Err(Error::shape(
                "mfnet",
                format!("expected {WINDOW_LEN} bins, got {}", noisy.bins()),
            ));
        }
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let x = tape.constant(noisy.to_tensor());
        let y = self.forward(&mut tape, &vars, x)?;
        noisy.with_tensor(tape.value(y))
    }
}

pub fn apply_head<T: Real>(tape: &mut Tape<T>, head: HeadMode, raw: Var, noisy: Var) -> Result<Var> {
    match head {
        HeadMode::Masking => {
            let mask = tape.sigmoid(raw)?;
            tape.mul(mask, noisy)
        }
        HeadMode::MapSpeech => Ok(raw),
        HeadMode::MapReverseNoise => tape.add(raw, noisy),
    }
}

#[cfg(test)]
mod tests;
