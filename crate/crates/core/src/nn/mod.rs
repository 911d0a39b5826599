//! Differentiable building blocks on `[B, C, T, F]` feature maps.

mod conv;

use conv::{Conv2dOp, ConvGeom};

use crate::error::{Error, Result};
use crate::tensor::{dims4, BackwardOp, Real, Tape, Tensor, Var};

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-6;

/// Convolution hyperparameters. Weight shape is
/// `[out_channels, in_channels / groups, kh, kw]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 1x1 convolution.
    pub fn pointwise(cin: usize, cout: usize) -> Self {
        Self {
            in_channels: cin,
            out_channels: cout,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }

    /// Dense 3x3, padding 1 (projection layers).
    pub fn dense3x3(cin: usize, cout: usize) -> Self {
        Self {
            kernel: (3, 3),
            padding: (1, 1),
            ..Self::pointwise(cin, cout)
        }
    }

    /// Depthwise 3x3, padding 1.
    pub fn depthwise3x3(channels: usize) -> Self {
        Self {
            groups: channels,
            ..Self::dense3x3(channels, channels)
        }
    }

    /// 2x2 kernel, stride 2, doubling channels.
    pub fn down2x2(channels: usize) -> Self {
        Self {
            kernel: (2, 2),
            stride: (2, 2),
            ..Self::pointwise(channels, 2 * channels)
        }
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.groups > 0
            && self.in_channels > 0
            && self.out_channels > 0
            && self.in_channels.is_multiple_of(self.groups)
            && self.out_channels.is_multiple_of(self.groups)
            && self.kernel.0 > 0
            && self.kernel.1 > 0
            && self.stride.0 > 0
            && self.stride.1 > 0;
        if !ok {
            return Err(Error::shape("conv2d", format!("invalid convolution {self:?}")));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }

    /// Output spatial size; the stride must divide the padded extent exactly.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |len: usize, k: usize, s: usize, p: usize, name: &str| {
            let span = len + 2 * p;
            if span < k || !(span - k).is_multiple_of(s) {
                return Err(Error::shape(
                    "conv2d",
                    format!("{name} extent {len} (pad {p}) does not tile kernel {k} stride {s}"),
                ));
            }
            Ok((span - k) / s + 1)
        };
        Ok((
            axis(h, self.kernel.0, self.stride.0, self.padding.0, "time")?,
            axis(w, self.kernel.1, self.stride.1, self.padding.1, "frequency")?,
        ))
    }

    /// Multiply-accumulates for one application producing an
    /// `out_h x out_w` map per output channel.
    pub fn macs(&self, out_h: usize, out_w: usize) -> u64 {
        (self.in_channels / self.groups) as u64
            * self.out_channels as u64
            * (self.kernel.0 * self.kernel.1) as u64
            * (out_h * out_w) as u64
    }
}

/// A convolution whose weights live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Conv2dParams {
    pub spec: Conv2dSpec,
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Conv2dParams {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        conv2d(tape, x, self)
    }
}

pub fn conv2d<T: Real>(tape: &mut Tape<T>, x: Var, p: &Conv2dParams) -> Result<Var> {
    let spec = p.spec;
    spec.validate()?;
    let [b, c, h, w] = dims4("conv2d", tape.shape(x))?;
    if c != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, convolution expects {}", spec.in_channels),
        ));
    }
    if tape.shape(p.weight) != spec.weight_shape() {
        return Err(Error::mismatch("conv2d", &spec.weight_shape(), tape.shape(p.weight)));
    }
    if let Some(bias) = p.bias {
        if tape.shape(bias) != [spec.out_channels] {
            return Err(Error::mismatch("conv2d", &[spec.out_channels], tape.shape(bias)));
        }
    }
    let (out_h, out_w) = spec.output_size(h, w)?;
    let geom = ConvGeom {
        batch: b,
        in_h: h,
        in_w: w,
        out_h,
        out_w,
        spec,
    };
    let out = conv::forward(
        tape.value(x).data(),
        tape.value(p.weight).data(),
        p.bias.map(|v| tape.value(v).data()),
        &geom,
    );
    let out = Tensor::from_vec(vec![b, spec.out_channels, out_h, out_w], out)?;
    let mut inputs = vec![x, p.weight];
    inputs.extend(p.bias);
    tape.push(out, &inputs, Box::new(Conv2dOp { geom }))
}

/// Learned 2x2 stride-2 convolution: `[B,C,T,F] -> [B,2C,T/2,F/2]`.
pub fn downsample<T: Real>(tape: &mut Tape<T>, x: Var, p: &Conv2dParams) -> Result<Var> {
    let [_, c, h, w] = dims4("downsample", tape.shape(x))?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "downsample",
            format!("time and frequency must be even, got {h}x{w}"),
        ));
    }
    if p.spec != Conv2dSpec::down2x2(c) {
        return Err(Error::shape("downsample", format!("expected 2x2/2 conv {c}->{}", 2 * c)));
    }
    conv2d(tape, x, p)
}

/// Point conv `C -> 2C` then 2x pixel shuffle: `[B,C,T,F] -> [B,C/2,2T,2F]`.
pub fn upsample<T: Real>(tape: &mut Tape<T>, x: Var, p: &Conv2dParams) -> Result<Var> {
    let [_, c, _, _] = dims4("upsample", tape.shape(x))?;
    if p.spec != Conv2dSpec::pointwise(c, 2 * c) {
        return Err(Error::shape("upsample", format!("expected point conv {c}->{}", 2 * c)));
    }
    let y = conv2d(tape, x, p)?;
    pixel_shuffle(tape, y)
}

/// `out[b, c, 2t+i, 2f+j] = in[b, 4c + 2i + j, t, f]`.
pub fn pixel_shuffle<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [b, c4, h, w] = dims4("pixel_shuffle", tape.shape(x))?;
    if c4 % 4 != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("channel count {c4} is not divisible by 4"),
        ));
    }
    let dims = [b, c4 / 4, h, w];
    let src = tape.value(x).data();
    let mut out = vec![T::zero(); src.len()];
    for_each_shuffle(dims, |i_in, i_out| out[i_out] = src[i_in]);
    let out = Tensor::from_vec(vec![b, c4 / 4, 2 * h, 2 * w], out)?;
    tape.push(out, &[x], Box::new(PixelShuffleOp { dims }))
}

/// Calls `f(input_index, output_index)` for every element of a 2x shuffle of
/// a `[b, 4c, h, w]` input.
fn for_each_shuffle(dims: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let [b, c, h, w] = dims;
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..2 {
                for j in 0..2 {
                    let plane_in = (bi * 4 * c + 4 * ci + 2 * i + j) * h * w;
                    for t in 0..h {
                        for fq in 0..w {
                            let o = ((bi * c + ci) * 2 * h + 2 * t + i) * 2 * w + 2 * fq + j;
                            f(plane_in + t * w + fq, o);
                        }
                    }
                }
            }
        }
    }
}

struct PixelShuffleOp {
    dims: [usize; 4],
}

impl<T: Real> BackwardOp<T> for PixelShuffleOp {
    fn name(&self) -> &'static str {
        "pixel_shuffle"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let mut gx = vec![T::zero(); g.len()];
        for_each_shuffle(self.dims, |i_in, i_out| gx[i_in] = g[i_out]);
        vec![Some(gx)]
    }
}

/// Normalizes the C values at every (b, t, f) position to zero mean and unit
/// variance, then applies per-channel `gain` and `bias`.
pub fn layer_norm_channel<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    gain: Var,
    bias: Var,
) -> Result<Var> {
    let [b, c, h, w] = dims4("layer_norm", tape.shape(x))?;
    for p in [gain, bias] {
        if tape.shape(p) != [c] {
            return Err(Error::mismatch("layer_norm", &[c], tape.shape(p)));
        }
    }
    let pos = h * w;
    let eps = T::of(LN_EPS);
    let inv_c = T::of(1.0 / c as f64);
    let xs = tape.value(x).data();
    let gs = tape.value(gain).data();
    let bs = tape.value(bias).data();
    let mut xhat = vec![T::zero(); xs.len()];
    let mut inv_std = vec![T::zero(); b * pos];
    let mut out = vec![T::zero(); xs.len()];
    let mut mean = vec![T::zero(); pos];
    let mut var = vec![T::zero(); pos];
    for bi in 0..b {
        let xb = &xs[bi * c * pos..][..c * pos];
        mean.fill(T::zero());
        var.fill(T::zero());
        for plane in xb.chunks_exact(pos) {
            mean.iter_mut().zip(plane).for_each(|(m, &v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        for plane in xb.chunks_exact(pos) {
            for ((s, &v), &m) in var.iter_mut().zip(plane).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv = &mut inv_std[bi * pos..][..pos];
        for (i, s) in inv.iter_mut().zip(&var) {
            *i = T::one() / (*s * inv_c + eps).sqrt();
        }
        for ci in 0..c {
            let off = (bi * c + ci) * pos;
            for p in 0..pos {
                let xh = (xs[off + p] - mean[p]) * inv[p];
                xhat[off + p] = xh;
                out[off + p] = gs[ci] * xh + bs[ci];
            }
        }
    }
    let out = Tensor::from_vec(vec![b, c, h, w], out)?;
    tape.push(
        out,
        &[x, gain, bias],
        Box::new(LayerNormOp {
            dims: [b, c, h, w],
            xhat,
            inv_std,
        }),
    )
}

struct LayerNormOp<T> {
    dims: [usize; 4],
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BackwardOp<T> for LayerNormOp<T> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let [b, c, h, w] = self.dims;
        let pos = h * w;
        let gain = inputs[1].data();
        let inv_c = T::of(1.0 / c as f64);
        let mut ggain = vec![T::zero(); c];
        let mut gbias = vec![T::zero(); c];
        let mut gx = vec![T::zero(); g.len()];
        let mut m1 = vec![T::zero(); pos];
        let mut m2 = vec![T::zero(); pos];
        for bi in 0..b {
            m1.fill(T::zero());
            m2.fill(T::zero());
            for ci in 0..c {
                let off = (bi * c + ci) * pos;
                for p in 0..pos {
                    let gv = g[off + p];
                    let xh = self.xhat[off + p];
                    ggain[ci] += gv * xh;
                    gbias[ci] += gv;
                    let gxh = gv * gain[ci];
                    m1[p] += gxh;
                    m2[p] += gxh * xh;
                }
            }
            let inv = &self.inv_std[bi * pos..][..pos];
            for (ci, &gc) in gain.iter().enumerate() {
                let off = (bi * c + ci) * pos;
                for p in 0..pos {
                    let gxh = g[off + p] * gc;
                    gx[off + p] =
                        inv[p] * (gxh - m1[p] * inv_c - self.xhat[off + p] * m2[p] * inv_c);
                }
            }
        }
        vec![needs[0].then_some(gx), Some(ggain), Some(gbias)]
    }
}

/// Splits channels in half and multiplies the halves: `[B,2C,..] -> [B,C,..]`.
pub fn simple_gate<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [b, c2, h, w] = dims4("simple_gate", tape.shape(x))?;
    if c2 % 2 != 0 {
        return Err(Error::shape("simple_gate", format!("odd channel count {c2}")));
    }
    let half = c2 / 2 * h * w;
    let xs = tape.value(x).data();
    let mut out = Vec::with_capacity(b * half);
    for bi in 0..b {
        let chunk = &xs[bi * 2 * half..][..2 * half];
        let (lo, hi) = chunk.split_at(half);
        out.extend(lo.iter().zip(hi).map(|(&p, &q)| p * q));
    }
    let out = Tensor::from_vec(vec![b, c2 / 2, h, w], out)?;
    tape.push(out, &[x], Box::new(SimpleGateOp { batch: b, half }))
}

struct SimpleGateOp {
    batch: usize,
    half: usize,
}

impl<T: Real> BackwardOp<T> for SimpleGateOp {
    fn name(&self) -> &'static str {
        "simple_gate"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let xs = x[0].data();
        let half = self.half;
        let mut gx = vec![T::zero(); xs.len()];
        for bi in 0..self.batch {
            let xb = &xs[bi * 2 * half..][..2 * half];
            let gb = &g[bi * half..][..half];
            let dst = &mut gx[bi * 2 * half..][..2 * half];
            for i in 0..half {
                dst[i] = gb[i] * xb[half + i];
                dst[half + i] = gb[i] * xb[i];
            }
        }
        vec![Some(gx)]
    }
}

/// Mean over (T, F): `[B,C,T,F] -> [B,C,1,1]`.
pub fn global_avg_pool<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [b, c, h, w] = dims4("global_avg_pool", tape.shape(x))?;
    let pos = h * w;
    let inv = T::of(1.0 / pos as f64);
    let out: Vec<T> = tape
        .value(x)
        .data()
        .chunks_exact(pos)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    let out = Tensor::from_vec(vec![b, c, 1, 1], out)?;
    tape.push(out, &[x], Box::new(AvgPoolOp { pos }))
}

struct AvgPoolOp {
    pos: usize,
}

impl<T: Real> BackwardOp<T> for AvgPoolOp {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let inv = T::of(1.0 / self.pos as f64);
        let gx = g
            .iter()
            .flat_map(|&gv| std::iter::repeat_n(gv * inv, self.pos))
            .collect();
        vec![Some(gx)]
    }
}

/// Multiplies every (T, F) plane of `x` by the matching entry of
/// `scales: [B,C,1,1]`.
pub fn channel_scale<T: Real>(tape: &mut Tape<T>, x: Var, scales: Var) -> Result<Var> {
    let [b, c, h, w] = dims4("channel_scale", tape.shape(x))?;
    if tape.shape(scales) != [b, c, 1, 1] {
        return Err(Error::mismatch("channel_scale", &[b, c, 1, 1], tape.shape(scales)));
    }
    let pos = h * w;
    let a = tape.value(scales).data();
    let out: Vec<T> = tape
        .value(x)
        .data()
        .chunks_exact(pos)
        .zip(a)
        .flat_map(|(plane, &s)| plane.iter().map(move |&v| v * s))
        .collect();
    let out = Tensor::from_vec(vec![b, c, h, w], out)?;
    tape.push(out, &[x, scales], Box::new(ChannelScaleOp { pos }))
}

struct ChannelScaleOp {
    pos: usize,
}

impl<T: Real> BackwardOp<T> for ChannelScaleOp {
    fn name(&self) -> &'static str {
        "channel_scale"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let xs = x[0].data();
        let a = x[1].data();
        let gx = needs[0].then(|| {
            g.chunks_exact(self.pos)
                .zip(a)
                .flat_map(|(plane, &s)| plane.iter().map(move |&v| v * s))
                .collect()
        });
        let ga = needs[1].then(|| {
            g.chunks_exact(self.pos)
                .zip(xs.chunks_exact(self.pos))
                .map(|(gp, xp)| gp.iter().zip(xp).map(|(&p, &q)| p * q).sum::<T>())
                .collect()
        });
        vec![gx, ga]
    }
}

/// `x ⊙ pointconv(avgpool(x))`, no activation.
pub fn simple_channel_attention<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &Conv2dParams,
) -> Result<Var> {
    let [_, c, _, _] = dims4("channel_attention", tape.shape(x))?;
    if p.spec != Conv2dSpec::pointwise(c, c) {
        return Err(Error::shape(
            "channel_attention",
            format!("expected point conv {c}->{c}, got {:?}", p.spec),
        ));
    }
    let pooled = global_avg_pool(tape, x)?;
    let attn = conv2d(tape, pooled, p)?;
    channel_scale(tape, x, attn)
}

/// Appends zero frames along the time axis up to `frames`.
pub fn pad_frames<T: Real>(tape: &mut Tape<T>, x: Var, frames: usize) -> Result<Var> {
    let [b, c, h, w] = dims4("pad_frames", tape.shape(x))?;
    if frames < h {
        return Err(Error::shape("pad_frames", format!("cannot pad {h} frames to {frames}")));
    }
    let xs = tape.value(x).data();
    let mut out = vec![T::zero(); b * c * frames * w];
    for (src, dst) in xs.chunks_exact(h * w).zip(out.chunks_exact_mut(frames * w)) {
        dst[..h * w].copy_from_slice(src);
    }
    let out = Tensor::from_vec(vec![b, c, frames, w], out)?;
    tape.push(out, &[x], Box::new(FrameWindowOp { keep: h * w, full: frames * w, crop: false }))
}

/// Keeps the first `frames` time steps.
pub fn crop_frames<T: Real>(tape: &mut Tape<T>, x: Var, frames: usize) -> Result<Var> {
    let [b, c, h, w] = dims4("crop_frames", tape.shape(x))?;
    if frames == 0 || frames > h {
        return Err(Error::shape("crop_frames", format!("cannot crop {h} frames to {frames}")));
    }
    let out: Vec<T> = tape
        .value(x)
        .data()
        .chunks_exact(h * w)
        .flat_map(|p| p[..frames * w].iter().copied())
        .collect();
    let out = Tensor::from_vec(vec![b, c, frames, w], out)?;
    tape.push(out, &[x], Box::new(FrameWindowOp { keep: frames * w, full: h * w, crop: true }))
}

struct FrameWindowOp {
    keep: usize,
    full: usize,
    crop: bool,
}

impl<T: Real> BackwardOp<T> for FrameWindowOp {
    fn name(&self) -> &'static str {
        if self.crop {
            "crop_frames"
        } else {
            "pad_frames"
        }
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let gx = if self.crop {
            let mut gx = vec![T::zero(); g.len() / self.keep * self.full];
            for (src, dst) in g.chunks_exact(self.keep).zip(gx.chunks_exact_mut(self.full)) {
                dst[..self.keep].copy_from_slice(src);
            }
            gx
        } else {
            g.chunks_exact(self.full)
                .flat_map(|p| p[..self.keep].iter().copied())
                .collect()
        };
        vec![Some(gx)]
    }
}
