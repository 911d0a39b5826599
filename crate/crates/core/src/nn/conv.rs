//! Grouped 2-D cross-correlation with full backward.
//!
//! Work is split over output planes (forward), input planes (input adjoint)
//! and output channels (weight adjoint). Each task owns the slice it writes
//! and sums in a fixed order, so results do not depend on thread count.

use rayon::prelude::*;

use super::Conv2dSpec;
use crate::tensor::{BackwardOp, Real, Tensor};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub spec: Conv2dSpec,
}

impl ConvGeom {
    fn in_per_group(&self) -> usize {
        self.spec.in_channels / self.spec.groups
    }
    fn out_per_group(&self) -> usize {
        self.spec.out_channels / self.spec.groups
    }
}

/// Output indices `o` in `0..out_len` with `0 <= o * stride + k - pad < in_len`.
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let top = in_len + pad;
    let hi = if top <= k { 0 } else { ((top - 1 - k) / stride + 1).min(out_len) };
    (lo, hi.max(lo))
}

pub(crate) fn forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let s = g.spec;
    let (kh, kw) = s.kernel;
    let (sh, sw) = s.stride;
    let (ph, pw) = s.padding;
    let ipg = g.in_per_group();
    let opg = g.out_per_group();
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.batch * s.out_channels * out_plane];

    out.par_chunks_mut(out_plane).enumerate().for_each(|(bo, plane)| {
        let b = bo / s.out_channels;
        let o = bo % s.out_channels;
        let grp = o / opg;
        if let Some(bias) = bias {
            plane.fill(bias[o]);
        }
        for icg in 0..ipg {
            let ci = grp * ipg + icg;
            let xin = &x[(b * s.in_channels + ci) * in_plane..][..in_plane];
            for ki in 0..kh {
                let (oh_lo, oh_hi) = valid_range(ki, ph, sh, g.in_h, g.out_h);
                for kj in 0..kw {
                    let wv = w[((o * ipg + icg) * kh + ki) * kw + kj];
                    let (ow_lo, ow_hi) = valid_range(kj, pw, sw, g.in_w, g.out_w);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * sh + ki - ph;
                        let xrow = &xin[ih * g.in_w..][..g.in_w];
                        let orow = &mut plane[oh * g.out_w..][..g.out_w];
                        if sw == 1 {
                            let off = kj as isize - pw as isize;
                            let src = &xrow[(ow_lo as isize + off) as usize..(ow_hi as isize + off) as usize];
                            for (o, &xv) in orow[ow_lo..ow_hi].iter_mut().zip(src) {
                                *o += wv * xv;
                            }
                        } else {
                            for ow in ow_lo..ow_hi {
                                orow[ow] += wv * xrow[ow * sw + kj - pw];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn backward_input<T: Real>(gout: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let s = g.spec;
    let (kh, kw) = s.kernel;
    let (sh, sw) = s.stride;
    let (ph, pw) = s.padding;
    let ipg = g.in_per_group();
    let opg = g.out_per_group();
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut gx = vec![T::zero(); g.batch * s.in_channels * in_plane];

    gx.par_chunks_mut(in_plane).enumerate().for_each(|(bc, plane)| {
        let b = bc / s.in_channels;
        let ci = bc % s.in_channels;
        let grp = ci / ipg;
        let icg = ci % ipg;
        for o in grp * opg..(grp + 1) * opg {
            let gplane = &gout[(b * s.out_channels + o) * out_plane..][..out_plane];
            for ki in 0..kh {
                let (oh_lo, oh_hi) = valid_range(ki, ph, sh, g.in_h, g.out_h);
                for kj in 0..kw {
                    let wv = w[((o * ipg + icg) * kh + ki) * kw + kj];
                    let (ow_lo, ow_hi) = valid_range(kj, pw, sw, g.in_w, g.out_w);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * sh + ki - ph;
                        let grow = &gplane[oh * g.out_w..][..g.out_w];
                        let xrow = &mut plane[ih * g.in_w..][..g.in_w];
                        if sw == 1 {
                            let off = kj as isize - pw as isize;
                            let dst = &mut xrow[(ow_lo as isize + off) as usize..(ow_hi as isize + off) as usize];
                            for (d, &gv) in dst.iter_mut().zip(&grow[ow_lo..ow_hi]) {
                                *d += wv * gv;
                            }
                        } else {
                            for ow in ow_lo..ow_hi {
                                xrow[ow * sw + kj - pw] += wv * grow[ow];
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

fn backward_weight<T: Real>(gout: &[T], x: &[T], g: &ConvGeom) -> Vec<T> {
    let s = g.spec;
    let (kh, kw) = s.kernel;
    let (sh, sw) = s.stride;
    let (ph, pw) = s.padding;
    let ipg = g.in_per_group();
    let opg = g.out_per_group();
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let per_out = ipg * kh * kw;
    let mut gw = vec![T::zero(); s.out_channels * per_out];

    gw.par_chunks_mut(per_out).enumerate().for_each(|(o, wslice)| {
        let grp = o / opg;
        for b in 0..g.batch {
            let gplane = &gout[(b * s.out_channels + o) * out_plane..][..out_plane];
            for icg in 0..ipg {
                let ci = grp * ipg + icg;
                let xin = &x[(b * s.in_channels + ci) * in_plane..][..in_plane];
                for ki in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(ki, ph, sh, g.in_h, g.out_h);
                    for kj in 0..kw {
                        let (ow_lo, ow_hi) = valid_range(kj, pw, sw, g.in_w, g.out_w);
                        let mut acc = T::zero();
                        for oh in oh_lo..oh_hi {
                            let ih = oh * sh + ki - ph;
                            let grow = &gplane[oh * g.out_w..][..g.out_w];
                            let xrow = &xin[ih * g.in_w..][..g.in_w];
                            if sw == 1 {
                                let off = kj as isize - pw as isize;
                                let src = &xrow[(ow_lo as isize + off) as usize..(ow_hi as isize + off) as usize];
                                acc += grow[ow_lo..ow_hi].iter().zip(src).map(|(&a, &b)| a * b).sum::<T>();
                            } else {
                                for ow in ow_lo..ow_hi {
                                    acc += grow[ow] * xrow[ow * sw + kj - pw];
                                }
                            }
                        }
                        wslice[(icg * kh + ki) * kw + kj] += acc;
                    }
                }
            }
        }
    });
    gw
}

fn backward_bias<T: Real>(gout: &[T], g: &ConvGeom) -> Vec<T> {
    let oc = g.spec.out_channels;
    let out_plane = g.out_h * g.out_w;
    let mut gb = vec![T::zero(); oc];
    for b in 0..g.batch {
        for (o, acc) in gb.iter_mut().enumerate() {
            *acc += gout[(b * oc + o) * out_plane..][..out_plane].iter().copied().sum::<T>();
        }
    }
    gb
}

pub(crate) struct Conv2dOp {
    pub geom: ConvGeom,
}

impl<T: Real> BackwardOp<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let mut out = vec![
            needs[0].then(|| backward_input(grad, inputs[1].data(), &self.geom)),
            needs[1].then(|| backward_weight(grad, inputs[0].data(), &self.geom)),
        ];
        if inputs.len() == 3 {
            out.push(needs[2].then(|| backward_bias(grad, &self.geom)));
        }
        out
    }
}
