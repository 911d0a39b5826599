use serde::Serialize;

use super::{ConvLayer, Mfnet, ModelConfig, ALIGN};
use crate::dsp::{HOP, SAMPLE_RATE, WINDOW_LEN};
use crate::error::Result;

/// Parameter and compute totals for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accounting {
    pub params: usize,
    /// Conv multiply-accumulates for one `ALIGN`-frame block of 320 bins.
    pub macs_per_block: u64,
    pub block_frames: usize,
    pub macs_per_second: f64,
}

/// Conv MACs only; element-wise work is not counted.
pub fn count_params_and_macs(cfg: &ModelConfig, frames_per_second: f64) -> Result<Accounting> {
    let net = Mfnet::new(cfg.clone())?;
    let macs = block_macs(&net, ALIGN, WINDOW_LEN)?;
    Ok(Accounting {
        params: net.param_count(),
        macs_per_block: macs,
        block_frames: ALIGN,
        macs_per_second: macs as f64 * frames_per_second / ALIGN as f64,
    })
}

/// Frames per second of audio at the default hop.
pub fn default_frame_rate() -> f64 {
    SAMPLE_RATE as f64 / HOP as f64
}

fn conv_at(layer: &ConvLayer, h: usize, w: usize) -> Result<(u64, usize, usize)> {
    let (oh, ow) = layer.spec.output_size(h, w)?;
    Ok((layer.spec.macs(oh, ow), oh, ow))
}

fn block_macs(net: &Mfnet, t: usize, f: usize) -> Result<u64> {
    let glfb = |b: &super::Glfb, h: usize, w: usize| -> Result<u64> {
        let mut m = 0;
        for c in [&b.pc1, &b.dwconv, &b.pc2, &b.pc3, &b.pc4] {
            m += conv_at(c, h, w)?.0;
        }
        Ok(m + conv_at(&b.sca, 1, 1)?.0)
    };
    let (mut total, mut h, mut w) = conv_at(&net.intro, t, f)?;
    for (blocks, down) in net.encoders.iter().zip(&net.downs) {
        for b in blocks {
            total += glfb(b, h, w)?;
        }
        let (m, oh, ow) = conv_at(down, h, w)?;
        total += m;
        (h, w) = (oh, ow);
    }
    for b in &net.middle {
        total += glfb(b, h, w)?;
    }
    for (blocks, up) in net.decoders.iter().zip(&net.ups) {
        total += conv_at(up, h, w)?.0;
        (h, w) = (2 * h, 2 * w);
        for b in blocks {
            total += glfb(b, h, w)?;
        }
    }
    Ok(total + conv_at(&net.ending, h, w)?.0)
}
