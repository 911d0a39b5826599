use super::{ConvLayer, NormLayer, ParamSink};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d, layer_norm_channel, simple_channel_attention, simple_gate, Conv2dParams, Conv2dSpec,
};
use crate::tensor::{dims4, Real, Tape, Var};

/// Parameter layout of one global-local former block on `channels` channels.
///
/// `pc1`/`pc3` widen C -> 2C ahead of the two gates, `pc2`/`pc4` project the
/// gated C channels back. The depthwise conv works on the widened 2C map.
#[derive(Debug, Clone)]
pub struct Glfb {
    pub channels: usize,
    pub norm1: NormLayer,
    pub pc1: ConvLayer,
    pub dwconv: ConvLayer,
    pub sca: ConvLayer,
    pub pc2: ConvLayer,
    pub norm2: NormLayer,
    pub pc3: ConvLayer,
    pub pc4: ConvLayer,
}

impl Glfb {
    pub(crate) fn build(sink: &mut ParamSink, prefix: &str, c: usize) -> Self {
        Self {
            channels: c,
            norm1: sink.norm(&format!("{prefix}.norm1"), c),
            pc1: sink.conv(&format!("{prefix}.pc1"), Conv2dSpec::pointwise(c, 2 * c)),
            dwconv: sink.conv(&format!("{prefix}.dwconv"), Conv2dSpec::depthwise3x3(2 * c)),
            sca: sink.conv(&format!("{prefix}.sca"), Conv2dSpec::pointwise(c, c)),
            pc2: sink.conv(&format!("{prefix}.pc2"), Conv2dSpec::pointwise(c, c)),
            norm2: sink.norm(&format!("{prefix}.norm2"), c),
            pc3: sink.conv(&format!("{prefix}.pc3"), Conv2dSpec::pointwise(c, 2 * c)),
            pc4: sink.conv(&format!("{prefix}.pc4"), Conv2dSpec::pointwise(c, c)),
        }
    }

    /// Convs whose zeroing turns the block into the identity.
    pub fn branch_outputs(&self) -> [&ConvLayer; 2] {
        [&self.pc2, &self.pc4]
    }

    pub fn convs(&self) -> [&ConvLayer; 6] {
        [&self.pc1, &self.dwconv, &self.sca, &self.pc2, &self.pc3, &self.pc4]
    }

    pub fn bind(&self, vars: &[Var]) -> GlfbParams {
        GlfbParams {
            channels: self.channels,
            norm1: self.norm1.bind(vars),
            pc1: self.pc1.bind(vars),
            dwconv: self.dwconv.bind(vars),
            sca: self.sca.bind(vars),
            pc2: self.pc2.bind(vars),
            norm2: self.norm2.bind(vars),
            pc3: self.pc3.bind(vars),
            pc4: self.pc4.bind(vars),
        }
    }
}

/// A [`Glfb`] with its parameters on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GlfbParams {
    pub channels: usize,
    pub norm1: (Var, Var),
    pub pc1: Conv2dParams,
    pub dwconv: Conv2dParams,
    pub sca: Conv2dParams,
    pub pc2: Conv2dParams,
    pub norm2: (Var, Var),
    pub pc3: Conv2dParams,
    pub pc4: Conv2dParams,
}

/// ```text
/// y1 = x  + pc2(sca(gate(dw(pc1(norm1(x))))))
/// y  = y1 + pc4(gate(pc3(norm2(y1))))
/// ```
pub fn glfb_forward<T: Real>(tape: &mut Tape<T>, x: Var, g: &GlfbParams) -> Result<Var> {
    let [_, c, _, _] = dims4("glfb", tape.shape(x))?;
    if c != g.channels {
        return Err(Error::shape(
            "glfb",
            format!("input has {c} channels, block expects {}", g.channels),
        ));
    }
    let h = layer_norm_channel(tape, x, g.norm1.0, g.norm1.1)?;
    let h = conv2d(tape, h, &g.pc1)?;
    let h = conv2d(tape, h, &g.dwconv)?;
    let h = simple_gate(tape, h)?;
    let h = simple_channel_attention(tape, h, &g.sca)?;
    let h = conv2d(tape, h, &g.pc2)?;
    let y1 = tape.add(x, h)?;

    let h = layer_norm_channel(tape, y1, g.norm2.0, g.norm2.1)?;
    let h = conv2d(tape, h, &g.pc3)?;
    let h = simple_gate(tape, h)?;
    let h = conv2d(tape, h, &g.pc4)?;
    tape.add(y1, h)
}
