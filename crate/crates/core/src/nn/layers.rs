use std::sync::Arc;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{SparseVar, Tape};
use crate::error::{Error, Result};
use crate::sparse::{ConvSpec, Coords};

/// One sparse convolution with its weight and bias parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    pub fn new<R: Rng>(params: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut R) -> Result<Self> {
        let k = spec.kernel_volume();
        let fan_in = k * spec.in_channels;
        let weight = params.add_fan_in(
            format!("{name}.weight"),
            &[k, spec.in_channels, spec.out_channels],
            fan_in,
            rng,
        )?;
        let bias = params.add_zeros(format!("{name}.bias"), &[spec.out_channels])?;
        Ok(Self { spec, weight, bias })
    }

    /// Applies the layer. `target` overrides the output coordinate set
    /// (convolution on target coordinates); otherwise the stride rule
    /// decides.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        x: &SparseVar,
        target: Option<Arc<Coords>>,
    ) -> Result<SparseVar> {
        let (coords, scale) = match target {
            Some(t) => (t, x.scale),
            None => match (self.spec.stride, self.spec.transposed) {
                (1, false) => (x.coords.clone(), x.scale),
                (2, false) => (Arc::new(x.coords.downsample(1)), x.scale + 1),
                (2, true) if x.scale > 0 => (Arc::new(x.coords.upsample_children()), x.scale - 1),
                _ => return Err(Error::Shape(format!("cannot apply {:?} at scale {}", self.spec, x.scale))),
            },
        };
        let map = tape.kernel_map(&x.coords, &coords, &self.spec);
        let node = tape.conv(params, x.node, map, self.weight, Some(self.bias), self.spec.out_channels)?;
        Ok(SparseVar { node, coords, scale })
    }
}

/// `relu(conv(x))`.
pub fn conv_relu(
    conv: &Conv,
    tape: &mut Tape,
    params: &ParamStore,
    x: &SparseVar,
) -> Result<SparseVar> {
    let y = conv.forward(tape, params, x, None)?;
    Ok(SparseVar {
        node: tape.relu(y.node),
        ..y
    })
}

/// Inception-residual block: three parallel branches (1x1x1, 3x3x3, and two
/// stacked 3x3x3) whose outputs are concatenated back to the block width
/// and added to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct IRBlock {
    pub width: usize,
    pointwise: Conv,
    single: Conv,
    double_a: Conv,
    double_b: Conv,
}

impl IRBlock {
    /// Branch widths: `width/4`, `width/4`, and the remainder.
    pub fn split(width: usize) -> [usize; 3] {
        let q = width / 4;
        [q, q, width - 2 * q]
    }

    pub fn new<R: Rng>(params: &mut ParamStore, name: &str, width: usize, rng: &mut R) -> Result<Self> {
        if width < 4 {
            return Err(Error::Config(format!("IRB width {width} must be at least 4")));
        }
        let [a, b, c] = Self::split(width);
        Ok(Self {
            width,
            pointwise: Conv::new(params, &format!("{name}.pointwise"), ConvSpec::same(width, a, 1), rng)?,
            single: Conv::new(params, &format!("{name}.single"), ConvSpec::same(width, b, 3), rng)?,
            double_a: Conv::new(params, &format!("{name}.double_a"), ConvSpec::same(width, c, 3), rng)?,
            double_b: Conv::new(params, &format!("{name}.double_b"), ConvSpec::same(c, c, 3), rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: &SparseVar) -> Result<SparseVar> {
        let a = conv_relu(&self.pointwise, tape, params, x)?;
        let b = conv_relu(&self.single, tape, params, x)?;
        let c = conv_relu(&self.double_a, tape, params, x)?;
        let c = conv_relu(&self.double_b, tape, params, &c)?;
        let ab = tape.concat(a.node, b.node)?;
        let abc = tape.concat(ab, c.node)?;
        let node = tape.add(x.node, abc)?;
        Ok(SparseVar { node, ..x.clone() })
    }
}

/// A chain of `n` IR blocks of the same width.
#[derive(Clone, Debug, PartialEq)]
pub struct IrbStack(pub Vec<IRBlock>);

impl IrbStack {
    pub fn new<R: Rng>(params: &mut ParamStore, name: &str, width: usize, n: usize, rng: &mut R) -> Result<Self> {
        (0..n)
            .map(|i| IRBlock::new(params, &format!("{name}.{i}"), width, rng))
            .collect::<Result<_>>()
            .map(Self)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: &SparseVar) -> Result<SparseVar> {
        let mut cur = x.clone();
        for block in &self.0 {
            cur = block.forward(tape, params, &cur)?;
        }
        Ok(cur)
    }
}
