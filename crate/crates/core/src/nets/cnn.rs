use alloc::format;
use alloc::vec::Vec;

use super::{AffineBlock, BoundAffine, CnnSpec, InitialLayout};
use crate::error::Result;
use crate::params::{ParamLayout, Segment};
use crate::tape::{Tape, Var};
use crate::tensor::{exact_sqrt, square_fill_index};

/// A 3x3 convolution: kernel `[c_out, c_in, 3, 3]` and one bias per output channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvBlock {
    pub kernel: Segment,
    pub bias: Segment,
}

impl ConvBlock {
    fn push(params: &mut ParamLayout, name: &str, c_out: usize, c_in: usize) -> Self {
        ConvBlock {
            kernel: params.push(format!("{name}.kernel"), &[c_out, c_in, 3, 3]),
            bias: params.push(format!("{name}.bias"), &[c_out]),
        }
    }

    fn fan_in(&self) -> usize {
        self.kernel.shape[1] * 9
    }
}

/// Layout `[initial | A.conv1 A.conv2 A.conv3 A.out | G.conv1 G.conv2 G.conv3 G.out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnLayout {
    pub spec: CnnSpec,
    pub side: usize,
    pub initial: InitialLayout,
    pub a_convs: [ConvBlock; 3],
    pub a_out: AffineBlock,
    pub g_convs: [ConvBlock; 3],
    pub g_out: AffineBlock,
    pub params: ParamLayout,
}

fn push_convs(params: &mut ParamLayout, name: &str, c: usize) -> [ConvBlock; 3] {
    [
        ConvBlock::push(params, &format!("{name}.conv1"), c, 1),
        ConvBlock::push(params, &format!("{name}.conv2"), c, c),
        ConvBlock::push(params, &format!("{name}.conv3"), 1, c),
    ]
}

impl CnnLayout {
    /// `spec` must have a perfect-square dimension.
    pub(super) fn new(spec: CnnSpec) -> Self {
        let (d, c) = (spec.dim, spec.channels);
        let side = exact_sqrt(d).expect("validated square dimension");
        let mut params = ParamLayout::new();
        let initial = InitialLayout::push(&mut params, d);
        let a_convs = push_convs(&mut params, "a", c);
        let a_out = AffineBlock::push(&mut params, "a.out", d, d);
        let g_convs = push_convs(&mut params, "g", c);
        let g_out = AffineBlock::push(&mut params, "g.out", d * d, d);
        CnnLayout { spec, side, initial, a_convs, a_out, g_convs, g_out, params }
    }

    pub(super) fn hidden_weights(&self) -> Vec<(Segment, usize)> {
        self.a_convs.iter().chain(&self.g_convs).map(|b| (b.kernel.clone(), b.fan_in())).collect()
    }

    pub(super) fn bind(&self, tape: &mut Tape<'_>) -> Result<BoundCnn> {
        let mut convs = |blocks: &[ConvBlock; 3]| -> Result<[(Var, Var); 3]> {
            let mut out = Vec::with_capacity(3);
            for b in blocks {
                out.push((tape.param(&b.kernel)?, tape.param(&b.bias)?));
            }
            Ok(out.try_into().expect("three convolutions"))
        };
        let a_convs = convs(&self.a_convs)?;
        let g_convs = convs(&self.g_convs)?;
        Ok(BoundCnn {
            side: self.side,
            a_convs,
            a_out: self.a_out.bind(tape)?,
            g_convs,
            g_out: self.g_out.bind(tape)?,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BoundCnn {
    side: usize,
    a_convs: [(Var, Var); 3],
    a_out: BoundAffine,
    g_convs: [(Var, Var); 3],
    g_out: BoundAffine,
}

impl BoundCnn {
    /// Column-major reshape, three convolutions with ReLU after the first
    /// two (and after the third when `final_relu`), flatten, affine map.
    fn eval(&self, tape: &mut Tape<'_>, x: Var, convs: &[(Var, Var); 3], out: &BoundAffine, final_relu: bool) -> Result<Var> {
        let s = self.side;
        let index = square_fill_index(s);
        let mut h = tape.gather(x, index.clone(), &[1, s, s])?;
        for (i, &(kernel, bias)) in convs.iter().enumerate() {
            h = tape.conv3x3(h, kernel, bias)?;
            if i < 2 || final_relu {
                h = tape.relu(h)?;
            }
        }
        let flat = tape.gather(h, index, &[s * s])?;
        out.apply(tape, flat)
    }

    pub(super) fn eval_a(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.eval(tape, x, &self.a_convs, &self.a_out, true)
    }

    pub(super) fn eval_g(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.eval(tape, x, &self.g_convs, &self.g_out, false)
    }
}
