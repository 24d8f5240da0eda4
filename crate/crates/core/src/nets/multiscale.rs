use alloc::format;
use alloc::vec::Vec;

use super::{AffineBlock, BoundAffine, InitialLayout, MultiscaleSpec};
use crate::error::Result;
use crate::params::{ParamLayout, Segment};
use crate::tape::{Tape, Var};

/// Layout `[initial | A.l1 x4 | A.l2 x4 | A.l3 x4 | G.l1 x4 | G.l2 x4 | G.l3 x4]`,
/// branches in the order of `spec.scales`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleLayout {
    pub spec: MultiscaleSpec,
    pub initial: InitialLayout,
    /// `a[branch][layer]`.
    pub a: [[AffineBlock; 3]; 4],
    pub g: [[AffineBlock; 3]; 4],
    pub params: ParamLayout,
}

fn push_net(params: &mut ParamLayout, name: &str, d: usize, scales: [usize; 4], out: usize) -> [[AffineBlock; 3]; 4] {
    let l1: Vec<_> = scales.iter().enumerate().map(|(i, &di)| AffineBlock::push(params, &format!("{name}.l1.s{i}"), di, d)).collect();
    let l2: Vec<_> = scales.iter().enumerate().map(|(i, &di)| AffineBlock::push(params, &format!("{name}.l2.s{i}"), di, di)).collect();
    let l3: Vec<_> = scales.iter().enumerate().map(|(i, &di)| AffineBlock::push(params, &format!("{name}.l3.s{i}"), out, di)).collect();
    core::array::from_fn(|i| [l1[i].clone(), l2[i].clone(), l3[i].clone()])
}

impl MultiscaleLayout {
    pub fn new(spec: MultiscaleSpec) -> Self {
        let d = spec.dim;
        let mut params = ParamLayout::new();
        let initial = InitialLayout::push(&mut params, d);
        let a = push_net(&mut params, "a", d, spec.scales, d);
        let g = push_net(&mut params, "g", d, spec.scales, d * d);
        MultiscaleLayout { spec, initial, a, g, params }
    }

    pub(super) fn hidden_weights(&self) -> Vec<(Segment, usize)> {
        let mut out: Vec<(Segment, usize)> =
            self.a.iter().chain(&self.g).flat_map(|b| &b[..2]).map(|b| (b.weight.clone(), b.fan_in())).collect();
        out.sort_by_key(|(s, _)| s.offset);
        out
    }

    pub(super) fn bind(&self, tape: &mut Tape<'_>) -> Result<BoundMultiscale> {
        let mut bind = |net: &[[AffineBlock; 3]; 4]| -> Result<[[BoundAffine; 3]; 4]> {
            let mut rows = Vec::with_capacity(4);
            for [m1, m2, m3] in net {
                rows.push([m1.bind(tape)?, m2.bind(tape)?, m3.bind(tape)?]);
            }
            Ok(rows.try_into().expect("four branches"))
        };
        Ok(BoundMultiscale { a: bind(&self.a)?, g: bind(&self.g)? })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BoundMultiscale {
    a: [[BoundAffine; 3]; 4],
    g: [[BoundAffine; 3]; 4],
}

/// `M_3 ∘ R ∘ M_2 ∘ R ∘ M_1` per branch, then the mean over the four branches.
fn fused(tape: &mut Tape<'_>, net: &[[BoundAffine; 3]; 4], x: Var) -> Result<Var> {
    let mut outs = [x; 4];
    for (o, [m1, m2, m3]) in outs.iter_mut().zip(net) {
        let h = m1.apply(tape, x)?;
        let h = tape.relu(h)?;
        let h = m2.apply(tape, h)?;
        let h = tape.relu(h)?;
        *o = m3.apply(tape, h)?;
    }
    let left = tape.add(outs[0], outs[1])?;
    let right = tape.add(outs[2], outs[3])?;
    let sum = tape.add(left, right)?;
    tape.scale(sum, 0.25)
}

impl BoundMultiscale {
    pub(super) fn eval_a(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        fused(tape, &self.a, x)
    }

    pub(super) fn eval_g(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        fused(tape, &self.g, x)
    }
}
