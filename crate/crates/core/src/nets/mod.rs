//! Trainable spatial approximations of the Hessian `G ≈ Hess u` and of its
//! generator term `A ≈ L(∇u)`, plus the initial block `(y0, z0, G_0, A_0)`.
//!
//! Every architecture lays its parameters out in one flat vector. The first
//! `(d+1)²` entries are always the initial block: `y0`, then `z0`, then
//! `G_0` row-major, then `A_0`. Network blocks follow; each affine block
//! stores its `k x l` weight row-major followed by its `k` biases.

mod cnn;
mod multiscale;

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamLayout, ParamVector, Segment};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::exact_sqrt;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

pub use cnn::{CnnLayout, ConvBlock};
pub use multiscale::MultiscaleLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Multiscale,
    Cnn,
}

/// Four fully connected networks of hidden widths `scales`, fused by their mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiscaleSpec {
    pub dim: usize,
    pub scales: [usize; 4],
}

/// Three 3x3 convolutions over the `√d x √d` reshaped state and one affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub dim: usize,
    pub channels: usize,
}

pub const DEFAULT_CHANNELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Architecture {
    Multiscale(MultiscaleSpec),
    Cnn(CnnSpec),
}

impl Architecture {
    pub fn kind(&self) -> ArchKind {
        match self {
            Architecture::Multiscale(_) => ArchKind::Multiscale,
            Architecture::Cnn(_) => ArchKind::Cnn,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Architecture::Multiscale(s) => s.dim,
            Architecture::Cnn(s) => s.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Multiscale(s) => {
                if s.dim == 0 || s.scales.contains(&0) {
                    return Err(Error::config("multiscale dimension and widths must be positive"));
                }
            }
            Architecture::Cnn(s) => {
                if s.channels == 0 {
                    return Err(Error::config("cnn needs at least one channel"));
                }
                if s.dim == 0 || exact_sqrt(s.dim).is_none() {
                    return Err(Error::config(format!("cnn dimension {} is not a perfect square", s.dim)));
                }
            }
        }
        Ok(())
    }

    /// Parameter count `ν` by the closed-form expressions
    /// `(2Σd_i + d + 1)(d + 1) + Σ(2d_i + d² + d)(d_i + 1)` (multiscale) and
    /// `[(4c + 4)d + d² + 1](d + 1)` (CNN).
    ///
    /// The multiscale value equals the layout length. The CNN expression
    /// undercounts real 3x3 convolution kernels; the CNN layout length is
    /// [`Architecture::layout`]`.len()`.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        Ok(match self {
            Architecture::Multiscale(s) => {
                let d = s.dim;
                let sum: usize = s.scales.iter().sum();
                let blocks: usize = s.scales.iter().map(|&di| (2 * di + d * d + d) * (di + 1)).sum();
                (2 * sum + d + 1) * (d + 1) + blocks
            }
            Architecture::Cnn(s) => {
                let (d, c) = (s.dim, s.channels);
                ((4 * c + 4) * d + d * d + 1) * (d + 1)
            }
        })
    }

    pub fn layout(&self) -> Result<NetworkLayout> {
        self.validate()?;
        Ok(match self {
            Architecture::Multiscale(s) => NetworkLayout::Multiscale(MultiscaleLayout::new(*s)),
            Architecture::Cnn(s) => NetworkLayout::Cnn(CnnLayout::new(*s)),
        })
    }

    /// Hidden weights `~ N(0, 1/fan_in)`, output weights and biases 0, `y0`
    /// and `z0 ~ N(0, INITIAL_STD²)`, `G_0 = 0`, `A_0 = 0`.
    ///
    /// With zero output layers the networks start out agreeing with
    /// `G_0 = A_0 = 0`. A random `G` turns `Z` into a large random walk, and
    /// on drivers with a `‖z‖²` term the optimizer then fits the terminal
    /// mean through that drift instead of through `y0`.
    pub fn init_params(&self, seed: u64) -> Result<ParamVector> {
        let layout = self.layout()?;
        let mut theta = ParamVector::zeros(layout.params().clone());
        let mut rng = rng::stream(rng::derive(seed, rng::tag::INIT), 0);
        let init = layout.initial();
        for seg in [&init.y0, &init.z0] {
            for v in theta.segment_mut(seg) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = INITIAL_STD * z;
            }
        }
        for (seg, fan_in) in layout.hidden_weights() {
            let scale = (1.0 / fan_in as f64).sqrt();
            for v in theta.segment_mut(&seg) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = scale * z;
            }
        }
        Ok(theta)
    }
}

/// Spread of the initial `y0` and `z0`. Explicit Euler on a cubic driver
/// such as Allen-Cahn's overflows within 20 steps once `|y0|` is near 2, so a
/// unit spread would kill a few runs in ten before the first update.
pub const INITIAL_STD: f64 = 0.1;

/// Segments of the initial block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialLayout {
    pub y0: Segment,
    pub z0: Segment,
    pub g0: Segment,
    pub a0: Segment,
}

impl InitialLayout {
    fn push(layout: &mut ParamLayout, d: usize) -> Self {
        InitialLayout {
            y0: layout.push("y0", &[1]),
            z0: layout.push("z0", &[d]),
            g0: layout.push("g0", &[d * d]),
            a0: layout.push("a0", &[d]),
        }
    }
}

/// An affine map `x ↦ P x + Q` with `P` of shape `[k, l]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineBlock {
    pub weight: Segment,
    pub bias: Segment,
}

impl AffineBlock {
    fn push(layout: &mut ParamLayout, name: &str, k: usize, l: usize) -> Self {
        AffineBlock {
            weight: layout.push(format!("{name}.weight"), &[k, l]),
            bias: layout.push(format!("{name}.bias"), &[k]),
        }
    }

    fn fan_in(&self) -> usize {
        self.weight.shape[1]
    }

    fn bind(&self, tape: &mut Tape<'_>) -> Result<BoundAffine> {
        Ok(BoundAffine { weight: tape.param(&self.weight)?, bias: tape.param(&self.bias)? })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundAffine {
    weight: Var,
    bias: Var,
}

impl BoundAffine {
    fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.affine(x, self.weight, self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkLayout {
    Multiscale(MultiscaleLayout),
    Cnn(CnnLayout),
}

impl NetworkLayout {
    pub fn params(&self) -> &ParamLayout {
        match self {
            NetworkLayout::Multiscale(l) => &l.params,
            NetworkLayout::Cnn(l) => &l.params,
        }
    }

    pub fn len(&self) -> usize {
        self.params().len()
    }

    pub fn is_empty(&self) -> bool {
        self.params().is_empty()
    }

    pub fn dim(&self) -> usize {
        self.initial().z0.len()
    }

    pub fn initial(&self) -> &InitialLayout {
        match self {
            NetworkLayout::Multiscale(l) => &l.initial,
            NetworkLayout::Cnn(l) => &l.initial,
        }
    }

    /// Weight segments of every layer but the last, with their fan-in, in
    /// layout order.
    fn hidden_weights(&self) -> Vec<(Segment, usize)> {
        match self {
            NetworkLayout::Multiscale(l) => l.hidden_weights(),
            NetworkLayout::Cnn(l) => l.hidden_weights(),
        }
    }

    /// Registers every parameter block on `tape` once, so that each use at
    /// every time step feeds the same gradient slot.
    pub fn bind(&self, tape: &mut Tape<'_>) -> Result<BoundNetwork> {
        if tape.theta_len() < self.len() {
            return Err(Error::dim(format!("parameter vector is shorter than the layout ({})", self.len())));
        }
        let init = self.initial();
        let initial = BoundInitial {
            y0: tape.param(&init.y0)?,
            z0: tape.param(&init.z0)?,
            g0: tape.param(&init.g0)?,
            a0: tape.param(&init.a0)?,
        };
        let body = match self {
            NetworkLayout::Multiscale(l) => BoundBody::Multiscale(l.bind(tape)?),
            NetworkLayout::Cnn(l) => BoundBody::Cnn(l.bind(tape)?),
        };
        Ok(BoundNetwork { dim: self.dim(), initial, body })
    }
}

/// Tape leaves of the initial block; each is unbatched.
#[derive(Debug, Clone, Copy)]
pub struct BoundInitial {
    pub y0: Var,
    pub z0: Var,
    pub g0: Var,
    pub a0: Var,
}

#[derive(Debug, Clone)]
enum BoundBody {
    Multiscale(multiscale::BoundMultiscale),
    Cnn(cnn::BoundCnn),
}

/// A network whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    dim: usize,
    pub initial: BoundInitial,
    body: BoundBody,
}

impl BoundNetwork {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `A(x)` for every row of `x` (`[rows, d]`), giving `[rows, d]`.
    pub fn eval_a(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.check_input(tape, x)?;
        match &self.body {
            BoundBody::Multiscale(m) => m.eval_a(tape, x),
            BoundBody::Cnn(c) => c.eval_a(tape, x),
        }
    }

    /// `G(x)` for every row of `x`, giving `[rows, d²]` with each row a
    /// row-major `d x d` matrix.
    pub fn eval_g(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.check_input(tape, x)?;
        match &self.body {
            BoundBody::Multiscale(m) => m.eval_g(tape, x),
            BoundBody::Cnn(c) => c.eval_g(tape, x),
        }
    }

    fn check_input(&self, tape: &Tape<'_>, x: Var) -> Result<()> {
        let s = tape.shape(x);
        if s.rank() != 2 || s.row_len() != self.dim {
            return Err(Error::dim(format!("network expects [rows, {}] input, got {:?}", self.dim, s.dims())));
        }
        Ok(())
    }
}

/// Read-only view of the initial block of `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialBlock<'a> {
    pub y0: f64,
    pub z0: &'a [f64],
    pub g0: &'a [f64],
    pub a0: &'a [f64],
}

/// Mutable view of the initial block of `θ`.
#[derive(Debug)]
pub struct InitialBlockMut<'a> {
    pub y0: &'a mut f64,
    pub z0: &'a mut [f64],
    pub g0: &'a mut [f64],
    pub a0: &'a mut [f64],
}

fn check_initial_len(len: usize, d: usize) -> Result<()> {
    if len < (d + 1) * (d + 1) {
        return Err(Error::dim(format!("parameter vector of length {} has no initial block for d = {}", len, d)));
    }
    Ok(())
}

pub fn read_initial_block(theta: &[f64], d: usize) -> Result<InitialBlock<'_>> {
    check_initial_len(theta.len(), d)?;
    let (y0, rest) = theta.split_at(1);
    let (z0, rest) = rest.split_at(d);
    let (g0, rest) = rest.split_at(d * d);
    Ok(InitialBlock { y0: y0[0], z0, g0, a0: &rest[..d] })
}

pub fn initial_block_mut(theta: &mut [f64], d: usize) -> Result<InitialBlockMut<'_>> {
    check_initial_len(theta.len(), d)?;
    let (y0, rest) = theta.split_at_mut(1);
    let (z0, rest) = rest.split_at_mut(d);
    let (g0, rest) = rest.split_at_mut(d * d);
    Ok(InitialBlockMut { y0: &mut y0[0], z0, g0, a0: &mut rest[..d] })
}

#[cfg(test)]
pub(crate) mod oracle;

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn multiscale(dim: usize, scales: [usize; 4]) -> Architecture {
        Architecture::Multiscale(MultiscaleSpec { dim, scales })
    }

    #[test]
    fn worked_parameter_counts() {
        let m = multiscale(1, [1; 4]);
        assert_eq!(m.param_count().unwrap(), 52);
        assert_eq!(m.layout().unwrap().len(), 52);
        let c = Architecture::Cnn(CnnSpec { dim: 4, channels: 32 });
        assert_eq!(c.param_count().unwrap(), 2725);
        assert_eq!(multiscale(20, [20, 30, 40, 50]).param_count().unwrap(), 77881);
    }

    #[test]
    fn cnn_requires_square_dimension() {
        let c = Architecture::Cnn(CnnSpec { dim: 5, channels: 4 });
        assert!(matches!(c.param_count(), Err(Error::Config(_))));
        assert!(matches!(c.layout(), Err(Error::Config(_))));
    }

    #[test]
    fn initial_block_offsets() {
        let theta = [1.0, 2.0, 3.0, 4.0];
        let b = read_initial_block(&theta, 1).unwrap();
        assert_eq!((b.y0, b.z0, b.g0, b.a0), (1.0, &[2.0][..], &[3.0][..], &[4.0][..]));
        let mut theta = vec![0.0; 9];
        theta[0] = 7.0;
        assert_eq!(read_initial_block(&theta, 2).unwrap().y0, 7.0);
        let view = initial_block_mut(&mut theta, 2).unwrap();
        *view.y0 = -1.0;
        view.g0[3] = 5.0;
        view.a0[1] = 6.0;
        assert_eq!(theta, vec![-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 6.0]);
        assert!(read_initial_block(&theta[..8], 2).is_err());
    }

    #[test]
    fn initial_layout_leads_every_architecture() {
        for arch in [multiscale(3, [2, 3, 4, 5]), Architecture::Cnn(CnnSpec { dim: 9, channels: 2 })] {
            let layout = arch.layout().unwrap();
            let init = layout.initial();
            let d = arch.dim();
            assert_eq!(init.y0.offset, 0);
            assert_eq!(init.z0.offset, 1);
            assert_eq!(init.g0.offset, d + 1);
            assert_eq!(init.a0.range().end, (d + 1) * (d + 1));
            layout.params().validate().unwrap();
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_outputs() {
        for arch in [multiscale(4, [3, 4, 5, 6]), Architecture::Cnn(CnnSpec { dim: 4, channels: 3 })] {
            let a = arch.init_params(5).unwrap();
            assert_eq!(a, arch.init_params(5).unwrap());
            assert_ne!(a.values(), arch.init_params(6).unwrap().values());
            for seg in a.layout().segments() {
                let vals = a.segment(seg);
                let output = seg.name.contains(".l3.") || seg.name.contains(".out.");
                let zero = output || seg.name.ends_with(".bias") || seg.name == "g0" || seg.name == "a0";
                assert_eq!(vals.iter().all(|&v| v == 0.0), zero, "{}", seg.name);
            }
        }
    }

    #[test]
    fn init_weight_variance() {
        let arch = multiscale(40, [25, 25, 25, 25]);
        let theta = arch.init_params(1).unwrap();
        let seg = theta.layout().get("a.l1.s0.weight").unwrap().clone();
        assert_eq!(seg.len(), 1000);
        let vals = theta.segment(&seg);
        let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        assert!((var * 40.0 - 1.0).abs() < 0.2, "variance {var}");
    }

    proptest! {
        #[test]
        fn multiscale_count_matches_layout(d in 1usize..12, s in proptest::array::uniform4(1usize..40)) {
            let arch = multiscale(d, s);
            let nu = arch.param_count().unwrap();
            prop_assert_eq!(nu, arch.layout().unwrap().len());
            let sum: usize = s.iter().sum();
            let mut want = (2 * sum + d + 1) * (d + 1);
            for di in s {
                want += (2 * di + d * d + d) * (di + 1);
            }
            prop_assert_eq!(nu, want);
        }

        #[test]
        fn cnn_count_matches_formula(side in 1usize..6, c in 1usize..40) {
            let d = side * side;
            let arch = Architecture::Cnn(CnnSpec { dim: d, channels: c });
            prop_assert_eq!(arch.param_count().unwrap(), ((4 * c + 4) * d + d * d + 1) * (d + 1));
        }
    }
}
