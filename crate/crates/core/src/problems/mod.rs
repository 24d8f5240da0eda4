//! Benchmark PDE/2BSDE instances and their reference values.
//!
//! Every problem has the form `∂u/∂t = f(t, x, u, ∇u, Hess u)` on
//! `[0, T) x R^d` with terminal condition `u(T, ·) = g`, and comes with a
//! forward state process driven by Brownian increments.

mod allen_cahn;
mod bsb;
mod hjb;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ArchKind;
use crate::sde::TimeGrid;
use crate::solver::Schedule;

pub use allen_cahn::AllenCahn;
pub use bsb::{bsb_exact, Bsb, BsbExact, BsbParams};
pub use hjb::{chunk_sizes, hjb_mc_chunk, hjb_mc_reference, hjb_mc_reference_at, ChunkSums, Hjb, McEstimate, MC_CHUNK};

/// Arguments of the nonlinearity `f(t, x, y, z, S)`; `hess` is row-major `d x d`.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
    pub hess: &'a [f64],
}

/// Accumulators for the partial derivatives of `f` at a [`Point`].
#[derive(Debug)]
pub struct PointGrad<'a> {
    pub y: &'a mut f64,
    pub z: &'a mut [f64],
    pub hess: &'a mut [f64],
}

/// The matrix `σ(x)σ(x)*`.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `c · I`.
    Scaled(f64),
    Diagonal(Vec<f64>),
    /// Row-major `d x d`.
    Full(Vec<f64>),
}

impl Covariance {
    /// `½ Trace(C · S)` for a row-major `S`.
    pub fn half_trace(&self, hess: &[f64], d: usize) -> f64 {
        match self {
            Covariance::Scaled(c) => 0.5 * c * (0..d).map(|i| hess[i * d + i]).sum::<f64>(),
            Covariance::Diagonal(diag) => 0.5 * diag.iter().enumerate().map(|(i, c)| c * hess[i * d + i]).sum::<f64>(),
            Covariance::Full(m) => {
                let mut acc = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        acc += m[i * d + j] * hess[j * d + i];
                    }
                }
                0.5 * acc
            }
        }
    }

    /// Adds `upstream * ∂/∂S ½ Trace(C · S)` into `out`.
    pub fn half_trace_vjp(&self, d: usize, upstream: f64, out: &mut [f64]) {
        match self {
            Covariance::Scaled(c) => {
                for i in 0..d {
                    out[i * d + i] += 0.5 * c * upstream;
                }
            }
            Covariance::Diagonal(diag) => {
                for (i, c) in diag.iter().enumerate() {
                    out[i * d + i] += 0.5 * c * upstream;
                }
            }
            Covariance::Full(m) => {
                for i in 0..d {
                    for j in 0..d {
                        out[j * d + i] += 0.5 * m[i * d + j] * upstream;
                    }
                }
            }
        }
    }
}

/// Coefficients of one PDE/2BSDE instance.
///
/// The default state map is the Euler step
/// `H(s, t, x, w) = x + μ(x)(t − s) + σ(x) w`, built from [`Equation::drift`]
/// and [`Equation::apply_sigma`]; equations with a closed-form map override
/// [`Equation::transition`] instead.
pub trait Equation: Debug + Send + Sync {
    /// `μ(x)`, zero by default.
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let _ = x;
        out.fill(0.0);
    }

    /// `σ(x) w`, the identity by default.
    fn apply_sigma(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let _ = x;
        out.copy_from_slice(w);
    }

    /// `σ(x)σ(x)*`, consistent with [`Equation::apply_sigma`].
    fn covariance(&self, x: &[f64]) -> Covariance;

    fn transition(&self, s: f64, t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        let mut mu = vec![0.0; x.len()];
        self.drift(x, &mut mu);
        self.apply_sigma(x, w, out);
        for ((o, &xi), &m) in out.iter_mut().zip(x).zip(&mu) {
            *o += xi + m * (t - s);
        }
    }

    fn nonlinearity(&self, p: &Point<'_>) -> f64;

    /// Adds `upstream` times the partials of `f` at `p` into `grad`.
    fn nonlinearity_vjp(&self, p: &Point<'_>, upstream: f64, grad: &mut PointGrad<'_>);

    fn terminal(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSource {
    /// Published constant, not recomputed here.
    ExternalConstant,
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub value: f64,
    pub source: ReferenceSource,
}

/// A fully specified benchmark instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dim: usize,
    pub horizon: f64,
    pub time_steps: usize,
    pub xi: Vec<f64>,
    pub equation: Arc<dyn Equation>,
    pub reference: Option<Reference>,
    /// Default hidden widths for the multiscale architecture.
    pub scales: [usize; 4],
}

pub const PROBLEM_NAMES: [&str; 3] = ["allen-cahn", "bsb", "hjb"];

impl ProblemSpec {
    /// Looks a benchmark up by its name: `allen-cahn`, `bsb` or `hjb`.
    pub fn by_name(name: &str, dim: usize) -> Result<Self> {
        match name {
            "allen-cahn" => allen_cahn(dim),
            "bsb" => bsb(dim, BsbParams::default()),
            "hjb" => hjb(dim),
            other => Err(Error::config(format!("unknown problem {:?}", other))),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.horizon, self.time_steps)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        self.equation.terminal(x)
    }

    /// Learning-rate schedule used for this problem with the given architecture.
    pub fn default_schedule(&self, arch: ArchKind) -> Schedule {
        let name = match (self.name.as_str(), arch) {
            ("hjb", ArchKind::Multiscale) => "hjb-multiscale",
            ("hjb", ArchKind::Cnn) => "hjb-cnn",
            ("bsb", ArchKind::Multiscale) => "bsb-multiscale",
            ("bsb", ArchKind::Cnn) => "bsb-cnn",
            _ => "allen-cahn",
        };
        Schedule::from_name(name).expect("built-in schedule names are valid")
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::config("dimension must be at least 1"));
    }
    Ok(())
}

/// Allen-Cahn equation `∂u/∂t + ½Δu + u − u³ = 0` with `T = 3/10`, `ξ = 0`.
pub fn allen_cahn(dim: usize) -> Result<ProblemSpec> {
    check_dim(dim)?;
    let reference = match dim {
        20 => Some(0.30879),
        256 => Some(0.041531),
        400 => Some(0.027106),
        _ => None,
    }
    .map(|value| Reference { value, source: ReferenceSource::ExternalConstant });
    Ok(ProblemSpec {
        name: "allen-cahn".to_string(),
        dim,
        horizon: 0.3,
        time_steps: 20,
        xi: vec![0.0; dim],
        equation: Arc::new(AllenCahn),
        reference,
        scales: [20, 30, 40, 50],
    })
}

/// Black-Scholes-Barenblatt equation with `T = 1` and
/// `ξ = (1, ½, 1, ½, …)`; `dim` must be even.
pub fn bsb(dim: usize, params: BsbParams) -> Result<ProblemSpec> {
    check_dim(dim)?;
    if !dim.is_multiple_of(2) {
        return Err(Error::config(format!("bsb needs an even dimension, got {}", dim)));
    }
    params.validate()?;
    let xi: Vec<f64> = (0..dim).map(|i| if i % 2 == 0 { 1.0 } else { 0.5 }).collect();
    let exact = BsbExact { params, horizon: 1.0 };
    let reference = Reference { value: exact.value(0.0, &xi), source: ReferenceSource::ClosedForm };
    Ok(ProblemSpec {
        name: "bsb".to_string(),
        dim,
        horizon: 1.0,
        time_steps: 20,
        xi,
        equation: Arc::new(Bsb { params }),
        reference: Some(reference),
        scales: [75, 100, 50, 125],
    })
}

/// Hamilton-Jacobi-Bellman equation `∂u/∂t + Δu = ‖∇u‖²` with `T = 1`, `ξ = 0`.
pub fn hjb(dim: usize) -> Result<ProblemSpec> {
    check_dim(dim)?;
    let reference = match dim {
        100 => Some(4.5901),
        256 => Some(5.5393),
        400 => Some(5.9877),
        _ => None,
    }
    .map(|value| Reference { value, source: ReferenceSource::ExternalConstant });
    Ok(ProblemSpec {
        name: "hjb".to_string(),
        dim,
        horizon: 1.0,
        time_steps: 20,
        xi: vec![0.0; dim],
        equation: Arc::new(Hjb),
        reference,
        scales: [50, 75, 100, 125],
    })
}

/// `|estimate − reference| / |reference|`.
pub fn relative_l1_error(estimate: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::UndefinedMetric("relative error against a zero reference".into()));
    }
    Ok((estimate - reference).abs() / reference.abs())
}
