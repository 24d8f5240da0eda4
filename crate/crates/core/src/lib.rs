//! Deep-learning solver for high-dimensional fully nonlinear parabolic PDEs
//! through their second-order backward stochastic differential equation
//! (2BSDE) representation.
//!
//! The solver rolls the merged PDE–2BSDE system forward on a time grid,
//! approximating the Hessian and its generator term with neural networks
//! (a multiscale fusion of fully connected networks, or a small
//! convolutional network), and trains all parameters against the terminal
//! condition.
//!
//! The crate is `no_std` (with `alloc`). Enable the `std` feature for
//! runtime CPU feature detection in the matrix kernels.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod error;
pub mod gradcheck;
mod linalg;
pub mod nets;
pub mod params;
pub mod problems;
pub mod rng;
pub mod sde;
pub mod solver;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use nets::{Architecture, CnnSpec, MultiscaleSpec};
pub use params::{ParamLayout, ParamVector, Segment};
pub use problems::{Equation, ProblemSpec};
pub use sde::{BrownianBatch, PathBatch, TimeGrid};
pub use solver::{MetricsRow, Schedule, TrainConfig, Trainer};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
