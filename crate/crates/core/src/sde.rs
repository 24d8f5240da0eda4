//! Time grids, Brownian increments and forward simulation of the state
//! process.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::rng;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

/// `0 = t_0 < t_1 < … < t_N = T` with step sizes `τ_j = t_j − t_{j−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
}

impl TimeGrid {
    /// `t_n = nT/N`, `τ_j = T/N`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("time grid needs at least one step"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {}", horizon)));
        }
        let n = steps as f64;
        let mut t: Vec<f64> = (0..=steps).map(|k| k as f64 * horizon / n).collect();
        t[steps] = horizon;
        Ok(TimeGrid { t, tau: vec![horizon / n; steps] })
    }

    pub fn steps(&self) -> usize {
        self.tau.len()
    }

    pub fn horizon(&self) -> f64 {
        self.t[self.steps()]
    }
}

/// Brownian increments for `batch` samples, laid out `[batch, steps, dim]`.
#[derive(Debug, Clone)]
pub struct BrownianBatch {
    pub increments: Vec<f64>,
    pub batch: usize,
    pub dim: usize,
    pub seed: u64,
    pub grid: TimeGrid,
}

impl BrownianBatch {
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// Increment of sample `j` over `[t_n, t_{n+1}]`.
    pub fn increment(&self, j: usize, n: usize) -> &[f64] {
        let start = (j * self.steps() + n) * self.dim;
        &self.increments[start..start + self.dim]
    }

    /// The same Brownian paths observed on a grid with `factor` times fewer
    /// steps: consecutive increments are summed.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let steps = self.steps();
        if factor == 0 || !steps.is_multiple_of(factor) {
            return Err(Error::config(format!("cannot coarsen {} steps by {}", steps, factor)));
        }
        let coarse = steps / factor;
        let mut increments = vec![0.0; self.batch * coarse * self.dim];
        for j in 0..self.batch {
            for n in 0..steps {
                let dst = (j * coarse + n / factor) * self.dim;
                for (o, w) in increments[dst..dst + self.dim].iter_mut().zip(self.increment(j, n)) {
                    *o += w;
                }
            }
        }
        let t: Vec<f64> = self.grid.t.iter().step_by(factor).copied().collect();
        let tau = t.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(BrownianBatch { increments, batch: self.batch, dim: self.dim, seed: self.seed, grid: TimeGrid { t, tau } })
    }
}

/// Draws `batch` independent Brownian paths on `grid`. Sample `j` uses its
/// own random stream, so any subset of samples can be regenerated alone.
pub fn sample_brownian(seed: u64, batch: usize, grid: &TimeGrid, dim: usize) -> Result<BrownianBatch> {
    if batch == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let steps = grid.steps();
    let mut increments = Vec::with_capacity(batch * steps * dim);
    for j in 0..batch {
        let mut rng = rng::stream(seed, j as u64);
        for tau in &grid.tau {
            let scale = tau.sqrt();
            for _ in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                increments.push(scale * z);
            }
        }
    }
    Ok(BrownianBatch { increments, batch, dim, seed, grid: grid.clone() })
}

/// Forward trajectories `[batch, steps + 1, dim]` together with the
/// increments that generated them.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub states: Vec<f64>,
    pub brownian: BrownianBatch,
}

impl PathBatch {
    pub fn batch(&self) -> usize {
        self.brownian.batch
    }

    pub fn dim(&self) -> usize {
        self.brownian.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.brownian.grid
    }

    pub fn state(&self, j: usize, n: usize) -> &[f64] {
        let d = self.dim();
        let start = (j * (self.grid().steps() + 1) + n) * d;
        &self.states[start..start + d]
    }

    /// All states at time index `n`, `[batch, dim]` row-major.
    pub fn state_at(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.batch() * self.dim());
        for j in 0..self.batch() {
            out.extend_from_slice(self.state(j, n));
        }
        out
    }
}

/// `X_0 = ξ`, `X_{n+1} = H(t_n, t_{n+1}, X_n, ΔW_n)`.
pub fn simulate(problem: &ProblemSpec, brownian: &BrownianBatch) -> Result<PathBatch> {
    let d = problem.dim;
    if brownian.dim != d || problem.xi.len() != d {
        return Err(Error::dim(format!("problem has dimension {}, increments have {}", d, brownian.dim)));
    }
    let steps = brownian.steps();
    let t = &brownian.grid.t;
    let mut states = vec![0.0; brownian.batch * (steps + 1) * d];
    for (j, path) in states.chunks_exact_mut((steps + 1) * d).enumerate() {
        path[..d].copy_from_slice(&problem.xi);
        for n in 0..steps {
            let (done, rest) = path.split_at_mut((n + 1) * d);
            let next = &mut rest[..d];
            problem.equation.transition(t[n], t[n + 1], &done[n * d..], brownian.increment(j, n), next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::SimulationDivergence { step: n + 1, sample: j });
            }
        }
    }
    Ok(PathBatch { states, brownian: brownian.clone() })
}
