use alloc::format;

use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, TrainState};
use super::rollout::Objective;
use super::schedule::Schedule;
use crate::error::{Error, Result};
use crate::nets::{read_initial_block, Architecture, NetworkLayout};
use crate::params::ParamVector;
use crate::problems::{relative_l1_error, ProblemSpec};
use crate::rng;
use crate::sde::{sample_brownian, simulate, PathBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Samples per step, `J`.
    pub batch: usize,
    /// Number of optimizer updates, `M`.
    pub steps: u64,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    /// Metrics are emitted at multiples of this and at the final step.
    pub eval_every: u64,
    /// Independent repetitions.
    pub runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 64,
            steps: 5000,
            optimizer: Optimizer::default(),
            schedule: Schedule::Constant { rate: 1e-3 },
            eval_every: 1,
            runs: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be at least 1"));
        }
        if self.runs == 0 {
            return Err(Error::config("at least one run is required"));
        }
        self.optimizer.validate()?;
        self.schedule.validate()
    }
}

/// One metrics record. `u_estimate` is `θ_1` of `Θ_m` and `loss` is the
/// loss of `Θ_m` on the batch drawn for step `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run: usize,
    pub step: u64,
    pub u_estimate: f64,
    pub loss: f64,
    pub rel_l1_error: Option<f64>,
    pub seconds: f64,
}

/// One training run: a chain of parameter iterates `Θ_0, Θ_1, …, Θ_M`.
#[derive(Debug, Clone)]
pub struct Trainer {
    problem: ProblemSpec,
    arch: Architecture,
    layout: NetworkLayout,
    config: TrainConfig,
    run: usize,
    state: TrainState,
}

impl Trainer {
    /// Fresh parameters from `init_params(seed)`; `run` only labels the metrics.
    pub fn new(problem: ProblemSpec, arch: Architecture, config: TrainConfig, seed: u64, run: usize) -> Result<Self> {
        let theta = arch.init_params(seed)?;
        Self::from_state(problem, arch, config, TrainState::new(theta, seed), run)
    }

    /// Resumes from a saved state.
    pub fn from_state(problem: ProblemSpec, arch: Architecture, config: TrainConfig, state: TrainState, run: usize) -> Result<Self> {
        config.validate()?;
        if arch.dim() != problem.dim {
            return Err(Error::config(format!(
                "architecture dimension {} does not match problem dimension {}",
                arch.dim(),
                problem.dim
            )));
        }
        let layout = arch.layout()?;
        if state.theta.layout() != layout.params() {
            return Err(Error::dim("parameter layout does not match the architecture"));
        }
        Ok(Trainer { problem, arch, layout, config, run, state })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn params(&self) -> &ParamVector {
        &self.state.theta
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// The batch for step `m`: fresh Brownian paths from a stream keyed by
    /// the run seed and `m`.
    pub fn batch_for_step(&self, m: u64) -> Result<PathBatch> {
        let seed = rng::derive(rng::derive(self.state.seed, rng::tag::PATHS), m);
        let brownian = sample_brownian(seed, self.config.batch, &self.problem.grid()?, self.problem.dim)?;
        simulate(&self.problem, &brownian)
    }

    /// Current estimate of `u(0, ξ)`.
    pub fn u_estimate(&self) -> f64 {
        self.state.theta.values()[0]
    }

    /// Runs the remaining steps. `clock` returns elapsed seconds; `sink`
    /// receives every emitted row in step order.
    pub fn run(&mut self, clock: &mut dyn FnMut() -> f64, sink: &mut dyn FnMut(&MetricsRow)) -> Result<()> {
        let objective = Objective::new(&self.problem, self.layout.clone())?;
        let steps = self.config.steps;
        let reference = self.problem.reference.map(|r| r.value);
        let d = self.problem.dim;
        while self.state.step <= steps {
            let m = self.state.step;
            let paths = self.batch_for_step(m)?;
            let emit = m.is_multiple_of(self.config.eval_every) || m == steps;
            let theta = self.state.theta.values();
            let (loss, grad) = if m < steps {
                let (l, g) = objective.loss_and_gradient(theta, &paths)?;
                (l, Some(g))
            } else {
                (objective.loss(theta, &paths)?, None)
            };
            if emit {
                let u = read_initial_block(theta, d)?.y0;
                let rel_l1_error = reference.map(|r| relative_l1_error(u, r)).transpose()?;
                sink(&MetricsRow { run: self.run, step: m, u_estimate: u, loss, rel_l1_error, seconds: clock() });
            }
            match grad {
                // The update producing Θ_{m+1} uses γ_{m+1}.
                Some(g) => self.state.apply(&self.config.optimizer, &g, self.config.schedule.rate(m + 1))?,
                None => break,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::MultiscaleSpec;
    use crate::problems;
    use alloc::vec::Vec;

    fn small(steps: u64) -> (ProblemSpec, Architecture, TrainConfig) {
        let p = problems::allen_cahn(2).unwrap();
        let arch = Architecture::Multiscale(MultiscaleSpec { dim: 2, scales: [3, 4, 3, 4] });
        let config = TrainConfig { batch: 8, steps, ..Default::default() };
        (p, arch, config)
    }

    fn collect(t: &mut Trainer) -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        t.run(&mut || 0.0, &mut |r| rows.push(r.clone())).unwrap();
        rows
    }

    #[test]
    fn zero_steps_emit_initial_row() {
        let (mut p, arch, config) = small(0);
        let rows = collect(&mut Trainer::new(p.clone(), arch, config.clone(), 3, 0).unwrap());
        assert_eq!(rows[0].rel_l1_error, None);
        p.reference = Some(problems::Reference { value: 0.5, source: problems::ReferenceSource::MonteCarlo });
        let mut t = Trainer::new(p, arch, config, 3, 0).unwrap();
        let y0 = t.u_estimate();
        let rows = collect(&mut t);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].step, 0);
        assert_eq!(rows[0].u_estimate, y0);
        assert_eq!(rows[0].rel_l1_error, Some((y0 - 0.5).abs() / 0.5));
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let (p, arch, config) = small(15);
        let a = collect(&mut Trainer::new(p.clone(), arch, config.clone(), 9, 0).unwrap());
        let b = collect(&mut Trainer::new(p.clone(), arch, config.clone(), 9, 0).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
        let c = collect(&mut Trainer::new(p, arch, config, 10, 0).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn eval_cadence_includes_last_step() {
        let (p, arch, mut config) = small(7);
        config.eval_every = 3;
        let rows = collect(&mut Trainer::new(p, arch, config, 1, 2).unwrap());
        let steps: Vec<u64> = rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, [0, 3, 6, 7]);
        assert!(rows.iter().all(|r| r.run == 2));
    }

    #[test]
    fn resuming_continues_the_same_chain() {
        let (p, arch, config) = small(10);
        let full = collect(&mut Trainer::new(p.clone(), arch, config.clone(), 4, 0).unwrap());
        let mut first = Trainer::new(p.clone(), arch, TrainConfig { steps: 5, ..config.clone() }, 4, 0).unwrap();
        collect(&mut first);
        let mut state = first.into_state();
        // The final row of the short run is forward-only, so the chain stopped at Θ_5.
        assert_eq!(state.step, 5);
        state.step = 5;
        let rest = collect(&mut Trainer::from_state(p, arch, config, state, 0).unwrap());
        assert_eq!(&full[5..], &rest[..]);
    }

    #[test]
    fn training_reduces_loss() {
        let (p, arch, mut config) = small(300);
        config.schedule = Schedule::Constant { rate: 1e-2 };
        config.batch = 32;
        let rows = collect(&mut Trainer::new(p, arch, config, 0, 0).unwrap());
        let head: f64 = rows[..20].iter().map(|r| r.loss).sum();
        let tail: f64 = rows[rows.len() - 20..].iter().map(|r| r.loss).sum();
        assert!(tail < head, "{tail} >= {head}");
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let (_, arch, config) = small(1);
        let p = problems::allen_cahn(3).unwrap();
        assert!(matches!(Trainer::new(p, arch, config, 0, 0), Err(Error::Config(_))));
    }
}
