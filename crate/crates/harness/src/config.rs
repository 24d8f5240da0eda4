//! Experiment configuration: a JSON file whose fields can each be
//! overridden from the command line.

use std::path::Path;

use anyhow::{bail, Context};
use deep2bsde_core::nets::{ArchKind, DEFAULT_CHANNELS};
use deep2bsde_core::problems::{hjb_mc_reference, Reference, ReferenceSource};
use deep2bsde_core::solver::{AdamConfig, Optimizer};
use deep2bsde_core::{Architecture, CnnSpec, MultiscaleSpec, ProblemSpec, Schedule, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything needed to reproduce an experiment. Missing keys take the
/// defaults below; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `allen-cahn`, `bsb` or `hjb`.
    pub problem: String,
    pub dim: usize,
    pub arch: ArchKind,
    /// Hidden widths of the multiscale networks; the problem default when absent.
    pub scales: Option<[usize; 4]>,
    pub channels: usize,
    pub batch: usize,
    pub steps: u64,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub adam: AdamConfig,
    /// A schedule name or `constant:<rate>`; the problem default when absent.
    pub schedule: Option<String>,
    pub runs: usize,
    /// Run `r` is seeded with `seed + r`.
    pub seed: u64,
    pub eval_every: u64,
    /// Spacing of the rows in the aggregate table; `steps / 5` when absent.
    pub table_every: Option<u64>,
    /// Monte-Carlo samples for an HJB reference when no published value exists.
    pub reference_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: "allen-cahn".into(),
            dim: 20,
            arch: ArchKind::Multiscale,
            scales: None,
            channels: DEFAULT_CHANNELS,
            batch: 64,
            steps: 5000,
            optimizer: "adam".into(),
            adam: AdamConfig::default(),
            schedule: None,
            runs: 10,
            seed: 0,
            eval_every: 1,
            table_every: None,
            reference_samples: 1_000_000,
        }
    }
}

/// A configuration with every default filled in and every name looked up.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problem: ProblemSpec,
    pub arch: Architecture,
    pub train: TrainConfig,
    /// Standard error of a Monte-Carlo reference, if one was computed.
    pub reference_stderr: Option<f64>,
    pub table_steps: Vec<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn architecture(&self, problem: &ProblemSpec) -> Architecture {
        match self.arch {
            ArchKind::Multiscale => Architecture::Multiscale(MultiscaleSpec {
                dim: self.dim,
                scales: self.scales.unwrap_or(problem.scales),
            }),
            ArchKind::Cnn => Architecture::Cnn(CnnSpec { dim: self.dim, channels: self.channels }),
        }
    }

    pub fn table_steps(&self) -> Vec<u64> {
        let every = self.table_every.unwrap_or(self.steps / 5).max(1);
        let mut steps: Vec<u64> = (0..=self.steps).step_by(every as usize).collect();
        if steps.last() != Some(&self.steps) {
            steps.push(self.steps);
        }
        steps
    }

    /// Looks up the problem and schedule, builds the architecture and, for
    /// HJB dimensions without a published value, computes a Monte-Carlo
    /// reference.
    pub fn resolve(&self) -> anyhow::Result<Resolved> {
        let mut problem = ProblemSpec::by_name(&self.problem, self.dim)?;
        let arch = self.architecture(&problem);
        arch.validate()?;
        let schedule = match &self.schedule {
            Some(name) => Schedule::from_name(name)?,
            None => problem.default_schedule(self.arch),
        };
        let optimizer = match self.optimizer.as_str() {
            "adam" => Optimizer::Adam(self.adam),
            other => Optimizer::from_name(other)?,
        };
        let train = TrainConfig {
            batch: self.batch,
            steps: self.steps,
            optimizer,
            schedule,
            eval_every: self.eval_every,
            runs: self.runs,
        };
        train.validate()?;
        if self.table_every == Some(0) {
            bail!("table_every must be at least 1");
        }
        let mut reference_stderr = None;
        if problem.reference.is_none() && problem.name == "hjb" && self.reference_samples > 0 {
            let mc = hjb_mc_reference(self.dim, self.reference_samples, self.seed);
            problem.reference = Some(Reference { value: mc.estimate, source: ReferenceSource::MonteCarlo });
            reference_stderr = Some(mc.stderr);
        }
        Ok(Resolved { problem, arch, train, reference_stderr, table_steps: self.table_steps() })
    }
}
