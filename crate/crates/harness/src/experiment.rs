//! Independent training runs and the files describing them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use deep2bsde_core::nets::INITIAL_STD;
use deep2bsde_core::problems::Reference;
use deep2bsde_core::{Architecture, MetricsRow, PathBatch, Trainer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, emitted_steps, AggregateRow, RunRecord};
use crate::checkpoint;
use crate::config::{Resolved, RunConfig};
use crate::output;

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Write the paths of run 0's first batch to this CSV file.
    pub dump_paths: Option<PathBuf>,
    /// Save each run's final training state under `checkpoints/`.
    pub checkpoints: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub ok: bool,
    pub failure: Option<String>,
    pub last: Option<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    #[serde(flatten)]
    pub reference: Reference,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub architecture: Architecture,
    pub train: deep2bsde_core::TrainConfig,
    /// Entries of θ.
    pub parameters: usize,
    /// The closed-form count, which differs from `parameters` for the CNN.
    pub parameter_formula: usize,
    pub initialization: String,
    pub reference: Option<ReferenceInfo>,
    pub runs: Vec<RunSummary>,
    pub warnings: Vec<String>,
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: Manifest,
    pub records: Vec<RunRecord>,
    pub table: Vec<AggregateRow>,
    pub curves: Vec<AggregateRow>,
}

impl Bundle {
    pub fn runs_ok(&self) -> usize {
        self.records.iter().filter(|r| r.ok()).count()
    }
}

fn train_one(resolved: &Resolved, base_seed: u64, run: usize, dir: &Path, options: &Options) -> anyhow::Result<RunRecord> {
    let seed = base_seed.wrapping_add(run as u64);
    let mut rows = Vec::new();
    let failure = match Trainer::new(resolved.problem.clone(), resolved.arch, resolved.train.clone(), seed, run) {
        Ok(mut trainer) => {
            if run == 0 {
                if let Some(path) = &options.dump_paths {
                    write_paths(path, &trainer.batch_for_step(0)?)?;
                }
            }
            let start = Instant::now();
            let result = trainer.run(&mut || start.elapsed().as_secs_f64(), &mut |r| rows.push(r.clone()));
            if options.checkpoints {
                let path = dir.join("checkpoints").join(format!("run_{:03}.bin", run));
                checkpoint::save(&path, &resolved.arch, trainer.state())?;
            }
            result.err().map(|e| format!("run {} (seed {}): {}", run, seed, e))
        }
        Err(e) => Some(format!("run {} (seed {}): {}", run, seed, e)),
    };
    output::write_jsonl(&dir.join("runs").join(format!("run_{:03}.jsonl", run)), &rows)?;
    Ok(RunRecord { run, seed, rows, failure })
}

/// Trains `config.runs` independent repetitions (in parallel) and writes
/// the result bundle to `dir`. A diverging run is recorded and reported;
/// the others still complete.
pub fn run_experiment(config: &RunConfig, dir: &Path, options: &Options) -> anyhow::Result<Bundle> {
    let resolved = config.resolve()?;
    std::fs::create_dir_all(dir.join("runs")).with_context(|| format!("creating {}", dir.display()))?;
    if options.checkpoints {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
    }
    let records = (0..config.runs)
        .into_par_iter()
        .map(|run| train_one(&resolved, config.seed, run, dir, options))
        .collect::<anyhow::Result<Vec<RunRecord>>>()?;

    let table = aggregate(&records, &resolved.table_steps);
    let curves = aggregate(&records, &emitted_steps(&records));
    let mut warnings = Vec::new();
    for r in records.iter().filter_map(|r| r.failure.as_ref()) {
        warnings.push(r.clone());
    }
    std::fs::write(dir.join("aggregate.csv"), output::aggregate_csv(&table))?;
    let title = format!("{} d={} {:?}", resolved.problem.name, resolved.problem.dim, resolved.arch.kind());
    std::fs::write(dir.join("table.md"), output::table_markdown(&title, &table))?;
    match output::loss_curve_csv(&curves) {
        Ok(csv) => std::fs::write(dir.join("loss_curve.csv"), csv)?,
        Err(e) => warnings.push(format!("loss curve not written: {}", e)),
    }
    match output::error_curve_csv(&curves) {
        Ok(csv) => std::fs::write(dir.join("error_curve.csv"), csv)?,
        Err(e) => warnings.push(format!("error curve not written: {}", e)),
    }
    if let Some(slope) = output::tail_slope(&curves) {
        if slope > 0.0 {
            warnings.push(format!("mean relative error still rising over the last tenth of training (slope {:.3e})", slope));
        }
    }

    let layout = resolved.arch.layout()?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        architecture: resolved.arch,
        train: resolved.train.clone(),
        parameters: layout.len(),
        parameter_formula: resolved.arch.param_count()?,
        initialization: format!(
            "hidden weights N(0, 1/fan_in), output weights and biases 0, y0 and z0 N(0, {}^2), G_0 and A_0 zero",
            INITIAL_STD
        ),
        reference: resolved.problem.reference.map(|reference| ReferenceInfo { reference, stderr: resolved.reference_stderr }),
        runs: records
            .iter()
            .map(|r| RunSummary { run: r.run, seed: r.seed, ok: r.ok(), failure: r.failure.clone(), last: r.rows.last().cloned() })
            .collect(),
        warnings,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(Bundle { manifest, records, table, curves })
}

/// CSV of every state of every path: `path_j,n,x_0,…,x_{d−1}`.
pub fn write_paths(path: &Path, paths: &PathBatch) -> anyhow::Result<()> {
    let d = paths.dim();
    let mut out = String::from("path_j,n");
    for k in 0..d {
        write!(out, ",x_{}", k).unwrap();
    }
    out.push('\n');
    for j in 0..paths.batch() {
        for n in 0..=paths.grid().steps() {
            write!(out, "{},{}", j, n).unwrap();
            for v in paths.state(j, n) {
                write!(out, ",{}", v).unwrap();
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
