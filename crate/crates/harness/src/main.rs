use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use deep2bsde::config::RunConfig;
use deep2bsde::experiment::{run_experiment, Options};
use deep2bsde::gradients::unrolled_gradient_error;
use deep2bsde::refs::{verify_references, Status};
use deep2bsde_core::nets::ArchKind;
use deep2bsde_core::problems;
use deep2bsde_core::{Architecture, CnnSpec, MultiscaleSpec};

#[derive(Parser)]
#[command(name = "deep2bsde", version, about = "Deep-learning solver for fully nonlinear PDEs via 2BSDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train repeated runs and write metrics, tables and curves.
    Solve(SolveArgs),
    /// Recompute the reference values that have an in-house oracle.
    VerifyRefs {
        #[arg(long, default_value_t = 10_000_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare the unrolled loss gradient with central differences.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// JSON configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_parser = parse_arch)]
    arch: Option<ArchKind>,
    /// Four hidden widths, e.g. 20,30,40,50.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    /// allen-cahn, hjb-multiscale, hjb-cnn, bsb-multiscale, bsb-cnn or constant:<rate>.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    table_every: Option<u64>,
    #[arg(long)]
    reference_samples: Option<usize>,
    /// Write the first batch of paths of run 0 to this CSV file.
    #[arg(long)]
    dump_paths: Option<PathBuf>,
    /// Save each run's final parameters and optimizer state.
    #[arg(long)]
    checkpoints: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_arch(s: &str) -> Result<ArchKind, String> {
    match s {
        "multiscale" => Ok(ArchKind::Multiscale),
        "cnn" => Ok(ArchKind::Cnn),
        other => Err(format!("unknown architecture {:?} (multiscale or cnn)", other)),
    }
}

impl SolveArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field.clone() { c.$field = v; })* };
        }
        set!(problem, dim, arch, channels, steps, batch, optimizer, runs, seed, eval_every, reference_samples);
        if let Some(s) = &self.schedule {
            c.schedule = Some(s.clone());
        }
        if let Some(t) = self.table_every {
            c.table_every = Some(t);
        }
        if let Some(s) = &self.scales {
            c.scales = Some(s.as_slice().try_into().context("--scales takes four widths")?);
        }
        Ok(c)
    }
}

fn solve(args: SolveArgs) -> anyhow::Result<bool> {
    let config = args.config()?;
    let options = Options { dump_paths: args.dump_paths.clone(), checkpoints: args.checkpoints };
    let bundle = run_experiment(&config, &args.out, &options)?;
    print!("{}", std::fs::read_to_string(args.out.join("table.md"))?);
    for w in &bundle.manifest.warnings {
        eprintln!("warning: {}", w);
    }
    Ok(bundle.runs_ok() == config.runs)
}

fn grad_check(seeds: u64, tolerance: f64) -> anyhow::Result<bool> {
    let names = problems::PROBLEM_NAMES;
    let mut ok = true;
    for (label, dim) in [("multiscale", 2), ("cnn", 4)] {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let problem = problems::ProblemSpec::by_name(names[seed as usize % names.len()], dim)?;
            let arch = match label {
                "multiscale" => Architecture::Multiscale(MultiscaleSpec { dim, scales: [3, 2, 4, 3] }),
                _ => Architecture::Cnn(CnnSpec { dim, channels: 2 }),
            };
            worst = worst.max(unrolled_gradient_error(&problem, arch, 3, 4, seed)?);
        }
        let pass = worst <= tolerance;
        ok &= pass;
        println!("{} {:<10} d={} N=3 J=4 seeds={} worst relative error {:.3e}", if pass { "PASS" } else { "FAIL" }, label, dim, seeds, worst);
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Solve(args) => solve(args),
        Command::VerifyRefs { mc_samples, seed } => verify_references(mc_samples, seed).map(|report| {
            for line in &report {
                println!("{}", line);
            }
            report.iter().all(|r| r.status != Status::Fail)
        }),
        Command::GradCheck { seeds, tolerance } => grad_check(seeds, tolerance),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(2)
        }
    }
}
