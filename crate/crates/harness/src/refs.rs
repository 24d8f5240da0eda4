//! Recomputes the published reference values that have an in-house oracle.

use std::fmt;

use deep2bsde_core::problems::{self, chunk_sizes, hjb_mc_chunk, BsbParams, ChunkSums, Hjb, McEstimate};
use deep2bsde_core::Equation;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Published by a method this crate does not implement.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefCheck {
    pub name: String,
    pub published: f64,
    pub computed: Option<f64>,
    pub detail: String,
    pub status: Status,
}

impl fmt::Display for RefCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::External => "EXTERNAL",
        };
        write!(f, "{:<8} {:<16} published {:<10}", status, self.name, self.published)?;
        match self.computed {
            Some(v) => write!(f, " computed {:.6}  {}", v, self.detail),
            None => write!(f, " {}", self.detail),
        }
    }
}

pub const BSB_PUBLISHED: [(usize, f64); 3] = [(100, 77.1049), (256, 197.3885), (400, 308.4195)];
pub const HJB_PUBLISHED: (usize, f64) = (100, 4.5901);
pub const ALLEN_CAHN_PUBLISHED: [(usize, f64); 3] = [(20, 0.30879), (256, 0.041531), (400, 0.027106)];

/// `u(0, ξ)` of the Black-Scholes-Barenblatt problem in dimension `d`.
pub fn bsb_value(d: usize) -> anyhow::Result<f64> {
    let p = problems::bsb(d, BsbParams::default())?;
    Ok(problems::bsb_exact(0.0, &p.xi, &BsbParams::default(), p.horizon))
}

/// The HJB Monte-Carlo oracle at `ξ = 0`, `T = 1`, with chunks evaluated in
/// parallel. Identical to the sequential oracle for the same arguments.
pub fn hjb_reference(d: usize, samples: usize, seed: u64) -> McEstimate {
    let xi = vec![0.0; d];
    let g = |x: &[f64]| Hjb.terminal(x);
    let chunks: Vec<(u64, usize)> = chunk_sizes(samples.max(1)).collect();
    let sums: Vec<ChunkSums> = chunks.par_iter().map(|&(c, n)| hjb_mc_chunk(&g, &xi, 1.0, seed, c, n)).collect();
    McEstimate::from_chunks(&sums)
}

pub fn verify_references(mc_samples: usize, seed: u64) -> anyhow::Result<Vec<RefCheck>> {
    let mut out = Vec::new();
    for (d, published) in BSB_PUBLISHED {
        let v = bsb_value(d)?;
        let ok = (v - published).abs() < 0.5e-4;
        out.push(RefCheck {
            name: format!("bsb d={}", d),
            published,
            computed: Some(v),
            detail: "closed form, 4 decimal places".into(),
            status: if ok { Status::Pass } else { Status::Fail },
        });
    }
    let (d, published) = HJB_PUBLISHED;
    let mc = hjb_reference(d, mc_samples, seed);
    let z = (mc.estimate - published).abs() / mc.stderr;
    out.push(RefCheck {
        name: format!("hjb d={}", d),
        published,
        computed: Some(mc.estimate),
        detail: format!("Monte-Carlo, {} samples, stderr {:.2e}, {:.2} stderr away (limit 3)", mc.samples, mc.stderr, z),
        status: if z <= 3.0 { Status::Pass } else { Status::Fail },
    });
    for (d, published) in ALLEN_CAHN_PUBLISHED {
        out.push(RefCheck {
            name: format!("allen-cahn d={}", d),
            published,
            computed: None,
            detail: "external, not recomputed".into(),
            status: Status::External,
        });
    }
    Ok(out)
}
