use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use super::{Covariance, Equation, Point, PointGrad};
use crate::rng;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

const SQRT_2: f64 = core::f64::consts::SQRT_2;

/// Hamilton-Jacobi-Bellman coefficients: forward process `x + √2 w`,
/// `f(t, x, y, z, S) = −Trace(S) + ‖z‖²`, `g(x) = ln(½(1 + ‖x‖²))`.
///
/// The sign of the gradient term matches `∂u/∂t + Δu = ‖∇u‖²`, the equation
/// whose Cole-Hopf representation [`hjb_mc_reference`] evaluates.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hjb;

impl Equation for Hjb {
    fn apply_sigma(&self, _x: &[f64], w: &[f64], out: &mut [f64]) {
        for (o, wi) in out.iter_mut().zip(w) {
            *o = SQRT_2 * wi;
        }
    }

    fn covariance(&self, _x: &[f64]) -> Covariance {
        Covariance::Scaled(2.0)
    }

    fn transition(&self, _s: f64, _t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        for ((o, xi), wi) in out.iter_mut().zip(x).zip(w) {
            *o = xi + SQRT_2 * wi;
        }
    }

    fn nonlinearity(&self, p: &Point<'_>) -> f64 {
        let d = p.z.len();
        let trace: f64 = (0..d).map(|i| p.hess[i * d + i]).sum();
        -trace + p.z.iter().map(|v| v * v).sum::<f64>()
    }

    fn nonlinearity_vjp(&self, p: &Point<'_>, upstream: f64, grad: &mut PointGrad<'_>) {
        let d = p.z.len();
        for (g, z) in grad.z.iter_mut().zip(p.z) {
            *g += upstream * 2.0 * z;
        }
        for i in 0..d {
            grad.hess[i * d + i] -= upstream;
        }
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        (0.5 * (1.0 + norm2)).ln()
    }
}

/// Samples per independent random stream in the Monte-Carlo oracle.
pub const MC_CHUNK: usize = 1 << 14;

/// Count, mean and centred sum of squares of `e = exp(−g(ξ + √2 W_T))` over
/// one chunk of samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChunkSums {
    pub count: usize,
    pub mean: f64,
    pub m2: f64,
}

impl ChunkSums {
    fn push(&mut self, e: f64) {
        self.count += 1;
        let delta = e - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (e - self.mean);
    }

    /// Chan's parallel update.
    pub fn merge(self, other: ChunkSums) -> ChunkSums {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        ChunkSums {
            count: self.count + other.count,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
        }
    }
}

fn merge_pairwise(chunks: &[ChunkSums]) -> ChunkSums {
    match chunks.len() {
        0 => ChunkSums::default(),
        1 => chunks[0],
        n => merge_pairwise(&chunks[..n / 2]).merge(merge_pairwise(&chunks[n / 2..])),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    /// Delta-method standard error of `−ln(mean)`.
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Combines chunks in index order, pairwise.
    pub fn from_chunks(chunks: &[ChunkSums]) -> Self {
        let all = merge_pairwise(chunks);
        let nf = all.count as f64;
        let var = if all.count > 1 { all.m2 / (nf - 1.0) } else { 0.0 };
        McEstimate { estimate: -all.mean.ln(), stderr: (var / nf).sqrt() / all.mean, samples: all.count }
    }
}

/// One chunk of the Cole-Hopf estimator `u(0, ξ) = −ln E[exp(−g(ξ + √2 W_T))]`
/// for `∂u/∂t + Δu = ‖∇u‖²`, `u(T, ·) = g`.
pub fn hjb_mc_chunk<G>(g: &G, xi: &[f64], horizon: f64, seed: u64, chunk: u64, count: usize) -> ChunkSums
where
    G: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut rng = rng::stream(rng::derive(seed, rng::tag::MONTE_CARLO), chunk);
    let scale = SQRT_2 * horizon.sqrt();
    let mut x = alloc::vec![0.0; xi.len()];
    let mut acc = ChunkSums::default();
    for _ in 0..count {
        for (o, c) in x.iter_mut().zip(xi) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *o = c + scale * z;
        }
        acc.push((-g(&x)).exp());
    }
    acc
}

/// `(chunk index, size)` for `samples` draws: full chunks plus a remainder.
pub fn chunk_sizes(samples: usize) -> impl Iterator<Item = (u64, usize)> {
    let chunks = samples.div_ceil(MC_CHUNK);
    (0..chunks).map(move |c| (c as u64, MC_CHUNK.min(samples - c * MC_CHUNK)))
}

/// Cole-Hopf Monte-Carlo estimate of `u(0, ξ)` for an arbitrary terminal `g`.
pub fn hjb_mc_reference_at<G>(g: &G, xi: &[f64], horizon: f64, samples: usize, seed: u64) -> McEstimate
where
    G: Fn(&[f64]) -> f64 + ?Sized,
{
    let chunks: Vec<ChunkSums> = chunk_sizes(samples.max(1))
        .map(|(c, n)| hjb_mc_chunk(g, xi, horizon, seed, c, n))
        .collect();
    McEstimate::from_chunks(&chunks)
}

/// Reference value `u(0, 0)` of the HJB benchmark in dimension `d`.
pub fn hjb_mc_reference(d: usize, samples: usize, seed: u64) -> McEstimate {
    let xi = alloc::vec![0.0; d];
    hjb_mc_reference_at(&|x: &[f64]| Hjb.terminal(x), &xi, 1.0, samples, seed)
}
