//! Finite-difference check of the unrolled loss gradient on small instances.

use deep2bsde_core::gradcheck::grad_check;
use deep2bsde_core::rng;
use deep2bsde_core::sde::{sample_brownian, simulate};
use deep2bsde_core::solver::Objective;
use deep2bsde_core::{Architecture, ProblemSpec, TimeGrid};
use rand_distr::{Distribution, StandardNormal};

const JITTER: u64 = 0x4a49_5454;

/// Worst relative error between the analytic gradient and central
/// differences (step `1e-6`) over every coordinate of θ.
///
/// θ is the seeded initialization plus `N(0, 0.1²)` noise on every entry,
/// which keeps ReLU inputs away from the kink that zero biases would put
/// them on.
pub fn unrolled_gradient_error(problem: &ProblemSpec, arch: Architecture, steps: usize, batch: usize, seed: u64) -> anyhow::Result<f64> {
    let mut theta = arch.init_params(seed)?.values().to_vec();
    let mut noise = rng::stream(rng::derive(seed, JITTER), 0);
    for t in &mut theta {
        let z: f64 = StandardNormal.sample(&mut noise);
        *t += 0.1 * z;
    }
    let grid = TimeGrid::uniform(problem.horizon, steps)?;
    let paths = simulate(problem, &sample_brownian(rng::derive(seed, rng::tag::PATHS), batch, &grid, problem.dim)?)?;
    let objective = Objective::new(problem, arch.layout()?)?;
    objective.loss_and_gradient(&theta, &paths)?;
    Ok(grad_check(|th| objective.loss_and_gradient(th, &paths).expect("rollout stays finite near a finite point"), &theta, 1e-6))
}

#[cfg(test)]
mod tests {
    use super::*;
    use deep2bsde_core::problems;
    use deep2bsde_core::MultiscaleSpec;

    #[test]
    fn small_multiscale_instance() {
        let p = problems::hjb(2).unwrap();
        let arch = Architecture::Multiscale(MultiscaleSpec { dim: 2, scales: [2, 3, 2, 3] });
        assert!(unrolled_gradient_error(&p, arch, 2, 3, 1).unwrap() <= 1e-5);
    }
}
