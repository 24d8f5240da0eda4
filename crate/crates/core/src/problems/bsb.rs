use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Covariance, Equation, Point, PointGrad};
use crate::error::{Error, Result};
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsbParams {
    /// Interest rate `r̂`.
    pub rate: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// Volatility of the forward process, `σ(x) = σ_c diag(x)`.
    pub sigma_c: f64,
}

impl Default for BsbParams {
    /// `r̂ = 0.05` is implied by the published reference values: `exp(r̂ + 0.16) · 62.5 = 77.1049`.
    fn default() -> Self {
        BsbParams { rate: 0.05, sigma_max: 0.4, sigma_min: 0.1, sigma_c: 0.4 }
    }
}

impl BsbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::config("bsb volatilities need 0 < sigma_min < sigma_max"));
        }
        if !(self.sigma_c > 0.0) {
            return Err(Error::config("bsb sigma_c must be positive"));
        }
        Ok(())
    }

    /// Volatility selector: `σ_max` where `x ≥ 0`, `σ_min` otherwise.
    pub fn sigma_bar(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.sigma_max
        } else {
            self.sigma_min
        }
    }
}

/// Black-Scholes-Barenblatt coefficients:
/// `f(t, x, y, z, S) = −½ Σ x_i² σ̄(S_ii)² S_ii + r̂ (y − ⟨x, z⟩)`, `g(x) = ‖x‖²`.
#[derive(Debug, Clone, Copy)]
pub struct Bsb {
    pub params: BsbParams,
}

impl Equation for Bsb {
    fn apply_sigma(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        for ((o, xi), wi) in out.iter_mut().zip(x).zip(w) {
            *o = self.params.sigma_c * xi * wi;
        }
    }

    fn covariance(&self, x: &[f64]) -> Covariance {
        let c2 = self.params.sigma_c * self.params.sigma_c;
        Covariance::Diagonal(x.iter().map(|v| c2 * v * v).collect())
    }

    fn transition(&self, _s: f64, _t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        for ((o, xi), wi) in out.iter_mut().zip(x).zip(w) {
            *o = xi * (1.0 + self.params.sigma_c * wi);
        }
    }

    fn nonlinearity(&self, p: &Point<'_>) -> f64 {
        let d = p.x.len();
        let mut vol = 0.0;
        for (i, xi) in p.x.iter().enumerate() {
            let s = p.hess[i * d + i];
            let sb = self.params.sigma_bar(s);
            vol += xi * xi * sb * sb * s;
        }
        let xz: f64 = p.x.iter().zip(p.z).map(|(a, b)| a * b).sum();
        -0.5 * vol + self.params.rate * (p.y - xz)
    }

    fn nonlinearity_vjp(&self, p: &Point<'_>, upstream: f64, grad: &mut PointGrad<'_>) {
        let d = p.x.len();
        let r = self.params.rate;
        *grad.y += upstream * r;
        for (i, xi) in p.x.iter().enumerate() {
            grad.z[i] -= upstream * r * xi;
            // σ̄ is piecewise constant; its jump at 0 carries no derivative.
            let sb = self.params.sigma_bar(p.hess[i * d + i]);
            grad.hess[i * d + i] -= upstream * 0.5 * xi * xi * sb * sb;
        }
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
}

/// Closed-form solution `u(t, x) = exp((r̂ + σ_max²)(T − t)) ‖x‖²` and its
/// derivatives.
#[derive(Debug, Clone, Copy)]
pub struct BsbExact {
    pub params: BsbParams,
    pub horizon: f64,
}

impl BsbExact {
    fn growth(&self, t: f64) -> f64 {
        let k = self.params.rate + self.params.sigma_max * self.params.sigma_max;
        (k * (self.horizon - t)).exp()
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.growth(t) * x.iter().map(|v| v * v).sum::<f64>()
    }

    /// `∇u = 2 e^{k(T−t)} x`.
    pub fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let c = 2.0 * self.growth(t);
        x.iter().map(|v| c * v).collect()
    }

    /// The Hessian is `hessian_scale(t) · I`.
    pub fn hessian_scale(&self, t: f64) -> f64 {
        2.0 * self.growth(t)
    }

    /// `∂/∂t ∇u`; the second-order part of the generator applied to `∇u`
    /// vanishes because `∇u` is linear in `x`.
    pub fn gradient_drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let k = self.params.rate + self.params.sigma_max * self.params.sigma_max;
        let c = -2.0 * k * self.growth(t);
        x.iter().map(|v| c * v).collect()
    }
}

/// `u(t, x)` for the Black-Scholes-Barenblatt problem on `[0, T]`.
pub fn bsb_exact(t: f64, x: &[f64], params: &BsbParams, horizon: f64) -> f64 {
    BsbExact { params: *params, horizon }.value(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use rand_distr::{Distribution, Uniform};

    fn xi(d: usize) -> Vec<f64> {
        (0..d).map(|i| if i % 2 == 0 { 1.0 } else { 0.5 }).collect()
    }

    #[test]
    fn sigma_bar_includes_zero_in_upper_branch() {
        let p = BsbParams::default();
        assert_eq!(p.sigma_bar(0.0), 0.4);
        assert_eq!(p.sigma_bar(-1e-300), 0.1);
    }

    #[test]
    fn terminal_at_xi() {
        let b = Bsb { params: BsbParams::default() };
        assert_eq!(b.terminal(&xi(100)), 62.5);
    }

    #[test]
    fn only_rate_term_survives() {
        let b = Bsb { params: BsbParams::default() };
        let x = xi(4);
        let p = Point { t: 0.0, x: &x, y: 1.0, z: &[0.0; 4], hess: &[0.0; 16] };
        assert_eq!(b.nonlinearity(&p), 0.05);
    }

    #[test]
    fn exact_matches_published_values() {
        let p = BsbParams::default();
        for (d, want) in [(100, 77.1049), (256, 197.3885), (400, 308.4195)] {
            let u = bsb_exact(0.0, &xi(d), &p, 1.0);
            assert!((u - want).abs() < 5e-5, "d={d}: {u}");
        }
    }

    #[test]
    fn exact_hits_terminal_condition() {
        let b = Bsb { params: BsbParams::default() };
        let x = [0.3, -1.2, 2.0, 0.1];
        assert_eq!(bsb_exact(1.0, &x, &b.params, 1.0), b.terminal(&x));
    }

    #[test]
    fn exact_solves_the_pde() {
        // ∂u/∂t + ½ Σ x_i² σ̄(u_ii)² u_ii − r̂ (u − ⟨x, ∇u⟩) = 0
        let params = BsbParams::default();
        let exact = BsbExact { params, horizon: 1.0 };
        let mut rng = rng::stream(11, 0);
        let unit = Uniform::new(-2.0, 2.0).unwrap();
        for _ in 0..50 {
            let t = 0.05 + 0.9 * (unit.sample(&mut rng) + 2.0) / 4.0;
            let x: Vec<f64> = (0..6).map(|_| unit.sample(&mut rng)).collect();
            let h = 1e-5;
            let dt = (exact.value(t + h, &x) - exact.value(t - h, &x)) / (2.0 * h);
            let grad = exact.gradient(t, &x);
            let hs = exact.hessian_scale(t);
            assert!(hs > 0.0);
            assert_eq!(params.sigma_bar(hs), params.sigma_max);
            let diffusion: f64 =
                x.iter().map(|xi| 0.5 * xi * xi * params.sigma_bar(hs).powi(2) * hs).sum();
            let xg: f64 = x.iter().zip(&grad).map(|(a, b)| a * b).sum();
            let residual = dt + diffusion - params.rate * (exact.value(t, &x) - xg);
            assert!(residual.abs() <= 1e-6, "residual {residual}");
        }
    }

    #[test]
    fn partials_of_nonlinearity() {
        let b = Bsb { params: BsbParams::default() };
        let x = [1.0, 0.5];
        let hess = [2.0, 0.0, 0.0, -1.0];
        let p = Point { t: 0.0, x: &x, y: 3.0, z: &[0.2, 0.4], hess: &hess };
        let (mut gy, mut gz, mut gh) = (0.0, vec![0.0; 2], vec![0.0; 4]);
        b.nonlinearity_vjp(&p, 1.0, &mut PointGrad { y: &mut gy, z: &mut gz, hess: &mut gh });
        assert_eq!(gy, 0.05);
        assert_eq!(gz, vec![-0.05, -0.025]);
        assert!((gh[0] + 0.5 * 0.16).abs() < 1e-15);
        assert!((gh[3] + 0.5 * 0.25 * 0.01).abs() < 1e-15);
    }
}
