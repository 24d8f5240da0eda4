use super::{Covariance, Equation, Point, PointGrad};

/// `f(t, x, y, z, S) = −½ Trace(S) − y + y³`, `g(x) = 1 / (2 + ⅖‖x‖²)`,
/// driven by a standard Brownian motion (`μ = 0`, `σ = I`).
#[derive(Debug, Clone, Copy, Default)]
pub struct AllenCahn;

impl Equation for AllenCahn {
    fn covariance(&self, _x: &[f64]) -> Covariance {
        Covariance::Scaled(1.0)
    }

    fn transition(&self, _s: f64, _t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x).zip(w) {
            *o = a + b;
        }
    }

    fn nonlinearity(&self, p: &Point<'_>) -> f64 {
        let d = p.z.len();
        let trace: f64 = (0..d).map(|i| p.hess[i * d + i]).sum();
        -0.5 * trace - p.y + p.y * p.y * p.y
    }

    fn nonlinearity_vjp(&self, p: &Point<'_>, upstream: f64, grad: &mut PointGrad<'_>) {
        let d = p.z.len();
        *grad.y += upstream * (3.0 * p.y * p.y - 1.0);
        for i in 0..d {
            grad.hess[i * d + i] -= 0.5 * upstream;
        }
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        1.0 / (2.0 + 0.4 * norm2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn f(y: f64, hess: &[f64]) -> f64 {
        let z = [0.0, 0.0];
        AllenCahn.nonlinearity(&Point { t: 0.0, x: &[0.0, 0.0], y, z: &z, hess })
    }

    #[test]
    fn terminal_at_origin() {
        assert_eq!(AllenCahn.terminal(&[0.0; 20]), 0.5);
    }

    #[test]
    fn nonlinearity_vanishes_at_zero() {
        assert_eq!(f(0.0, &[0.0; 4]), 0.0);
    }

    #[test]
    fn odd_in_y_without_hessian() {
        for y in [0.1, 0.7, 1.3, -2.0] {
            assert_eq!(f(-y, &[0.0; 4]), -f(y, &[0.0; 4]));
        }
    }

    #[test]
    fn partials() {
        let hess = [1.0, 0.0, 0.0, 3.0];
        let p = Point { t: 0.0, x: &[0.0, 0.0], y: 2.0, z: &[0.0, 0.0], hess: &hess };
        let (mut gy, mut gz, mut gh) = (0.0, vec![0.0; 2], vec![0.0; 4]);
        AllenCahn.nonlinearity_vjp(&p, 2.0, &mut PointGrad { y: &mut gy, z: &mut gz, hess: &mut gh });
        assert_eq!(gy, 22.0);
        assert_eq!(gh, vec![-1.0, 0.0, 0.0, -1.0]);
        assert_eq!(f(2.0, &hess), -2.0 - 2.0 + 8.0);
    }
}
