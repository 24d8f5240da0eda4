//! Central finite-difference check for analytic gradients.

use alloc::vec::Vec;

/// Largest `|analytic - centered difference| / max(1, |analytic|)` over all
/// coordinates of `theta`.
///
/// `f` must be deterministic in θ and return `(value, analytic gradient)`.
/// Points where `f` is not differentiable (for example a ReLU input exactly
/// at zero) are outside the contract.
pub fn grad_check<F>(mut f: F, theta: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let coords: Vec<usize> = (0..theta.len()).collect();
    grad_check_coords(&mut f, theta, h, &coords)
}

/// Like [`grad_check`], restricted to the listed coordinates.
pub fn grad_check_coords<F>(f: &mut F, theta: &[f64], h: f64, coords: &[usize]) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(theta);
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let (up, _) = f(&probe);
        probe[i] = orig - h;
        let (down, _) = f(&probe);
        probe[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
