//! The unrolled forward recursion
//!
//! ```text
//! Y_{n+1} = Y_n + ⟨Z_n, ΔX_n⟩ + τ (f(t_n, X_n, Y_n, Z_n, G_n) + ½ Trace(σσ*(X_n) G_n))
//! Z_{n+1} = Z_n + τ A_n + G_n ΔX_n
//! ```
//!
//! with `ΔX_n = X_{n+1} − X_n`, and the terminal-mismatch loss
//! `mean_j |Y_N − g(X_N)|²`.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nets::{BoundNetwork, NetworkLayout};
use crate::problems::{BsbExact, Equation, Point, PointGrad, ProblemSpec};
use crate::sde::PathBatch;
use crate::tape::{RowFunction, Tape, Var};
use crate::tensor::Tensor;

/// Batched values at `t_0`: `y` is `[rows, 1]`, `z` and `a` are `[rows, d]`,
/// `g` is `[rows, d²]`.
#[derive(Debug, Clone, Copy)]
pub struct InitialState {
    pub y: Var,
    pub z: Var,
    pub g: Var,
    pub a: Var,
}

/// Supplies `(Y_0, Z_0, G_0, A_0)` and the approximations `G_n ≈ Hess u`,
/// `A_n ≈ L(∇u)` at later grid points.
pub trait SpatialModel {
    /// `x0` holds the initial states, `[rows, d]`.
    fn initial(&self, tape: &mut Tape<'_>, x0: Var) -> Result<InitialState>;

    /// `G_n(X_n)` for `n ≥ 1`, `[rows, d²]`.
    fn hessian(&self, tape: &mut Tape<'_>, n: usize, t: f64, x: Var) -> Result<Var>;

    /// `A_n(X_n)` for `n ≥ 1`, `[rows, d]`.
    fn generator(&self, tape: &mut Tape<'_>, n: usize, t: f64, x: Var) -> Result<Var>;
}

/// The trainable model: parameter blocks at `n = 0`, one shared network
/// pair afterwards.
pub struct NetworkModel {
    pub net: BoundNetwork,
}

impl SpatialModel for NetworkModel {
    fn initial(&self, tape: &mut Tape<'_>, x0: Var) -> Result<InitialState> {
        let rows = tape.shape(x0).leading();
        let init = self.net.initial;
        let d = self.net.dim();
        let y = tape.broadcast_rows(init.y0, rows)?;
        let z = tape.broadcast_rows(init.z0, rows)?;
        let g = tape.broadcast_rows(init.g0, rows)?;
        let a = tape.broadcast_rows(init.a0, rows)?;
        let g = tape.reshape(g, &[rows, d * d])?;
        Ok(InitialState { y, z, g, a })
    }

    fn hessian(&self, tape: &mut Tape<'_>, _n: usize, _t: f64, x: Var) -> Result<Var> {
        self.net.eval_g(tape, x)
    }

    fn generator(&self, tape: &mut Tape<'_>, _n: usize, _t: f64, x: Var) -> Result<Var> {
        self.net.eval_a(tape, x)
    }
}

/// Exact derivatives of the Black-Scholes-Barenblatt solution plugged into
/// the recursion in place of networks. The remaining loss is pure time
/// discretization error.
pub struct ExactBsbModel {
    pub exact: BsbExact,
}

impl ExactBsbModel {
    fn rowwise(&self, tape: &mut Tape<'_>, x: Var, width: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Var> {
        let s = *tape.shape(x);
        let d = s.row_len();
        let mut data = Vec::with_capacity(s.leading() * width);
        for row in tape.value(x).data().chunks_exact(d) {
            data.extend(f(row));
        }
        tape.constant(Tensor::new(&[s.leading(), width], data)?)
    }

    fn hessian_rows(&self, tape: &mut Tape<'_>, t: f64, x: Var) -> Result<Var> {
        let d = tape.shape(x).row_len();
        let c = self.exact.hessian_scale(t);
        self.rowwise(tape, x, d * d, |_| {
            let mut h = alloc::vec![0.0; d * d];
            for i in 0..d {
                h[i * d + i] = c;
            }
            h
        })
    }
}

impl SpatialModel for ExactBsbModel {
    fn initial(&self, tape: &mut Tape<'_>, x0: Var) -> Result<InitialState> {
        let d = tape.shape(x0).row_len();
        let y = self.rowwise(tape, x0, 1, |x| alloc::vec![self.exact.value(0.0, x)])?;
        let z = self.rowwise(tape, x0, d, |x| self.exact.gradient(0.0, x))?;
        let g = self.hessian_rows(tape, 0.0, x0)?;
        let a = self.rowwise(tape, x0, d, |x| self.exact.gradient_drift(0.0, x))?;
        Ok(InitialState { y, z, g, a })
    }

    fn hessian(&self, tape: &mut Tape<'_>, _n: usize, t: f64, x: Var) -> Result<Var> {
        self.hessian_rows(tape, t, x)
    }

    fn generator(&self, tape: &mut Tape<'_>, _n: usize, t: f64, x: Var) -> Result<Var> {
        let d = tape.shape(x).row_len();
        self.rowwise(tape, x, d, |row| self.exact.gradient_drift(t, row))
    }
}

/// `f(t, x, y, z, S)` per row; inputs `[x, y, z, S]`.
struct Nonlinearity {
    equation: Arc<dyn Equation>,
    t: f64,
}

impl RowFunction for Nonlinearity {
    fn eval(&self, _row: usize, inputs: &[&[f64]]) -> f64 {
        let [x, y, z, hess] = inputs else { unreachable!("nonlinearity takes four inputs") };
        self.equation.nonlinearity(&Point { t: self.t, x, y: y[0], z, hess })
    }

    fn vjp(&self, _row: usize, inputs: &[&[f64]], upstream: f64, grads: &mut [&mut [f64]]) {
        let [x, y, z, hess] = inputs else { unreachable!("nonlinearity takes four inputs") };
        let [_, gy, gz, gh] = grads else { unreachable!("nonlinearity takes four inputs") };
        let p = Point { t: self.t, x, y: y[0], z, hess };
        let mut grad = PointGrad { y: &mut gy[0], z: &mut gz[..], hess: &mut gh[..] };
        self.equation.nonlinearity_vjp(&p, upstream, &mut grad);
    }
}

/// `½ Trace(σσ*(x) S)` per row; inputs `[x, S]`.
struct HalfTrace {
    equation: Arc<dyn Equation>,
}

impl RowFunction for HalfTrace {
    fn eval(&self, _row: usize, inputs: &[&[f64]]) -> f64 {
        let [x, hess] = inputs else { unreachable!("half trace takes two inputs") };
        self.equation.covariance(x).half_trace(hess, x.len())
    }

    fn vjp(&self, _row: usize, inputs: &[&[f64]], upstream: f64, grads: &mut [&mut [f64]]) {
        let [x, _] = inputs else { unreachable!("half trace takes two inputs") };
        self.equation.covariance(x).half_trace_vjp(x.len(), upstream, grads[1]);
    }
}

/// Terminal values of a rollout, all on the tape.
#[derive(Debug, Clone, Copy)]
pub struct Rollout {
    /// Scalar terminal-mismatch loss.
    pub loss: Var,
    /// `Y_N`, `[rows, 1]`.
    pub y: Var,
    /// `Z_N`, `[rows, d]`.
    pub z: Var,
}

fn at_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { row, .. } => Error::RolloutDivergence { step, sample: row },
        other => other,
    }
}

/// Records the recursion over every step of `paths` on `tape`.
///
/// A non-finite value produced while computing `Y_{n+1}` or `Z_{n+1}` is
/// reported as a divergence at step `n + 1`.
pub fn rollout(tape: &mut Tape<'_>, model: &dyn SpatialModel, problem: &ProblemSpec, paths: &PathBatch) -> Result<Rollout> {
    let (rows, d) = (paths.batch(), paths.dim());
    if d != problem.dim {
        return Err(Error::dim(alloc::format!("paths have dimension {}, problem {}", d, problem.dim)));
    }
    let grid = paths.grid().clone();
    let equation = problem.equation.clone();
    let mut x = tape.constant(Tensor::new(&[rows, d], paths.state_at(0))?)?;
    let init = model.initial(tape, x).map_err(at_step(0))?;
    let (mut y, mut z) = (init.y, init.z);
    for n in 0..grid.steps() {
        let (t, tau) = (grid.t[n], grid.tau[n]);
        let mut step = || -> Result<(Var, Var, Var)> {
            let next = tape.constant(Tensor::new(&[rows, d], paths.state_at(n + 1))?)?;
            let dx = tape.sub(next, x)?;
            let (g, a) = if n == 0 {
                (init.g, init.a)
            } else {
                (model.hessian(tape, n, t, x)?, model.generator(tape, n, t, x)?)
            };
            let f = tape.row_map(Box::new(Nonlinearity { equation: equation.clone(), t }), &[x, y, z, g])?;
            let tr = tape.row_map(Box::new(HalfTrace { equation: equation.clone() }), &[x, g])?;
            let drift = tape.add(f, tr)?;
            let drift = tape.scale(drift, tau)?;
            let zdx = tape.row_dot(z, dx)?;
            let y_next = tape.add(y, zdx)?;
            let y_next = tape.add(y_next, drift)?;
            let ta = tape.scale(a, tau)?;
            let gdx = tape.batch_matvec(g, dx)?;
            let z_next = tape.add(z, ta)?;
            let z_next = tape.add(z_next, gdx)?;
            Ok((next, y_next, z_next))
        };
        (x, y, z) = step().map_err(at_step(n + 1))?;
    }
    let steps = grid.steps();
    let terminal: Vec<f64> = (0..rows).map(|j| problem.terminal(paths.state(j, steps))).collect();
    let loss = (|| {
        let g = tape.constant(Tensor::new(&[rows, 1], terminal)?)?;
        let diff = tape.sub(y, g)?;
        let sq = tape.square(diff)?;
        tape.mean(sq)
    })()
    .map_err(at_step(steps))?;
    Ok(Rollout { loss, y, z })
}

/// The training objective for one architecture on one problem.
#[derive(Debug, Clone)]
pub struct Objective<'p> {
    pub problem: &'p ProblemSpec,
    pub layout: NetworkLayout,
}

impl<'p> Objective<'p> {
    pub fn new(problem: &'p ProblemSpec, layout: NetworkLayout) -> Result<Self> {
        if layout.dim() != problem.dim {
            return Err(Error::dim(alloc::format!(
                "architecture has dimension {}, problem {}",
                layout.dim(),
                problem.dim
            )));
        }
        Ok(Objective { problem, layout })
    }

    fn forward<'t>(&self, tape: &mut Tape<'t>, paths: &PathBatch) -> Result<Rollout> {
        let net = self.layout.bind(tape)?;
        rollout(tape, &NetworkModel { net }, self.problem, paths)
    }

    pub fn loss(&self, theta: &[f64], paths: &PathBatch) -> Result<f64> {
        let mut tape = Tape::new(theta);
        let r = self.forward(&mut tape, paths)?;
        Ok(tape.value(r.loss).data()[0])
    }

    /// Loss and its gradient with respect to every entry of `θ`.
    pub fn loss_and_gradient(&self, theta: &[f64], paths: &PathBatch) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new(theta);
        let r = self.forward(&mut tape, paths)?;
        let loss = tape.value(r.loss).data()[0];
        Ok((loss, tape.backward(r.loss)?.into_theta()))
    }
}

/// Loss of the exact-derivative plug-in rollout for the BSB problem.
pub fn exact_bsb_loss(problem: &ProblemSpec, exact: BsbExact, paths: &PathBatch) -> Result<f64> {
    let mut tape = Tape::new(&[]);
    let r = rollout(&mut tape, &ExactBsbModel { exact }, problem, paths)?;
    Ok(tape.value(r.loss).data()[0])
}
