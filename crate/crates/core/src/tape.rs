//! Reverse-mode automatic differentiation over batched tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass together
//! with its output value. [`Tape::backward`] then walks the records in
//! reverse and accumulates vector-Jacobian products. Parameter leaves are
//! slices of one flat parameter vector, so the gradient of a loss with
//! respect to all trainable weights comes back as a single flat vector; a
//! parameter bound once and used at every time step collects the sum of its
//! per-step contributions.
//!
//! Most tensors are batched: the leading axis indexes samples and primitives
//! act on every row independently.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::params::Segment;
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A scalar function applied row by row, for custom differentiable terms.
///
/// `inputs[k]` is the row slice of the k-th input tensor.
pub trait RowFunction {
    fn eval(&self, row: usize, inputs: &[&[f64]]) -> f64;

    /// Add `upstream * d eval / d inputs[k]` into `grads[k]`.
    fn vjp(&self, row: usize, inputs: &[&[f64]], upstream: f64, grads: &mut [&mut [f64]]);
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    side: usize,
}

impl ConvGeom {
    fn plane(&self) -> usize {
        self.side * self.side
    }
}

enum Op<'a> {
    Constant,
    Param { offset: usize },
    Affine { x: Var, weight: Var, bias: Var },
    Conv3x3 { x: Var, kernel: Var, bias: Var, cols: Vec<f64>, geom: ConvGeom },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Gather { x: Var, index: Vec<usize> },
    Reshape(Var),
    BroadcastRows(Var),
    RowDot(Var, Var),
    BatchMatVec { matrix: Var, vector: Var },
    RowMap { f: Box<dyn RowFunction + 'a>, inputs: Vec<Var> },
    Mean(Var),
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param { .. } => "param",
            Op::Affine { .. } => "affine",
            Op::Conv3x3 { .. } => "conv3x3",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Square(_) => "square",
            Op::Gather { .. } => "gather",
            Op::Reshape(_) => "reshape",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::RowDot(..) => "row_dot",
            Op::BatchMatVec { .. } => "batch_matvec",
            Op::RowMap { .. } => "row_map",
            Op::Mean(_) => "mean",
        }
    }
}

struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    theta: Vec<f64>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to the flat parameter vector.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    /// Gradient with respect to an arbitrary node, if the loss depends on it.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }
}

/// Recorded computation graph for one forward pass.
pub struct Tape<'a> {
    theta: &'a [f64],
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    /// A tape whose parameter leaves read from `theta`.
    pub fn new(theta: &'a [f64]) -> Self {
        Tape { theta, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Length of the parameter vector the tape reads from.
    pub fn theta_len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &Shape {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    fn grad_flag(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op<'a>, requires_grad: bool) -> Result<Var> {
        if let Some(pos) = value.data().iter().position(|v| !v.is_finite()) {
            let row_len = value.shape().row_len().max(1);
            return Err(Error::NonFinite { op: op.name(), row: pos / row_len });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant, false)
    }

    /// Leaf reading the parameter segment `seg` of the tape's parameter vector.
    pub fn param(&mut self, seg: &Segment) -> Result<Var> {
        let end = seg.offset + seg.len();
        if end > self.theta.len() {
            return Err(Error::dim(format!(
                "segment {} ends at {} beyond parameter length {}",
                seg.name,
                end,
                self.theta.len()
            )));
        }
        let value = Tensor::new(&seg.shape, self.theta[seg.offset..end].to_vec())?;
        self.push(value, Op::Param { offset: seg.offset }, true)
    }

    /// `x · Pᵀ + Q` for every row of `x` (`[rows, l]`), with `weight` the
    /// `k x l` matrix `P` and `bias` the `k`-vector `Q`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = *self.shape(x);
        let ws = self.shape(weight).dims().to_vec();
        let (rows, l) = (xs.leading(), xs.row_len());
        let (k, wl) = match ws.as_slice() {
            [k, l] => (*k, *l),
            other => return Err(Error::dim(format!("affine weight must be a matrix, got {:?}", other))),
        };
        if wl != l {
            return Err(Error::dim(format!("affine weight is {}x{} but input rows have {}", k, wl, l)));
        }
        if self.shape(bias).len() != k {
            return Err(Error::dim(format!("affine bias has {} entries, expected {}", self.shape(bias).len(), k)));
        }
        let mut out = Vec::with_capacity(rows * k);
        let b = self.data(bias);
        for _ in 0..rows {
            out.extend_from_slice(b);
        }
        gemm(
            MatRef::row_major(self.data(x), rows, l),
            MatRef::transposed(self.data(weight), k, l),
            1.0,
            &mut out,
        );
        let rg = self.grad_flag(x) || self.grad_flag(weight) || self.grad_flag(bias);
        self.push(Tensor::new(&[rows, k], out)?, Op::Affine { x, weight, bias }, rg)
    }

    /// 3x3 convolution, stride 1, zero padding 1, so the spatial size is
    /// preserved. `x` is `[batch, c_in, s, s]`, `kernel` is
    /// `[c_out, c_in, 3, 3]`, `bias` has `c_out` entries broadcast per channel.
    pub fn conv3x3(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let geom = match (self.shape(x).dims(), self.shape(kernel).dims()) {
            ([batch, c_in, s, s2], [c_out, kc_in, 3, 3]) if s == s2 => {
                if c_in != kc_in {
                    return Err(Error::dim(format!("conv input has {} channels, kernel expects {}", c_in, kc_in)));
                }
                ConvGeom { batch: *batch, c_in: *c_in, c_out: *c_out, side: *s }
            }
            (xd, kd) => {
                return Err(Error::dim(format!("conv3x3 needs [n,c,s,s] input and [o,c,3,3] kernel, got {:?} and {:?}", xd, kd)))
            }
        };
        if self.shape(bias).len() != geom.c_out {
            return Err(Error::dim(format!("conv bias has {} entries, expected {}", self.shape(bias).len(), geom.c_out)));
        }
        let cols = im2col(self.data(x), geom);
        let (plane, width) = (geom.plane(), geom.batch * geom.plane());
        let mut tmp = vec![0.0; geom.c_out * width];
        for (co, &b) in self.data(bias).iter().enumerate() {
            tmp[co * width..(co + 1) * width].fill(b);
        }
        gemm(
            MatRef::row_major(self.data(kernel), geom.c_out, geom.c_in * 9),
            MatRef::row_major(&cols, geom.c_in * 9, width),
            1.0,
            &mut tmp,
        );
        let mut out = vec![0.0; geom.c_out * width];
        for j in 0..geom.batch {
            for co in 0..geom.c_out {
                let dst = (j * geom.c_out + co) * plane;
                let src = co * width + j * plane;
                out[dst..dst + plane].copy_from_slice(&tmp[src..src + plane]);
            }
        }
        let rg = self.grad_flag(x) || self.grad_flag(kernel) || self.grad_flag(bias);
        let value = Tensor::new(&[geom.batch, geom.c_out, geom.side, geom.side], out)?;
        self.push(value, Op::Conv3x3 { x, kernel, bias, cols, geom }, rg)
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = map_values(self.value(x), |v| v.max(0.0));
        let rg = self.grad_flag(x);
        self.push(value, Op::Relu(x), rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<'a>, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (sa, sb) = (*self.shape(a), *self.shape(b));
        if sa != sb {
            return Err(Error::dim(format!("{}: shapes {:?} and {:?} differ", op.name(), sa.dims(), sb.dims())));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.grad_flag(a) || self.grad_flag(b);
        self.push(Tensor::from_parts(sa, data), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = map_values(self.value(x), |v| v * c);
        let rg = self.grad_flag(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = map_values(self.value(x), |v| v * v);
        let rg = self.grad_flag(x);
        self.push(value, Op::Square(x), rg)
    }

    /// Per-row gather: `out[r, i] = x[r, index[i]]`, output rows shaped `row_dims`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, row_dims: &[usize]) -> Result<Var> {
        let xs = *self.shape(x);
        let (rows, width) = (xs.leading(), xs.row_len());
        if row_dims.iter().product::<usize>() != index.len() {
            return Err(Error::dim(format!("gather row shape {:?} does not hold {} entries", row_dims, index.len())));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= width) {
            return Err(Error::dim(format!("gather index {} out of row width {}", bad, width)));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(rows * index.len());
        for r in 0..rows {
            let row = &src[r * width..(r + 1) * width];
            data.extend(index.iter().map(|&i| row[i]));
        }
        let mut dims = vec![rows];
        dims.extend_from_slice(row_dims);
        let rg = self.grad_flag(x);
        self.push(Tensor::new(&dims, data)?, Op::Gather { x, index }, rg)
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(dims)?;
        let rg = self.grad_flag(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Repeats `x` along a new leading axis of extent `rows`.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let src = self.value(x);
        let mut dims = vec![rows];
        dims.extend_from_slice(src.dims());
        if dims.len() > crate::tensor::MAX_RANK {
            return Err(Error::dim("broadcast_rows would exceed the maximal rank"));
        }
        let mut data = Vec::with_capacity(rows * src.data().len());
        for _ in 0..rows {
            data.extend_from_slice(src.data());
        }
        let rg = self.grad_flag(x);
        self.push(Tensor::new(&dims, data)?, Op::BroadcastRows(x), rg)
    }

    /// Row-wise inner product, `[rows, n] x [rows, n] -> [rows, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (*self.shape(a), *self.shape(b));
        if sa.leading() != sb.leading() || sa.row_len() != sb.row_len() {
            return Err(Error::dim(format!("row_dot: shapes {:?} and {:?} differ", sa.dims(), sb.dims())));
        }
        let n = sa.row_len();
        let data = self
            .data(a)
            .chunks_exact(n.max(1))
            .zip(self.data(b).chunks_exact(n.max(1)))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        let rg = self.grad_flag(a) || self.grad_flag(b);
        self.push(Tensor::new(&[sa.leading(), 1], data)?, Op::RowDot(a, b), rg)
    }

    /// Row-wise matrix-vector product: each row of `matrix` holds a row-major
    /// `n x n` matrix, each row of `vector` an `n`-vector.
    pub fn batch_matvec(&mut self, matrix: Var, vector: Var) -> Result<Var> {
        let (sm, sv) = (*self.shape(matrix), *self.shape(vector));
        let n = sv.row_len();
        if sm.leading() != sv.leading() || sm.row_len() != n * n {
            return Err(Error::dim(format!(
                "batch_matvec: matrix rows {:?} do not match vector rows {:?}",
                sm.dims(),
                sv.dims()
            )));
        }
        let rows = sv.leading();
        let (m, v) = (self.data(matrix), self.data(vector));
        let mut data = vec![0.0; rows * n];
        for r in 0..rows {
            let mr = &m[r * n * n..(r + 1) * n * n];
            let vr = &v[r * n..(r + 1) * n];
            for (i, out) in data[r * n..(r + 1) * n].iter_mut().enumerate() {
                *out = mr[i * n..(i + 1) * n].iter().zip(vr).map(|(a, b)| a * b).sum();
            }
        }
        let rg = self.grad_flag(matrix) || self.grad_flag(vector);
        self.push(Tensor::new(&[rows, n], data)?, Op::BatchMatVec { matrix, vector }, rg)
    }

    /// Applies `f` to every row of the inputs, producing `[rows, 1]`.
    pub fn row_map(&mut self, f: Box<dyn RowFunction + 'a>, inputs: &[Var]) -> Result<Var> {
        let rows = inputs
            .first()
            .map(|&v| self.shape(v).leading())
            .ok_or_else(|| Error::Usage("row_map needs at least one input".into()))?;
        if inputs.iter().any(|&v| self.shape(v).leading() != rows) {
            return Err(Error::dim("row_map inputs disagree on the number of rows"));
        }
        let widths: Vec<usize> = inputs.iter().map(|&v| self.shape(v).row_len()).collect();
        let mut data = Vec::with_capacity(rows);
        let mut slices: Vec<&[f64]> = Vec::with_capacity(inputs.len());
        for r in 0..rows {
            slices.clear();
            for (&v, &w) in inputs.iter().zip(&widths) {
                slices.push(&self.data(v)[r * w..(r + 1) * w]);
            }
            data.push(f.eval(r, &slices));
        }
        let rg = inputs.iter().any(|&v| self.grad_flag(v));
        self.push(Tensor::new(&[rows, 1], data)?, Op::RowMap { f, inputs: inputs.to_vec() }, rg)
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        if d.is_empty() {
            return Err(Error::Usage("mean of an empty tensor".into()));
        }
        let m = pairwise_sum(d) / d.len() as f64;
        let rg = self.grad_flag(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss is not a node of this tape".into()));
        }
        if !self.shape(loss).is_scalar() {
            return Err(Error::Usage(format!("loss must be scalar, got shape {:?}", self.shape(loss).dims())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut theta = vec![0.0; self.theta.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads, &mut theta);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { theta, nodes: grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>], theta: &mut [f64]) {
        match &node.op {
            Op::Constant => {}
            Op::Param { offset } => {
                for (t, v) in theta[*offset..*offset + g.len()].iter_mut().zip(g) {
                    *t += v;
                }
            }
            Op::Affine { x, weight, bias } => {
                let xs = self.shape(*x);
                let (rows, l) = (xs.leading(), xs.row_len());
                let k = self.shape(*bias).len();
                if self.grad_flag(*x) {
                    let w = self.data(*weight);
                    let gx = slot(grads, *x, rows * l);
                    gemm(MatRef::row_major(g, rows, k), MatRef::row_major(w, k, l), 1.0, gx);
                }
                if self.grad_flag(*weight) {
                    let xv = self.data(*x);
                    let gw = slot(grads, *weight, k * l);
                    gemm(MatRef::transposed(g, rows, k), MatRef::row_major(xv, rows, l), 1.0, gw);
                }
                if self.grad_flag(*bias) {
                    let gb = slot(grads, *bias, k);
                    for row in g.chunks_exact(k) {
                        for (b, v) in gb.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
            }
            Op::Conv3x3 { x, kernel, bias, cols, geom } => {
                let (plane, width, cin9) = (geom.plane(), geom.batch * geom.plane(), geom.c_in * 9);
                let mut gt = vec![0.0; geom.c_out * width];
                for j in 0..geom.batch {
                    for co in 0..geom.c_out {
                        let src = (j * geom.c_out + co) * plane;
                        let dst = co * width + j * plane;
                        gt[dst..dst + plane].copy_from_slice(&g[src..src + plane]);
                    }
                }
                if self.grad_flag(*bias) {
                    let gb = slot(grads, *bias, geom.c_out);
                    for (b, row) in gb.iter_mut().zip(gt.chunks_exact(width)) {
                        *b += pairwise_sum(row);
                    }
                }
                if self.grad_flag(*kernel) {
                    let gk = slot(grads, *kernel, geom.c_out * cin9);
                    gemm(
                        MatRef::row_major(&gt, geom.c_out, width),
                        MatRef::transposed(cols, cin9, width),
                        1.0,
                        gk,
                    );
                }
                if self.grad_flag(*x) {
                    let mut gcols = vec![0.0; cin9 * width];
                    gemm(
                        MatRef::transposed(self.data(*kernel), geom.c_out, cin9),
                        MatRef::row_major(&gt, geom.c_out, width),
                        0.0,
                        &mut gcols,
                    );
                    let gx = slot(grads, *x, geom.batch * geom.c_in * plane);
                    col2im_add(&gcols, *geom, gx);
                }
            }
            Op::Relu(x) => {
                let xv = self.data(*x);
                let gx = slot(grads, *x, g.len());
                for ((o, &v), &u) in gx.iter_mut().zip(xv).zip(g) {
                    if v > 0.0 {
                        *o += u;
                    }
                }
            }
            Op::Add(a, b) => {
                add_scaled(grads, *a, g, 1.0, self.grad_flag(*a));
                add_scaled(grads, *b, g, 1.0, self.grad_flag(*b));
            }
            Op::Sub(a, b) => {
                add_scaled(grads, *a, g, 1.0, self.grad_flag(*a));
                add_scaled(grads, *b, g, -1.0, self.grad_flag(*b));
            }
            Op::Mul(a, b) => {
                if self.grad_flag(*a) {
                    let bv = self.data(*b);
                    let ga = slot(grads, *a, g.len());
                    for ((o, &u), &v) in ga.iter_mut().zip(g).zip(bv) {
                        *o += u * v;
                    }
                }
                if self.grad_flag(*b) {
                    let av = self.data(*a);
                    let gb = slot(grads, *b, g.len());
                    for ((o, &u), &v) in gb.iter_mut().zip(g).zip(av) {
                        *o += u * v;
                    }
                }
            }
            Op::Scale(x, c) => add_scaled(grads, *x, g, *c, true),
            Op::Square(x) => {
                let xv = self.data(*x);
                let gx = slot(grads, *x, g.len());
                for ((o, &u), &v) in gx.iter_mut().zip(g).zip(xv) {
                    *o += 2.0 * v * u;
                }
            }
            Op::Gather { x, index } => {
                let xs = self.shape(*x);
                let (rows, width) = (xs.leading(), xs.row_len());
                let gx = slot(grads, *x, rows * width);
                for (r, grow) in g.chunks_exact(index.len().max(1)).enumerate().take(rows) {
                    let dst = &mut gx[r * width..(r + 1) * width];
                    for (&i, &u) in index.iter().zip(grow) {
                        dst[i] += u;
                    }
                }
            }
            Op::Reshape(x) => add_scaled(grads, *x, g, 1.0, true),
            Op::BroadcastRows(x) => {
                let n = self.shape(*x).len();
                let gx = slot(grads, *x, n);
                for row in g.chunks_exact(n) {
                    for (o, v) in gx.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            Op::RowDot(a, b) => {
                let n = self.shape(*a).row_len();
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if !self.grad_flag(this) {
                        continue;
                    }
                    let ov = self.data(other);
                    let gt = slot(grads, this, g.len() * n);
                    for (r, &u) in g.iter().enumerate() {
                        for (o, &v) in gt[r * n..(r + 1) * n].iter_mut().zip(&ov[r * n..(r + 1) * n]) {
                            *o += u * v;
                        }
                    }
                }
            }
            Op::BatchMatVec { matrix, vector } => {
                let n = self.shape(*vector).row_len();
                let rows = self.shape(*vector).leading();
                if self.grad_flag(*matrix) {
                    let v = self.data(*vector);
                    let gm = slot(grads, *matrix, rows * n * n);
                    for r in 0..rows {
                        let vr = &v[r * n..(r + 1) * n];
                        for i in 0..n {
                            let u = g[r * n + i];
                            let dst = &mut gm[(r * n + i) * n..(r * n + i + 1) * n];
                            for (o, &vj) in dst.iter_mut().zip(vr) {
                                *o += u * vj;
                            }
                        }
                    }
                }
                if self.grad_flag(*vector) {
                    let m = self.data(*matrix);
                    let gv = slot(grads, *vector, rows * n);
                    for r in 0..rows {
                        for i in 0..n {
                            let u = g[r * n + i];
                            let mrow = &m[(r * n + i) * n..(r * n + i + 1) * n];
                            for (o, &mij) in gv[r * n..(r + 1) * n].iter_mut().zip(mrow) {
                                *o += u * mij;
                            }
                        }
                    }
                }
            }
            Op::RowMap { f, inputs } => {
                let widths: Vec<usize> = inputs.iter().map(|&v| self.shape(v).row_len()).collect();
                let mut local: Vec<Vec<f64>> = inputs.iter().map(|&v| vec![0.0; self.shape(v).len()]).collect();
                let mut slices: Vec<&[f64]> = Vec::with_capacity(inputs.len());
                for (r, &u) in g.iter().enumerate() {
                    slices.clear();
                    for (&v, &w) in inputs.iter().zip(&widths) {
                        slices.push(&self.data(v)[r * w..(r + 1) * w]);
                    }
                    let mut outs: Vec<&mut [f64]> = local
                        .iter_mut()
                        .zip(&widths)
                        .map(|(buf, &w)| &mut buf[r * w..(r + 1) * w])
                        .collect();
                    f.vjp(r, &slices, u, &mut outs);
                }
                for (&v, buf) in inputs.iter().zip(&local) {
                    add_scaled(grads, v, buf, 1.0, self.grad_flag(v));
                }
            }
            Op::Mean(x) => {
                let n = self.shape(*x).len();
                let gx = slot(grads, *x, n);
                let u = g[0] / n as f64;
                for o in gx.iter_mut() {
                    *o += u;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_scaled(grads: &mut [Option<Vec<f64>>], var: Var, g: &[f64], c: f64, needed: bool) {
    if !needed {
        return;
    }
    let dst = slot(grads, var, g.len());
    for (o, v) in dst.iter_mut().zip(g) {
        *o += c * v;
    }
}

fn map_values(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(*t.shape(), t.data().iter().map(|&v| f(v)).collect())
}

/// Sum with pairwise (cascade) splitting, so the result does not depend on
/// how a caller chunks the input.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Rows are `(channel, ky, kx)`, columns `(sample, y, x)`.
/// For each of the nine taps, the `(output pixel, input pixel)` pairs that
/// fall inside the zero-padded image.
fn tap_pairs(side: usize) -> [Vec<(usize, usize)>; 9] {
    let s = side as isize;
    core::array::from_fn(|tap| {
        let (dy, dx) = ((tap / 3) as isize - 1, (tap % 3) as isize - 1);
        let mut pairs = Vec::new();
        for r in 0..s {
            for c in 0..s {
                let (sr, sc) = (r + dy, c + dx);
                if (0..s).contains(&sr) && (0..s).contains(&sc) {
                    pairs.push(((r * s + c) as usize, (sr * s + sc) as usize));
                }
            }
        }
        pairs
    })
}

fn im2col(x: &[f64], geom: ConvGeom) -> Vec<f64> {
    let plane = geom.plane();
    let width = geom.batch * plane;
    let taps = tap_pairs(geom.side);
    let mut cols = vec![0.0; geom.c_in * 9 * width];
    for ci in 0..geom.c_in {
        for (tap, pairs) in taps.iter().enumerate() {
            let row = &mut cols[(ci * 9 + tap) * width..][..width];
            for (j, out) in row.chunks_exact_mut(plane).enumerate() {
                let src = &x[(j * geom.c_in + ci) * plane..][..plane];
                for &(p, q) in pairs {
                    out[p] = src[q];
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], geom: ConvGeom, gx: &mut [f64]) {
    let plane = geom.plane();
    let width = geom.batch * plane;
    let taps = tap_pairs(geom.side);
    for ci in 0..geom.c_in {
        for (tap, pairs) in taps.iter().enumerate() {
            let row = &cols[(ci * 9 + tap) * width..][..width];
            for (j, src) in row.chunks_exact(plane).enumerate() {
                let dst = &mut gx[(j * geom.c_in + ci) * plane..][..plane];
                for &(p, q) in pairs {
                    dst[q] += src[p];
                }
            }
        }
    }
}
