//! Straight-line reference evaluators for the network tests. They read θ by
//! walking the documented layout order by hand and never touch the tape.

use alloc::vec;
use alloc::vec::Vec;

use super::{AffineBlock, CnnSpec, MultiscaleSpec};

struct Reader<'a> {
    theta: &'a [f64],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [f64] {
        let s = &self.theta[self.pos..self.pos + n];
        self.pos += n;
        s
    }
}

fn affine(p: &[f64], q: &[f64], x: &[f64]) -> Vec<f64> {
    let l = x.len();
    (0..q.len()).map(|i| q[i] + (0..l).map(|j| p[i * l + j] * x[j]).sum::<f64>()).collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// One fully connected branch `d → d_i → d_i → out`.
pub fn branch(theta: &[f64], blocks: &[AffineBlock; 3], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, b) in blocks.iter().enumerate() {
        h = affine(&theta[b.weight.range()], &theta[b.bias.range()], &h);
        if i < 2 {
            h = relu(h);
        }
    }
    h
}

pub fn multiscale(spec: &MultiscaleSpec, theta: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = spec.dim;
    let mut r = Reader { theta, pos: (d + 1) * (d + 1) };
    let mut net = |out: usize| {
        // Blocks are stored layer-major: all first layers, then all second, then all third.
        let mut layers: Vec<Vec<(&[f64], &[f64])>> = Vec::new();
        for layer in 0..3 {
            let mut row = Vec::new();
            for &di in &spec.scales {
                let (k, l) = match layer {
                    0 => (di, d),
                    1 => (di, di),
                    _ => (out, di),
                };
                let p = r.take(k * l);
                let q = r.take(k);
                row.push((p, q));
            }
            layers.push(row);
        }
        let mut sum = vec![0.0; out];
        for b in 0..4 {
            let h = relu(affine(layers[0][b].0, layers[0][b].1, x));
            let h = relu(affine(layers[1][b].0, layers[1][b].1, &h));
            let o = affine(layers[2][b].0, layers[2][b].1, &h);
            for (s, v) in sum.iter_mut().zip(o) {
                *s += v / 4.0;
            }
        }
        sum
    };
    let a = net(d);
    let g = net(d * d);
    (a, g)
}

/// Direct 3x3 convolution with zero padding, input `[c_in][s][s]`.
fn conv(kernel: &[f64], bias: &[f64], input: &[Vec<f64>], s: usize) -> Vec<Vec<f64>> {
    let c_in = input.len();
    (0..bias.len())
        .map(|co| {
            let mut out = vec![bias[co]; s * s];
            for r in 0..s {
                for c in 0..s {
                    for ci in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (rr, cc) = (r as isize + ky as isize - 1, c as isize + kx as isize - 1);
                                if rr < 0 || cc < 0 || rr >= s as isize || cc >= s as isize {
                                    continue;
                                }
                                let w = kernel[((co * c_in + ci) * 3 + ky) * 3 + kx];
                                out[r * s + c] += w * input[ci][rr as usize * s + cc as usize];
                            }
                        }
                    }
                }
            }
            out
        })
        .collect()
}

pub fn cnn(spec: &CnnSpec, theta: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (d, c) = (spec.dim, spec.channels);
    let s = (1..=d).find(|k| k * k == d).expect("square dimension");
    let mut r = Reader { theta, pos: (d + 1) * (d + 1) };
    let mut net = |out: usize, final_relu: bool| {
        // Z[row][col] = x[col * s + row]
        let mut z = vec![0.0; d];
        for row in 0..s {
            for col in 0..s {
                z[row * s + col] = x[col * s + row];
            }
        }
        let mut h = vec![z];
        for (layer, (c_out, c_in)) in [(c, 1), (c, c), (1, c)].into_iter().enumerate() {
            let k = r.take(c_out * c_in * 9);
            let b = r.take(c_out);
            h = conv(k, b, &h, s);
            if layer < 2 || final_relu {
                h = h.into_iter().map(relu).collect();
            }
        }
        let mut flat = vec![0.0; d];
        for row in 0..s {
            for col in 0..s {
                flat[col * s + row] = h[0][row * s + col];
            }
        }
        let p = r.take(out * d);
        let q = r.take(out);
        affine(p, q, &flat)
    };
    let a = net(d, true);
    let g = net(d * d, false);
    (a, g)
}
