//! Dense row-major `f64` tensors of rank at most four.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; MAX_RANK],
    rank: usize,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() > MAX_RANK {
            return Err(Error::dim(format!("rank {} exceeds {}", dims.len(), MAX_RANK)));
        }
        let mut out = [1; MAX_RANK];
        out[..dims.len()].copy_from_slice(dims);
        Ok(Shape { dims: out, rank: dims.len() })
    }

    pub fn scalar() -> Self {
        Shape { dims: [1; MAX_RANK], rank: 0 }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank]
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Extent of the leading axis (1 for scalars).
    pub fn leading(&self) -> usize {
        if self.rank == 0 {
            1
        } else {
            self.dims[0]
        }
    }

    /// Number of elements per leading-axis slice.
    pub fn row_len(&self) -> usize {
        self.dims().iter().skip(1).product()
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.len() != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} holds {} values, got {}",
                dims,
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Ok(Tensor { data: vec![0.0; shape.len()], shape })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: Shape { dims: [data.len(), 1, 1, 1], rank: 1 }, data }
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Integer square root of `d` if `d` is a perfect square.
pub fn exact_sqrt(d: usize) -> Option<usize> {
    let mut s = (d as f64).sqrt() as usize;
    while s * s > d {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= d {
        s += 1;
    }
    (s * s == d).then_some(s)
}

/// Index map for the column-major fill `Z[r][c] = x[c * side + r]`, listed in
/// row-major order of `Z`. The map is the transpose of a `side x side` grid,
/// so it is its own inverse.
pub fn square_fill_index(side: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            idx.push(c * side + r);
        }
    }
    idx
}

/// Lays a `d`-vector out as a `1 x sqrt(d) x sqrt(d)` tensor, column-major.
pub fn reshape_vec_to_square(x: &[f64]) -> Result<Tensor> {
    let side = exact_sqrt(x.len())
        .ok_or_else(|| Error::config(format!("dimension {} is not a perfect square", x.len())))?;
    let data = square_fill_index(side).into_iter().map(|i| x[i]).collect();
    Tensor::new(&[1, side, side], data)
}

/// Inverse of [`reshape_vec_to_square`].
pub fn reshape_square_to_vec(z: &Tensor) -> Result<Vec<f64>> {
    let side = match z.dims() {
        [1, a, b] | [a, b] if a == b => *a,
        dims => return Err(Error::dim(format!("expected a square matrix, got {:?}", dims))),
    };
    // The fill map is an involution, so the same gather inverts it.
    Ok(square_fill_index(side).into_iter().map(|i| z.data()[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shape_product_must_match_data() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::new(&[2, 3], vec![0.0; 5]), Err(Error::Dimension(_))));
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn reshape_fills_columns_first() {
        let z = reshape_vec_to_square(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(z.dims(), &[1, 2, 2]);
        assert_eq!(z.data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn reshape_rejects_non_square() {
        assert!(matches!(reshape_vec_to_square(&[0.0; 5]), Err(Error::Config(_))));
    }

    #[test]
    fn exact_sqrt_small_values() {
        assert_eq!(exact_sqrt(0), Some(0));
        assert_eq!(exact_sqrt(1), Some(1));
        assert_eq!(exact_sqrt(16), Some(4));
        assert_eq!(exact_sqrt(400), Some(20));
        assert_eq!(exact_sqrt(15), None);
    }

    proptest! {
        #[test]
        fn reshape_round_trip(side in 1usize..12, seed in any::<u64>()) {
            let x: Vec<f64> = (0..side * side)
                .map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64) * 0.37 - 100.0)
                .collect();
            let z = reshape_vec_to_square(&x).unwrap();
            prop_assert_eq!(reshape_square_to_vec(&z).unwrap(), x);
        }
    }
}
