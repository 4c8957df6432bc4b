//! Dense row-major `f64` tensors and the handful of kernels the model needs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor, or returns `None` when `data` does not fill `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Option<Self> {
        (shape.iter().product::<usize>() == data.len()).then(|| Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `out = x · W + b` with `W` stored as (in × out).
pub(crate) fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(x.len(), rows);
    let mut out = b.data.clone();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let wr = &w.data[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(wr) {
            *o += xi * wij;
        }
    }
    debug_assert_eq!(out.len(), cols);
    out
}

/// Accumulates `dW += xᵀ g` and `db += g` for one sample of an affine map.
pub(crate) fn accumulate_affine_grad(
    w_grad: &mut Tensor,
    b_grad: &mut Tensor,
    x: &[f64],
    g: &[f64],
) {
    let cols = w_grad.shape[1];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut w_grad.data[i * cols..(i + 1) * cols];
        for (r, &gj) in row.iter_mut().zip(g) {
            *r += xi * gj;
        }
    }
    for (bj, &gj) in b_grad.data.iter_mut().zip(g) {
        *bj += gj;
    }
}

/// `W · g`: the gradient with respect to the input of an affine map.
pub(crate) fn affine_input_grad(w: &Tensor, g: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    (0..rows)
        .map(|i| {
            w.data[i * cols..(i + 1) * cols]
                .iter()
                .zip(g)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_product() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.5, 0.0, -1.0]).unwrap();
        assert_eq!(affine(&[1.0, -1.0], &w, &b), vec![-2.5, -3.0, -4.0]);
        assert_eq!(affine_input_grad(&w, &[1.0, 0.0, 1.0]), vec![4.0, 10.0]);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_none());
    }
}
