//! Backend-agnostic primitive set used to write the model forward pass once.
//!
//! [`Eval`] computes plain matrices; [`crate::numerics::Tape`] computes the
//! same values through the same kernels while recording them for reverse
//! mode. Both paths therefore produce bitwise-identical forward values.

use super::matrix::{self, Matrix};

pub trait Ops {
    type M: Clone;

    fn value<'a>(&'a self, x: &'a Self::M) -> &'a Matrix;

    fn matmul(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    /// `a · bᵀ`
    fn matmul_nt(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    fn add(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    /// Broadcast-adds a `1×n` row to every row of `a`.
    fn add_row(&mut self, a: &Self::M, bias: &Self::M) -> Self::M;
    fn scale(&mut self, a: &Self::M, s: f64) -> Self::M;
    fn gelu(&mut self, a: &Self::M) -> Self::M;
    fn layer_norm(&mut self, x: &Self::M, gain: &Self::M, bias: &Self::M, eps: f64) -> Self::M;
    fn masked_softmax(&mut self, a: &Self::M, mask: &[bool]) -> Self::M;
    fn slice_cols(&mut self, a: &Self::M, start: usize, len: usize) -> Self::M;
    fn concat_cols(&mut self, parts: &[Self::M]) -> Self::M;
    fn row(&mut self, a: &Self::M, r: usize) -> Self::M;
    /// Token plus positional embedding lookup; rows where `mask` is false are zero.
    fn embed(&mut self, tokens: &Self::M, positions: &Self::M, ids: &[usize], mask: &[bool]) -> Self::M;
}

/// Plain forward evaluation, no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

pub(crate) fn slice_cols(a: &Matrix, start: usize, len: usize) -> Matrix {
    assert!(start + len <= a.cols(), "slice_cols out of range");
    let mut out = Vec::with_capacity(a.rows() * len);
    for r in 0..a.rows() {
        out.extend_from_slice(&a.row(r)[start..start + len]);
    }
    Matrix::from_raw(a.rows(), len, out)
}

pub(crate) fn concat_cols(parts: &[&Matrix]) -> Matrix {
    let rows = parts[0].rows();
    assert!(parts.iter().all(|p| p.rows() == rows), "concat_cols rows");
    let cols = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    Matrix::from_raw(rows, cols, out)
}

pub(crate) fn embed(tokens: &Matrix, positions: &Matrix, ids: &[usize], mask: &[bool]) -> Matrix {
    assert_eq!(ids.len(), mask.len(), "ids/mask length");
    assert!(ids.len() <= positions.rows(), "sequence longer than positional table");
    let h = tokens.cols();
    let mut out = Matrix::zeros(ids.len(), h);
    for (i, (&id, &live)) in ids.iter().zip(mask).enumerate() {
        if live {
            let dst = out.row_mut(i);
            for ((o, t), p) in dst.iter_mut().zip(tokens.row(id)).zip(positions.row(i)) {
                *o = t + p;
            }
        }
    }
    out
}

impl Ops for Eval {
    type M = Matrix;

    fn value<'a>(&'a self, x: &'a Matrix) -> &'a Matrix {
        x
    }

    fn matmul(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        matrix::mm(a, b)
    }

    fn matmul_nt(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        matrix::mm_nt(a, b)
    }

    fn add(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        matrix::add(a, b)
    }

    fn add_row(&mut self, a: &Matrix, bias: &Matrix) -> Matrix {
        matrix::add_row(a, bias)
    }

    fn scale(&mut self, a: &Matrix, s: f64) -> Matrix {
        matrix::scale(a, s)
    }

    fn gelu(&mut self, a: &Matrix) -> Matrix {
        let data = a.data().iter().map(|&x| matrix::gelu(x)).collect();
        Matrix::from_raw(a.rows(), a.cols(), data)
    }

    fn layer_norm(&mut self, x: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Matrix {
        matrix::layer_norm_rows(x, gain, bias, eps)
    }

    fn masked_softmax(&mut self, a: &Matrix, mask: &[bool]) -> Matrix {
        matrix::masked_softmax_rows(a, mask)
    }

    fn slice_cols(&mut self, a: &Matrix, start: usize, len: usize) -> Matrix {
        slice_cols(a, start, len)
    }

    fn concat_cols(&mut self, parts: &[Matrix]) -> Matrix {
        concat_cols(&parts.iter().collect::<Vec<_>>())
    }

    fn row(&mut self, a: &Matrix, r: usize) -> Matrix {
        Matrix::row_vector(a.row(r).to_vec())
    }

    fn embed(&mut self, tokens: &Matrix, positions: &Matrix, ids: &[usize], mask: &[bool]) -> Matrix {
        embed(tokens, positions, ids, mask)
    }
}
