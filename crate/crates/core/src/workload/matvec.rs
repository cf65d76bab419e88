//! Kronecker matrix-vector products without materializing the product.

use crate::error::{HdmmError, Result};
use crate::linalg::Matrix;

/// `(F₁ ⊗ … ⊗ F_d)·x`, first factor slowest. Factors may be rectangular.
pub fn kron_matvec(factors: &[Matrix], x: &[f64]) -> Result<Vec<f64>> {
    apply(factors.iter().map(|f| (f, false)), factors.len(), x)
}

/// `(F₁ ⊗ … ⊗ F_d)ᵀ·y`.
pub fn kron_matvec_transpose(factors: &[Matrix], y: &[f64]) -> Result<Vec<f64>> {
    apply(factors.iter().map(|f| (f, true)), factors.len(), y)
}

fn apply<'a, I>(factors: I, d: usize, x: &[f64]) -> Result<Vec<f64>>
where
    I: Iterator<Item = (&'a Matrix, bool)> + Clone,
{
    let dims: Vec<(usize, usize)> = factors
        .clone()
        .map(|(f, t)| if t { (f.ncols(), f.nrows()) } else { (f.nrows(), f.ncols()) })
        .collect();
    let expected: usize = dims.iter().map(|&(_, c)| c).product();
    if x.len() != expected || d == 0 {
        return Err(HdmmError::Shape(format!(
            "vector has length {}, Kronecker product has {expected} columns",
            x.len()
        )));
    }
    // Current tensor shape: transformed dims for axes < i, original for ≥ i.
    let mut cur = x.to_vec();
    let mut shape: Vec<usize> = dims.iter().map(|&(_, c)| c).collect();
    for (i, (f, transposed)) in factors.enumerate() {
        let (rows, cols) = dims[i];
        let pre: usize = shape[..i].iter().product();
        let post: usize = shape[i + 1..].iter().product();
        let mut next = vec![0.0; pre * rows * post];
        let mut col = vec![0.0; cols];
        for p in 0..pre {
            for q in 0..post {
                for (k, c) in col.iter_mut().enumerate() {
                    *c = cur[(p * cols + k) * post + q];
                }
                for r in 0..rows {
                    let mut s = 0.0;
                    for (k, c) in col.iter().enumerate() {
                        let a = if transposed { f[(k, r)] } else { f[(r, k)] };
                        s += a * c;
                    }
                    next[(p * rows + r) * post + q] = s;
                }
            }
        }
        shape[i] = rows;
        cur = next;
    }
    Ok(cur)
}
