//! Dense reference objective `tr[(AᵀA)⁺ WᵀW]` and its gradient.

use crate::linalg::{gram_rcond, pinv_sym, trace_of_product, Matrix};

pub fn objective_dense(a: &Matrix, gram_w: &Matrix) -> f64 {
    trace_of_product(&pinv_sym(&(a.transpose() * a), gram_rcond(a.ncols())), gram_w)
}

/// `∂C/∂A = −2·A·(AᵀA)⁺ WᵀW (AᵀA)⁺`.
pub fn gradient_dense(a: &Matrix, gram_w: &Matrix) -> Matrix {
    let inv = pinv_sym(&(a.transpose() * a), gram_rcond(a.ncols()));
    let x = &inv * gram_w * &inv;
    a * x * -2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::rng::SplitMix64;

    #[test]
    fn objective_examples() {
        let i = Matrix::identity(4, 4);
        assert!((objective_dense(&i, &i) - 4.0).abs() < 1e-12);
        assert!((objective_dense(&(&i * 2.0), &i) - 1.0).abs() < 1e-12);
        let p = from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!((objective_dense(&p, &(p.transpose() * &p)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let i = Matrix::identity(2, 2);
        assert!((gradient_dense(&i, &i) + &i * 2.0).amax() < 1e-12);
        let a = from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let want = from_rows(&[vec![-2.0, 0.0], vec![0.0, -0.25]]).unwrap();
        assert!((gradient_dense(&a, &i) - want).amax() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(8);
        for _ in 0..5 {
            let a = Matrix::from_fn(6, 4, |_, _| rng.next_f64() + 0.1);
            let w = Matrix::from_fn(5, 4, |_, _| rng.next_f64());
            let g = w.transpose() * w;
            let grad = gradient_dense(&a, &g);
            for r in 0..6 {
                for c in 0..4 {
                    let h = 1e-5;
                    let mut ap = a.clone();
                    ap[(r, c)] += h;
                    let mut am = a.clone();
                    am[(r, c)] -= h;
                    let fd = (objective_dense(&ap, &g) - objective_dense(&am, &g)) / (2.0 * h);
                    assert!((fd - grad[(r, c)]).abs() < 1e-4 * grad.amax());
                }
            }
        }
    }

    #[test]
    fn orthogonal_invariance_of_gradient_norm() {
        let mut rng = SplitMix64::new(9);
        let a = Matrix::from_fn(4, 3, |_, _| rng.next_f64() + 0.1);
        let g = Matrix::identity(3, 3);
        let q = nalgebra::linalg::QR::new(Matrix::from_fn(4, 4, |_, _| rng.next_f64())).q();
        let n1 = gradient_dense(&a, &g).norm();
        let n2 = gradient_dense(&(q * &a), &g).norm();
        assert!((n1 - n2).abs() < 1e-9 * n1);
    }
}
