//! p-Identity strategies `A(Θ) = [I; Θ]·D`, `D = diag(1 + 1ᵀΘ)⁻¹`.
//!
//! Every column of `A(Θ)` has L1 norm one, and `(AᵀA)⁻¹` has the closed form
//! `Δ (I − Θᵀ R⁻¹ Θ) Δ` with `Δ = D⁻¹` and `R = I + ΘΘᵀ`, so the objective and
//! its gradient cost O(p·n²) instead of O(n³).

use nalgebra::Cholesky;

use crate::linalg::Matrix;

/// Column scales `δⱼ = 1 + Σₖ Θₖⱼ`.
fn deltas(theta: &Matrix) -> Vec<f64> {
    (0..theta.ncols()).map(|j| 1.0 + theta.column(j).sum()).collect()
}

/// `B = R⁻¹Θ`.
fn r_inv_theta(theta: &Matrix) -> Matrix {
    let p = theta.nrows();
    let r = Matrix::identity(p, p) + theta * theta.transpose();
    let chol = Cholesky::new(r).expect("I + ΘΘᵀ is positive definite");
    chol.solve(theta)
}

/// Materializes `A(Θ)`, `(n + p) × n`.
pub fn pidentity_matrix(theta: &Matrix) -> Matrix {
    let (p, n) = theta.shape();
    let delta = deltas(theta);
    let mut a = Matrix::zeros(n + p, n);
    for j in 0..n {
        a[(j, j)] = 1.0 / delta[j];
        for k in 0..p {
            a[(n + k, j)] = theta[(k, j)] / delta[j];
        }
    }
    a
}

/// `tr[(A(Θ)ᵀA(Θ))⁻¹ G]` and its gradient with respect to Θ.
pub fn objective_pidentity(theta: &Matrix, gram: &Matrix) -> (f64, Matrix) {
    let delta = deltas(theta);
    let n = theta.ncols();
    // G̃ = Δ G Δ.
    let gt = Matrix::from_fn(n, n, |i, j| delta[i] * gram[(i, j)] * delta[j]);
    let b = r_inv_theta(theta);
    let bg = &b * &gt;
    let value = gt.trace() - theta.component_mul(&bg).sum();
    // ∂/∂Θ with Δ fixed: −2(BG̃ − BG̃ΘᵀB).
    let mut grad = (&bg * theta.transpose() * &b - &bg) * 2.0;
    // Chain through δ: 2·diag(MG̃)ⱼ/δⱼ added to every row of column j.
    for j in 0..n {
        let diag = gt[(j, j)] - theta.column(j).dot(&bg.column(j));
        let add = 2.0 * diag / delta[j];
        grad.column_mut(j).add_scalar_mut(add);
    }
    (value, grad)
}

/// `A(Θ)⁺·y` without forming the pseudo-inverse: `Δ M (y_top + Θᵀ y_bottom)`.
pub fn pidentity_pinv_apply(theta: &Matrix, y: &[f64]) -> Vec<f64> {
    let (p, n) = theta.shape();
    assert_eq!(y.len(), n + p, "measurement length");
    let delta = deltas(theta);
    let top = crate::linalg::Vector::from_column_slice(&y[..n]);
    let bottom = crate::linalg::Vector::from_column_slice(&y[n..]);
    let z = top + theta.transpose() * bottom;
    let b = r_inv_theta(theta);
    let mz = &z - theta.transpose() * (&b * &z);
    mz.iter().zip(&delta).map(|(v, d)| v * d).collect()
}

/// Recovers Θ when `a` has p-Identity structure: a positive diagonal top
/// block with each column scaled so the column sums are one.
pub fn detect_pidentity(a: &Matrix) -> Option<Matrix> {
    let (m, n) = a.shape();
    if m < n {
        return None;
    }
    for j in 0..n {
        if !(a[(j, j)] > 0.0) {
            return None;
        }
        for i in 0..n {
            if i != j && a[(i, j)] != 0.0 {
                return None;
            }
        }
        let col = a.column(j);
        if col.iter().any(|v| *v < 0.0) || (col.sum() - 1.0).abs() > 1e-9 {
            return None;
        }
    }
    let p = m - n;
    Some(Matrix::from_fn(p, n, |k, j| a[(n + k, j)] / a[(j, j)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pinv, Vector};
    use crate::optimize::dense::objective_dense;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_theta(rng: &mut SplitMix64, p: usize, n: usize) -> Matrix {
        Matrix::from_fn(p, n, |_, _| rng.next_f64())
    }

    fn random_gram(rng: &mut SplitMix64, n: usize) -> Matrix {
        let w = Matrix::from_fn(n + 3, n, |_, _| rng.next_f64() - 0.3);
        w.transpose() * w
    }

    #[test]
    fn zero_theta_is_identity() {
        let mut rng = SplitMix64::new(1);
        let g = random_gram(&mut rng, 6);
        let (v, _) = objective_pidentity(&Matrix::zeros(2, 6), &g);
        assert!((v - g.trace()).abs() < 1e-12);
        assert_eq!(pidentity_matrix(&Matrix::zeros(2, 6)).rows(0, 6), Matrix::identity(6, 6));
    }

    #[test]
    fn unit_sensitivity() {
        let mut rng = SplitMix64::new(2);
        let a = pidentity_matrix(&random_theta(&mut rng, 3, 7));
        for j in 0..7 {
            assert!((a.column(j).sum() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn all_ones_row_on_identity_workload() {
        let n = 5;
        let theta = Matrix::from_element(1, n, 1.0);
        let (fast, _) = objective_pidentity(&theta, &Matrix::identity(n, n));
        let dense = objective_dense(&pidentity_matrix(&theta), &Matrix::identity(n, n));
        assert!((fast - dense).abs() < 1e-10 * dense);
    }

    #[test]
    fn large_instance_matches_dense() {
        let mut rng = SplitMix64::new(3);
        let theta = random_theta(&mut rng, 4, 64);
        let g = random_gram(&mut rng, 64);
        let (fast, _) = objective_pidentity(&theta, &g);
        let dense = objective_dense(&pidentity_matrix(&theta), &g);
        assert!((fast - dense).abs() < 1e-8 * dense);
    }

    #[test]
    fn implicit_pseudo_inverse() {
        let mut rng = SplitMix64::new(4);
        let theta = random_theta(&mut rng, 4, 32);
        let a = pidentity_matrix(&theta);
        let y: Vec<f64> = (0..36).map(|_| rng.next_f64() * 10.0 - 5.0).collect();
        let fast = pidentity_pinv_apply(&theta, &y);
        let dense = pinv(&a) * Vector::from_column_slice(&y);
        for (x, d) in fast.iter().zip(dense.iter()) {
            assert!((x - d).abs() < 1e-8);
        }
    }

    #[test]
    fn structure_detection() {
        let mut rng = SplitMix64::new(5);
        let theta = random_theta(&mut rng, 2, 5);
        let back = detect_pidentity(&pidentity_matrix(&theta)).unwrap();
        assert!((back - theta).amax() < 1e-12);
        assert!(detect_pidentity(&crate::linalg::ones(3, 3)).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gradient_matches_finite_differences(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let p = 1 + rng.below(3) as usize;
            let n = 2 + rng.below(8) as usize;
            let theta = random_theta(&mut rng, p, n);
            let g = random_gram(&mut rng, n);
            let (v, grad) = objective_pidentity(&theta, &g);
            let dense = objective_dense(&pidentity_matrix(&theta), &g);
            prop_assert!((v - dense).abs() < 1e-8 * dense);
            for k in 0..p {
                for j in 0..n {
                    let h = 1e-5;
                    let mut tp = theta.clone();
                    tp[(k, j)] += h;
                    let mut tm = theta.clone();
                    tm[(k, j)] -= h;
                    let fd = (objective_pidentity(&tp, &g).0 - objective_pidentity(&tm, &g).0) / (2.0 * h);
                    let scale = grad.amax().max(1e-12);
                    prop_assert!((fd - grad[(k, j)]).abs() < 1e-4 * scale, "{} vs {}", fd, grad[(k, j)]);
                }
            }
        }
    }
}
