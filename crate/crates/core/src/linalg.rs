//! Dense helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{HdmmError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Kronecker product with the first factor varying slowest.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

pub fn kron_all(factors: &[Matrix]) -> Matrix {
    let mut iter = factors.iter();
    let first = iter.next().cloned().unwrap_or_else(|| Matrix::identity(1, 1));
    iter.fold(first, |acc, f| acc.kronecker(f))
}

pub fn ones(rows: usize, cols: usize) -> Matrix {
    Matrix::from_element(rows, cols, 1.0)
}

/// Largest column L1 norm.
pub fn max_col_l1(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest column L2 norm.
pub fn max_col_l2(a: &Matrix) -> f64 {
    a.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn col_l1_norms(a: &Matrix) -> Vec<f64> {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .collect()
}

pub fn col_l2_sq_norms(a: &Matrix) -> Vec<f64> {
    a.column_iter().map(|c| c.norm_squared()).collect()
}

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RCOND: f64 = 1e-10;

// nalgebra's bidiagonal SVD returns wrong factors on a few percent of
// rank-deficient inputs, so everything singular-value based goes through the
// symmetric eigensolver instead.

/// Pseudo-inverse of a symmetric matrix, dropping eigenvalues below
/// `rcond·max|λ|`.
pub fn pinv_sym(s: &Matrix, rcond: f64) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(s));
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let n = s.nrows();
    let mut out = Matrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > rcond * top {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

/// Cutoff for pseudo-inverting a Gram matrix `AᵀA`, whose eigenvalues carry
/// absolute error near `n·ε·λ_max`.
pub fn gram_rcond(n: usize) -> f64 {
    (n as f64 * f64::EPSILON).max(PINV_RCOND * PINV_RCOND)
}

/// Eigen-decomposition of `[[0, A], [Aᵀ, 0]]`, whose eigenvalues are `±σᵢ`.
fn embedded_eigen(a: &Matrix) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let (m, n) = a.shape();
    let mut h = Matrix::zeros(m + n, m + n);
    h.view_mut((0, m), (m, n)).copy_from(a);
    h.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
    SymmetricEigen::new(h)
}

/// Moore–Penrose pseudo-inverse with a relative cutoff of [`PINV_RCOND`].
pub fn pinv(a: &Matrix) -> Matrix {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Matrix::zeros(n, m);
    }
    let eig = embedded_eigen(a);
    let top = eig.eigenvalues.iter().fold(0.0f64, |t, l| t.max(*l));
    let mut out = Matrix::zeros(n, m);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > PINV_RCOND * top {
            // Each half of a unit eigenvector has norm 1/√2.
            let col = eig.eigenvectors.column(k);
            let u = col.rows(0, m);
            let v = col.rows(m, n);
            out += (v * u.transpose()) * (2.0 / l);
        }
    }
    out
}

/// Singular values in descending order, `min(m, n)` of them.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut s: Vec<f64> = embedded_eigen(a).eigenvalues.iter().map(|l| l.max(0.0)).collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s.truncate(m.min(n));
    s
}

/// Eigenvalues of a symmetric matrix (ascending).
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(a)).eigenvalues.iter().cloned().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// `tr(A·B)` without forming the product.
pub fn trace_of_product(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// SVD bound `(1/n)(Σ σ_i)²` of a workload given through its Gram matrix.
pub fn svd_bound_from_gram(gram: &Matrix) -> f64 {
    let ev = sym_eigenvalues(gram);
    let cut = gram_rcond(gram.nrows()) * ev.iter().fold(0.0f64, |m, l| m.max(*l));
    let s: f64 = ev.iter().filter(|&&l| l > cut).map(|l| l.sqrt()).sum();
    s * s / gram.ncols() as f64
}

/// Numerical rank of a symmetric PSD matrix.
pub fn psd_rank(gram: &Matrix) -> usize {
    let ev = sym_eigenvalues(gram);
    let top = ev.iter().cloned().fold(0.0, f64::max);
    let tol = top * 1e-10 * gram.nrows() as f64;
    ev.iter().filter(|&&l| l > tol).count()
}

/// `tr[(AᵀA)⁺ G]`, the unit-sensitivity error of strategy `a` on a workload
/// with Gram matrix `gram`.
pub fn trace_pinv_gram(a: &Matrix, gram: &Matrix) -> f64 {
    let ata = a.transpose() * a;
    trace_of_product(&pinv_sym(&ata, gram_rcond(ata.nrows())), gram)
}

/// Checks `G(I − A⁺A) ≈ 0`, equivalent to `W A⁺ A = W` for any `W` with
/// `WᵀW = G`.
pub fn supports(a: &Matrix, gram: &Matrix, rel_tol: f64) -> bool {
    let proj = pinv(a) * a;
    let resid = gram - gram * proj;
    resid.norm() <= rel_tol * gram.norm().max(f64::MIN_POSITIVE)
}

pub(crate) fn check_square(name: &str, m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(HdmmError::Shape(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Row-major nested lists, the serialized form of every explicit matrix.
pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let m = rows.len();
    if m == 0 {
        return Err(HdmmError::Shape("matrix needs at least one row".into()));
    }
    let n = rows[0].len();
    if n == 0 {
        return Err(HdmmError::Shape("matrix needs at least one column".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != n) {
        return Err(HdmmError::Shape(format!(
            "row {bad} has {} entries, expected {n}",
            rows[bad].len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HdmmError::Shape("matrix entries must be finite".into()));
    }
    Ok(Matrix::from_fn(m, n, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.next_f64() * 2.0 - 1.0)
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn kron_index_order() {
        let i2 = Matrix::identity(2, 2);
        let t2 = ones(1, 2);
        let k = kron(&i2, &t2);
        assert_eq!(to_rows(&k), vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]]);
    }

    #[test]
    fn column_norms() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(max_col_l1(&a), 6.0);
        let k = kron(&a, &ones(2, 1));
        assert_eq!(max_col_l1(&k), 12.0);
    }

    #[test]
    fn kronecker_identities() {
        for seed in 0..5 {
            let a = random(3, 3, seed);
            let b = random(4, 2, seed + 100);
            let c = random(3, 3, seed + 200);
            let d = random(2, 2, seed + 300);
            // (A⊗B)ᵀ = Aᵀ⊗Bᵀ
            assert!(rel(&kron(&a, &b).transpose(), &kron(&a.transpose(), &b.transpose())) < 1e-12);
            // (A⊗B)⁺ = A⁺⊗B⁺
            assert!(rel(&pinv(&kron(&a, &b)), &kron(&pinv(&a), &pinv(&b))) < 1e-8);
            // (AC)⊗(BD) = (A⊗B)(C⊗D)
            assert!(rel(&kron(&(&a * &c), &(&b * &d)), &(kron(&a, &b) * kron(&c, &d))) < 1e-10);
        }
    }

    #[test]
    fn kron_norms_factor() {
        for seed in 0..5 {
            let a = random(3, 3, seed);
            let b = random(4, 2, seed + 50);
            let k = kron(&a, &b);
            assert!((max_col_l1(&k) - max_col_l1(&a) * max_col_l1(&b)).abs() < 1e-10);
            assert!((max_col_l2(&k) - max_col_l2(&a) * max_col_l2(&b)).abs() < 1e-10);
            assert!((k.norm() - a.norm() * b.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn from_rows_rejects_ragged() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(from_rows(&[]).is_err());
        assert!(from_rows(&[vec![f64::NAN]]).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn pinv_satisfies_penrose_on_rank_deficient(seed in proptest::prelude::any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let m = 1 + rng.below(20) as usize;
            let n = 1 + rng.below(20) as usize;
            let r = 1 + rng.below(m.min(n) as u64) as usize;
            let a = random(m, r, rng.next_u64()) * random(r, n, rng.next_u64());
            let p = pinv(&a);
            let tol = 1e-9 * (1.0 + a.norm() * p.norm());
            proptest::prop_assert!((&a * &p * &a - &a).norm() <= tol * a.norm().max(1.0));
            proptest::prop_assert!((&p * &a * &p - &p).norm() <= tol * p.norm().max(1.0));
            proptest::prop_assert!((&a * &p - (&a * &p).transpose()).norm() <= tol);
            proptest::prop_assert!((&p * &a - (&p * &a).transpose()).norm() <= tol);
            let s = singular_values(&a);
            proptest::prop_assert_eq!(s.len(), m.min(n));
            let fro: f64 = s.iter().map(|x| x * x).sum();
            proptest::prop_assert!((fro - a.norm_squared()).abs() <= 1e-9 * a.norm_squared().max(1.0));
        }
    }
}
