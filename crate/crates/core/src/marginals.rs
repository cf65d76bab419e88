//! Algebra of marginal query and Gram matrices.
//!
//! A marginal is named by a d-bit mask whose bit for attribute `i` is
//! `1 << (d - 1 - i)`, so the first attribute is the most significant bit.
//! The Gram basis element for mask `a` is `H(a) = ⊗ᵢ (I if bit set else 1)`,
//! and `G(v) = Σₐ v(a) H(a)`.
//!
//! Every `G(v)` is diagonal in one common orthogonal decomposition
//! `Σₐ κ(a) Pₐ` with `rank Pₐ = ∏_{i ∈ a} (nᵢ − 1)`, where `κ = Y v` is a
//! superset sum weighted by the characteristic vector. Products, inverses and
//! pseudo-inverses therefore reduce to pointwise operations on `κ` plus the
//! O(d·2ᵈ) transforms `Y` and `Y⁻¹`.

use serde::{Deserialize, Serialize};

use crate::error::{HdmmError, Result};
use crate::linalg::Matrix;
use crate::workload::GramRepr;

pub const MAX_ATTRIBUTES: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainShape {
    sizes: Vec<usize>,
}

impl DomainShape {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(HdmmError::Shape("domain sizes must be positive".into()));
        }
        if sizes.len() > MAX_ATTRIBUTES {
            return Err(HdmmError::Unsupported(format!(
                "{} attributes need 2^{} marginal weights; restrict marginal optimization to at most {MAX_ATTRIBUTES} attributes",
                sizes.len(),
                sizes.len()
            )));
        }
        Ok(DomainShape { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn d(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_masks(&self) -> usize {
        1 << self.d()
    }

    pub fn top(&self) -> usize {
        self.num_masks() - 1
    }

    /// Total number of cells N.
    pub fn size(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn bit(&self, attribute: usize) -> usize {
        1 << (self.d() - 1 - attribute)
    }

    pub fn has(&self, mask: usize, attribute: usize) -> bool {
        mask & self.bit(attribute) != 0
    }

    /// Cells in the marginal over `mask`.
    pub fn marginal_size(&self, mask: usize) -> usize {
        (0..self.d()).filter(|&i| self.has(mask, i)).map(|i| self.sizes[i]).product()
    }

    /// `c(a) = ∏_{i ∉ a} nᵢ`.
    pub fn characteristic(&self) -> Vec<f64> {
        (0..self.num_masks())
            .map(|a| {
                (0..self.d())
                    .filter(|&i| !self.has(a, i))
                    .map(|i| self.sizes[i] as f64)
                    .product()
            })
            .collect()
    }

    /// Dimension of the eigenspace indexed by `a`: `∏_{i ∈ a} (nᵢ − 1)`.
    pub fn multiplicity(&self) -> Vec<f64> {
        (0..self.num_masks())
            .map(|a| {
                (0..self.d())
                    .filter(|&i| self.has(a, i))
                    .map(|i| (self.sizes[i] - 1) as f64)
                    .product()
            })
            .collect()
    }

    /// Per-attribute factors of `H(mask)` or of the marginal query `Q(mask)`.
    pub fn factors(&self, mask: usize, gram: bool) -> Vec<Matrix> {
        (0..self.d())
            .map(|i| {
                let n = self.sizes[i];
                match (self.has(mask, i), gram) {
                    (true, _) => Matrix::identity(n, n),
                    (false, true) => crate::linalg::ones(n, n),
                    (false, false) => crate::linalg::ones(1, n),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalVector {
    pub domain: DomainShape,
    pub weights: Vec<f64>,
}

impl MarginalVector {
    pub fn new(domain: DomainShape, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != domain.num_masks() {
            return Err(HdmmError::Shape(format!(
                "marginal vector needs {} weights, got {}",
                domain.num_masks(),
                weights.len()
            )));
        }
        Ok(MarginalVector { domain, weights })
    }

    pub fn zeros(domain: DomainShape) -> Self {
        let n = domain.num_masks();
        MarginalVector { domain, weights: vec![0.0; n] }
    }

    /// Unit weight on the top mask: `G(z) = I`.
    pub fn identity(domain: DomainShape) -> Self {
        let mut v = MarginalVector::zeros(domain);
        let top = v.domain.top();
        v.weights[top] = 1.0;
        v
    }

    fn with_weights(&self, weights: Vec<f64>) -> Self {
        MarginalVector { domain: self.domain.clone(), weights }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_weights(self.weights.iter().map(|&x| f(x)).collect())
    }

    /// Dense `G(v)`; test oracle for small domains.
    pub fn dense_gram(&self) -> Matrix {
        let n = self.domain.size();
        let mut out = Matrix::zeros(n, n);
        for (a, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                out += crate::linalg::kron_all(&self.domain.factors(a, true)) * w;
            }
        }
        out
    }

    /// Dense `M(θ)`: weighted marginal queries stacked in ascending mask order.
    pub fn dense_queries(&self) -> Matrix {
        let blocks: Vec<Matrix> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(a, &w)| crate::linalg::kron_all(&self.domain.factors(a, false)) * w)
            .collect();
        let rows = blocks.iter().map(|b| b.nrows()).sum();
        let mut out = Matrix::zeros(rows, self.domain.size());
        let mut r = 0;
        for b in blocks {
            out.rows_mut(r, b.nrows()).copy_from(&b);
            r += b.nrows();
        }
        out
    }
}

/// `Σ_{b ⊇ a} f(b)`, in place.
pub(crate) fn superset_sum(f: &mut [f64]) {
    let n = f.len();
    let mut bit = 1;
    while bit < n {
        for a in 0..n {
            if a & bit == 0 {
                f[a] += f[a | bit];
            }
        }
        bit <<= 1;
    }
}

/// Inverse of [`superset_sum`].
pub(crate) fn superset_moebius(f: &mut [f64]) {
    let n = f.len();
    let mut bit = 1;
    while bit < n {
        for a in 0..n {
            if a & bit == 0 {
                f[a] -= f[a | bit];
            }
        }
        bit <<= 1;
    }
}

/// `Σ_{a ⊆ b} f(a)`, in place.
pub(crate) fn subset_sum(f: &mut [f64]) {
    let n = f.len();
    let mut bit = 1;
    while bit < n {
        for a in 0..n {
            if a & bit != 0 {
                f[a] += f[a ^ bit];
            }
        }
        bit <<= 1;
    }
}

/// `Y·w` where `Y[a,b] = c(b)·[a ⊆ b]`.
pub fn y_apply(domain: &DomainShape, w: &[f64]) -> Vec<f64> {
    let c = domain.characteristic();
    let mut out: Vec<f64> = w.iter().zip(&c).map(|(x, c)| x * c).collect();
    superset_sum(&mut out);
    out
}

/// `Y⁻¹·κ`.
pub fn y_solve(domain: &DomainShape, kappa: &[f64]) -> Vec<f64> {
    let c = domain.characteristic();
    let mut out = kappa.to_vec();
    superset_moebius(&mut out);
    out.iter_mut().zip(&c).for_each(|(x, c)| *x /= c);
    out
}

pub fn characteristic_vector(domain: &DomainShape) -> MarginalVector {
    MarginalVector {
        domain: domain.clone(),
        weights: domain.characteristic(),
    }
}

/// Upper-triangular structure map, either `X(u)` or `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularMap {
    pub domain: DomainShape,
    pub entries: Matrix,
}

impl TriangularMap {
    pub fn apply(&self, v: &MarginalVector) -> MarginalVector {
        let out = &self.entries * crate::linalg::Vector::from_column_slice(&v.weights);
        v.with_weights(out.iter().cloned().collect())
    }
}

/// `X(u)(k,b) = Σ_{a : a&b = k} u(a)·c(a|b)`, materialized (4ᵈ entries).
pub fn xmat(u: &MarginalVector) -> TriangularMap {
    let m = u.domain.num_masks();
    let c = u.domain.characteristic();
    let mut x = Matrix::zeros(m, m);
    for (a, &ua) in u.weights.iter().enumerate() {
        if ua == 0.0 {
            continue;
        }
        for b in 0..m {
            x[(a & b, b)] += ua * c[a | b];
        }
    }
    TriangularMap { domain: u.domain.clone(), entries: x }
}

pub fn ymat(domain: &DomainShape) -> TriangularMap {
    let m = domain.num_masks();
    let c = domain.characteristic();
    let entries = Matrix::from_fn(m, m, |a, b| if a & b == a { c[b] } else { 0.0 });
    TriangularMap { domain: domain.clone(), entries }
}

/// Eigenvalues `κ = Y·w` of `G(w)`.
pub fn eigenvalues(w: &MarginalVector) -> MarginalVector {
    w.with_weights(y_apply(&w.domain, &w.weights))
}

fn check_same(u: &MarginalVector, v: &MarginalVector) -> Result<()> {
    if u.domain != v.domain {
        return Err(HdmmError::Shape("marginal vectors live on different domains".into()));
    }
    Ok(())
}

/// Weights of `G(u)·G(v)`.
pub fn gram_mul(u: &MarginalVector, v: &MarginalVector) -> Result<MarginalVector> {
    check_same(u, v)?;
    let ku = y_apply(&u.domain, &u.weights);
    let kv = y_apply(&v.domain, &v.weights);
    let k: Vec<f64> = ku.iter().zip(&kv).map(|(a, b)| a * b).collect();
    Ok(u.with_weights(y_solve(&u.domain, &k)))
}

/// Weights of `G(u)⁻¹`.
pub fn gram_inverse(u: &MarginalVector) -> Result<MarginalVector> {
    let top = u.domain.top();
    if u.weights[top] == 0.0 {
        return Err(HdmmError::Singular("top-mask weight is zero".into()));
    }
    let kappa = y_apply(&u.domain, &u.weights);
    let mult = u.domain.multiplicity();
    let mut inv = Vec::with_capacity(kappa.len());
    for (k, m) in kappa.iter().zip(&mult) {
        if *m == 0.0 {
            // Empty eigenspace: any value represents the same matrix.
            inv.push(if *k != 0.0 { 1.0 / k } else { 0.0 });
        } else if *k == 0.0 {
            return Err(HdmmError::Singular("marginal Gram matrix has a zero eigenvalue".into()));
        } else {
            inv.push(1.0 / k);
        }
    }
    Ok(u.with_weights(y_solve(&u.domain, &inv)))
}

/// Weights of the Moore–Penrose inverse `G(u)⁺`. Eigenvalues below
/// `1e-12·max|κ|` are treated as zero.
pub fn gram_ginverse(u: &MarginalVector) -> MarginalVector {
    let kappa = y_apply(&u.domain, &u.weights);
    let tol = 1e-12 * kappa.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    let inv: Vec<f64> = kappa
        .iter()
        .map(|&k| if k.abs() > tol { 1.0 / k } else { 0.0 })
        .collect();
    u.with_weights(y_solve(&u.domain, &inv))
}

/// Marginal weights `w` whose Gram matches `WᵀW` in every trace against a
/// marginal Gram matrix. Exact when each factor Gram is `bI + c1`.
pub fn marginal_approx(g: &GramRepr) -> Result<MarginalVector> {
    let domain = DomainShape::new(g.domain.clone())?;
    let d = domain.d();
    let mut w = vec![0.0; domain.num_masks()];
    for t in &g.terms {
        let bc: Vec<(f64, f64)> = t
            .factors
            .iter()
            .map(|v| {
                let n = v.nrows() as f64;
                let tr = v.trace();
                let sum = v.sum();
                if v.nrows() == 1 {
                    (tr, 0.0)
                } else {
                    let c = (sum - tr) / (n * n - n);
                    (tr / n - c, c)
                }
            })
            .collect();
        for (mask, slot) in w.iter_mut().enumerate() {
            let mut prod = t.coeff;
            for (i, &(b, c)) in bc.iter().enumerate() {
                prod *= if mask >> (d - 1 - i) & 1 == 1 { b } else { c };
            }
            *slot += prod;
        }
    }
    MarginalVector::new(domain, w)
}

/// Whether every factor Gram is exactly of the form `bI + c1`.
pub fn is_marginal_gram(g: &GramRepr) -> bool {
    g.terms.iter().all(|t| {
        t.factors.iter().all(|v| {
            let n = v.nrows();
            if n <= 1 {
                return true;
            }
            let scale = v.amax().max(f64::MIN_POSITIVE);
            let diag = v[(0, 0)];
            let off = v[(0, 1)];
            (0..n).all(|i| {
                (0..n).all(|j| {
                    let expect = if i == j { diag } else { off };
                    (v[(i, j)] - expect).abs() <= 1e-12 * scale
                })
            })
        })
    })
}

fn clamped_kappa(w: &MarginalVector) -> Result<Vec<f64>> {
    let kappa = y_apply(&w.domain, &w.weights);
    let scale = kappa.iter().fold(0.0f64, |m, k| m.max(k.abs())).max(1.0);
    kappa
        .into_iter()
        .map(|k| {
            if k >= 0.0 {
                Ok(k)
            } else if k >= -1e-12 * scale {
                Ok(0.0)
            } else {
                Err(HdmmError::InvalidGram(format!("negative eigenvalue {k:e}")))
            }
        })
        .collect()
}

/// `(1/N)·(Σₐ m(a)·√κ(a))²`.
pub fn svdb_marginal(w: &MarginalVector) -> Result<f64> {
    let kappa = clamped_kappa(w)?;
    let mult = w.domain.multiplicity();
    let s: f64 = kappa.iter().zip(&mult).map(|(k, m)| m * k.sqrt()).sum();
    Ok(s * s / w.domain.size() as f64)
}

/// `θ = √(Y⁻¹·√(Y·w))` when every radicand is nonnegative.
pub fn closed_form_theta(w: &MarginalVector) -> Option<MarginalVector> {
    let kappa = y_apply(&w.domain, &w.weights);
    let scale = kappa.iter().fold(0.0f64, |m, k| m.max(k.abs())).max(f64::MIN_POSITIVE);
    if kappa.iter().any(|&k| k < -1e-12 * scale) {
        return None;
    }
    let roots: Vec<f64> = kappa.iter().map(|k| k.max(0.0).sqrt()).collect();
    let t = y_solve(&w.domain, &roots);
    let tscale = t.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    if t.iter().any(|&x| x < -1e-12 * tscale) {
        return None;
    }
    Some(w.with_weights(t.iter().map(|x| x.max(0.0).sqrt()).collect()))
}

/// Sums `x` over every attribute outside `mask`.
pub fn marginalize(domain: &DomainShape, mask: usize, x: &[f64]) -> Vec<f64> {
    let (strides, out_len) = marginal_strides(domain, mask);
    let mut out = vec![0.0; out_len];
    for_each_cell(domain, &strides, |cell, target| out[target] += x[cell]);
    out
}

/// Adjoint of [`marginalize`]: broadcasts a marginal back to full cells.
pub fn expand(domain: &DomainShape, mask: usize, y: &[f64], out: &mut [f64], scale: f64) {
    let (strides, _) = marginal_strides(domain, mask);
    for_each_cell(domain, &strides, |cell, target| out[cell] += scale * y[target]);
}

fn marginal_strides(domain: &DomainShape, mask: usize) -> (Vec<usize>, usize) {
    let d = domain.d();
    let mut strides = vec![0; d];
    let mut stride = 1;
    for i in (0..d).rev() {
        if domain.has(mask, i) {
            strides[i] = stride;
            stride *= domain.sizes()[i];
        }
    }
    (strides, stride)
}

fn for_each_cell(domain: &DomainShape, strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let sizes = domain.sizes();
    let d = sizes.len();
    let mut idx = vec![0usize; d];
    let mut target = 0usize;
    for cell in 0..domain.size() {
        f(cell, target);
        for i in (0..d).rev() {
            idx[i] += 1;
            target += strides[i];
            if idx[i] < sizes[i] {
                break;
            }
            target -= strides[i] * sizes[i];
            idx[i] = 0;
        }
    }
}

/// Which marginal linear map to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalOp {
    /// `M(θ)·x`, blocks in ascending mask order, zero-weight masks skipped.
    Queries,
    /// `M(θ)ᵀ·y`.
    QueriesTranspose,
    /// `G(v)·x`.
    Gram,
}

/// Row count of `M(θ)`.
pub fn query_rows(theta: &MarginalVector) -> usize {
    theta
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(a, _)| theta.domain.marginal_size(a))
        .sum()
}

pub fn marginal_matvec(op: MarginalOp, v: &MarginalVector, x: &[f64]) -> Result<Vec<f64>> {
    let domain = &v.domain;
    let n = domain.size();
    let expected = match op {
        MarginalOp::QueriesTranspose => query_rows(v),
        _ => n,
    };
    if x.len() != expected {
        return Err(HdmmError::Shape(format!("vector has length {}, expected {expected}", x.len())));
    }
    let active = v.weights.iter().enumerate().filter(|(_, &w)| w != 0.0);
    match op {
        MarginalOp::Queries => {
            let mut out = Vec::with_capacity(query_rows(v));
            for (a, &w) in active {
                out.extend(marginalize(domain, a, x).into_iter().map(|y| w * y));
            }
            Ok(out)
        }
        MarginalOp::QueriesTranspose => {
            let mut out = vec![0.0; n];
            let mut offset = 0;
            for (a, &w) in active {
                let len = domain.marginal_size(a);
                expand(domain, a, &x[offset..offset + len], &mut out, w);
                offset += len;
            }
            Ok(out)
        }
        MarginalOp::Gram => {
            let mut out = vec![0.0; n];
            for (a, &w) in active {
                let m = marginalize(domain, a, x);
                expand(domain, a, &m, &mut out, w);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_rows, pinv, sym_eigenvalues, to_rows, Vector};
    use crate::rng::SplitMix64;
    use crate::workload::{gram, impvec, LogicalWorkload};
    use proptest::prelude::*;

    fn dom(sizes: &[usize]) -> DomainShape {
        DomainShape::new(sizes.to_vec()).unwrap()
    }

    fn mv(sizes: &[usize], w: &[f64]) -> MarginalVector {
        MarginalVector::new(dom(sizes), w.to_vec()).unwrap()
    }

    fn random_domain(rng: &mut SplitMix64) -> DomainShape {
        let d = 1 + rng.below(3) as usize;
        dom(&(0..d).map(|_| 1 + rng.below(4) as usize).collect::<Vec<_>>())
    }

    fn random_vec(rng: &mut SplitMix64, domain: &DomainShape) -> MarginalVector {
        let w = (0..domain.num_masks()).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        MarginalVector::new(domain.clone(), w).unwrap()
    }

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        (a - b).amax() <= tol * (1.0 + b.amax())
    }

    #[test]
    fn characteristic_examples() {
        assert_eq!(dom(&[2, 2]).characteristic(), vec![4.0, 2.0, 2.0, 1.0]);
        assert_eq!(dom(&[7]).characteristic(), vec![7.0, 1.0]);
        let c = dom(&[2, 5, 50, 100]).characteristic();
        assert_eq!(c[0], 50000.0);
        assert_eq!(c[15], 1.0);
    }

    #[test]
    fn first_attribute_is_most_significant() {
        // I ⊗ 1 ⊗ I is mask 101₂.
        let d = dom(&[2, 3, 2]);
        let f = d.factors(5, true);
        assert_eq!(f[0], Matrix::identity(2, 2));
        assert_eq!(f[1], crate::linalg::ones(3, 3));
        assert_eq!(f[2], Matrix::identity(2, 2));
    }

    #[test]
    fn xmat_examples() {
        // G([1,0]) = J and J·(v₀J + v₁I) = (3v₀ + v₁)J, so the second row vanishes.
        let x = xmat(&mv(&[3], &[1.0, 0.0]));
        assert_eq!(to_rows(&x.entries), vec![vec![3.0, 1.0], vec![0.0, 0.0]]);
        let z = MarginalVector::identity(dom(&[2, 2]));
        assert_eq!(xmat(&z).entries, Matrix::identity(4, 4));
        let v = mv(&[2, 2], &[0.3, -1.0, 2.0, 0.5]);
        assert_eq!(xmat(&z).apply(&v), v);
    }

    #[test]
    fn gram_mul_examples() {
        let h1 = mv(&[2, 2], &[0.0, 1.0, 0.0, 0.0]);
        let h2 = mv(&[2, 2], &[0.0, 0.0, 1.0, 0.0]);
        let p = gram_mul(&h1, &h2).unwrap();
        for (got, want) in p.weights.iter().zip([1.0, 0.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let h0 = mv(&[3], &[1.0, 0.0]);
        let sq = gram_mul(&h0, &h0).unwrap();
        assert!((sq.weights[0] - 3.0).abs() < 1e-12 && sq.weights[1].abs() < 1e-12);
    }

    #[test]
    fn gram_inverse_examples() {
        let z = MarginalVector::identity(dom(&[3]));
        assert_eq!(gram_inverse(&z).unwrap(), z);
        // (J + I)(aJ + I) = (4a + 1)J + I on n = 3, so a = -1/4.
        let u = mv(&[3], &[1.0, 1.0]);
        let v = gram_inverse(&u).unwrap();
        assert!((v.weights[0] + 0.25).abs() < 1e-12 && (v.weights[1] - 1.0).abs() < 1e-12);
        assert!((u.dense_gram() * v.dense_gram() - Matrix::identity(3, 3)).amax() < 1e-12);
        let v = gram_inverse(&mv(&[2, 3], &[0.0, 0.0, 0.0, 2.0])).unwrap();
        assert!((v.weights[3] - 0.5).abs() < 1e-15);
        assert!(gram_inverse(&mv(&[3], &[1.0, 0.0])).is_err());
    }

    #[test]
    fn gram_ginverse_examples() {
        let v = gram_ginverse(&mv(&[2], &[1.0, 0.0]));
        assert!((v.weights[0] - 0.25).abs() < 1e-15 && v.weights[1].abs() < 1e-15);
        let zero = MarginalVector::zeros(dom(&[2, 3]));
        assert_eq!(gram_ginverse(&zero), zero);
        let u = mv(&[3], &[1.0, 1.0]);
        assert_eq!(gram_ginverse(&u), gram_inverse(&u).unwrap());
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(eigenvalues(&MarginalVector::identity(dom(&[2, 3]))).weights, vec![1.0; 4]);
        assert_eq!(eigenvalues(&mv(&[3], &[1.0, 0.0])).weights, vec![3.0, 0.0]);
        assert_eq!(eigenvalues(&mv(&[3], &[1.0, 1.0])).weights, vec![4.0, 1.0]);
    }

    #[test]
    fn y_matches_transform() {
        let d = dom(&[2, 3, 4]);
        let mut rng = SplitMix64::new(3);
        let w = random_vec(&mut rng, &d);
        let dense = ymat(&d).apply(&w);
        let fast = eigenvalues(&w);
        for (a, b) in dense.weights.iter().zip(&fast.weights) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = y_solve(&d, &fast.weights);
        for (a, b) in back.iter().zip(&w.weights) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_approx_examples() {
        let w = |blocks| {
            let lw = LogicalWorkload::product(vec![4], vec![blocks]).unwrap();
            marginal_approx(&gram(&impvec(&lw).unwrap())).unwrap().weights
        };
        assert_eq!(w(crate::BuildingBlock::Identity), vec![0.0, 1.0]);
        assert_eq!(w(crate::BuildingBlock::Total), vec![1.0, 0.0]);
        let lw = LogicalWorkload::product(vec![2], vec![crate::BuildingBlock::AllRange]).unwrap();
        let g = gram(&impvec(&lw).unwrap());
        let approx = marginal_approx(&g).unwrap();
        assert_eq!(approx.weights, vec![1.0, 1.0]);
        let dense = g.dense(1 << 20).unwrap();
        for mask in 0..2 {
            let mut u = MarginalVector::zeros(dom(&[2]));
            u.weights[mask] = 1.0;
            let gu = u.dense_gram();
            let lhs = (&gu * &dense).trace();
            let rhs = (&gu * approx.dense_gram()).trace();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn svdb_examples() {
        for n in 1..=16 {
            let z = MarginalVector::identity(dom(&[n]));
            let dense = crate::linalg::svd_bound_from_gram(&Matrix::identity(n, n));
            assert!((svdb_marginal(&z).unwrap() - dense).abs() < 1e-9);
            assert!((svdb_marginal(&z).unwrap() - n as f64).abs() < 1e-9);
        }
        assert!((svdb_marginal(&mv(&[5], &[1.0, 0.0])).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svdb_matches_dense_on_small_marginal_workloads() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..20 {
            let d = random_domain(&mut rng);
            let w: Vec<f64> = (0..d.num_masks()).map(|_| rng.next_f64()).collect();
            let w = MarginalVector::new(d, w).unwrap();
            let dense = crate::linalg::svd_bound_from_gram(&w.dense_gram());
            let fast = svdb_marginal(&w).unwrap();
            assert!((dense - fast).abs() < 1e-8 * dense.max(1.0), "{dense} vs {fast}");
        }
    }

    #[test]
    fn closed_form_examples() {
        let z = MarginalVector::identity(dom(&[5]));
        assert_eq!(closed_form_theta(&z).unwrap().weights, vec![0.0, 1.0]);
        // Total workload on n=2: κ = [2, 0], √κ = [√2, 0], Y⁻¹ gives θ² = [√2/2, 0].
        let t = closed_form_theta(&mv(&[2], &[1.0, 0.0])).unwrap();
        assert!((t.weights[0] - (2f64.sqrt() / 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(t.weights[1], 0.0);
    }

    #[test]
    fn closed_form_attains_bound_when_defined() {
        let mut rng = SplitMix64::new(5);
        let mut attained = 0;
        for _ in 0..40 {
            let d = random_domain(&mut rng);
            let w: Vec<f64> = (0..d.num_masks()).map(|_| rng.next_f64()).collect();
            let w = MarginalVector::new(d, w).unwrap();
            let Some(theta) = closed_form_theta(&w) else { continue };
            attained += 1;
            let a = theta.dense_queries();
            let l2_sq: f64 = theta.weights.iter().map(|t| t * t).sum();
            let q = l2_sq * crate::linalg::trace_pinv_gram(&a, &w.dense_gram());
            let bound = svdb_marginal(&w).unwrap();
            assert!((q - bound).abs() < 1e-6 * bound, "{q} vs {bound}");
        }
        assert!(attained > 0);
    }

    #[test]
    fn matvec_examples() {
        let z = MarginalVector::identity(dom(&[2, 3]));
        let x: Vec<f64> = (0..6).map(|v| v as f64 + 1.0).collect();
        assert_eq!(marginal_matvec(MarginalOp::Queries, &z, &x).unwrap(), x);
        assert_eq!(marginal_matvec(MarginalOp::Gram, &z, &x).unwrap(), x);
        let theta = mv(&[2, 2], &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            marginal_matvec(MarginalOp::Queries, &theta, &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![3.0, 7.0]
        );
        assert!(marginal_matvec(MarginalOp::Gram, &theta, &[1.0]).is_err());
    }

    #[test]
    fn pseudo_inverse_oracle_small() {
        // Dense Moore–Penrose on the 2×2 all-ones matrix.
        let p = pinv(&from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap());
        assert!((p[(0, 0)] - 0.25).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn product_matches_dense(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let d = random_domain(&mut rng);
            let u = random_vec(&mut rng, &d);
            let v = random_vec(&mut rng, &d);
            let p = gram_mul(&u, &v).unwrap();
            prop_assert!(close(&(u.dense_gram() * v.dense_gram()), &p.dense_gram(), 1e-9));
            let q = gram_mul(&v, &u).unwrap();
            for (a, b) in p.weights.iter().zip(&q.weights) {
                prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            }
            // The materialized X(u) acts like the product.
            let xv = xmat(&u).apply(&v);
            prop_assert!(close(&xv.dense_gram(), &p.dense_gram(), 1e-9));
        }

        #[test]
        fn inverse_matches_dense(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let d = random_domain(&mut rng);
            // Positive weights keep every eigenvalue away from zero.
            let w: Vec<f64> = (0..d.num_masks()).map(|_| 0.1 + rng.next_f64()).collect();
            let u = MarginalVector::new(d.clone(), w).unwrap();
            let inv = gram_inverse(&u).unwrap();
            let n = d.size();
            prop_assert!(close(&(u.dense_gram() * inv.dense_gram()), &Matrix::identity(n, n), 1e-8));
        }

        #[test]
        fn ginverse_is_generalized_inverse(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let d = random_domain(&mut rng);
            // Drop the top mask and a random subset to force rank deficiency.
            let w: Vec<f64> = (0..d.num_masks())
                .map(|a| if a == d.top() || rng.below(3) == 0 { 0.0 } else { rng.next_f64() })
                .collect();
            let u = MarginalVector::new(d, w).unwrap();
            let g = u.dense_gram();
            let gi = gram_ginverse(&u).dense_gram();
            prop_assert!(close(&(&g * &gi * &g), &g, 1e-7));
            prop_assert!(close(&gi, &pinv(&g), 1e-7));
        }

        #[test]
        fn eigenvalues_match_dense_spectrum(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let d = random_domain(&mut rng);
            let w = random_vec(&mut rng, &d);
            let kappa = eigenvalues(&w).weights;
            let mult = d.multiplicity();
            let mut expected: Vec<f64> = Vec::new();
            for (k, m) in kappa.iter().zip(&mult) {
                expected.extend(std::iter::repeat(*k).take(*m as usize));
            }
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let dense = sym_eigenvalues(&w.dense_gram());
            prop_assert_eq!(dense.len(), expected.len());
            for (a, b) in dense.iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn approx_preserves_marginal_traces(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let d = random_domain(&mut rng);
            let blocks = [
                crate::BuildingBlock::Identity,
                crate::BuildingBlock::Total,
                crate::BuildingBlock::Prefix,
                crate::BuildingBlock::AllRange,
            ];
            let products = (0..2)
                .map(|_| crate::workload::LogicalProduct {
                    weight: 0.5 + rng.next_f64(),
                    blocks: (0..d.d()).map(|_| blocks[rng.below(4) as usize].clone()).collect(),
                })
                .collect();
            let lw = LogicalWorkload::new(d.sizes().to_vec(), products).unwrap();
            let g = lw.gram().unwrap();
            let dense = g.dense(1 << 24).unwrap();
            let w = marginal_approx(&g).unwrap().dense_gram();
            for _ in 0..20 {
                let u = random_vec(&mut rng, &d).dense_gram();
                let lhs = (&u * &dense).trace();
                let rhs = (&u * &w).trace();
                prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1e-9) + 1e-9);
            }
        }

        #[test]
        fn matvec_matches_dense(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let d = random_domain(&mut rng);
            let theta = random_vec(&mut rng, &d);
            let x: Vec<f64> = (0..d.size()).map(|_| rng.next_f64()).collect();
            let xv = Vector::from_column_slice(&x);
            let m = theta.dense_queries();
            let got = marginal_matvec(MarginalOp::Queries, &theta, &x).unwrap();
            let want = &m * &xv;
            for (a, b) in got.iter().zip(want.iter()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            let y: Vec<f64> = (0..m.nrows()).map(|_| rng.next_f64()).collect();
            let got = marginal_matvec(MarginalOp::QueriesTranspose, &theta, &y).unwrap();
            let want = m.transpose() * Vector::from_column_slice(&y);
            for (a, b) in got.iter().zip(want.iter()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            let got = marginal_matvec(MarginalOp::Gram, &theta, &x).unwrap();
            let want = theta.dense_gram() * &xv;
            for (a, b) in got.iter().zip(want.iter()) {
                prop_assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
            }
        }
    }
}
