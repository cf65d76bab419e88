//! Gram matrices of implicit workloads, kept as weighted sums of Kronecker products.

use super::implicit::{ImplicitWorkload, KronTerm};
use crate::error::{HdmmError, Result};
use crate::linalg::{kron_all, ones, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramTermKind {
    /// `⊗ WᵢᵀWᵢ`, every factor symmetric PSD.
    Kron,
    /// A cross term from a disjunction expansion; factors may be asymmetric
    /// and the coefficient negative.
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramTerm {
    pub coeff: f64,
    pub factors: Vec<Matrix>,
    pub kind: GramTermKind,
}

impl GramTerm {
    pub fn kron(coeff: f64, factors: Vec<Matrix>) -> Self {
        GramTerm {
            coeff,
            factors,
            kind: GramTermKind::Kron,
        }
    }

    pub fn dense(&self) -> Matrix {
        kron_all(&self.factors) * self.coeff
    }
}

/// `WᵀW = Σⱼ coeffⱼ ⊗ᵢ Gᵢ⁽ʲ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramRepr {
    pub domain: Vec<usize>,
    pub terms: Vec<GramTerm>,
}

impl GramRepr {
    pub fn domain_size(&self) -> usize {
        self.domain.iter().product()
    }

    /// `tr(WᵀW)`, the squared Frobenius norm of the workload.
    pub fn trace(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.factors.iter().map(|f| f.trace()).product::<f64>())
            .sum()
    }

    /// Σⱼ coeffⱼ ∏ᵢ fᵢ(Gᵢ⁽ʲ⁾) for a per-attribute trace functional `f`.
    pub fn trace_functional<F>(&self, mut per_factor: F) -> f64
    where
        F: FnMut(usize, &Matrix) -> f64,
    {
        self.terms
            .iter()
            .map(|t| {
                t.coeff
                    * t.factors
                        .iter()
                        .enumerate()
                        .map(|(i, g)| per_factor(i, g))
                        .product::<f64>()
            })
            .sum()
    }

    pub fn dense(&self, cap: u128) -> Result<Matrix> {
        let n = self.domain_size();
        let requested = n as u128 * n as u128;
        if requested > cap {
            return Err(HdmmError::SizeLimit { requested, cap });
        }
        let mut out = Matrix::zeros(n, n);
        for t in &self.terms {
            out += t.dense();
        }
        Ok(out)
    }

    /// Restricts to the listed terms, in that order.
    pub fn select(&self, terms: &[usize]) -> GramRepr {
        GramRepr {
            domain: self.domain.clone(),
            terms: terms.iter().map(|&j| self.terms[j].clone()).collect(),
        }
    }

    pub fn is_pure_kron(&self) -> bool {
        self.terms.iter().all(|t| t.kind == GramTermKind::Kron)
    }

    /// Checks that Kronecker-kind factors are symmetric PSD up to a relative tolerance.
    pub fn validate(&self) -> Result<()> {
        for (j, t) in self.terms.iter().enumerate() {
            if t.factors.len() != self.domain.len() {
                return Err(HdmmError::InvalidGram(format!("term {j} has the wrong factor count")));
            }
            for (i, (g, &n)) in t.factors.iter().zip(&self.domain).enumerate() {
                if g.nrows() != n || g.ncols() != n {
                    return Err(HdmmError::InvalidGram(format!(
                        "term {j}, attribute {i}: expected {n}x{n}, got {}x{}",
                        g.nrows(),
                        g.ncols()
                    )));
                }
                if t.kind == GramTermKind::Mixed {
                    continue;
                }
                let scale = g.amax().max(f64::MIN_POSITIVE);
                if (g - g.transpose()).amax() > 1e-8 * scale {
                    return Err(HdmmError::InvalidGram(format!("term {j}, attribute {i}: not symmetric")));
                }
                let min_eig = crate::linalg::sym_eigenvalues(g)
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                if min_eig < -1e-8 * scale * n as f64 {
                    return Err(HdmmError::InvalidGram(format!(
                        "term {j}, attribute {i}: not positive semidefinite (eigenvalue {min_eig:e})"
                    )));
                }
            }
            if t.kind == GramTermKind::Kron && t.coeff < 0.0 {
                return Err(HdmmError::InvalidGram(format!("term {j} has a negative coefficient")));
            }
        }
        Ok(())
    }
}

/// Gram of every term of an implicit workload.
pub fn gram(w: &ImplicitWorkload) -> GramRepr {
    GramRepr {
        domain: w.domain.clone(),
        terms: w
            .terms
            .iter()
            .map(|t| {
                GramTerm::kron(
                    t.weight * t.weight,
                    t.factors.iter().map(|f| f.transpose() * f).collect(),
                )
            })
            .collect(),
    }
}

/// Gram of the difference `term_a − term_b` expanded into four Kronecker
/// products: `AᵀA − AᵀB − BᵀA + BᵀB`.
pub fn disjunction_gram(term_a: &KronTerm, term_b: &KronTerm) -> Result<GramRepr> {
    if term_a.factors.len() != term_b.factors.len() {
        return Err(HdmmError::Shape("terms have different attribute counts".into()));
    }
    for (i, (a, b)) in term_a.factors.iter().zip(&term_b.factors).enumerate() {
        if a.shape() != b.shape() {
            return Err(HdmmError::Shape(format!(
                "attribute {i}: factor shapes {:?} and {:?} differ",
                a.shape(),
                b.shape()
            )));
        }
    }
    let cross = |x: &KronTerm, y: &KronTerm| -> Vec<Matrix> {
        x.factors.iter().zip(&y.factors).map(|(a, b)| a.transpose() * b).collect()
    };
    let wa = term_a.weight;
    let wb = term_b.weight;
    Ok(GramRepr {
        domain: term_a.factors.iter().map(|f| f.ncols()).collect(),
        terms: vec![
            GramTerm::kron(wa * wa, cross(term_a, term_a)),
            GramTerm {
                coeff: -wa * wb,
                factors: cross(term_a, term_b),
                kind: GramTermKind::Mixed,
            },
            GramTerm {
                coeff: -wa * wb,
                factors: cross(term_b, term_a),
                kind: GramTermKind::Mixed,
            },
            GramTerm::kron(wb * wb, cross(term_b, term_b)),
        ],
    })
}

/// Vector of a negated predicate set: `1 − Φ` row-wise.
pub fn negate(phi: &Matrix) -> Matrix {
    ones(phi.nrows(), phi.ncols()) - phi
}

/// The pair (`1⊗…⊗1`, `¬Φ₁⊗…⊗¬Φ_d`) whose difference vectorizes the
/// disjunction of the per-attribute predicate sets.
pub fn disjunctive_terms(phis: &[Matrix]) -> (KronTerm, KronTerm) {
    let all = KronTerm::new(1.0, phis.iter().map(|p| ones(p.nrows(), p.ncols())).collect());
    let neg = KronTerm::new(1.0, phis.iter().map(negate).collect());
    (all, neg)
}
