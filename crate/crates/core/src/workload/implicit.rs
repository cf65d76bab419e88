//! Logical workloads and their implicit (union-of-Kronecker) vectorization.

use serde::{Deserialize, Serialize};

use super::blocks::{block_gram, materialize_block, BuildingBlock};
use super::gram::{GramRepr, GramTerm};
use crate::error::{HdmmError, Result};
use crate::linalg::{col_l1_norms, col_l2_sq_norms, max_col_l1, max_col_l2, Matrix};

/// Default cap on materialized entries.
pub const DEFAULT_MATERIALIZE_CAP: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum NormKind {
    L1,
    L2,
}

impl NormKind {
    pub fn matrix_norm(self, a: &Matrix) -> f64 {
        match self {
            NormKind::L1 => max_col_l1(a),
            NormKind::L2 => max_col_l2(a),
        }
    }

    /// Norm of a vector of nonnegative weights (marginal strategies, budget shares).
    pub fn vector_norm(self, v: &[f64]) -> f64 {
        match self {
            NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
            NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

/// One weighted product `w · (W_1 ⊗ … ⊗ W_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KronTerm {
    pub weight: f64,
    pub factors: Vec<Matrix>,
}

impl KronTerm {
    pub fn new(weight: f64, factors: Vec<Matrix>) -> Self {
        KronTerm { weight, factors }
    }

    pub fn num_queries(&self) -> usize {
        self.factors.iter().map(|f| f.nrows()).product()
    }

    pub fn sensitivity(&self, norm: NormKind) -> f64 {
        self.weight.abs() * self.factors.iter().map(|f| norm.matrix_norm(f)).product::<f64>()
    }

    pub fn materialize(&self) -> Matrix {
        crate::linalg::kron_all(&self.factors) * self.weight
    }
}

/// Vertical stack of weighted Kronecker products over `domain`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitWorkload {
    pub domain: Vec<usize>,
    pub terms: Vec<KronTerm>,
}

impl ImplicitWorkload {
    pub fn new(domain: Vec<usize>, terms: Vec<KronTerm>) -> Result<Self> {
        if domain.is_empty() || domain.contains(&0) {
            return Err(HdmmError::Compile("domain sizes must be positive".into()));
        }
        for (j, t) in terms.iter().enumerate() {
            if t.factors.len() != domain.len() {
                return Err(HdmmError::Compile(format!(
                    "term {j} has {} factors, domain has {} attributes",
                    t.factors.len(),
                    domain.len()
                )));
            }
            for (i, (f, &n)) in t.factors.iter().zip(&domain).enumerate() {
                if f.ncols() != n {
                    return Err(HdmmError::Compile(format!(
                        "term {j}, attribute {i}: factor has {} columns, domain size is {n}",
                        f.ncols()
                    )));
                }
            }
        }
        Ok(ImplicitWorkload { domain, terms })
    }

    pub fn domain_size(&self) -> usize {
        self.domain.iter().product()
    }

    pub fn num_queries(&self) -> usize {
        self.terms.iter().map(|t| t.num_queries()).sum()
    }

    /// Entries stored by the implicit representation.
    pub fn implicit_entries(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.factors.iter().map(|f| f.len()).sum::<usize>())
            .sum()
    }

    /// Per-term query-count offsets into the stacked answer vector.
    pub fn term_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.terms.len() + 1);
        let mut acc = 0;
        out.push(0);
        for t in &self.terms {
            acc += t.num_queries();
            out.push(acc);
        }
        out
    }

    /// Dense `m × N` matrix, first term on top.
    pub fn materialize_explicit(&self, cap: u128) -> Result<Matrix> {
        let requested = self.num_queries() as u128 * self.domain_size() as u128;
        if requested > cap {
            return Err(HdmmError::SizeLimit { requested, cap });
        }
        let n = self.domain_size();
        let mut out = Matrix::zeros(self.num_queries(), n);
        let mut row = 0;
        for t in &self.terms {
            let block = t.materialize();
            out.rows_mut(row, block.nrows()).copy_from(&block);
            row += block.nrows();
        }
        Ok(out)
    }

    /// Column-wise sensitivity of the stacked workload.
    ///
    /// Exact per-column evaluation while the domain has at most 2²⁰ cells;
    /// beyond that the sum of per-term norms is returned, which is an upper
    /// bound that is tight whenever every term attains its maximum on a
    /// common column.
    pub fn sensitivity(&self, norm: NormKind) -> f64 {
        if self.terms.is_empty() {
            return 0.0;
        }
        if self.domain_size() > 1 << 20 {
            return match norm {
                NormKind::L1 => self.terms.iter().map(|t| t.sensitivity(norm)).sum(),
                NormKind::L2 => self
                    .terms
                    .iter()
                    .map(|t| t.sensitivity(norm).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            };
        }
        let mut acc = vec![0.0; self.domain_size()];
        for t in &self.terms {
            let per_factor: Vec<Vec<f64>> = t
                .factors
                .iter()
                .map(|f| match norm {
                    NormKind::L1 => col_l1_norms(f),
                    NormKind::L2 => col_l2_sq_norms(f),
                })
                .collect();
            let scale = match norm {
                NormKind::L1 => t.weight.abs(),
                NormKind::L2 => t.weight * t.weight,
            };
            let col = kron_vectors(&per_factor);
            for (a, c) in acc.iter_mut().zip(col) {
                *a += scale * c;
            }
        }
        let max = acc.into_iter().fold(0.0, f64::max);
        match norm {
            NormKind::L1 => max,
            NormKind::L2 => max.sqrt(),
        }
    }
}

/// Kronecker product of vectors, first vector slowest.
pub(crate) fn kron_vectors(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![1.0];
    for v in vs {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for &a in &out {
            for &b in v {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

/// One weighted conjunction of per-attribute predicate sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicalProduct {
    pub weight: f64,
    pub blocks: Vec<BuildingBlock>,
}

/// A workload as written by a user: one building block per attribute per product.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicalWorkload {
    pub domain: Vec<usize>,
    pub products: Vec<LogicalProduct>,
}

impl LogicalWorkload {
    pub fn new(domain: Vec<usize>, products: Vec<LogicalProduct>) -> Result<Self> {
        if domain.is_empty() || domain.contains(&0) {
            return Err(HdmmError::Compile("domain sizes must be positive".into()));
        }
        for (j, p) in products.iter().enumerate() {
            if p.blocks.len() != domain.len() {
                return Err(HdmmError::Compile(format!(
                    "term {j} names {} blocks, domain has {} attributes",
                    p.blocks.len(),
                    domain.len()
                )));
            }
            if !p.weight.is_finite() || p.weight < 0.0 {
                return Err(HdmmError::Compile(format!("term {j} has invalid weight {}", p.weight)));
            }
        }
        Ok(LogicalWorkload { domain, products })
    }

    /// Single product over the domain.
    pub fn product(domain: Vec<usize>, blocks: Vec<BuildingBlock>) -> Result<Self> {
        LogicalWorkload::new(domain, vec![LogicalProduct { weight: 1.0, blocks }])
    }

    /// Weighted marginals indexed by attribute bitmask (first attribute is the
    /// most significant bit). Zero weights are skipped.
    pub fn from_marginal_weights(domain: Vec<usize>, weights: &[f64]) -> Result<Self> {
        let d = domain.len();
        if weights.len() != 1usize << d {
            return Err(HdmmError::Compile(format!(
                "marginal weights need {} entries, got {}",
                1usize << d,
                weights.len()
            )));
        }
        let products = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(mask, &w)| LogicalProduct {
                weight: w,
                blocks: (0..d)
                    .map(|i| {
                        if mask >> (d - 1 - i) & 1 == 1 {
                            BuildingBlock::Identity
                        } else {
                            BuildingBlock::Total
                        }
                    })
                    .collect(),
            })
            .collect();
        LogicalWorkload::new(domain, products)
    }

    /// All marginals over exactly `k` attributes, masks in ascending order.
    pub fn k_way_marginals(domain: Vec<usize>, k: usize) -> Result<Self> {
        let d = domain.len();
        let weights: Vec<f64> = (0..1usize << d)
            .map(|m| if m.count_ones() as usize == k { 1.0 } else { 0.0 })
            .collect();
        LogicalWorkload::from_marginal_weights(domain, &weights)
    }

    pub fn domain_size(&self) -> usize {
        self.domain.iter().product()
    }

    pub fn num_queries(&self) -> usize {
        self.products
            .iter()
            .map(|p| {
                p.blocks
                    .iter()
                    .zip(&self.domain)
                    .map(|(b, &n)| b.num_queries(n))
                    .product::<usize>()
            })
            .sum()
    }

    /// Gram representation straight from the blocks, using closed forms where
    /// available so large range workloads are never materialized.
    pub fn gram(&self) -> Result<GramRepr> {
        let terms = self
            .products
            .iter()
            .map(|p| {
                let factors = p
                    .blocks
                    .iter()
                    .zip(&self.domain)
                    .map(|(b, &n)| block_gram(b, n))
                    .collect::<Result<Vec<_>>>()?;
                Ok(GramTerm::kron(p.weight * p.weight, factors))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GramRepr {
            domain: self.domain.clone(),
            terms,
        })
    }
}

/// Compiles each logical product into a Kronecker term of materialized blocks.
pub fn impvec(logical: &LogicalWorkload) -> Result<ImplicitWorkload> {
    let terms = logical
        .products
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if p.blocks.len() != logical.domain.len() {
                return Err(HdmmError::Compile(format!(
                    "term {j} names {} blocks, domain has {} attributes",
                    p.blocks.len(),
                    logical.domain.len()
                )));
            }
            let factors = p
                .blocks
                .iter()
                .zip(&logical.domain)
                .enumerate()
                .map(|(i, (b, &n))| {
                    materialize_block(b, n).map_err(|e| {
                        HdmmError::Compile(format!("term {j}, attribute {i}: {e}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(KronTerm::new(p.weight, factors))
        })
        .collect::<Result<Vec<_>>>()?;
    ImplicitWorkload::new(logical.domain.clone(), terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, ones, to_rows};
    use BuildingBlock::*;

    #[test]
    fn total_identity_term() {
        let w = impvec(&LogicalWorkload::product(vec![2, 3], vec![Total, Identity]).unwrap()).unwrap();
        assert_eq!(w.terms.len(), 1);
        assert_eq!(w.terms[0].factors[0], ones(1, 2));
        assert_eq!(w.terms[0].factors[1], Matrix::identity(3, 3));
    }

    #[test]
    fn two_way_marginals_structure() {
        let lw = LogicalWorkload::k_way_marginals(vec![2, 5, 50, 100], 2).unwrap();
        let w = impvec(&lw).unwrap();
        assert_eq!(w.terms.len(), 6);
        for t in &w.terms {
            let ids = t.factors.iter().filter(|f| f.nrows() == f.ncols() && f.nrows() > 1).count();
            assert_eq!(ids, 2);
        }
        // Masks ascend: first term is T T I I.
        assert_eq!(w.terms[0].factors[0].nrows(), 1);
        assert_eq!(w.terms[0].factors[3].nrows(), 100);
        assert_eq!(w.num_queries(), 6060);
        assert_eq!(w.domain_size(), 50000);
    }

    #[test]
    fn prefix_product_matches_kron() {
        let w = impvec(&LogicalWorkload::product(vec![2, 2], vec![Prefix, Prefix]).unwrap()).unwrap();
        let p2 = materialize_block(&Prefix, 2).unwrap();
        assert_eq!(w.materialize_explicit(DEFAULT_MATERIALIZE_CAP).unwrap(), kron(&p2, &p2));
    }

    #[test]
    fn materialize_small_cases() {
        let w = impvec(&LogicalWorkload::product(vec![2, 2], vec![Identity, Total]).unwrap()).unwrap();
        assert_eq!(
            to_rows(&w.materialize_explicit(DEFAULT_MATERIALIZE_CAP).unwrap()),
            vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]]
        );
        let lw = LogicalWorkload::new(
            vec![2],
            vec![LogicalProduct {
                weight: 2.0,
                blocks: vec![Total],
            }],
        )
        .unwrap();
        assert_eq!(to_rows(&impvec(&lw).unwrap().materialize_explicit(100).unwrap()), vec![vec![2.0, 2.0]]);
    }

    #[test]
    fn stacked_terms_match_predicate_evaluation() {
        // T⊗I then I⊗T on (2,2), checked against per-tuple evaluation.
        let lw = LogicalWorkload::new(
            vec![2, 2],
            vec![
                LogicalProduct { weight: 1.0, blocks: vec![Total, Identity] },
                LogicalProduct { weight: 1.0, blocks: vec![Identity, Total] },
            ],
        )
        .unwrap();
        let dense = impvec(&lw).unwrap().materialize_explicit(1000).unwrap();
        // Query list: (attr2 == v) for v in 0..2, then (attr1 == v).
        let queries: Vec<Box<dyn Fn(usize, usize) -> bool>> = vec![
            Box::new(|_, b| b == 0),
            Box::new(|_, b| b == 1),
            Box::new(|a, _| a == 0),
            Box::new(|a, _| a == 1),
        ];
        for (q, pred) in queries.iter().enumerate() {
            for a in 0..2 {
                for b in 0..2 {
                    let expect = if pred(a, b) { 1.0 } else { 0.0 };
                    assert_eq!(dense[(q, a * 2 + b)], expect);
                }
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let w = impvec(&LogicalWorkload::product(vec![10, 10], vec![Identity, Identity]).unwrap()).unwrap();
        assert!(matches!(w.materialize_explicit(9999), Err(HdmmError::SizeLimit { .. })));
        assert!(w.materialize_explicit(10000).is_ok());
    }

    #[test]
    fn attribute_mismatch_is_compile_error() {
        let err = LogicalWorkload::product(vec![2, 3], vec![Total]).unwrap_err();
        assert!(matches!(err, HdmmError::Compile(_)));
    }

    #[test]
    fn union_sensitivity_matches_dense() {
        let lw = LogicalWorkload::new(
            vec![3, 4],
            vec![
                LogicalProduct { weight: 1.5, blocks: vec![AllRange, Total] },
                LogicalProduct { weight: 0.5, blocks: vec![Prefix, WidthRange(2)] },
            ],
        )
        .unwrap();
        let w = impvec(&lw).unwrap();
        let dense = w.materialize_explicit(1_000_000).unwrap();
        for norm in [NormKind::L1, NormKind::L2] {
            assert!((w.sensitivity(norm) - norm.matrix_norm(&dense)).abs() < 1e-12);
        }
    }

    #[test]
    fn logical_gram_matches_materialized_gram() {
        let lw = LogicalWorkload::new(
            vec![4, 3],
            vec![
                LogicalProduct { weight: 2.0, blocks: vec![AllRange, Identity] },
                LogicalProduct { weight: 1.0, blocks: vec![BuildingBlock::permuted(Prefix, 3), Total] },
            ],
        )
        .unwrap();
        let a = lw.gram().unwrap().dense(1 << 20).unwrap();
        let dense = impvec(&lw).unwrap().materialize_explicit(1 << 20).unwrap();
        assert!((a - dense.transpose() * &dense).norm() < 1e-9);
    }
}
