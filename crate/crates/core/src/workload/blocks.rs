//! Per-attribute predicate sets.

use crate::error::{HdmmError, Result};
use crate::linalg::{ones, Matrix};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub enum BuildingBlock {
    Identity,
    Total,
    Prefix,
    /// Every interval `[a, b]`, rows in lexicographic `(a, b)` order.
    AllRange,
    /// All intervals of a fixed width.
    WidthRange(usize),
    /// Inner block with columns shuffled by a seeded Fisher–Yates permutation.
    Permuted { inner: Box<BuildingBlock>, seed: u64 },
    Literal(Matrix),
}

impl BuildingBlock {
    pub fn permuted(inner: BuildingBlock, seed: u64) -> Self {
        BuildingBlock::Permuted {
            inner: Box::new(inner),
            seed,
        }
    }

    /// Number of rows on a domain of size `n`.
    pub fn num_queries(&self, n: usize) -> usize {
        match self {
            BuildingBlock::Identity | BuildingBlock::Prefix => n,
            BuildingBlock::Total => 1,
            BuildingBlock::AllRange => n * (n + 1) / 2,
            BuildingBlock::WidthRange(w) => n.saturating_sub(*w) + 1,
            BuildingBlock::Permuted { inner, .. } => inner.num_queries(n),
            BuildingBlock::Literal(m) => m.nrows(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            BuildingBlock::Identity => "identity".into(),
            BuildingBlock::Total => "total".into(),
            BuildingBlock::Prefix => "prefix".into(),
            BuildingBlock::AllRange => "allrange".into(),
            BuildingBlock::WidthRange(w) => format!("width{w}"),
            BuildingBlock::Permuted { inner, seed } => format!("permuted({}, {seed})", inner.name()),
            BuildingBlock::Literal(m) => format!("literal{}x{}", m.nrows(), m.ncols()),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(HdmmError::InvalidBlock("domain size must be positive".into()));
        }
        match self {
            BuildingBlock::WidthRange(w) if *w == 0 || *w > n => Err(HdmmError::InvalidBlock(
                format!("width {w} outside 1..={n}"),
            )),
            BuildingBlock::Literal(m) if m.ncols() != n => Err(HdmmError::InvalidBlock(format!(
                "literal block has {} columns, domain size is {n}",
                m.ncols()
            ))),
            BuildingBlock::Permuted { inner, .. } => inner.validate(n),
            _ => Ok(()),
        }
    }
}

pub fn materialize_block(block: &BuildingBlock, n: usize) -> Result<Matrix> {
    block.validate(n)?;
    Ok(match block {
        BuildingBlock::Identity => Matrix::identity(n, n),
        BuildingBlock::Total => ones(1, n),
        BuildingBlock::Prefix => Matrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 }),
        BuildingBlock::AllRange => {
            let mut m = Matrix::zeros(n * (n + 1) / 2, n);
            let mut row = 0;
            for a in 0..n {
                for b in a..n {
                    for c in a..=b {
                        m[(row, c)] = 1.0;
                    }
                    row += 1;
                }
            }
            m
        }
        BuildingBlock::WidthRange(w) => {
            Matrix::from_fn(n - w + 1, n, |r, c| if c >= r && c < r + w { 1.0 } else { 0.0 })
        }
        BuildingBlock::Permuted { inner, seed } => {
            let base = materialize_block(inner, n)?;
            let perm = SplitMix64::new(*seed).permutation(n);
            Matrix::from_fn(base.nrows(), n, |i, j| base[(i, perm[j])])
        }
        BuildingBlock::Literal(m) => m.clone(),
    })
}

/// Gram matrix `BᵀB`, computed in closed form where one exists.
pub fn block_gram(block: &BuildingBlock, n: usize) -> Result<Matrix> {
    block.validate(n)?;
    Ok(match block {
        BuildingBlock::Identity => Matrix::identity(n, n),
        BuildingBlock::Total => ones(n, n),
        BuildingBlock::Prefix | BuildingBlock::AllRange => gram_closed_form(block, n)?,
        BuildingBlock::WidthRange(w) => {
            let w = *w as i64;
            let last = n as i64 - w;
            Matrix::from_fn(n, n, |i, j| {
                let (lo, hi) = (i.min(j) as i64, i.max(j) as i64);
                let count = lo.min(last) - (hi - w + 1).max(0) + 1;
                count.max(0) as f64
            })
        }
        BuildingBlock::Permuted { inner, seed } => {
            let g = block_gram(inner, n)?;
            let perm = SplitMix64::new(*seed).permutation(n);
            Matrix::from_fn(n, n, |i, j| g[(perm[i], perm[j])])
        }
        BuildingBlock::Literal(m) => m.transpose() * m,
    })
}

/// Gram of all ranges or all prefixes without materializing the block.
pub fn gram_closed_form(block: &BuildingBlock, n: usize) -> Result<Matrix> {
    match block {
        BuildingBlock::AllRange => Ok(Matrix::from_fn(n, n, |i, j| {
            ((i.min(j) + 1) * (n - i.max(j))) as f64
        })),
        BuildingBlock::Prefix => Ok(Matrix::from_fn(n, n, |i, j| (n - i.max(j)) as f64)),
        other => Err(HdmmError::InvalidBlock(format!(
            "no closed-form gram for {}",
            other.name()
        ))),
    }
}
