//! Meta-selection across operators and baselines.

use std::time::Instant;

use super::kron::{opt_kron_gram, opt_plus_gram};
use super::marginal::opt_marginals_gram;
use super::opt0::{opt0_gaussian, opt0_laplace};
use super::{OptConfig, OptResult, Operator, Strategy, StrategyVariant};
use crate::error::{HdmmError, Result};
use crate::linalg::Matrix;
use crate::marginals::{DomainShape, MarginalVector};
use crate::workload::{gram, svd_bound, unit_error, GramRepr, ImplicitWorkload, NormKind, DEFAULT_MATERIALIZE_CAP};

/// Cells up to which a workload may be answered by its own dense matrix.
const EXPLICIT_BASELINE_CELLS: usize = 4096;

fn is_scaled_identity_or_ones(g: &Matrix) -> bool {
    let n = g.nrows();
    if n <= 1 {
        return true;
    }
    let tol = 1e-12 * g.amax().max(f64::MIN_POSITIVE);
    let d = g[(0, 0)];
    let off_zero = (0..n).all(|i| (0..n).all(|j| i == j || g[(i, j)].abs() <= tol));
    let diag_const = (0..n).all(|i| (g[(i, i)] - d).abs() <= tol);
    let all_const = (0..n).all(|i| (0..n).all(|j| (g[(i, j)] - d).abs() <= tol));
    (off_zero && diag_const) || all_const
}

/// `pᵢ = 1` for attributes queried only through identity or total blocks,
/// otherwise `max(1, ⌊nᵢ/16⌋)`.
pub fn default_p(g: &GramRepr) -> Vec<usize> {
    (0..g.domain.len())
        .map(|i| {
            if g.terms.iter().all(|t| is_scaled_identity_or_ones(&t.factors[i])) {
                1
            } else {
                (g.domain[i] / 16).max(1)
            }
        })
        .collect()
}

fn marginal_mask(factors: &[Matrix]) -> Option<usize> {
    let d = factors.len();
    let mut mask = 0;
    for (i, f) in factors.iter().enumerate() {
        let n = f.ncols();
        if f.nrows() == n && *f == Matrix::identity(n, n) {
            mask |= 1 << (d - 1 - i);
        } else if f.nrows() != 1 || f.iter().any(|v| *v != 1.0) {
            return None;
        }
    }
    Some(mask)
}

/// The workload itself as a strategy, when a compact form exists.
pub fn workload_strategy(w: &ImplicitWorkload, norm: NormKind) -> Option<Strategy> {
    let masks: Option<Vec<usize>> = w.terms.iter().map(|t| marginal_mask(&t.factors)).collect();
    if let Some(masks) = masks {
        let domain = DomainShape::new(w.domain.clone()).ok()?;
        let mut theta = vec![0.0; domain.num_masks()];
        let mut distinct = true;
        for (m, t) in masks.iter().zip(&w.terms) {
            distinct &= theta[*m] == 0.0;
            theta[*m] = t.weight.abs();
        }
        if distinct {
            let v = MarginalVector::new(domain, theta).ok()?;
            return Some(Strategy::new(StrategyVariant::Marginal(v), norm).normalized());
        }
    }
    if w.terms.len() == 1 {
        let mut factors = w.terms[0].factors.clone();
        factors[0] *= w.terms[0].weight;
        return Some(Strategy::new(StrategyVariant::Kron(factors), norm).normalized());
    }
    if w.domain_size() <= EXPLICIT_BASELINE_CELLS {
        let a = w.materialize_explicit(DEFAULT_MATERIALIZE_CAP).ok()?;
        return Some(Strategy::new(StrategyVariant::Explicit(a), norm).normalized());
    }
    None
}

fn baseline(op: Operator, strategy: Strategy, g: &GramRepr) -> Result<OptResult> {
    let start = Instant::now();
    let q = unit_error(g, &strategy)?;
    Ok(OptResult {
        strategy,
        unit_error: q,
        svd_bound: svd_bound(g).ok(),
        operator: op,
        iterations: 0,
        restarts_used: 0,
        wallclock: start.elapsed(),
    })
}

fn run_operator(op: Operator, w: &ImplicitWorkload, g: &GramRepr, cfg: &OptConfig, norm: NormKind) -> Result<OptResult> {
    let p = cfg.p_per_attr.clone().unwrap_or_else(|| default_p(g));
    match op {
        Operator::Kron => opt_kron_gram(g, &p, cfg, norm),
        Operator::Plus => opt_plus_gram(g, None, cfg.p_per_attr.as_deref(), cfg, norm),
        Operator::Marginal => opt_marginals_gram(g, cfg, norm),
        Operator::Opt0 => {
            let dense = g.dense(DEFAULT_MATERIALIZE_CAP)?;
            let n = dense.nrows();
            let p = match &cfg.p_per_attr {
                Some(p) if p.len() == 1 => p[0],
                _ if w.domain.len() == 1 => p[0],
                _ => (n / 16).max(1),
            };
            let r = match norm {
                NormKind::L1 => opt0_laplace(&dense, p, cfg)?,
                NormKind::L2 => opt0_gaussian(&dense, cfg)?,
            };
            Ok(r)
        }
        Operator::Identity => baseline(op, Strategy::identity(&w.domain, norm), g),
        Operator::Workload => {
            let s = workload_strategy(w, norm)
                .ok_or_else(|| HdmmError::Unsupported("workload has no compact strategy form".into()))?;
            baseline(op, s, g)
        }
    }
}

/// Runs each requested operator; failures are reported per operator.
pub fn opt_selected(
    w: &ImplicitWorkload,
    operators: &[Operator],
    cfg: &OptConfig,
    norm: NormKind,
) -> Vec<(Operator, Result<OptResult>)> {
    let g = gram(w);
    operators
        .iter()
        .map(|&op| (op, run_operator(op, w, &g, cfg, norm)))
        .collect()
}

/// Lowest-error successful result; ties keep the earlier entry.
pub(crate) fn pick_best(results: &[(Operator, Result<OptResult>)]) -> Option<&OptResult> {
    let mut best: Option<&OptResult> = None;
    for r in results.iter().filter_map(|(_, r)| r.as_ref().ok()) {
        if best.map_or(true, |b| r.unit_error < b.unit_error) {
            best = Some(r);
        }
    }
    best
}

/// Runs the Kronecker, union and marginal optimizers plus the identity and
/// workload baselines and returns the lowest-error strategy.
pub fn opt_hdmm(w: &ImplicitWorkload, cfg: &OptConfig, norm: NormKind) -> Result<OptResult> {
    let ops = [
        Operator::Kron,
        Operator::Plus,
        Operator::Marginal,
        Operator::Identity,
        Operator::Workload,
    ];
    let results = opt_selected(w, &ops, cfg, norm);
    let failures: Vec<String> = results
        .iter()
        .take(3)
        .filter_map(|(op, r)| r.as_ref().err().map(|e| format!("{}: {e}", op.name())))
        .collect();
    if failures.len() == 3 {
        return Err(HdmmError::optimization("hdmm", failures.join("; ")));
    }
    pick_best(&results).cloned().ok_or_else(|| HdmmError::optimization("hdmm", "no operator succeeded"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{impvec, BuildingBlock::*, LogicalWorkload};

    fn cfg() -> OptConfig {
        OptConfig { restarts: 3, max_iters: 200, ..Default::default() }
    }

    #[test]
    fn p_rule() {
        let lw = LogicalWorkload::product(vec![64, 5, 40], vec![AllRange, Total, Identity]).unwrap();
        assert_eq!(default_p(&lw.gram().unwrap()), vec![4, 1, 1]);
        let lw = LogicalWorkload::product(vec![10], vec![Prefix]).unwrap();
        assert_eq!(default_p(&lw.gram().unwrap()), vec![1]);
    }

    #[test]
    fn workload_strategy_forms() {
        let m = impvec(&LogicalWorkload::k_way_marginals(vec![2, 3], 1).unwrap()).unwrap();
        assert_eq!(workload_strategy(&m, NormKind::L1).unwrap().kind(), "marginal");
        let k = impvec(&LogicalWorkload::product(vec![4, 4], vec![Prefix, AllRange]).unwrap()).unwrap();
        assert_eq!(workload_strategy(&k, NormKind::L1).unwrap().kind(), "kron");
    }

    #[test]
    fn single_product_prefers_kron_on_ties() {
        let lw = LogicalWorkload::product(vec![8, 8], vec![Prefix, AllRange]).unwrap();
        let w = impvec(&lw).unwrap();
        let r = opt_hdmm(&w, &cfg(), NormKind::L1).unwrap();
        assert_eq!(r.operator, Operator::Kron);
    }

    #[test]
    fn never_worse_than_baselines() {
        let lw = LogicalWorkload::k_way_marginals(vec![3, 4, 5], 2).unwrap();
        let w = impvec(&lw).unwrap();
        let g = gram(&w);
        let r = opt_hdmm(&w, &cfg(), NormKind::L1).unwrap();
        assert!(r.unit_error <= g.trace());
        let ws = workload_strategy(&w, NormKind::L1).unwrap();
        assert!(r.unit_error <= unit_error(&g, &ws).unwrap());
    }
}
