//! Kronecker strategies for unions of products, alone or budget-split per group.

use std::time::Instant;

use super::hdmm::default_p;
use super::opt0::{opt0_inner, Opt0State};
use super::{OptConfig, OptResult, Operator, Strategy, StrategyVariant, UnionGroup};
use crate::error::{HdmmError, Result};
use crate::linalg::{gram_rcond, pinv_sym, symmetrize, trace_of_product, Matrix};
use crate::rng::SplitMix64;
use crate::workload::{gram, svd_bound, GramRepr, ImplicitWorkload, NormKind};

/// Relative change in Q below which block-coordinate passes stop.
const OUTER_TOL: f64 = 1e-4;
const MAX_PASSES: usize = 5;

struct KronFit {
    states: Vec<Opt0State>,
    factors: Vec<Matrix>,
    q: f64,
    iterations: usize,
}

/// `q[i][j] = tr[(AᵢᵀAᵢ)⁺ Gᵢ⁽ʲ⁾]` for unit-sensitivity factors.
fn factor_traces(factors: &[Matrix], g: &GramRepr) -> Vec<Vec<f64>> {
    factors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let p = pinv_sym(&(a.transpose() * a), gram_rcond(a.ncols()));
            g.terms.iter().map(|t| trace_of_product(&p, &t.factors[i])).collect()
        })
        .collect()
}

fn total(g: &GramRepr, q: &[Vec<f64>]) -> f64 {
    g.terms
        .iter()
        .enumerate()
        .map(|(j, t)| t.coeff * q.iter().map(|qi| qi[j]).product::<f64>())
        .sum()
}

/// Weighted sum of attribute `i`'s Grams with the other attributes' errors folded in.
fn surrogate(g: &GramRepr, q: &[Vec<f64>], i: usize) -> Matrix {
    let n = g.domain[i];
    let mut s = Matrix::zeros(n, n);
    for (j, t) in g.terms.iter().enumerate() {
        let c: f64 = t.coeff
            * q.iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, qk)| qk[j])
                .product::<f64>();
        s += &t.factors[i] * c;
    }
    symmetrize(&s)
}

fn check_p(g: &GramRepr, p: &[usize]) -> Result<()> {
    if p.len() != g.domain.len() {
        return Err(HdmmError::Config(format!(
            "p has {} entries for {} attributes",
            p.len(),
            g.domain.len()
        )));
    }
    Ok(())
}

fn fit_single(g: &GramRepr, p: &[usize], cfg: &OptConfig, norm: NormKind) -> Result<KronFit> {
    let t = &g.terms[0];
    let base = SplitMix64::new(cfg.seed);
    let mut states = Vec::new();
    let mut q = t.coeff;
    let mut iterations = 0;
    for (i, gi) in t.factors.iter().enumerate() {
        let seed = base.derive(i as u64).next_u64();
        let out = opt0_inner(gi, p[i], norm, cfg, seed, None)?;
        q *= out.value;
        iterations += out.iterations;
        states.push(out.state);
    }
    let factors = states.iter().map(|s| s.strategy_matrix()).collect();
    Ok(KronFit { states, factors, q, iterations })
}

fn fit_union(
    g: &GramRepr,
    p: &[usize],
    cfg: &OptConfig,
    norm: NormKind,
    init: Vec<Opt0State>,
    seed: u64,
) -> Result<KronFit> {
    let mut states = init;
    let mut factors: Vec<Matrix> = states.iter().map(|s| s.strategy_matrix()).collect();
    let mut q = factor_traces(&factors, g);
    let mut current = total(g, &q);
    let base = SplitMix64::new(seed);
    let mut iterations = 0;
    for pass in 0..MAX_PASSES {
        let before = current;
        for i in 0..g.domain.len() {
            let sg = surrogate(g, &q, i);
            let s = base.derive((pass * g.domain.len() + i) as u64).next_u64();
            let out = opt0_inner(&sg, p[i], norm, cfg, s, Some(&states[i]))?;
            iterations += out.iterations;
            let a = out.state.strategy_matrix();
            let pi = pinv_sym(&(a.transpose() * &a), gram_rcond(a.ncols()));
            let qi: Vec<f64> = g.terms.iter().map(|t| trace_of_product(&pi, &t.factors[i])).collect();
            let mut trial = q.clone();
            trial[i] = qi;
            let next = total(g, &trial);
            // The warm start keeps each step monotone up to roundoff.
            if next <= current * (1.0 + 1e-8) {
                q = trial;
                current = next;
                states[i] = out.state;
                factors[i] = a;
            }
        }
        if (before - current).abs() <= OUTER_TOL * current {
            break;
        }
    }
    Ok(KronFit { states, factors, q: current, iterations })
}

/// Fits factors, then reports Q recomputed from them so it is the true error
/// rather than the optimizer's running estimate.
fn fit(g: &GramRepr, p: &[usize], cfg: &OptConfig, norm: NormKind) -> Result<KronFit> {
    let mut f = fit_raw(g, p, cfg, norm)?;
    f.q = total(g, &factor_traces(&f.factors, g));
    Ok(f)
}

fn fit_raw(g: &GramRepr, p: &[usize], cfg: &OptConfig, norm: NormKind) -> Result<KronFit> {
    check_p(g, p)?;
    if g.terms.is_empty() {
        return Err(HdmmError::Config("workload has no terms".into()));
    }
    if g.terms.len() == 1 {
        return fit_single(g, p, cfg, norm);
    }
    let d = g.domain.len();
    let identity: Vec<Opt0State> = (0..d).map(|i| Opt0State::identity(g.domain[i], p[i].max(1), norm)).collect();
    let from_identity = fit_union(g, p, cfg, norm, identity, cfg.seed)?;
    if norm == NormKind::L2 {
        return Ok(from_identity);
    }
    let mut rng = SplitMix64::new(cfg.seed).derive(u64::MAX);
    let random: Vec<Opt0State> = (0..d)
        .map(|i| Opt0State::random(g.domain[i], p[i].max(1), norm, &mut rng))
        .collect();
    let from_random = fit_union(g, p, cfg, norm, random, cfg.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok(if from_random.q < from_identity.q { from_random } else { from_identity })
}

/// Single Kronecker-product strategy from a workload Gram.
pub(crate) fn opt_kron_gram(g: &GramRepr, p: &[usize], cfg: &OptConfig, norm: NormKind) -> Result<OptResult> {
    let start = Instant::now();
    let f = fit(g, p, cfg, norm)?;
    let _ = &f.states;
    Ok(OptResult {
        strategy: Strategy::new(StrategyVariant::Kron(f.factors), norm),
        unit_error: f.q,
        svd_bound: svd_bound(g).ok(),
        operator: Operator::Kron,
        iterations: f.iterations,
        restarts_used: cfg.restarts,
        wallclock: start.elapsed(),
    })
}

pub fn opt_kron(w: &ImplicitWorkload, p: &[usize], cfg: &OptConfig, norm: NormKind) -> Result<OptResult> {
    opt_kron_gram(&gram(w), p, cfg, norm)
}

/// Budget shares minimizing `Σ Eⱼ/aⱼ²`: `aⱼ ∝ Eⱼ^{1/3}` with `Σa = 1` under L1,
/// `aⱼ ∝ Eⱼ^{1/4}` with `Σa² = 1` under L2.
pub fn budget_shares(errors: &[f64], norm: NormKind) -> Vec<f64> {
    let raw: Vec<f64> = match norm {
        NormKind::L1 => errors.iter().map(|e| e.max(0.0).cbrt()).collect(),
        NormKind::L2 => errors.iter().map(|e| e.max(0.0).sqrt().sqrt()).collect(),
    };
    let z = norm.vector_norm(&raw);
    if z == 0.0 {
        let k = errors.len() as f64;
        let equal = match norm {
            NormKind::L1 => 1.0 / k,
            NormKind::L2 => 1.0 / k.sqrt(),
        };
        return vec![equal; errors.len()];
    }
    raw.iter().map(|r| r / z).collect()
}

pub(crate) fn opt_plus_gram(
    g: &GramRepr,
    groups: Option<&[Vec<usize>]>,
    p: Option<&[usize]>,
    cfg: &OptConfig,
    norm: NormKind,
) -> Result<OptResult> {
    let start = Instant::now();
    let default: Vec<Vec<usize>> = (0..g.terms.len()).map(|j| vec![j]).collect();
    let groups = groups.unwrap_or(&default);
    let mut seen = vec![false; g.terms.len()];
    for (k, grp) in groups.iter().enumerate() {
        if grp.is_empty() {
            return Err(HdmmError::Config(format!("group {k} is empty")));
        }
        for &j in grp {
            if j >= seen.len() || seen[j] {
                return Err(HdmmError::Config(format!("term {j} is missing or appears in two groups")));
            }
            seen[j] = true;
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(HdmmError::Config(format!("term {j} is not in any group")));
    }
    let mut fits = Vec::with_capacity(groups.len());
    let mut iterations = 0;
    for (k, grp) in groups.iter().enumerate() {
        let sub = g.select(grp);
        let sub_cfg = OptConfig {
            seed: SplitMix64::new(cfg.seed).derive(k as u64).next_u64(),
            ..cfg.clone()
        };
        // Each group gets its own default p: a factor that is only ever a
        // total in this group should not carry extra rows.
        let own;
        let p = match p {
            Some(p) => p,
            None => {
                own = default_p(&sub);
                &own
            }
        };
        let f = fit(&sub, p, &sub_cfg, norm)?;
        iterations += f.iterations;
        fits.push(f);
    }
    let errors: Vec<f64> = fits.iter().map(|f| f.q).collect();
    let shares = budget_shares(&errors, norm);
    let q: f64 = errors.iter().zip(&shares).map(|(e, a)| e / (a * a)).sum();
    let union = fits
        .into_iter()
        .zip(groups)
        .zip(&shares)
        .map(|((f, grp), &share)| UnionGroup { share, factors: f.factors, terms: grp.clone() })
        .collect();
    Ok(OptResult {
        strategy: Strategy::new(StrategyVariant::UnionKron(union), norm),
        unit_error: q,
        svd_bound: svd_bound(g).ok(),
        operator: Operator::Plus,
        iterations,
        restarts_used: cfg.restarts,
        wallclock: start.elapsed(),
    })
}

/// One Kronecker strategy per group of terms, with budget shares chosen optimally.
/// Without an explicit `p` each group uses the default rule on its own terms.
pub fn opt_plus(
    w: &ImplicitWorkload,
    groups: Option<&[Vec<usize>]>,
    p: Option<&[usize]>,
    cfg: &OptConfig,
    norm: NormKind,
) -> Result<OptResult> {
    opt_plus_gram(&gram(w), groups, p, cfg, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{impvec, unit_error, BuildingBlock::*, LogicalProduct, LogicalWorkload};

    fn cfg() -> OptConfig {
        OptConfig { restarts: 3, max_iters: 300, ..Default::default() }
    }

    #[test]
    fn shares_examples() {
        assert_eq!(budget_shares(&[5.0, 5.0], NormKind::L1), vec![0.5, 0.5]);
        let l2 = budget_shares(&[5.0, 5.0], NormKind::L2);
        assert!((l2[0] - 0.5f64.sqrt()).abs() < 1e-15);
        let a = budget_shares(&[8.0, 1.0], NormKind::L1);
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-12 && (a[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn shares_minimize_total_error() {
        let e = [8.0, 1.0];
        let a = budget_shares(&e, NormKind::L1);
        let best = e[0] / (a[0] * a[0]) + e[1] / (a[1] * a[1]);
        for k in 1..1000 {
            let x = k as f64 / 1000.0;
            assert!(e[0] / (x * x) + e[1] / ((1.0 - x) * (1.0 - x)) >= best - 1e-9);
        }
    }

    #[test]
    fn total_total_reaches_one() {
        let lw = LogicalWorkload::product(vec![4, 6], vec![Total, Total]).unwrap();
        let c = OptConfig { max_iters: 1000, ..cfg() };
        let r = opt_kron(&impvec(&lw).unwrap(), &[1, 1], &c, NormKind::L1).unwrap();
        assert!(r.unit_error <= 1.02, "{}", r.unit_error);
    }

    #[test]
    fn single_product_is_product_of_factor_optima() {
        let lw = LogicalWorkload::product(vec![16, 16], vec![Prefix, Prefix]).unwrap();
        let w = impvec(&lw).unwrap();
        let r = opt_kron(&w, &[1, 1], &cfg(), NormKind::L1).unwrap();
        let g1 = crate::workload::block_gram(&Prefix, 16).unwrap();
        let c0 = OptConfig { seed: SplitMix64::new(0).derive(0).next_u64(), ..cfg() };
        let c1 = OptConfig { seed: SplitMix64::new(0).derive(1).next_u64(), ..cfg() };
        let q0 = super::super::opt0_laplace(&g1, 1, &c0).unwrap().unit_error;
        let q1 = super::super::opt0_laplace(&g1, 1, &c1).unwrap().unit_error;
        assert!((r.unit_error - q0 * q1).abs() < 1e-9 * r.unit_error);
        // And the reported Q is the true error of the returned strategy.
        let q = unit_error(&gram(&w), &r.strategy).unwrap();
        assert!((q - r.unit_error).abs() < 1e-8 * q);
    }

    #[test]
    fn union_result_is_true_error_and_beats_identity() {
        let lw = LogicalWorkload::new(
            vec![8, 8],
            vec![
                LogicalProduct { weight: 1.0, blocks: vec![AllRange, Total] },
                LogicalProduct { weight: 1.0, blocks: vec![Total, AllRange] },
            ],
        )
        .unwrap();
        let w = impvec(&lw).unwrap();
        let g = gram(&w);
        for norm in [NormKind::L1, NormKind::L2] {
            let r = opt_kron(&w, &[1, 1], &cfg(), norm).unwrap();
            let q = unit_error(&g, &r.strategy).unwrap();
            assert!((q - r.unit_error).abs() < 1e-8 * q);
            assert!(r.unit_error <= g.trace() * (1.0 + 1e-9));
            let plus = opt_plus(&w, None, Some(&[1, 1]), &cfg(), norm).unwrap();
            let qp = unit_error(&g, &plus.strategy).unwrap();
            assert!((qp - plus.unit_error).abs() < 1e-8 * qp, "{norm:?}: {qp} vs {}", plus.unit_error);
        }
    }

    #[test]
    fn groups_pick_their_own_p() {
        // In P⊗T the total factor should collapse to a single row, so each
        // group costs Q(P)·1 and equal shares give 8·Q(P).
        let lw = LogicalWorkload::new(
            vec![32, 32],
            vec![
                LogicalProduct { weight: 1.0, blocks: vec![Prefix, Total] },
                LogicalProduct { weight: 1.0, blocks: vec![Total, Prefix] },
            ],
        )
        .unwrap();
        let w = impvec(&lw).unwrap();
        let plus = opt_plus(&w, None, None, &cfg(), NormKind::L1).unwrap();
        let g1 = crate::workload::block_gram(&Prefix, 32).unwrap();
        let qp = super::super::opt0_laplace(&g1, 2, &cfg()).unwrap().unit_error;
        assert!(plus.unit_error <= 8.0 * qp * 1.01, "{} vs {}", plus.unit_error, 8.0 * qp);
        let kron = opt_kron(&w, &[2, 2], &cfg(), NormKind::L1).unwrap();
        assert!(kron.unit_error > 1.5 * plus.unit_error);
    }

    #[test]
    fn block_coordinate_is_monotone() {
        let lw = LogicalWorkload::new(
            vec![6, 6],
            vec![
                LogicalProduct { weight: 1.0, blocks: vec![Prefix, Identity] },
                LogicalProduct { weight: 2.0, blocks: vec![Identity, AllRange] },
            ],
        )
        .unwrap();
        let g = lw.gram().unwrap();
        let identity: Vec<Opt0State> = (0..2).map(|_| Opt0State::identity(6, 1, NormKind::L1)).collect();
        let start = total(&g, &factor_traces(&identity.iter().map(|s| s.strategy_matrix()).collect::<Vec<_>>(), &g));
        let f = fit_union(&g, &[1, 1], &cfg(), NormKind::L1, identity, 1).unwrap();
        assert!(f.q <= start * (1.0 + 1e-8));
    }

    #[test]
    fn bad_grouping() {
        let lw = LogicalWorkload::new(
            vec![3],
            vec![
                LogicalProduct { weight: 1.0, blocks: vec![Total] },
                LogicalProduct { weight: 1.0, blocks: vec![Identity] },
            ],
        )
        .unwrap();
        let w = impvec(&lw).unwrap();
        assert!(opt_plus(&w, Some(&[vec![0]]), Some(&[1]), &cfg(), NormKind::L1).is_err());
        assert!(opt_plus(&w, Some(&[vec![0, 1], vec![]]), Some(&[1]), &cfg(), NormKind::L1).is_err());
    }
}
