//! Unit-noise expected error and singular-value lower bounds.

use super::gram::{GramRepr, GramTermKind};
use super::implicit::{ImplicitWorkload, NormKind};
use crate::error::{HdmmError, Result};
use crate::linalg::{gram_rcond, pinv_sym, psd_rank, supports, svd_bound_from_gram, trace_of_product, Matrix};
use crate::marginals::{eigenvalues, is_marginal_gram, marginal_approx, svdb_marginal, MarginalVector};
use crate::optimize::{Strategy, StrategyVariant, UnionGroup};

/// Domains up to this many cells get an explicit support check.
pub const SUPPORT_CHECK_CELLS: usize = 4096;

const SUPPORT_TOL: f64 = 1e-6;

/// `Q = ‖A‖²·tr[(AᵀA)⁺ WᵀW]`, the expected total squared error under unit noise.
pub fn unit_error(g: &GramRepr, a: &Strategy) -> Result<f64> {
    if a.domain().iter().product::<usize>() != g.domain_size() {
        return Err(HdmmError::Shape(format!(
            "strategy has {} columns, workload domain has {} cells",
            a.num_columns(),
            g.domain_size()
        )));
    }
    let sens = a.sensitivity();
    let core = match &a.variant {
        StrategyVariant::Explicit(m) => explicit_core(g, m)?,
        StrategyVariant::Kron(f) => {
            let terms: Vec<usize> = (0..g.terms.len()).collect();
            kron_core(g, f, &terms)?
        }
        StrategyVariant::UnionKron(groups) => union_core(g, groups)?,
        StrategyVariant::Marginal(theta) => marginal_core(g, theta)?,
    };
    Ok(sens * sens * core)
}

fn explicit_core(g: &GramRepr, a: &Matrix) -> Result<f64> {
    let dense = g.dense(1 << 26)?;
    if g.domain_size() <= SUPPORT_CHECK_CELLS && !supports(a, &dense, SUPPORT_TOL) {
        return Err(HdmmError::Unsupported("strategy does not support the workload".into()));
    }
    let ata = a.transpose() * a;
    Ok(trace_of_product(&pinv_sym(&ata, gram_rcond(ata.nrows())), &dense))
}

/// `Σⱼ coeffⱼ ∏ᵢ tr[(AᵢᵀAᵢ)⁺ Gᵢ⁽ʲ⁾]` over the selected terms.
fn kron_core(g: &GramRepr, factors: &[Matrix], terms: &[usize]) -> Result<f64> {
    if factors.len() != g.domain.len() {
        return Err(HdmmError::Shape("factor count differs from attribute count".into()));
    }
    let inv: Vec<Matrix> = factors
        .iter()
        .map(|f| pinv_sym(&(f.transpose() * f), gram_rcond(f.ncols())))
        .collect();
    let mut total = 0.0;
    for &j in terms {
        let t = &g.terms[j];
        if t.kind == GramTermKind::Kron {
            for (i, (f, gi)) in factors.iter().zip(&t.factors).enumerate() {
                if f.ncols() <= SUPPORT_CHECK_CELLS && !supports(f, gi, SUPPORT_TOL) {
                    return Err(HdmmError::Unsupported(format!(
                        "strategy factor {i} does not support workload term {j}"
                    )));
                }
            }
        }
        total += t.coeff
            * inv
                .iter()
                .zip(&t.factors)
                .map(|(p, gi)| trace_of_product(p, gi))
                .product::<f64>();
    }
    Ok(total)
}

fn union_core(g: &GramRepr, groups: &[UnionGroup]) -> Result<f64> {
    let mut covered = vec![false; g.terms.len()];
    let mut total = 0.0;
    for grp in groups {
        for &j in &grp.terms {
            if j >= covered.len() || covered[j] {
                return Err(HdmmError::Unsupported(format!(
                    "union strategy assigns workload term {j} twice or out of range"
                )));
            }
            covered[j] = true;
        }
        total += kron_core(g, &grp.factors, &grp.terms)? / (grp.share * grp.share);
    }
    if let Some(j) = covered.iter().position(|c| !c) {
        return Err(HdmmError::Unsupported(format!("no union group answers workload term {j}")));
    }
    Ok(total)
}

/// Eigenvalue-wise `Σ m(a)·κ_w(a)/κ_θ²(a)`; exact for any workload because
/// the marginal approximation preserves traces against marginal Grams.
fn marginal_core(g: &GramRepr, theta: &MarginalVector) -> Result<f64> {
    let w = marginal_approx(g)?;
    if w.domain != theta.domain {
        return Err(HdmmError::Shape("marginal strategy domain differs from workload".into()));
    }
    let sq = theta.map(|t| t * t);
    marginal_trace(&w, &sq)
}

/// `tr[G(v)⁺ G(w)]` with a support check on the eigenspaces.
pub fn marginal_trace(w: &MarginalVector, v: &MarginalVector) -> Result<f64> {
    let kw = eigenvalues(w).weights;
    let kv = eigenvalues(v).weights;
    let mult = w.domain.multiplicity();
    let vmax = kv.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    let wmax = kw.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    let mut total = 0.0;
    for ((&a, &b), &m) in kw.iter().zip(&kv).zip(&mult) {
        if m == 0.0 {
            continue;
        }
        if b > 1e-12 * vmax {
            total += m * a / b;
        } else if a > 1e-9 * wmax {
            return Err(HdmmError::Unsupported("marginal strategy does not support the workload".into()));
        }
    }
    Ok(total)
}

/// Singular-value lower bound on `Q` for any strategy.
pub fn svd_bound(g: &GramRepr) -> Result<f64> {
    if g.terms.len() == 1 && g.terms[0].kind == GramTermKind::Kron {
        let t = &g.terms[0];
        return Ok(t.coeff * t.factors.iter().map(svd_bound_from_gram).product::<f64>());
    }
    if g.is_pure_kron() && is_marginal_gram(g) {
        return svdb_marginal(&marginal_approx(g)?);
    }
    if g.domain_size() <= SUPPORT_CHECK_CELLS {
        return Ok(svd_bound_from_gram(&g.dense(u128::MAX)?));
    }
    Err(HdmmError::Unsupported("bound unavailable for this workload".into()))
}

/// Rank of the workload matrix, from its Gram.
pub fn workload_rank(g: &GramRepr) -> Result<f64> {
    if g.terms.len() == 1 && g.terms[0].kind == GramTermKind::Kron {
        if g.terms[0].coeff == 0.0 {
            return Ok(0.0);
        }
        return Ok(g.terms[0].factors.iter().map(|f| psd_rank(f) as f64).product());
    }
    if g.is_pure_kron() && is_marginal_gram(g) {
        let w = marginal_approx(g)?;
        let kw = eigenvalues(&w).weights;
        let max = kw.iter().fold(0.0f64, |m, k| m.max(*k));
        let mult = w.domain.multiplicity();
        return Ok(kw.iter().zip(&mult).filter(|(k, _)| **k > 1e-9 * max).map(|(_, m)| m).sum());
    }
    if g.domain_size() <= SUPPORT_CHECK_CELLS {
        return Ok(psd_rank(&g.dense(u128::MAX)?) as f64);
    }
    Err(HdmmError::Unsupported("rank unavailable for this workload".into()))
}

/// `Q` of the identity strategy: `tr(WᵀW)`.
pub fn identity_error(g: &GramRepr) -> f64 {
    g.trace()
}

/// `Q` of answering the workload itself: `‖W‖²·rank(W)`.
pub fn workload_strategy_error(w: &ImplicitWorkload, g: &GramRepr, norm: NormKind) -> Result<f64> {
    let s = w.sensitivity(norm);
    Ok(s * s * workload_rank(g)?)
}
