//! Strategies made of weighted marginals, optimized over the weights θ.

use std::time::Instant;

use super::lbfgs::minimize;
use super::{best_of, OptConfig, OptResult, Operator, Strategy, StrategyVariant};
use crate::error::{HdmmError, Result};
use crate::marginals::{closed_form_theta, subset_sum, svdb_marginal, y_apply, y_solve, DomainShape, MarginalVector};
use crate::rng::SplitMix64;
use crate::workload::{analysis::marginal_trace, gram, svd_bound, GramRepr, ImplicitWorkload, NormKind};

/// Lower bound on the top-mask weight during iterations.
const TOP_FLOOR: f64 = 1e-8;

struct Problem {
    domain: DomainShape,
    c: Vec<f64>,
    /// `m(a)·κ_w(a)`, zero where the workload has no energy.
    mk: Vec<f64>,
    norm: NormKind,
}

impl Problem {
    fn new(w: &MarginalVector, norm: NormKind) -> Self {
        let kw = y_apply(&w.domain, &w.weights);
        let max = kw.iter().fold(0.0f64, |m, k| m.max(*k));
        let mult = w.domain.multiplicity();
        let mk = kw
            .iter()
            .zip(&mult)
            .map(|(k, m)| if *k > 1e-12 * max && *m > 0.0 { k * m } else { 0.0 })
            .collect();
        Problem { domain: w.domain.clone(), c: w.domain.characteristic(), mk, norm }
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let sq: Vec<f64> = theta.iter().map(|t| t * t).collect();
        let kt = y_apply(&self.domain, &sq);
        let mut t = 0.0;
        let mut r = vec![0.0; theta.len()];
        for a in 0..theta.len() {
            if self.mk[a] == 0.0 {
                continue;
            }
            if !(kt[a] > 0.0) {
                return f64::INFINITY;
            }
            t += self.mk[a] / kt[a];
            r[a] = self.mk[a] / (kt[a] * kt[a]);
        }
        subset_sum(&mut r);
        let (scale, dscale): (f64, Vec<f64>) = match self.norm {
            NormKind::L1 => {
                let s: f64 = theta.iter().sum();
                (s * s, vec![2.0 * s; theta.len()])
            }
            NormKind::L2 => (sq.iter().sum(), theta.iter().map(|x| 2.0 * x).collect()),
        };
        for b in 0..theta.len() {
            grad[b] = dscale[b] * t - scale * 2.0 * self.c[b] * theta[b] * r[b];
        }
        scale * t
    }
}

/// `‖θ‖²·tr[G(θ²)⁺ G(w)]` and its gradient in θ.
pub fn marginal_objective(w: &MarginalVector, theta: &[f64], norm: NormKind) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; theta.len()];
    let v = Problem::new(w, norm).eval(theta, &mut grad);
    (v, grad)
}

/// Closed-form θ with negative radicands clipped to zero.
fn clipped_closed_form(w: &MarginalVector) -> Vec<f64> {
    let kw = y_apply(&w.domain, &w.weights);
    let roots: Vec<f64> = kw.iter().map(|k| k.max(0.0).sqrt()).collect();
    y_solve(&w.domain, &roots).iter().map(|t| t.max(0.0).sqrt()).collect()
}

fn normalized(theta: Vec<f64>, norm: NormKind) -> Vec<f64> {
    let s = norm.vector_norm(&theta);
    if s > 0.0 {
        theta.into_iter().map(|t| t / s).collect()
    } else {
        theta
    }
}

fn q_of(w: &MarginalVector, theta: &[f64], norm: NormKind) -> Result<f64> {
    let s = norm.vector_norm(theta);
    let sq = MarginalVector::new(w.domain.clone(), theta.iter().map(|t| t * t).collect())?;
    Ok(s * s * marginal_trace(w, &sq)?)
}

pub(crate) fn opt_marginals_gram(g: &GramRepr, cfg: &OptConfig, norm: NormKind) -> Result<OptResult> {
    let start = Instant::now();
    let w = crate::marginals::marginal_approx(g)?;
    let domain = w.domain.clone();
    let top = domain.top();
    let bound = svd_bound(g).ok().or_else(|| svdb_marginal(&w).ok());

    let finish = |theta: Vec<f64>, iterations: usize, restarts: usize| -> Result<OptResult> {
        let theta = normalized(theta, norm);
        let q = q_of(&w, &theta, norm)?;
        Ok(OptResult {
            strategy: Strategy::new(StrategyVariant::Marginal(MarginalVector::new(domain.clone(), theta)?), norm),
            unit_error: q,
            svd_bound: bound,
            operator: Operator::Marginal,
            iterations,
            restarts_used: restarts,
            wallclock: start.elapsed(),
        })
    };

    if norm == NormKind::L2 {
        if let Some(theta) = closed_form_theta(&w) {
            if q_of(&w, &theta.weights, norm).is_ok() {
                return finish(theta.weights, 0, 0);
            }
        }
    }

    let problem = Problem::new(&w, norm);
    let mut lower = vec![0.0; domain.num_masks()];
    lower[top] = TOP_FLOOR;
    let base = SplitMix64::new(cfg.seed);
    let init0 = clipped_closed_form(&w);
    let restarts = cfg.restarts.max(1);
    let (_, (theta, iterations)) = best_of(restarts, |r| {
        let x0: Vec<f64> = if r == 0 {
            init0.clone()
        } else {
            let mut rng = base.derive(r as u64);
            (0..domain.num_masks()).map(|_| rng.next_f64()).collect()
        };
        // Start from a scale where the floor is negligible.
        let s = norm.vector_norm(&x0);
        let x0: Vec<f64> = if s > 0.0 { x0.iter().map(|v| v / s).collect() } else { x0 };
        let out = minimize(|x, g| problem.eval(x, g), x0, &lower, &cfg.lbfgs());
        let q = if out.f.is_finite() { out.f } else { f64::INFINITY };
        (q, (out.x, out.iterations))
    });

    // Drop weights that are numerically zero when that keeps support and error.
    let theta = normalized(theta, norm);
    let q_full = q_of(&w, &theta, norm);
    let max = theta.iter().cloned().fold(0.0, f64::max);
    let pruned: Vec<f64> = theta.iter().map(|&t| if t < 1e-7 * max { 0.0 } else { t }).collect();
    let chosen = match (&q_full, q_of(&w, &pruned, norm)) {
        (Ok(a), Ok(b)) if b <= a * (1.0 + 1e-9) => pruned,
        (Ok(_), _) => theta,
        (Err(_), _) => {
            let mut bumped = theta;
            bumped[top] += 1e-4 * max.max(f64::MIN_POSITIVE);
            if q_of(&w, &bumped, norm).is_err() {
                return Err(HdmmError::optimization("marginal", "strategy does not support the workload"));
            }
            bumped
        }
    };
    finish(chosen, iterations, restarts)
}

/// Optimizes a marginal strategy for the workload's marginal approximation.
pub fn opt_marginals(w: &ImplicitWorkload, cfg: &OptConfig, norm: NormKind) -> Result<OptResult> {
    opt_marginals_gram(&gram(w), cfg, norm)
}
