//! Single-attribute optimization: p-Identity strategies under L1 and a
//! Cholesky-parameterized convex program under L2.

use std::time::Instant;

use nalgebra::{Cholesky, SymmetricEigen};

use super::lbfgs::{minimize, minimize_box};
use super::pidentity::{objective_pidentity, pidentity_matrix};
use super::{best_of, OptConfig, OptResult, Operator, Strategy, StrategyVariant};
use crate::error::{HdmmError, Result};
use crate::linalg::{check_square, svd_bound_from_gram, symmetrize, trace_pinv_gram, Matrix};
use crate::rng::SplitMix64;
use crate::workload::NormKind;

/// Optimizer state for one attribute, reusable as a warm start.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Opt0State {
    /// p-Identity parameters Θ (p × n).
    Laplace(Matrix),
    /// Unit-diagonal Gram `X = AᵀA`.
    Gaussian(Matrix),
}

impl Opt0State {
    pub fn strategy_matrix(&self) -> Matrix {
        match self {
            Opt0State::Laplace(theta) => pidentity_matrix(theta),
            Opt0State::Gaussian(x) => {
                let chol = Cholesky::new(x.clone()).expect("optimized X is positive definite");
                chol.l().transpose()
            }
        }
    }

    pub fn identity(n: usize, p: usize, norm: NormKind) -> Self {
        match norm {
            NormKind::L1 => Opt0State::Laplace(Matrix::zeros(p, n)),
            NormKind::L2 => Opt0State::Gaussian(Matrix::identity(n, n)),
        }
    }

    pub fn random(n: usize, p: usize, norm: NormKind, rng: &mut SplitMix64) -> Self {
        match norm {
            NormKind::L1 => Opt0State::Laplace(Matrix::from_fn(p, n, |_, _| rng.next_f64() / p as f64)),
            NormKind::L2 => Opt0State::Gaussian(Matrix::identity(n, n)),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Opt0Outcome {
    pub state: Opt0State,
    /// `tr[(AᵀA)⁺ G]` for the unit-sensitivity strategy.
    pub value: f64,
    pub iterations: usize,
}

/// Normalizes the Gram so the optimizer sees values of order one.
fn scaled(gram: &Matrix) -> (Matrix, f64) {
    let s = gram.trace().abs().max(gram.amax());
    if s > 0.0 && s.is_finite() {
        (gram / s, s)
    } else {
        (gram.clone(), 1.0)
    }
}

/// Upper bound on p-Identity entries. Rank-deficient Grams push Θ toward
/// infinity, where the closed-form objective cancels catastrophically; at
/// this bound the remaining gap to the limit is about 1e-4 relative.
const THETA_MAX: f64 = 1e4;

fn laplace_run(gram: &Matrix, theta0: Matrix, cfg: &OptConfig) -> Opt0Outcome {
    let (p, n) = theta0.shape();
    let (g, s) = scaled(gram);
    let eval = |x: &[f64], grad: &mut [f64]| {
        let theta = Matrix::from_column_slice(p, n, x);
        let (v, gr) = objective_pidentity(&theta, &g);
        grad.copy_from_slice(gr.as_slice());
        // The true value is positive for any nonzero Gram; anything else is roundoff.
        if v > 0.0 || g.amax() == 0.0 { v } else { f64::INFINITY }
    };
    let lower = vec![0.0; p * n];
    let upper = vec![THETA_MAX; p * n];
    let theta0: Vec<f64> = theta0.iter().map(|v| v.clamp(0.0, THETA_MAX)).collect();
    let out = minimize_box(eval, theta0, &lower, &upper, &cfg.lbfgs());
    Opt0Outcome {
        state: Opt0State::Laplace(Matrix::from_column_slice(p, n, &out.x)),
        value: out.f * s,
        iterations: out.iterations,
    }
}

/// Best of the warm start (if any), the identity start and random starts.
pub(crate) fn laplace_inner(
    gram: &Matrix,
    p: usize,
    cfg: &OptConfig,
    seed: u64,
    warm: Option<&Matrix>,
) -> (Opt0Outcome, usize) {
    let n = gram.nrows();
    let p = p.max(1);
    let base = SplitMix64::new(seed);
    let restarts = cfg.restarts.max(1) + usize::from(warm.is_some());
    let (_, out) = best_of(restarts, |r| {
        let theta0 = match (warm, r) {
            (Some(w), 0) => w.clone(),
            _ => {
                let idx = r - usize::from(warm.is_some());
                if idx == 0 {
                    Matrix::zeros(p, n)
                } else {
                    let mut rng = base.derive(idx as u64);
                    Matrix::from_fn(p, n, |_, _| rng.next_f64() / p as f64)
                }
            }
        };
        let o = laplace_run(gram, theta0, cfg);
        (o.value, o)
    });
    (out, restarts)
}

/// Minimizes `‖W A(Θ)⁺‖²_F` over p-Identity strategies.
pub fn opt0_laplace(gram_w: &Matrix, p: usize, cfg: &OptConfig) -> Result<OptResult> {
    check_square("workload Gram", gram_w)?;
    let start = Instant::now();
    let (out, restarts) = laplace_inner(gram_w, p, cfg, cfg.seed, None);
    let a = out.state.strategy_matrix();
    // Columns have unit L1 norm, so the trace is the error itself.
    let q = trace_pinv_gram(&a, gram_w);
    let strategy = Strategy::new(StrategyVariant::Explicit(a), NormKind::L1);
    Ok(OptResult {
        strategy,
        unit_error: q,
        svd_bound: Some(svd_bound_from_gram(gram_w)),
        operator: Operator::Opt0,
        iterations: out.iterations,
        restarts_used: restarts,
        wallclock: start.elapsed(),
    })
}

fn lower_index(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
}

fn gaussian_x(n: usize, idx: &[(usize, usize)], params: &[f64]) -> Matrix {
    let mut x = Matrix::identity(n, n);
    for (&(i, j), &v) in idx.iter().zip(params) {
        x[(i, j)] = v;
        x[(j, i)] = v;
    }
    x
}

/// Ridge added to Grams that are singular, relative to `tr(G)/n`.
const RIDGE: f64 = 1e-8;

fn regularized(gram: &Matrix) -> Matrix {
    let n = gram.nrows();
    let eig = SymmetricEigen::new(symmetrize(gram));
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 1e-10 * max {
        gram.clone()
    } else {
        gram + Matrix::identity(n, n) * (RIDGE * gram.trace() / n as f64).max(f64::MIN_POSITIVE)
    }
}

/// `X₀ = P√ΛPᵀ` rescaled to unit diagonal.
fn gaussian_init(gram: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(gram));
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let s = &eig.eigenvectors * Matrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..s.nrows()).map(|i| 1.0 / s[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    let n = s.nrows();
    symmetrize(&Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { d[i] * s[(i, j)] * d[j] }))
}

pub(crate) fn gaussian_run(gram: &Matrix, x0: Option<&Matrix>, cfg: &OptConfig) -> Result<Opt0Outcome> {
    let n = gram.nrows();
    let reg = regularized(gram);
    let (g, _) = scaled(&reg);
    let start = match x0 {
        Some(x) => x.clone(),
        None => gaussian_init(&g),
    };
    let idx = lower_index(n);
    let params: Vec<f64> = idx.iter().map(|&(i, j)| start[(i, j)]).collect();
    let penalty = cfg.pd_penalty;
    let eval = |x: &[f64], grad: &mut [f64]| {
        let xm = gaussian_x(n, &idx, x);
        let Some(chol) = Cholesky::new(xm) else {
            grad.iter_mut().for_each(|v| *v = 0.0);
            return penalty;
        };
        let inv = chol.inverse();
        let value = inv.component_mul(&g).sum();
        let ig = &inv * &g * &inv;
        for (k, &(i, j)) in idx.iter().enumerate() {
            grad[k] = -(ig[(i, j)] + ig[(j, i)]);
        }
        value
    };
    let out = minimize(eval, params, &vec![f64::NEG_INFINITY; idx.len()], &cfg.lbfgs());
    let x = gaussian_x(n, &idx, &out.x);
    let chol = Cholesky::new(x.clone())
        .ok_or_else(|| HdmmError::optimization("opt0", "iterate is not positive definite"))?;
    let value = chol.inverse().component_mul(gram).sum();
    Ok(Opt0Outcome {
        state: Opt0State::Gaussian(x),
        value,
        iterations: out.iterations,
    })
}

/// Minimizes `tr[X⁻¹ WᵀW]` over unit-diagonal positive definite `X = AᵀA`.
pub fn opt0_gaussian(gram_w: &Matrix, cfg: &OptConfig) -> Result<OptResult> {
    check_square("workload Gram", gram_w)?;
    let start = Instant::now();
    let out = gaussian_run(gram_w, None, cfg)?;
    let strategy = Strategy::new(StrategyVariant::Explicit(out.state.strategy_matrix()), NormKind::L2);
    Ok(OptResult {
        strategy,
        unit_error: out.value,
        svd_bound: Some(svd_bound_from_gram(gram_w)),
        operator: Operator::Opt0,
        iterations: out.iterations,
        restarts_used: 1,
        wallclock: start.elapsed(),
    })
}

/// One attribute's optimization in either noise regime, optionally warm-started.
pub(crate) fn opt0_inner(
    gram: &Matrix,
    p: usize,
    norm: NormKind,
    cfg: &OptConfig,
    seed: u64,
    warm: Option<&Opt0State>,
) -> Result<Opt0Outcome> {
    match norm {
        NormKind::L1 => {
            let w = match warm {
                Some(Opt0State::Laplace(t)) => Some(t),
                _ => None,
            };
            Ok(laplace_inner(gram, p, cfg, seed, w).0)
        }
        NormKind::L2 => {
            let w = match warm {
                Some(Opt0State::Gaussian(x)) => Some(x),
                _ => None,
            };
            let fresh = gaussian_run(gram, None, cfg)?;
            match w {
                Some(x) => {
                    let warm = gaussian_run(gram, Some(x), cfg)?;
                    Ok(if warm.value <= fresh.value { warm } else { fresh })
                }
                None => Ok(fresh),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ones;
    use crate::workload::{block_gram, BuildingBlock};

    fn quick() -> OptConfig {
        OptConfig { restarts: 4, max_iters: 300, ..Default::default() }
    }

    #[test]
    fn laplace_identity_workload() {
        let r = opt0_laplace(&Matrix::identity(8, 8), 2, &quick()).unwrap();
        assert!(r.unit_error <= 8.0 * 1.02);
        assert!((r.strategy.sensitivity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn laplace_total_workload() {
        let cfg = OptConfig { max_iters: 1000, ..quick() };
        let r = opt0_laplace(&ones(8, 8), 1, &cfg).unwrap();
        assert!(r.unit_error <= 1.02, "{}", r.unit_error);
    }

    #[test]
    fn laplace_never_worse_than_identity() {
        let g = block_gram(&BuildingBlock::AllRange, 16).unwrap();
        let r = opt0_laplace(&g, 1, &quick()).unwrap();
        assert!(r.unit_error <= g.trace());
        assert!(r.unit_error >= r.svd_bound.unwrap() * (1.0 - 1e-9));
    }

    #[test]
    fn gaussian_identity_fixed_point() {
        let r = opt0_gaussian(&Matrix::identity(5, 5), &quick()).unwrap();
        assert!((r.unit_error - 5.0).abs() < 1e-9);
        let a = r.strategy.dense();
        assert!((a - Matrix::identity(5, 5)).amax() < 1e-9);
    }

    #[test]
    fn gaussian_matches_convex_solver_on_prefix() {
        // Optimum of the same convex program from an independent SDP solver.
        let g = block_gram(&BuildingBlock::Prefix, 16).unwrap();
        let r = opt0_gaussian(&g, &OptConfig { max_iters: 500, ..quick() }).unwrap();
        assert!((r.unit_error / 45.665356812 - 1.0).abs() < 1e-6, "{}", r.unit_error);
        assert!(r.unit_error >= r.svd_bound.unwrap());
        assert!((r.strategy.sensitivity() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_singular_gram() {
        let r = opt0_gaussian(&ones(4, 4), &quick()).unwrap();
        assert!(r.unit_error.is_finite());
        assert!(r.unit_error <= 4.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let g = block_gram(&BuildingBlock::AllRange, 12).unwrap();
        let a = opt0_laplace(&g, 2, &quick()).unwrap();
        let b = opt0_laplace(&g, 2, &quick()).unwrap();
        assert_eq!(a.strategy, b.strategy);
        assert_eq!(a.unit_error.to_bits(), b.unit_error.to_bits());
    }
}
