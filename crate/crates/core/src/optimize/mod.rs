//! Strategy selection by numerical optimization of the unit-noise error.

mod dense;
mod hdmm;
mod kron;
pub mod lbfgs;
mod marginal;
mod opt0;
mod pidentity;
mod strategy;

use std::time::Duration;

pub use dense::{gradient_dense, objective_dense};
pub use hdmm::{default_p, opt_hdmm, opt_selected, workload_strategy};
pub use kron::{budget_shares, opt_kron, opt_plus};
pub use marginal::{marginal_objective, opt_marginals};
pub use opt0::{opt0_gaussian, opt0_laplace};
pub use pidentity::{detect_pidentity, objective_pidentity, pidentity_matrix, pidentity_pinv_apply};
pub use strategy::{Strategy, StrategyVariant, UnionGroup};

pub use crate::workload::NormKind;

/// Knobs shared by every optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub restarts: usize,
    pub seed: u64,
    /// Explicit p per attribute; `None` applies the default rule.
    pub p_per_attr: Option<Vec<usize>>,
    pub max_iters: usize,
    /// Relative objective improvement over five iterations below which a run stops.
    pub tolerance: f64,
    /// Objective value reported for non-positive-definite Gaussian iterates.
    pub pd_penalty: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            restarts: 25,
            seed: 0,
            p_per_attr: None,
            max_iters: 100,
            tolerance: 1e-5,
            pd_penalty: 1e12,
        }
    }
}

impl OptConfig {
    pub(crate) fn lbfgs(&self) -> lbfgs::LbfgsOptions {
        lbfgs::LbfgsOptions {
            max_iters: self.max_iters,
            rel_tolerance: self.tolerance,
            ..Default::default()
        }
    }
}

/// Which routine produced a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    Opt0,
    Kron,
    Plus,
    Marginal,
    Identity,
    Workload,
}

impl Operator {
    pub fn name(self) -> &'static str {
        match self {
            Operator::Opt0 => "opt0",
            Operator::Kron => "kron",
            Operator::Plus => "plus",
            Operator::Marginal => "marginal",
            Operator::Identity => "identity",
            Operator::Workload => "workload",
        }
    }

    pub fn parse(s: &str) -> Option<Operator> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "opt0" => Operator::Opt0,
            "kron" => Operator::Kron,
            "plus" => Operator::Plus,
            "marginal" | "marginals" => Operator::Marginal,
            "identity" => Operator::Identity,
            "workload" => Operator::Workload,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub strategy: Strategy,
    pub unit_error: f64,
    pub svd_bound: Option<f64>,
    pub operator: Operator,
    pub iterations: usize,
    pub restarts_used: usize,
    pub wallclock: Duration,
}

/// Runs `f` for every restart index in parallel and keeps the lowest value,
/// preferring the lowest index on ties.
pub(crate) fn best_of<T, F>(restarts: usize, f: F) -> (usize, T)
where
    T: Send,
    F: Fn(usize) -> (f64, T) + Sync,
{
    use rayon::prelude::*;
    let results: Vec<(f64, T)> = (0..restarts.max(1)).into_par_iter().map(&f).collect();
    let mut best: Option<(usize, f64, T)> = None;
    for (i, (v, t)) in results.into_iter().enumerate() {
        let better = match &best {
            None => true,
            Some((_, bv, _)) => v < *bv || (bv.is_nan() && !v.is_nan()),
        };
        if better {
            best = Some((i, v, t));
        }
    }
    let (i, _, t) = best.expect("at least one restart");
    (i, t)
}
