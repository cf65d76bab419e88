//! Measure, reconstruct and error estimation.

use rayon::prelude::*;

use super::data::DataVector;
use super::noise::NoiseSpec;
use crate::error::{HdmmError, Result};
use crate::linalg::{pinv, Matrix, Vector};
use crate::marginals::{gram_ginverse, marginal_matvec, MarginalOp};
use crate::optimize::{detect_pidentity, pidentity_pinv_apply, Strategy, StrategyVariant};
use crate::rng::SplitMix64;
use crate::workload::{kron_matvec, unit_error, GramRepr, ImplicitWorkload};

/// Noisy strategy answers.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: Vec<f64>,
    /// Start offsets of each union group's answers (single entry otherwise).
    pub group_offsets: Vec<usize>,
    pub scale: f64,
}

fn dense_matvec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    (a * Vector::from_column_slice(x)).iter().cloned().collect()
}

/// `A·x` without materializing structured strategies.
pub fn strategy_apply(a: &Strategy, x: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
    if x.len() != a.num_columns() {
        return Err(HdmmError::Shape(format!(
            "data vector has {} cells, strategy has {} columns",
            x.len(),
            a.num_columns()
        )));
    }
    Ok(match &a.variant {
        StrategyVariant::Explicit(m) => (dense_matvec(m, x), vec![0]),
        StrategyVariant::Kron(f) => (kron_matvec(f, x)?, vec![0]),
        StrategyVariant::Marginal(theta) => (marginal_matvec(MarginalOp::Queries, theta, x)?, vec![0]),
        StrategyVariant::UnionKron(groups) => {
            let mut y = Vec::new();
            let mut offsets = Vec::new();
            for g in groups {
                offsets.push(y.len());
                y.extend(kron_matvec(&g.factors, x)?.into_iter().map(|v| g.share * v));
            }
            (y, offsets)
        }
    })
}

/// `y = A·x + ξ` with i.i.d. noise at the calibrated scale.
pub fn measure(a: &Strategy, x: &DataVector, noise: &NoiseSpec) -> Result<Measurement> {
    let s = a.sensitivity();
    if s > 1.0 + 1e-9 {
        return Err(HdmmError::Config(format!(
            "strategy sensitivity is {s}; normalize it to one before measuring"
        )));
    }
    if a.norm != noise.norm() {
        return Err(HdmmError::Config("strategy norm does not match the noise mechanism".into()));
    }
    let (mut y, group_offsets) = strategy_apply(a, &x.counts)?;
    let mut rng = SplitMix64::new(noise.seed);
    for v in y.iter_mut() {
        *v += noise.sample(&mut rng);
    }
    Ok(Measurement { y, group_offsets, scale: noise.scale })
}

fn pinv_factors(f: &[Matrix]) -> Vec<Matrix> {
    f.iter().map(pinv).collect()
}

/// Workload answers `W·x̂` for a set of terms, concatenated in term order.
fn answer_terms(w: &ImplicitWorkload, terms: &[usize], xhat: &[f64], out: &mut [Vec<f64>]) -> Result<()> {
    for &j in terms {
        let t = &w.terms[j];
        out[j] = kron_matvec(&t.factors, xhat)?.into_iter().map(|v| t.weight * v).collect();
    }
    Ok(())
}

/// Least-squares estimate `x̂ = A⁺y` for single-block strategies.
pub fn estimate_data(a: &Strategy, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != a.num_rows() {
        return Err(HdmmError::Shape(format!(
            "measurement has {} rows, strategy has {}",
            y.len(),
            a.num_rows()
        )));
    }
    match &a.variant {
        StrategyVariant::Explicit(m) => match detect_pidentity(m) {
            Some(theta) => Ok(pidentity_pinv_apply(&theta, y)),
            None => Ok(dense_matvec(&pinv(m), y)),
        },
        StrategyVariant::Kron(f) => kron_matvec(&pinv_factors(f), y),
        StrategyVariant::Marginal(theta) => {
            let z = marginal_matvec(MarginalOp::QueriesTranspose, theta, y)?;
            let ginv = gram_ginverse(&theta.map(|t| t * t));
            marginal_matvec(MarginalOp::Gram, &ginv, &z)
        }
        StrategyVariant::UnionKron(_) => Err(HdmmError::Unsupported(
            "union strategies reconstruct per group; use reconstruct".into(),
        )),
    }
}

/// Workload answers from a measurement, one vector per workload term.
///
/// Union strategies answer each term from its own group only, so answers of
/// different groups need not be mutually consistent.
pub fn reconstruct(a: &Strategy, m: &Measurement, w: &ImplicitWorkload) -> Result<Vec<Vec<f64>>> {
    if a.domain().iter().product::<usize>() != w.domain_size() {
        return Err(HdmmError::Shape("strategy and workload domains differ".into()));
    }
    let mut out = vec![Vec::new(); w.terms.len()];
    match &a.variant {
        StrategyVariant::UnionKron(groups) => {
            if m.group_offsets.len() != groups.len() || m.y.len() != a.num_rows() {
                return Err(HdmmError::Shape("measurement does not match the union strategy".into()));
            }
            for (k, g) in groups.iter().enumerate() {
                let start = m.group_offsets[k];
                let len: usize = g.factors.iter().map(|f| f.nrows()).product();
                let yg: Vec<f64> = m.y[start..start + len].iter().map(|v| v / g.share).collect();
                let xhat = kron_matvec(&pinv_factors(&g.factors), &yg)?;
                if g.terms.iter().any(|&j| j >= w.terms.len()) {
                    return Err(HdmmError::Shape("union group refers to a missing workload term".into()));
                }
                answer_terms(w, &g.terms, &xhat, &mut out)?;
            }
            if out.iter().zip(&w.terms).any(|(o, t)| o.len() != t.num_queries()) {
                return Err(HdmmError::Unsupported("union strategy leaves workload terms unanswered".into()));
            }
        }
        _ => {
            let xhat = estimate_data(a, &m.y)?;
            let all: Vec<usize> = (0..w.terms.len()).collect();
            answer_terms(w, &all, &xhat, &mut out)?;
        }
    }
    Ok(out)
}

/// Exact workload answers `W·x`.
pub fn true_answers(w: &ImplicitWorkload, x: &DataVector) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); w.terms.len()];
    let all: Vec<usize> = (0..w.terms.len()).collect();
    answer_terms(w, &all, &x.counts, &mut out)?;
    Ok(out)
}

/// Expected total squared error of the workload answers.
pub fn analytic_tse(q: f64, noise: &NoiseSpec) -> f64 {
    noise.variance() * q
}

/// `√(TSE/m)` from a unit-noise error.
pub fn rmse_from_q(q: f64, noise: &NoiseSpec, m_queries: usize) -> f64 {
    (analytic_tse(q, noise) / m_queries as f64).sqrt()
}

/// Root mean squared error per workload query.
pub fn analytic_rmse(g: &GramRepr, a: &Strategy, noise: &NoiseSpec, m_queries: usize) -> Result<f64> {
    Ok(rmse_from_q(unit_error(g, a)?, noise, m_queries))
}

/// Monte-Carlo mean squared error per query and its standard error.
pub fn empirical_error(
    w: &ImplicitWorkload,
    a: &Strategy,
    noise: &NoiseSpec,
    x: &DataVector,
    trials: usize,
) -> Result<(f64, f64)> {
    if trials < 2 {
        return Err(HdmmError::Config("need at least two trials".into()));
    }
    let truth: Vec<f64> = true_answers(w, x)?.concat();
    let m = truth.len() as f64;
    let base = SplitMix64::new(noise.seed);
    let errs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let spec = noise.with_seed(base.derive(t as u64).next_u64());
            let meas = measure(a, x, &spec)?;
            let ans = reconstruct(a, &meas, w)?.concat();
            Ok(ans.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m)
        })
        .collect::<Result<_>>()?;
    let k = trials as f64;
    let mean = errs.iter().sum::<f64>() / k;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (k - 1.0);
    Ok((mean, (var / k).sqrt()))
}
