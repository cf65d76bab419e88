//! Privacy parameters and noise calibration.

use serde::{Deserialize, Serialize};

use crate::error::{HdmmError, Result};
use crate::rng::SplitMix64;
use crate::workload::NormKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    Laplace { epsilon: f64 },
    Gaussian { epsilon: f64, delta: f64 },
}

impl NoiseKind {
    pub fn norm(&self) -> NormKind {
        match self {
            NoiseKind::Laplace { .. } => NormKind::L1,
            NoiseKind::Gaussian { .. } => NormKind::L2,
        }
    }
}

/// Resolved noise: scale is `b` for Laplace, `σ` for Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub scale: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// Noise-free measurements, for testing.
    pub fn zero(kind: NoiseKind) -> Self {
        NoiseSpec { kind, scale: 0.0, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn norm(&self) -> NormKind {
        self.kind.norm()
    }

    /// Per-row noise variance: `2b²` or `σ²`.
    pub fn variance(&self) -> f64 {
        match self.kind {
            NoiseKind::Laplace { .. } => 2.0 * self.scale * self.scale,
            NoiseKind::Gaussian { .. } => self.scale * self.scale,
        }
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        match self.kind {
            NoiseKind::Laplace { .. } => rng.laplace(self.scale),
            NoiseKind::Gaussian { .. } => self.scale * rng.standard_normal(),
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Privacy loss `δ(σ)` of the Gaussian mechanism at unit L2 sensitivity.
pub fn gaussian_delta(sigma: f64, epsilon: f64) -> f64 {
    let a = 1.0 / (2.0 * sigma);
    let b = epsilon * sigma;
    normal_cdf(a - b) - epsilon.exp() * normal_cdf(-a - b)
}

/// `√(2 ln(1.25/δ))/ε`.
pub fn classical_sigma(epsilon: f64, delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt() / epsilon
}

pub fn calibrate(kind: NoiseKind) -> Result<NoiseSpec> {
    match kind {
        NoiseKind::Laplace { epsilon } => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(HdmmError::Calibration(format!("epsilon must be positive, got {epsilon}")));
            }
            Ok(NoiseSpec { kind, scale: 1.0 / epsilon, seed: 0 })
        }
        NoiseKind::Gaussian { epsilon, delta } => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(HdmmError::Calibration(format!("epsilon must be positive, got {epsilon}")));
            }
            if !(delta > 0.0 && delta < 1.0) {
                return Err(HdmmError::Calibration(format!("delta must lie in (0, 1), got {delta}")));
            }
            Ok(NoiseSpec { kind, scale: analytic_sigma(epsilon, delta)?, seed: 0 })
        }
    }
}

/// Smallest σ with `δ(σ) ≤ δ`, by bisection.
fn analytic_sigma(epsilon: f64, delta: f64) -> Result<f64> {
    let mut lo = 1e-6;
    let mut hi = 2.0 * classical_sigma(epsilon, delta);
    if gaussian_delta(lo, epsilon) <= delta {
        return Err(HdmmError::Calibration("lower bracket already satisfies delta".into()));
    }
    // The classical bound is only valid for ε ≤ 1; widen until bracketed.
    let mut widen = 0;
    while gaussian_delta(hi, epsilon) > delta {
        hi *= 2.0;
        widen += 1;
        if widen > 60 {
            return Err(HdmmError::Calibration("could not bracket sigma".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gaussian_delta(mid, epsilon) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
