//! High-dimensional matrix mechanism.
//!
//! Workloads of linear counting queries over multi-attribute domains are kept
//! in implicit form (weighted unions of Kronecker products, or weighted
//! marginals). Strategies are selected by numerical optimization of the
//! analytic error `‖A‖²·‖W A⁺‖²_F`, and the private pipeline measures a data
//! vector under Laplace or Gaussian noise and reconstructs workload answers by
//! least squares without materializing the full query matrices.
//!
//! Kronecker products and data vectors use a row-major attribute order: the
//! first attribute varies slowest.

pub mod error;
pub mod linalg;
pub mod marginals;
pub mod mechanism;
pub mod optimize;
pub mod rng;
pub mod workload;

pub use error::{HdmmError, Result};
pub use linalg::Matrix;
pub use marginals::{DomainShape, MarginalVector};
pub use mechanism::{DataVector, DomainConfig, Measurement, NoiseKind, NoiseSpec};
pub use optimize::{NormKind, OptConfig, OptResult, Operator, Strategy, StrategyVariant};
pub use workload::{BuildingBlock, GramRepr, ImplicitWorkload, KronTerm, LogicalWorkload};
