//! Workloads: building blocks, implicit Kronecker representations, Grams and error analysis.

pub mod analysis;
mod blocks;
mod gram;
mod implicit;
mod matvec;
pub mod spec;

pub use analysis::{identity_error, svd_bound, unit_error, workload_rank, workload_strategy_error};
pub use blocks::{block_gram, gram_closed_form, materialize_block, BuildingBlock};
pub use gram::{disjunction_gram, disjunctive_terms, gram, negate, GramRepr, GramTerm, GramTermKind};
pub use implicit::{
    impvec, ImplicitWorkload, KronTerm, LogicalProduct, LogicalWorkload, NormKind, DEFAULT_MATERIALIZE_CAP,
};
pub use matvec::{kron_matvec, kron_matvec_transpose};
pub use spec::{parse_workload, workload_to_json};
