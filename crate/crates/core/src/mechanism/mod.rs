//! The private pipeline: vectorize, measure with calibrated noise, reconstruct.

mod data;
mod noise;
mod pipeline;

pub use data::{bin_index, vectorize_csv, Attribute, AttributeKind, DataVector, DomainConfig, MAX_CELLS};
pub use noise::{calibrate, classical_sigma, gaussian_delta, normal_cdf, NoiseKind, NoiseSpec};
pub use pipeline::{
    analytic_rmse, analytic_tse, empirical_error, estimate_data, measure, reconstruct, rmse_from_q, strategy_apply,
    true_answers, Measurement,
};
