//! Semi-supervised Gaussian mixture classification when class labels go
//! missing through a mix of a completely-at-random channel and an
//! entropy-driven channel.
//!
//! Every numerical routine is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` aliases below name the double-precision instantiations used by the
//! command-line tool.

// `!(x > 0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod linalg;
pub mod missingness;
pub mod mixture;
pub mod optim;
pub mod scalar;
pub mod simulation;

pub use error::{Error, Result};
pub use estimation::{
    complete_data_mle, ecm_fit, init_semisupervised, maximize_q_theta, pack_theta, q_theta, unpack_theta,
    EcmOptions, FitResult, InitOptions, InitResult, PackedTheta,
};
pub use evaluation::{bayes_error_equal_cov, empirical_accuracy, mc_error_oracle, StudyReport};
pub use missingness::{ChannelPosteriors, MarResponse, MarWeighting, MissingnessParams};
pub use mixture::{
    bayes_classify, class_posteriors, CovStructure, MissingCode, MixtureParams, PartialDataset, Responsibilities,
};
pub use scalar::Scalar;
pub use simulation::{rng_stream, simulate, McarMode, SimConfig};

pub type MixtureParamsF64 = MixtureParams<f64>;
pub type MissingnessParamsF64 = MissingnessParams<f64>;
pub type PartialDatasetF64 = PartialDataset<f64>;
pub type ResponsibilitiesF64 = Responsibilities<f64>;
pub type FitResultF64 = FitResult<f64>;
pub type SimConfigF64 = SimConfig<f64>;

pub type MixtureParamsF32 = MixtureParams<f32>;
pub type PartialDatasetF32 = PartialDataset<f32>;
