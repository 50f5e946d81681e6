//! Deterministic federated-learning round simulator and robust-aggregation
//! library.
//!
//! The server-side rules cover adaptive similarity-based rejection of bad
//! client updates (with a Beta-Bernoulli client-quality posterior and
//! permanent blocking), plain federated averaging, Multi-KRUM and
//! coordinate-wise median. The simulator wires them to from-scratch local
//! SGD training, adversary injection and per-round metrics, reproducible
//! bit-for-bit from a single seed.

pub mod adversaries;
pub mod aggregation;
pub mod client_quality;
pub mod data;
pub mod error;
pub mod local_training;
pub mod numerics;
pub mod seeds;
pub mod simulator;

pub use adversaries::AdversarySpec;
pub use aggregation::{AfaHyperParams, AggregationOutcome, ClientId, RoundInput};
pub use client_quality::{beta_cdf, ClientQualityState};
pub use data::{DatasetSource, DatasetSpec, LabeledDataset, Normalization};
pub use error::{Error, Result};
pub use local_training::{ModelSpec, OutputActivation, TrainingConfig};
pub use numerics::ParamVector;
pub use simulator::{
    AdversaryConfig, AggregatorKind, ExperimentConfig, ExperimentOutput, QualityConfig,
    QualitySnapshot, RoundRecord, Simulation,
};
