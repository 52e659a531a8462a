//! Mixture-of-experts policies trained with per-component curricula, an
//! expectation-maximization baseline, synthetic multimodal tasks and the
//! metrics used to compare them.

pub mod config;
pub mod curriculum;
pub mod dataset;
pub mod em;
pub mod error;
pub mod experts;
pub mod gating;
pub mod imc;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numeric;
pub mod rng;
pub mod synth;

pub use config::{BatchSize, ExpertKind, TrainConfig};
pub use curriculum::{LogCurriculum, MixtureWeights, Responsibilities};
pub use dataset::{Dataset, DatasetSchema};
pub use em::{em_train, EmModel};
pub use error::{ImcError, Result};
pub use experts::{ExpertSet, GaussianExpert, MeanModel};
pub use gating::GatingNet;
pub use imc::{train, ImcModel, ImcTrainer, IterationRecord};
pub use model::SavedModel;
