//! Calibration of limit-order-book market simulators by neural posterior
//! estimation.
//!
//! * [`flow`]: conditional MAF / NSF normalizing flows.
//! * [`npe`]: embedding + flow models, training, posteriors, RMSE and SBC.
//! * [`dataset`]: persisted simulation datasets with splits and provenance.
//! * [`pipeline`]: simulation budgets, ingestion and recovery reports.
//! * [`toy`]: a linear-Gaussian problem with a closed-form posterior.

pub mod config;
pub mod dataset;
pub mod flow;
pub mod io;
pub mod npe;
pub mod pipeline;
pub mod toy;

pub use config::{ModelKind, RunConfig};
pub use dataset::CalibrationDataset;
pub use flow::{ConditionalFlow, Flavor, FlowConfig};
pub use npe::{NpeModel, Posterior, PosteriorSampler, Samples, ThetaPrior, TrainConfig};
pub use pipeline::PipelineError;
