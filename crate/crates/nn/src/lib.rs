//! Small double-precision neural-network kernel: dense matrices, a
//! reverse-mode tape, dense/masked layers, rational-quadratic splines, Adam
//! and training schedules, and finite-difference gradient checks.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod matrix;
pub mod optim;
pub mod spline;
pub mod store;

pub use graph::{Gradients, Graph, GraphError, Var};
pub use layers::{Activation, Dense, Made, MaskedDense, Mlp, Mode};
pub use matrix::Matrix;
pub use optim::{Adam, EarlyStopping, PlateauScheduler, StopDecision, TrainSchedule};
pub use spline::SplineSpec;
pub use store::{ParamId, ParamStore, StoreError};
