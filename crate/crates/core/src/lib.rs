//! Block coordinate descent for training deep networks through variable
//! splitting.
//!
//! The crate is layered bottom-up: [`linalg`] provides dense matrices,
//! [`operators`] the activations, losses, regularizers and scalar proximal
//! maps, [`state`] the network description and split iterates, [`solver`]
//! the block updates and epochs, and [`diagnostics`] the per-epoch
//! convergence checks. [`data`] and [`baseline`] supply datasets and the
//! backpropagation SGD reference.

use thiserror::Error;

pub mod baseline;
pub mod data;
pub mod diagnostics;
pub mod linalg;
pub mod operators;
pub mod solver;
pub mod state;

pub use linalg::{LinalgError, Matrix};
pub use operators::{ActivationKind, LossKind, RegularizerKind};
pub use solver::EpochResult;
pub use state::{
    Block, Form, Hyperparams, NetworkSpec, ObjectiveBreakdown, Problem, RiskScale, SplitState,
    UpdateOrder, VnStrategy,
};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Operator(#[from] operators::OperatorError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("state does not fit the {form} form: {reason}")]
    FormMismatch { form: Form, reason: String },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(
        "descent check failed at epoch {epoch} (block {block}): decrease {decrease:e} < {a} * {delta_sq:e}"
    )]
    DescentViolation {
        epoch: usize,
        block: String,
        decrease: f64,
        a: f64,
        delta_sq: f64,
    },
    #[error("non-finite entry in the iterate after epoch {epoch}")]
    NonFinite { epoch: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
