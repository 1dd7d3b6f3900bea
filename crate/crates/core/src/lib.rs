//! Session-based recommendation with latent factors trained on choice
//! sessions: a user is shown an offer set and picks from it.
//!
//! The crate covers the parameter store and utility model ([`model`]), the
//! session losses ([`objectives`]), SGD training ([`trainer`]), data I/O
//! and simulation ([`data`]), evaluation ([`evaluation`]) and the `ccf`
//! command line ([`cli`]).

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ContentFeatures, EntityId, ParamKind, ParameterStore, Session, StoreConfig};
pub use objectives::{DyadObservation, LossKind, Record};
pub use trainer::{TrainConfig, TrainReport, TrainingSet};
