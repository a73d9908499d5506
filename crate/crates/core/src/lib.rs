//! Semantic type detection for table columns.
//!
//! Columns are featurized ([`featurizer`]), scored by a neural classifier
//! ([`neural`]) that can also see the table's LDA topic vector ([`topics`]),
//! and decoded jointly per table by a linear-chain CRF ([`crf`]).
//! [`pipeline`] wires the stages together and [`bundle`] stores the result.

pub mod bundle;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod eval;
pub mod featurizer;
pub mod neural;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod synthetic;
pub mod topics;

pub use config::PipelineConfig;
pub use corpus::{Column, Table, TypeId, TypeVocabulary};
pub use error::{Error, Result};
pub use pipeline::{ModelBundle, PredictMode};

pub type ClassifierModel = neural::ClassifierModel<f64>;
pub type CrfModel = crf::CrfModel<f64>;
pub type PairwiseMatrix = crf::PairwiseMatrix<f64>;
pub type UnaryPotentials = crf::UnaryPotentials<f64>;
