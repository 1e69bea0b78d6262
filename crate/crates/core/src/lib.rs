//! Out-of-domain robust dialog control with the Hybrid Code Network family.
//!
//! The crate covers the whole experimental loop: transcript ingestion and
//! featurization ([`corpus`]), controlled OOD augmentation ([`augment`]),
//! turn dropout ([`turndrop`]), a small hand-differentiated numeric core
//! ([`nncore`]), the HCN / HHCN / VHCN models ([`models`]), training and
//! grid search ([`train`]), the evaluation metrics ([`eval`]) and the
//! end-to-end pipeline used by the `oodhcn` binary ([`pipeline`]).

pub mod augment;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod models;
pub mod nncore;
pub mod pipeline;
pub mod rng;
pub mod toy;
pub mod train;
pub mod turndrop;

pub use error::{Error, Result};
