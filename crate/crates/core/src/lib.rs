//! Early identification of pathogenic accounts from an action log alone.
//!
//! The pipeline reads `(user, message, time)` postings, extracts cascades,
//! scores every user with prima facie causality metrics (optionally with
//! sliding-window time decay), groups users by Louvain communities of the
//! co-posting graph, and classifies them with thresholds, KNN, or
//! community-restricted KNN.

pub mod action_log;
pub mod causal;
pub mod classify;
pub mod community;
pub mod decay;
pub mod error;
pub mod eval;
pub mod features;
pub mod par;
pub mod synth;

pub use action_log::{ActionLog, CascadeParams, CascadeSet, UserId};
pub use causal::{CausalConfig, CausalModel, CausalityVector, Metric, RhoMode};
pub use error::{Error, Result};
