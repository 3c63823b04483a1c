//! Single-topic-per-document LDA with unsupervised author clustering.
//!
//! Each author has a topic distribution drawn from a cluster-level Dirichlet,
//! each short document gets exactly one topic, and cluster assignments are
//! inferred jointly with the topics. Two inference engines are provided: a
//! collapsed Gibbs sampler ([`gibbs`]) and a variational EM procedure ([`vb`]).
//! Supporting modules cover corpus ingestion ([`corpus`]), generative
//! simulators ([`generator`]), evaluation metrics ([`eval`]), and a
//! topic-coverage Monte Carlo for measuring how insular a cluster's topic
//! choices are ([`echo`]).

pub mod corpus;
pub mod echo;
pub mod eval;
pub mod generator;
pub mod gibbs;
pub mod math;
pub mod model;
pub mod presets;
pub mod vb;

mod error;

pub use error::{Error, Result};
