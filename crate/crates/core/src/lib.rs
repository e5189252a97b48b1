//! Factor-graph inference: exact partition functions, numerically stable
//! damped loopy belief propagation with the Bethe free energy, and belief
//! propagation neural networks trained through a reverse-mode tape.

pub mod error;
pub mod factor_graph;
pub mod logspace;

pub use error::{Error, Result};
pub use factor_graph::{Edge, FactorDecl, FactorGraph, Isomorphism, VariableDecl};
pub use logspace::LOG_ZERO;
pub mod exact;
pub mod generators;
pub mod bp;
pub mod autodiff;
pub mod bpnn;
pub mod training;
