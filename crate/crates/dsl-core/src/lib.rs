//! Discriminative subgraph learning.
//!
//! Given labeled network samples that share a node set, this crate learns a
//! sparse, graph-connected selection matrix together with a max-margin
//! classifier, by alternating between a closed-form selection update and a
//! box-constrained dual problem. The selected rows name the node subgraph
//! that best explains the data while separating the classes.
//!
//! Modules:
//! - [`graph`]: summary graphs, Laplacians, conductance, geometric generator
//! - [`data`]: datasets, the planted-subgraph generator, stratified folds
//! - [`io`]: CSV and JSON round-trips for datasets, models, and reports
//! - [`svm`]: max-margin hyperplane solvers (squared and absolute flavors)
//! - [`dual`]: the box-constrained dual of the selection subproblem
//! - [`optim`]: the alternating optimizer and its building blocks
//! - [`eval`]: rankings, recovery AUC, cross-validation, subgraph reports

pub mod data;
pub mod dual;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod optim;
pub mod svm;

pub use error::{DslError, Result};

/// The user guide, rendered from `book/` and embedded here so every code
/// block in it compiles and runs as a documentation test.
pub mod guide {
    #[doc = include_str!("../../../book/src/intro.md")]
    pub mod intro {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    pub mod graphs {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/objective.md")]
    pub mod objective {}
    #[doc = include_str!("../../../book/src/solver.md")]
    pub mod solver {}
    #[doc = include_str!("../../../book/src/dual.md")]
    pub mod dual {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
