//! Exact k-best Bayesian network structure search for complete discrete data, and
//! Bayesian model averaging over the networks it finds.
//!
//! The pipeline is:
//!
//! 1. [`scoring::all_local_scores`] computes the BDeu local score of every
//!    (variable, parent set) pair.
//! 2. [`kbest_parents::ParentTable::build`] finds, for every variable and every
//!    candidate set, the k best parent sets drawn from it.
//! 3. [`kbest_dags::kbest_networks`] runs a subset dynamic program with a
//!    sink decomposition to recover the k best DAGs.
//!
//! [`posterior`] turns the resulting list into an ensemble for feature posteriors,
//! prediction and quality diagnostics; [`oracle`] enumerates every DAG for small
//! problems and serves as ground truth; [`eval`] holds the synthetic-data
//! experiment machinery.

pub mod bits;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod kbest_dags;
pub mod kbest_parents;
pub mod oracle;
pub mod posterior;
pub mod scoring;

pub use bits::VarSet;
pub use dataset::{ContingencyTable, CsvOptions, Dataset};
pub use error::{Error, Result};
pub use exec::{Exec, MemoryBudget};
pub use graph::Feature;
pub use kbest_dags::{kbest_networks, KBestSearch, ScoredNetwork};
pub use kbest_parents::{ParentEntry, ParentQueue, ParentTable};
pub use posterior::{PosteriorReport, WeightedEnsemble};
pub use scoring::LocalScoreTable;
