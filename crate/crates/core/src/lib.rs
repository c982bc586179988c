//! Least-squares attribution over constituency parse trees.
//!
//! A black-box text classifier is evaluated on the word subsets induced by the
//! nodes of a parse tree. The best additive fit of those evaluations gives one
//! importance score per word (the LS-Tree value), and a top-down rank-one
//! update recursion measures how much each node's row moves that fit, which
//! quantifies the interaction captured at that node.
//!
//! Modules:
//! - [`tree`]: bracketed-tree ingestion, subset system, design matrix, depth.
//! - [`oracle`]: model contract, built-in reference models, external process
//!   protocol, characteristic-function cache.
//! - [`solver`]: LS-Tree value, Banzhaf enumeration, interaction detection.
//! - [`analysis`]: nonlinearity, adversative ratios, overfitting permutation test.
//! - [`report`]: line-delimited serialization and text rendering.
//! - [`corpus`]: instance records.

pub mod analysis;
pub mod corpus;
mod error;
pub mod oracle;
pub mod report;
pub mod solver;
pub mod tree;
mod wordset;

pub use error::{Error, Result};
pub use wordset::WordSet;

pub use analysis::{
    adversative_report, nonlinearity_report, overfit_test, AdversativeReport, AdversativeRow, AnalyzedInstance,
    NonlinearityReport, NonlinearityRow, OverfitDiagnostic, DEFAULT_MARKERS,
};
pub use corpus::{read_corpus, InstanceRecord, Split};
pub use oracle::{
    populate, BuiltinLinear, BuiltinNegation, CachingOracle, CharacteristicTable, ClassIndex,
    ExternalOracle, MaskMode, ModelQuery, Oracle, OracleSpec,
};
pub use solver::{
    banzhaf_bruteforce, detect_interactions, detect_interactions_direct,
    detect_interactions_with, solve_general_ls, solve_lstree, AttributionResult, DetectOptions,
    DistanceMode, InteractionReport, NodeScore,
};
pub use tree::{design_matrix, merge_sentences, parse_ptb, random_tree, DesignMatrix, ParseTree, Token, TreeNode};
