//! Embedding-guided search for glitch tokens in LLM vocabularies.
//!
//! The pipeline builds a K-NN graph over token embeddings ([`teg`]), clusters
//! it ([`leiden`]), and probes sampled cluster members with cheap proxy tasks
//! ([`oracle`]) to shrink the candidate set ([`hunter`]).

pub mod baselines;
pub mod corpus;
pub mod embedstore;
pub mod hunter;
pub mod leiden;
pub mod metrics;
pub mod oracle;
pub mod simlab;
pub mod taxonomy;
pub mod teg;

/// Version tag written into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;

pub use embedstore::{EmbeddingMatrix, ModelBundle, TokenId, Vocabulary};
pub use hunter::{hunt, traverse, HuntReport, HunterConfig};
pub use oracle::{GlitchVerdict, MockOracle, OracleClient, OracleConfig};
