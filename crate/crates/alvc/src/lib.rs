//! Workbench for the retrieval-based evaluation protocol of automatic live
//! video commenting systems.
//!
//! The crate covers the full pipeline: corpus ingestion and statistics,
//! duplicate-video deduplication and leak-free splitting, tokenization and
//! vocabularies, tf-idf candidate retrieval, cross-entropy scoring with
//! switchable aggregation and ranking direction, two reference scorers (a
//! smoothed bigram model and a toy encoder/encoder/decoder transformer), and
//! ranked-retrieval metrics with confidence intervals.
//!
//! Numeric kernels are generic over [`num::Scalar`] (`f32` or `f64`);
//! concrete aliases for the common instantiations live at the crate root.

pub mod corpus;
pub mod fixtures;
pub mod metrics;
pub mod neural;
pub mod num;
pub mod retrieval;
pub mod scoring;
pub mod splitter;
pub mod text;

pub use num::Scalar;

/// Default-precision instantiations. `f64` is the workbench default: it is
/// what gradient checks require and desk-scale models are small enough that
/// the wider type costs nothing.
pub type TfIdfIndexF64 = retrieval::TfIdfIndex<f64>;
pub type TokenLossesF64 = scoring::TokenLosses<f64>;
pub type ScoringInputF64 = scoring::ScoringInput<f64>;
pub type ModelStateF64 = neural::ModelState<f64>;
pub type TransformerScorerF64 = neural::TransformerScorer<f64>;

/// Single-precision aliases for memory-constrained runs.
pub type TfIdfIndexF32 = retrieval::TfIdfIndex<f32>;
pub type TokenLossesF32 = scoring::TokenLosses<f32>;
pub type ScoringInputF32 = scoring::ScoringInput<f32>;
pub type ModelStateF32 = neural::ModelState<f32>;
pub type TransformerScorerF32 = neural::TransformerScorer<f32>;
