//! Experiment configuration: a single JSON file plus flag overrides (flags
//! win). Every field has a concrete value after defaulting and the resolved
//! struct is embedded in every emitted report.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use alvc::corpus::SplitTag;
use alvc::metrics::{RankMode, RecallMode};
use alvc::retrieval::QuerySource;
use alvc::scoring::{Aggregation, Direction, MaskMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    /// Use the corpus as provided.
    Provided,
    /// Remove duplicate-title videos before splitting.
    Dedup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Ngram,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_dev: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub m: usize,
    pub n: usize,
    pub g: usize,
    pub gt_window_s: f64,
    pub stride_s: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            m: 4,
            n: 5,
            g: 5,
            gt_window_s: 2.5,
            stride_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramSpec {
    pub order: usize,
    pub alpha: f64,
}

impl Default for NgramSpec {
    fn default() -> Self {
        NgramSpec {
            order: 2,
            alpha: 0.1,
        }
    }
}

/// Model hyperparameters; vocab size and feature dim are discovered from
/// the data at run time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub max_frames: usize,
    pub max_context: usize,
    pub max_target: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            d_model: 32,
            n_heads: 2,
            n_layers: 1,
            ff_dim: 128,
            dropout: 0.2,
            max_frames: 8,
            max_context: 32,
            max_target: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.998,
            batch_size: 64,
        }
    }
}

/// Named seeds: all randomness in a run flows through these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub candidates: u64,
    pub init: u64,
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::derive(42)
    }
}

impl Seeds {
    /// Derives the four named seeds from one master seed.
    pub fn derive(master: u64) -> Self {
        Seeds {
            split: master,
            candidates: master.wrapping_add(1),
            init: master.wrapping_add(2),
            train: master.wrapping_add(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub aggregations: Vec<Aggregation>,
    pub directions: Vec<Direction>,
    pub query_sources: Vec<QuerySource>,
    pub masks: Vec<MaskMode>,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec {
            aggregations: vec![Aggregation::Sum, Aggregation::Mean],
            directions: vec![Direction::Ascending, Direction::Descending],
            query_sources: vec![QuerySource::Title],
            masks: vec![MaskMode::TextVisual],
        }
    }
}

fn default_schema() -> String {
    "v1".to_string()
}

fn default_vocab_max() -> usize {
    30_000
}

fn default_epochs() -> usize {
    300
}

fn default_eval_split() -> SplitTag {
    SplitTag::Test
}

fn default_mask() -> MaskMode {
    MaskMode::TextVisual
}

fn default_aggregation() -> Aggregation {
    Aggregation::Mean
}

fn default_direction() -> Direction {
    Direction::Ascending
}

fn default_query_source() -> QuerySource {
    QuerySource::Title
}

fn default_dataset() -> DatasetMode {
    DatasetMode::Provided
}

fn default_scorer() -> ScorerKind {
    ScorerKind::Ngram
}

fn default_recall_mode() -> RecallMode {
    RecallMode::Hit
}

fn default_rank_mode() -> RankMode {
    RankMode::Best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_schema")]
    pub schema_version: String,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetMode,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_eval_split")]
    pub eval_split: SplitTag,
    #[serde(default)]
    pub sample: SampleSpec,
    #[serde(default = "default_vocab_max")]
    pub vocab_max_size: usize,
    #[serde(default = "default_scorer")]
    pub scorer: ScorerKind,
    #[serde(default)]
    pub ngram: NgramSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_mask")]
    pub mask: MaskMode,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub include_masked: bool,
    #[serde(default = "default_direction")]
    pub direction: Direction,
    #[serde(default = "default_query_source")]
    pub query_source: QuerySource,
    #[serde(default = "default_recall_mode")]
    pub recall_mode: RecallMode,
    #[serde(default = "default_rank_mode")]
    pub rank_mode: RankMode,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub matrix: MatrixSpec,
}

/// Flag-level overrides; flags win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub aggregation: Option<Aggregation>,
    pub direction: Option<Direction>,
    pub query_source: Option<QuerySource>,
    pub mask: Option<MaskMode>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: ExperimentConfig = serde_json::from_str(&raw)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(seed) = overrides.seed {
            config.seeds = Seeds::derive(seed);
        }
        if let Some(a) = overrides.aggregation {
            config.aggregation = a;
        }
        if let Some(d) = overrides.direction {
            config.direction = d;
        }
        if let Some(q) = overrides.query_source {
            config.query_source = q;
        }
        if let Some(m) = overrides.mask {
            config.mask = m;
        }
        Ok(config)
    }
}
