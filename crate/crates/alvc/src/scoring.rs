//! Scorer contract, score aggregation, ranking direction and the bigram
//! reference scorer.
//!
//! A scorer turns (sample inputs, candidate tokens) into per-token
//! cross-entropy losses in nats. Aggregation reduces those to one score per
//! candidate: `Sum` adds the losses of valid tokens (which favors short
//! candidates), `Mean` divides by the number of valid tokens. Ranking then
//! sorts ascending (good candidates first) or descending (the inverted
//! ordering this workbench exists to reproduce).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EvalSample};
use crate::num::Scalar;
use crate::retrieval::CandidateSet;
use crate::text::{tokenize, Vocab, BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("candidate {candidate} has no valid tokens; score undefined")]
    UndefinedScore { candidate: usize },
    #[error("candidate {candidate} produced a non-finite score")]
    NonFinite { candidate: usize },
    #[error("token losses and valid mask have different lengths ({losses} vs {mask})")]
    LengthMismatch { losses: usize, mask: usize },
    #[error("cannot train a scorer on an empty corpus")]
    EmptyCorpus,
    #[error("scorer failed on candidate {candidate}: {msg}")]
    ScorerFailure { candidate: usize, msg: String },
}

/// Per-token cross-entropy losses with a parallel validity mask. Positions
/// with `valid_mask == false` are padding or separators and are excluded
/// from aggregation unless explicitly requested.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLosses<F: Scalar> {
    pub losses: Vec<F>,
    pub valid_mask: Vec<bool>,
    pub truncated: bool,
}

impl<F: Scalar> TokenLosses<F> {
    pub fn new(losses: Vec<F>, valid_mask: Vec<bool>) -> Self {
        TokenLosses {
            losses,
            valid_mask,
            truncated: false,
        }
    }

    /// All-valid losses, the common case for unpadded scoring.
    pub fn all_valid(losses: Vec<F>) -> Self {
        let valid_mask = vec![true; losses.len()];
        TokenLosses {
            losses,
            valid_mask,
            truncated: false,
        }
    }

    pub fn n_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ascending,
    Descending,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Ascending => "ascending",
            Direction::Descending => "descending",
        }
    }
}

fn check_lengths<F: Scalar>(tl: &TokenLosses<F>, candidate: usize) -> Result<(), ScoreError> {
    if tl.losses.len() != tl.valid_mask.len() {
        return Err(ScoreError::LengthMismatch {
            losses: tl.losses.len(),
            mask: tl.valid_mask.len(),
        });
    }
    if tl.n_valid() == 0 {
        return Err(ScoreError::UndefinedScore { candidate });
    }
    Ok(())
}

/// Aggregates per-token losses. `include_masked` reproduces the harsher
/// variant that also sums losses at masked positions; the denominator of
/// `Mean` is always the valid-token count.
pub fn aggregate<F: Scalar>(
    tl: &TokenLosses<F>,
    aggregation: Aggregation,
    include_masked: bool,
) -> Result<F, ScoreError> {
    check_lengths(tl, 0)?;
    let total: F = tl
        .losses
        .iter()
        .zip(&tl.valid_mask)
        .filter(|&(_, &valid)| include_masked || valid)
        .map(|(&loss, _)| loss)
        .sum();
    match aggregation {
        Aggregation::Sum => Ok(total),
        Aggregation::Mean => Ok(total / F::from_usize_c(tl.n_valid())),
    }
}

/// Sum of losses over valid tokens only.
pub fn aggregate_sum<F: Scalar>(tl: &TokenLosses<F>) -> Result<F, ScoreError> {
    aggregate(tl, Aggregation::Sum, false)
}

/// Mean loss over valid tokens.
pub fn aggregate_mean<F: Scalar>(tl: &TokenLosses<F>) -> Result<F, ScoreError> {
    aggregate(tl, Aggregation::Mean, false)
}

/// One candidate's outcome inside a [`ScoredRanking`]: insertion order is
/// preserved, `rank` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredEntry {
    pub score: f64,
    pub rank: usize,
    pub category: crate::retrieval::Category,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredRanking {
    pub sample_id: String,
    pub entries: Vec<ScoredEntry>,
    pub aggregation: Aggregation,
    pub direction: Direction,
}

impl ScoredRanking {
    pub fn n_candidates(&self) -> usize {
        self.entries.len()
    }

    /// Ranks of the candidates labeled correct.
    pub fn correct_ranks(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.category == crate::retrieval::Category::Correct)
            .map(|e| e.rank)
            .collect()
    }

    /// TSV rows: sample_id, candidate_rank, category, score, aggregation,
    /// direction. Rows ordered by rank.
    pub fn to_tsv_rows(&self) -> String {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by_key(|&i| self.entries[i].rank);
        let mut out = String::new();
        for i in order {
            let e = &self.entries[i];
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\t{}\n",
                self.sample_id,
                e.rank,
                e.category.as_str(),
                e.score,
                self.aggregation.as_str(),
                self.direction.as_str()
            ));
        }
        out
    }
}

pub const RANKING_TSV_HEADER: &str =
    "sample_id\tcandidate_rank\tcategory\tscore\taggregation\tdirection\n";

/// Assigns ranks 1..N by stable sort in the given direction; ties keep
/// insertion order. Every score must be finite.
pub fn rank_candidates(scores: &[f64], direction: Direction) -> Result<Vec<usize>, ScoreError> {
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(ScoreError::NonFinite { candidate: i });
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    match direction {
        Direction::Ascending => {
            order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)))
        }
        Direction::Descending => {
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)))
        }
    }
    let mut ranks = vec![0usize; scores.len()];
    for (rank0, &idx) in order.iter().enumerate() {
        ranks[idx] = rank0 + 1;
    }
    Ok(ranks)
}

/// Input masking applied at scoring time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    TextOnly,
    VisualOnly,
    TextVisual,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::TextOnly => "text_only",
            MaskMode::VisualOnly => "visual_only",
            MaskMode::TextVisual => "text_visual",
        }
    }
}

/// Resolved model inputs for one sample: frame feature rows plus the encoded
/// context token ids. This is what scorers consume; candidate tokens are
/// passed alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringInput<F: Scalar> {
    pub frames: Vec<Vec<F>>,
    pub context_ids: Vec<u32>,
}

impl<F: Scalar> ScoringInput<F> {
    /// Resolves a sample against its corpus: gathers the referenced frame
    /// features (widened to `F`) and encodes the concatenated context
    /// comment tokens. Both streams are truncated to the given maxima.
    pub fn from_sample(
        corpus: &Corpus,
        sample: &EvalSample,
        vocab: &Vocab,
        max_context: usize,
        max_frames: usize,
    ) -> Option<ScoringInput<F>> {
        let video = corpus.video(&sample.video_id)?;
        let frames: Vec<Vec<F>> = sample
            .frame_refs
            .iter()
            .take(max_frames)
            .map(|&i| {
                video.frames[i]
                    .vector
                    .iter()
                    .map(|&x| F::from_f64_c(x as f64))
                    .collect()
            })
            .collect();
        let context_tokens: Vec<String> = sample
            .context_refs
            .iter()
            .flat_map(|&i| video.comments[i].tokens.iter().cloned())
            .collect();
        let mut context_ids = vocab.encode(&context_tokens);
        context_ids.truncate(max_context);
        Some(ScoringInput {
            frames,
            context_ids,
        })
    }

    /// Applies an input mask: `TextOnly` zeroes the visual features,
    /// `VisualOnly` replaces every context token with PAD, `TextVisual`
    /// leaves the input unchanged.
    pub fn masked(&self, mode: MaskMode) -> ScoringInput<F> {
        let mut out = self.clone();
        match mode {
            MaskMode::TextVisual => {}
            MaskMode::TextOnly => {
                for row in &mut out.frames {
                    for x in row.iter_mut() {
                        *x = F::zero();
                    }
                }
            }
            MaskMode::VisualOnly => {
                for id in &mut out.context_ids {
                    *id = PAD_ID;
                }
            }
        }
        out
    }
}

/// The scorer contract: deterministic per-token losses for a candidate
/// given fixed model state and inputs. Implementations must be shareable
/// across threads without interior mutation.
pub trait Scorer<F: Scalar>: Send + Sync {
    fn per_token_losses(
        &self,
        input: &ScoringInput<F>,
        candidate_tokens: &[String],
    ) -> Result<TokenLosses<F>, ScoreError>;
}

/// Additive-smoothing bigram language model over BOS/EOS-delimited encoded
/// comments: `P(w|v) = (count(v,w) + alpha) / (count(v) + alpha * V)`.
/// It ignores the visual and context inputs entirely; it exists as the
/// smallest deterministic scorer that produces non-degenerate rankings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NgramScorer {
    pub order: usize,
    pub alpha: f64,
    pub vocab_size: usize,
    bigram_counts: HashMap<u64, u64>,
    context_counts: HashMap<u32, u64>,
}

fn bigram_key(prev: u32, next: u32) -> u64 {
    ((prev as u64) << 32) | next as u64
}

impl NgramScorer {
    pub fn log_prob(&self, prev: u32, next: u32) -> f64 {
        let pair = *self
            .bigram_counts
            .get(&bigram_key(prev, next))
            .unwrap_or(&0) as f64;
        let ctx = *self.context_counts.get(&prev).unwrap_or(&0) as f64;
        ((pair + self.alpha) / (ctx + self.alpha * self.vocab_size as f64)).ln()
    }

    /// Per-token losses of an encoded candidate: one loss per candidate
    /// token plus the terminating EOS, all valid.
    pub fn losses_for_ids<F: Scalar>(&self, ids: &[u32]) -> TokenLosses<F> {
        let mut seq = Vec::with_capacity(ids.len() + 2);
        seq.push(BOS_ID);
        seq.extend_from_slice(ids);
        seq.push(EOS_ID);
        let losses: Vec<F> = seq
            .windows(2)
            .map(|w| F::from_f64_c(-self.log_prob(w[0], w[1])))
            .collect();
        TokenLosses::all_valid(losses)
    }
}

/// Trains the bigram reference scorer on the training split. Only `order=2`
/// is supported.
pub fn train_ngram(
    train: &Corpus,
    vocab: &Vocab,
    order: usize,
    alpha: f64,
) -> Result<NgramScorer, ScoreError> {
    assert_eq!(order, 2, "only bigram models are supported");
    assert!(alpha > 0.0, "alpha must be positive");
    if train.comments().next().is_none() {
        return Err(ScoreError::EmptyCorpus);
    }
    let mut bigram_counts: HashMap<u64, u64> = HashMap::new();
    let mut context_counts: HashMap<u32, u64> = HashMap::new();
    for comment in train.comments() {
        let ids = vocab.encode(&comment.tokens);
        let mut seq = Vec::with_capacity(ids.len() + 2);
        seq.push(BOS_ID);
        seq.extend(ids);
        seq.push(EOS_ID);
        for w in seq.windows(2) {
            *bigram_counts.entry(bigram_key(w[0], w[1])).or_insert(0) += 1;
            *context_counts.entry(w[0]).or_insert(0) += 1;
        }
    }
    Ok(NgramScorer {
        order,
        alpha,
        vocab_size: vocab.len(),
        bigram_counts,
        context_counts,
    })
}

/// The ngram scorer needs its vocabulary to encode candidates.
pub struct NgramScorerWithVocab {
    pub model: NgramScorer,
    pub vocab: Vocab,
}

impl<F: Scalar> Scorer<F> for NgramScorerWithVocab {
    fn per_token_losses(
        &self,
        _input: &ScoringInput<F>,
        candidate_tokens: &[String],
    ) -> Result<TokenLosses<F>, ScoreError> {
        let ids = self.vocab.encode(candidate_tokens);
        Ok(self.model.losses_for_ids(&ids))
    }
}

/// Applies scorer, aggregation and ranking to one candidate set, recording
/// the aggregation/direction provenance in the output.
pub fn score_candidate_set<F: Scalar>(
    scorer: &dyn Scorer<F>,
    input: &ScoringInput<F>,
    cs: &CandidateSet,
    aggregation: Aggregation,
    direction: Direction,
    include_masked: bool,
) -> Result<ScoredRanking, ScoreError> {
    let mut scores = Vec::with_capacity(cs.candidates.len());
    for (i, entry) in cs.candidates.iter().enumerate() {
        let tokens = tokenize(&entry.text);
        let tl =
            scorer
                .per_token_losses(input, &tokens)
                .map_err(|e| ScoreError::ScorerFailure {
                    candidate: i,
                    msg: e.to_string(),
                })?;
        let score = aggregate(&tl, aggregation, include_masked)
            .map_err(|e| match e {
                ScoreError::UndefinedScore { .. } => ScoreError::UndefinedScore { candidate: i },
                other => other,
            })?
            .to_f64_c();
        if !score.is_finite() {
            return Err(ScoreError::NonFinite { candidate: i });
        }
        scores.push(score);
    }
    let ranks = rank_candidates(&scores, direction)?;
    let entries = scores
        .into_iter()
        .zip(ranks)
        .zip(&cs.candidates)
        .map(|((score, rank), c)| ScoredEntry {
            score,
            rank,
            category: c.cat,
        })
        .collect();
    Ok(ScoredRanking {
        sample_id: cs.sample.sample_id(),
        entries,
        aggregation,
        direction,
    })
}
