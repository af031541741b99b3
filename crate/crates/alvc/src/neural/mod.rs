//! Toy-scale unified transformer: a video encoder over projected frame
//! features, a text encoder over context tokens that cross-attends to the
//! visual representation, and a comment decoder that causally self-attends
//! and cross-attends to both encoder outputs.
//!
//! Layout and semantics (the checkpoint format mirrors this exactly):
//!
//! * Embeddings: one shared token table `tok_embed` (vocab × d_model); frame
//!   features enter through `frame_w`/`frame_b` (feature_dim × d_model).
//!   Sinusoidal position encodings are added to all three streams; frames
//!   use their index within the sample window as position.
//! * Attention (`{p}.wq/bq/wk/bk/wv/bv/wo/bo`): full-width projections,
//!   heads are column slices of width d_model/n_heads, scores scaled by
//!   1/sqrt(head_dim); masked keys are excluded from the softmax exactly
//!   (zero weight), and a fully masked row yields a zero context vector.
//! * Sub-layers are post-norm: `x = LN(x + Dropout(Sublayer(x)))` with
//!   layer-norm epsilon 1e-5. Feed-forward is `relu(x·w1+b1)·w2+b2`.
//! * Encoder layer l: `venc{l}.attn`, `venc{l}.ln1`, `venc{l}.ffn`,
//!   `venc{l}.ln2`. Text-encoder layer: `tenc{l}.self`, `.ln1`,
//!   `tenc{l}.cross` (to video), `.ln2`, `tenc{l}.ffn`, `.ln3`. Decoder
//!   layer: `dec{l}.self`, `.ln1`, `dec{l}.crossv`, `.ln2`, `dec{l}.crosst`,
//!   `.ln3`, `dec{l}.ffn`, `.ln4`.
//! * Output: `out_w`/`out_b` then a row-wise log-softmax over the vocab.
//!
//! Weight matrices initialize from uniform(-s, s) with
//! s = sqrt(6/(fan_in+fan_out)); biases start at zero, layer-norm gains at
//! one. All randomness (init, epoch shuffles, dropout masks) flows through
//! seeded ChaCha streams, so training is bit-reproducible single-threaded.

pub mod graph;
pub mod linalg;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EvalSample};
use crate::num::Scalar;
use crate::scoring::{ScoreError, Scorer, ScoringInput, TokenLosses};
use crate::text::{Vocab, BOS_ID, EOS_ID, PAD_ID};

use graph::{Graph, NodeId};
use linalg::Matrix;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("{what} length {got} exceeds configured maximum {max}")]
    ShapeError {
        what: &'static str,
        got: usize,
        max: usize,
    },
    #[error("frame feature length {got} != configured feature_dim {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("non-finite loss in batch {batch_id}")]
    NonFiniteLoss { batch_id: usize },
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint shape mismatch for {name}: {got} values, expected {expected}")]
    CheckpointShape {
        name: String,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_frames: usize,
    pub max_context: usize,
    pub max_target: usize,
    pub feature_dim: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: small enough to train on a laptop CPU while
    /// keeping the full architecture.
    pub fn desk_scale(vocab_size: usize, feature_dim: usize) -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 2,
            n_layers: 1,
            ff_dim: 128,
            dropout: 0.2,
            vocab_size,
            max_frames: 8,
            max_context: 32,
            max_target: 16,
            feature_dim,
        }
    }

    /// The full-scale configuration (not trainable in this workbench's
    /// budget, but valid).
    pub fn paper_scale(vocab_size: usize, feature_dim: usize) -> Self {
        ModelConfig {
            d_model: 512,
            n_heads: 8,
            n_layers: 6,
            ff_dim: 2048,
            dropout: 0.2,
            vocab_size,
            max_frames: 8,
            max_context: 64,
            max_target: 32,
            feature_dim,
        }
    }

    pub fn validate(&self) {
        assert!(
            self.d_model.is_multiple_of(self.n_heads),
            "d_model must divide by n_heads"
        );
        assert!(
            self.d_model.is_multiple_of(2),
            "d_model must be even for sinusoidal encodings"
        );
        assert!(
            (0.0..1.0).contains(&self.dropout),
            "dropout must be in [0, 1)"
        );
        assert!(self.n_layers >= 1 && self.vocab_size >= 5);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.998,
            eps: 1e-8,
            batch_size: 64,
        }
    }
}

enum InitKind {
    Xavier,
    Zero,
    One,
}

struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    init: InitKind,
}

fn attention_specs(prefix: &str, d: usize, specs: &mut Vec<ParamSpec>) {
    for w in ["wq", "wk", "wv", "wo"] {
        specs.push(ParamSpec {
            name: format!("{prefix}.{w}"),
            rows: d,
            cols: d,
            init: InitKind::Xavier,
        });
        let b = w.replace('w', "b");
        specs.push(ParamSpec {
            name: format!("{prefix}.{b}"),
            rows: 1,
            cols: d,
            init: InitKind::Zero,
        });
    }
}

fn ln_specs(prefix: &str, d: usize, specs: &mut Vec<ParamSpec>) {
    specs.push(ParamSpec {
        name: format!("{prefix}.g"),
        rows: 1,
        cols: d,
        init: InitKind::One,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.b"),
        rows: 1,
        cols: d,
        init: InitKind::Zero,
    });
}

fn ffn_specs(prefix: &str, d: usize, ff: usize, specs: &mut Vec<ParamSpec>) {
    specs.push(ParamSpec {
        name: format!("{prefix}.w1"),
        rows: d,
        cols: ff,
        init: InitKind::Xavier,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.b1"),
        rows: 1,
        cols: ff,
        init: InitKind::Zero,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.w2"),
        rows: ff,
        cols: d,
        init: InitKind::Xavier,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.b2"),
        rows: 1,
        cols: d,
        init: InitKind::Zero,
    });
}

fn param_layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let d = config.d_model;
    let ff = config.ff_dim;
    let mut specs = Vec::new();
    specs.push(ParamSpec {
        name: "tok_embed".into(),
        rows: config.vocab_size,
        cols: d,
        init: InitKind::Xavier,
    });
    specs.push(ParamSpec {
        name: "frame_w".into(),
        rows: config.feature_dim,
        cols: d,
        init: InitKind::Xavier,
    });
    specs.push(ParamSpec {
        name: "frame_b".into(),
        rows: 1,
        cols: d,
        init: InitKind::Zero,
    });
    for l in 0..config.n_layers {
        attention_specs(&format!("venc{l}.attn"), d, &mut specs);
        ln_specs(&format!("venc{l}.ln1"), d, &mut specs);
        ffn_specs(&format!("venc{l}.ffn"), d, ff, &mut specs);
        ln_specs(&format!("venc{l}.ln2"), d, &mut specs);
    }
    for l in 0..config.n_layers {
        attention_specs(&format!("tenc{l}.self"), d, &mut specs);
        ln_specs(&format!("tenc{l}.ln1"), d, &mut specs);
        attention_specs(&format!("tenc{l}.cross"), d, &mut specs);
        ln_specs(&format!("tenc{l}.ln2"), d, &mut specs);
        ffn_specs(&format!("tenc{l}.ffn"), d, ff, &mut specs);
        ln_specs(&format!("tenc{l}.ln3"), d, &mut specs);
    }
    for l in 0..config.n_layers {
        attention_specs(&format!("dec{l}.self"), d, &mut specs);
        ln_specs(&format!("dec{l}.ln1"), d, &mut specs);
        attention_specs(&format!("dec{l}.crossv"), d, &mut specs);
        ln_specs(&format!("dec{l}.ln2"), d, &mut specs);
        attention_specs(&format!("dec{l}.crosst"), d, &mut specs);
        ln_specs(&format!("dec{l}.ln3"), d, &mut specs);
        ffn_specs(&format!("dec{l}.ffn"), d, ff, &mut specs);
        ln_specs(&format!("dec{l}.ln4"), d, &mut specs);
    }
    specs.push(ParamSpec {
        name: "out_w".into(),
        rows: d,
        cols: config.vocab_size,
        init: InitKind::Xavier,
    });
    specs.push(ParamSpec {
        name: "out_b".into(),
        rows: 1,
        cols: config.vocab_size,
        init: InitKind::Zero,
    });
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<F: Scalar> {
    pub config: ModelConfig,
    pub seed: u64,
    names: Vec<String>,
    params: Vec<Matrix<F>>,
}

impl<F: Scalar> ModelState<F> {
    pub fn param(&self, name: &str) -> Option<&Matrix<F>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Matrix<F>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.params[i])
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Matrix<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix<F>] {
        &mut self.params
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Seeded Xavier-uniform initialization. Weight matrices draw from
/// uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)); biases start at 0
/// and layer-norm gains at 1.
pub fn init_model<F: Scalar>(config: &ModelConfig, seed: u64) -> ModelState<F> {
    config.validate();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = param_layout(config);
    let mut names = Vec::with_capacity(specs.len());
    let mut params = Vec::with_capacity(specs.len());
    for spec in specs {
        let matrix = match spec.init {
            InitKind::Xavier => {
                let s = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
                let mut m = Matrix::zeros(spec.rows, spec.cols);
                for v in &mut m.data {
                    *v = F::from_f64_c(rng.random::<f64>() * 2.0 * s - s);
                }
                m
            }
            InitKind::Zero => Matrix::zeros(spec.rows, spec.cols),
            InitKind::One => Matrix::filled(spec.rows, spec.cols, F::one()),
        };
        names.push(spec.name);
        params.push(matrix);
    }
    ModelState {
        config: config.clone(),
        seed,
        names,
        params,
    }
}

/// Closed-form parameter count for a config (used to cross-check layouts).
pub fn expected_param_count(config: &ModelConfig) -> usize {
    let d = config.d_model;
    let ff = config.ff_dim;
    let attn = 4 * (d * d + d);
    let ln = 2 * d;
    let ffn = d * ff + ff + ff * d + d;
    let venc = attn + 2 * ln + ffn;
    let tenc = 2 * attn + 3 * ln + ffn;
    let dec = 3 * attn + 4 * ln + ffn;
    config.vocab_size * d
        + config.feature_dim * d
        + d
        + config.n_layers * (venc + tenc + dec)
        + d * config.vocab_size
        + config.vocab_size
}

/// Fixed sinusoidal position encoding: sin on even columns, cos on odd.
fn positional_encoding<F: Scalar>(rows: usize, d: usize) -> Matrix<F> {
    let mut pe = Matrix::zeros(rows, d);
    for pos in 0..rows {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            pe.set(pos, 2 * i, F::from_f64_c(angle.sin()));
            pe.set(pos, 2 * i + 1, F::from_f64_c(angle.cos()));
        }
    }
    pe
}

struct ForwardBuilder<'m, 'r, F: Scalar> {
    graph: Graph<F>,
    model: &'m ModelState<F>,
    node_of: Vec<Option<NodeId>>,
    dropout: Option<(&'r mut ChaCha8Rng, f64)>,
}

impl<'m, 'r, F: Scalar> ForwardBuilder<'m, 'r, F> {
    fn new(model: &'m ModelState<F>, dropout: Option<(&'r mut ChaCha8Rng, f64)>) -> Self {
        ForwardBuilder {
            graph: Graph::new(),
            model,
            node_of: vec![None; model.params.len()],
            dropout,
        }
    }

    fn p(&mut self, name: &str) -> NodeId {
        let slot = self
            .model
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        if let Some(id) = self.node_of[slot] {
            return id;
        }
        let id = self.graph.param(slot, self.model.params[slot].clone());
        self.node_of[slot] = Some(id);
        id
    }

    fn maybe_dropout(&mut self, x: NodeId) -> NodeId {
        let (rows, cols) = {
            let v = self.graph.value(x);
            (v.rows, v.cols)
        };
        match &mut self.dropout {
            None => x,
            Some((rng, p)) => {
                let keep = 1.0 - *p;
                let scale = F::from_f64_c(1.0 / keep);
                let mut mask = Matrix::zeros(rows, cols);
                for v in &mut mask.data {
                    *v = if rng.random::<f64>() < keep {
                        scale
                    } else {
                        F::zero()
                    };
                }
                self.graph.dropout(x, mask)
            }
        }
    }

    fn linear(&mut self, x: NodeId, w: &str, b: &str) -> NodeId {
        let wn = self.p(w);
        let bn = self.p(b);
        let mm = self.graph.matmul(x, wn);
        self.graph.add_bias(mm, bn)
    }

    /// Multi-head attention with an explicit (tq × tk) boolean mask.
    fn attention(&mut self, prefix: &str, q_in: NodeId, kv_in: NodeId, mask: &[bool]) -> NodeId {
        let d = self.model.config.d_model;
        let h = self.model.config.n_heads;
        let dh = d / h;
        let q = self.linear(q_in, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
        let k = self.linear(kv_in, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
        let v = self.linear(kv_in, &format!("{prefix}.wv"), &format!("{prefix}.bv"));
        let scale = F::from_f64_c(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(h);
        for i in 0..h {
            let qh = self.graph.slice_cols(q, i * dh, dh);
            let kh = self.graph.slice_cols(k, i * dh, dh);
            let vh = self.graph.slice_cols(v, i * dh, dh);
            let scores = self.graph.matmul_transpose_b(qh, kh);
            let scaled = self.graph.scale(scores, scale);
            let weights = self.graph.softmax_masked(scaled, mask.to_vec());
            heads.push(self.graph.matmul(weights, vh));
        }
        let cat = self.graph.concat_cols(heads);
        self.linear(cat, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
    }

    /// Post-norm residual: LN(x + Dropout(sub)).
    fn residual_ln(&mut self, ln_prefix: &str, x: NodeId, sub: NodeId) -> NodeId {
        let dropped = self.maybe_dropout(sub);
        let sum = self.graph.add(x, dropped);
        let g = self.p(&format!("{ln_prefix}.g"));
        let b = self.p(&format!("{ln_prefix}.b"));
        self.graph.layer_norm(sum, g, b)
    }

    fn ffn(&mut self, prefix: &str, x: NodeId) -> NodeId {
        let hidden = self.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
        let act = self.graph.relu(hidden);
        self.linear(act, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }
}

fn key_mask(tq: usize, key_valid: &[bool], causal: bool) -> Vec<bool> {
    let tk = key_valid.len();
    let mut mask = vec![false; tq * tk];
    for r in 0..tq {
        for c in 0..tk {
            mask[r * tk + c] = key_valid[c] && (!causal || c <= r);
        }
    }
    mask
}

struct ForwardResult<F: Scalar> {
    graph: Graph<F>,
    log_probs: NodeId,
}

/// Builds the full forward graph for one sample.
fn build_forward<F: Scalar>(
    model: &ModelState<F>,
    frames: &[Vec<F>],
    context_ids: &[u32],
    target_prefix: &[u32],
    dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<ForwardResult<F>, NeuralError> {
    let config = &model.config;
    if frames.len() > config.max_frames {
        return Err(NeuralError::ShapeError {
            what: "frames",
            got: frames.len(),
            max: config.max_frames,
        });
    }
    for f in frames {
        if f.len() != config.feature_dim {
            return Err(NeuralError::FeatureDim {
                got: f.len(),
                expected: config.feature_dim,
            });
        }
    }
    if context_ids.len() > config.max_context {
        return Err(NeuralError::ShapeError {
            what: "context",
            got: context_ids.len(),
            max: config.max_context,
        });
    }
    if target_prefix.len() > config.max_target + 1 {
        return Err(NeuralError::ShapeError {
            what: "target prefix",
            got: target_prefix.len(),
            max: config.max_target + 1,
        });
    }
    assert!(
        !target_prefix.is_empty(),
        "decoder prefix must start with BOS"
    );

    let mut b = ForwardBuilder::new(model, dropout);
    let d = config.d_model;

    // --- video encoder ---
    let (frame_matrix, frame_valid) = if frames.is_empty() {
        (Matrix::zeros(1, config.feature_dim), vec![false])
    } else {
        (Matrix::from_rows(frames.to_vec()), vec![true; frames.len()])
    };
    let m = frame_valid.len();
    let f_in = b.graph.input(frame_matrix);
    let mut v_x = b.linear(f_in, "frame_w", "frame_b");
    let pe_v = b.graph.input(positional_encoding(m, d));
    v_x = b.graph.add(v_x, pe_v);
    v_x = b.maybe_dropout(v_x);
    for l in 0..config.n_layers {
        let mask = key_mask(m, &frame_valid, false);
        let attn = b.attention(&format!("venc{l}.attn"), v_x, v_x, &mask);
        v_x = b.residual_ln(&format!("venc{l}.ln1"), v_x, attn);
        let ff = b.ffn(&format!("venc{l}.ffn"), v_x);
        v_x = b.residual_ln(&format!("venc{l}.ln2"), v_x, ff);
    }
    let video_mem = v_x;

    // --- text encoder ---
    let (ctx_ids, ctx_valid): (Vec<u32>, Vec<bool>) = if context_ids.is_empty() {
        (vec![PAD_ID], vec![false])
    } else {
        (
            context_ids.to_vec(),
            context_ids.iter().map(|&id| id != PAD_ID).collect(),
        )
    };
    let n = ctx_ids.len();
    let tok_embed = b.p("tok_embed");
    let mut t_x = b.graph.embed_gather(tok_embed, ctx_ids);
    let pe_t = b.graph.input(positional_encoding(n, d));
    t_x = b.graph.add(t_x, pe_t);
    t_x = b.maybe_dropout(t_x);
    for l in 0..config.n_layers {
        let self_mask = key_mask(n, &ctx_valid, false);
        let attn = b.attention(&format!("tenc{l}.self"), t_x, t_x, &self_mask);
        t_x = b.residual_ln(&format!("tenc{l}.ln1"), t_x, attn);
        let cross_mask = key_mask(n, &frame_valid, false);
        let cross = b.attention(&format!("tenc{l}.cross"), t_x, video_mem, &cross_mask);
        t_x = b.residual_ln(&format!("tenc{l}.ln2"), t_x, cross);
        let ff = b.ffn(&format!("tenc{l}.ffn"), t_x);
        t_x = b.residual_ln(&format!("tenc{l}.ln3"), t_x, ff);
    }
    let text_mem = t_x;

    // --- comment decoder ---
    let t_len = target_prefix.len();
    let tgt_valid: Vec<bool> = target_prefix.iter().map(|&id| id != PAD_ID).collect();
    let tok_embed = b.p("tok_embed");
    let mut y_x = b.graph.embed_gather(tok_embed, target_prefix.to_vec());
    let pe_y = b.graph.input(positional_encoding(t_len, d));
    y_x = b.graph.add(y_x, pe_y);
    y_x = b.maybe_dropout(y_x);
    for l in 0..config.n_layers {
        let causal = key_mask(t_len, &tgt_valid, true);
        let attn = b.attention(&format!("dec{l}.self"), y_x, y_x, &causal);
        y_x = b.residual_ln(&format!("dec{l}.ln1"), y_x, attn);
        let vmask = key_mask(t_len, &frame_valid, false);
        let crossv = b.attention(&format!("dec{l}.crossv"), y_x, video_mem, &vmask);
        y_x = b.residual_ln(&format!("dec{l}.ln2"), y_x, crossv);
        let tmask = key_mask(t_len, &ctx_valid, false);
        let crosst = b.attention(&format!("dec{l}.crosst"), y_x, text_mem, &tmask);
        y_x = b.residual_ln(&format!("dec{l}.ln3"), y_x, crosst);
        let ff = b.ffn(&format!("dec{l}.ffn"), y_x);
        y_x = b.residual_ln(&format!("dec{l}.ln4"), y_x, ff);
    }

    let logits = b.linear(y_x, "out_w", "out_b");
    let log_probs = b.graph.log_softmax_rows(logits);
    Ok(ForwardResult {
        graph: b.graph,
        log_probs,
    })
}

/// Per-position log-probability rows for a decoder prefix (eval mode:
/// dropout inactive). Row `i` is the distribution over the token following
/// `target_prefix[..=i]`.
pub fn forward_logprobs<F: Scalar>(
    model: &ModelState<F>,
    frames: &[Vec<F>],
    context_ids: &[u32],
    target_prefix: &[u32],
) -> Result<Matrix<F>, NeuralError> {
    let result = build_forward(model, frames, context_ids, target_prefix, None)?;
    Ok(result.graph.value(result.log_probs).clone())
}

/// One training example: the target comment is predicted from the sample's
/// frames and context.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem<F: Scalar> {
    pub frames: Vec<Vec<F>>,
    pub context_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
}

/// Builds training items from evaluation samples: one item per ground-truth
/// comment, inputs truncated to the model's configured maxima.
pub fn training_items<F: Scalar>(
    corpus: &Corpus,
    samples: &[EvalSample],
    vocab: &Vocab,
    config: &ModelConfig,
) -> Vec<TrainItem<F>> {
    let mut items = Vec::new();
    for sample in samples {
        let Some(input) = ScoringInput::<F>::from_sample(
            corpus,
            sample,
            vocab,
            config.max_context,
            config.max_frames,
        ) else {
            continue;
        };
        let video = corpus.video(&sample.video_id).expect("sample video");
        for &gt in &sample.ground_truth_refs {
            let mut target_ids = vocab.encode(&video.comments[gt].tokens);
            target_ids.truncate(config.max_target);
            if target_ids.is_empty() {
                continue;
            }
            items.push(TrainItem {
                frames: input.frames.clone(),
                context_ids: input.context_ids.clone(),
                target_ids,
            });
        }
    }
    items
}

pub struct LossAndGrads<F: Scalar> {
    pub loss: F,
    pub n_valid_tokens: usize,
    pub grads: Vec<Matrix<F>>,
}

/// Mean teacher-forced cross entropy over the batch's valid target tokens,
/// with gradients for every parameter. Dropout is active only when an RNG is
/// supplied.
pub fn loss_and_grads<F: Scalar>(
    model: &ModelState<F>,
    batch: &[TrainItem<F>],
    batch_id: usize,
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<LossAndGrads<F>, NeuralError> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut grads: Vec<Matrix<F>> = model
        .params
        .iter()
        .map(|p| Matrix::zeros(p.rows, p.cols))
        .collect();
    let mut total = F::zero();
    let mut n_valid = 0usize;
    for item in batch {
        let mut prefix = Vec::with_capacity(item.target_ids.len() + 1);
        prefix.push(BOS_ID);
        prefix.extend_from_slice(&item.target_ids);
        let mut targets = item.target_ids.clone();
        targets.push(EOS_ID);
        let valid: Vec<bool> = targets.iter().map(|&id| id != PAD_ID).collect();
        n_valid += valid.iter().filter(|&&v| v).count();

        let per_item_dropout = dropout.as_mut().map(|(rng, p)| (&mut **rng, *p));
        let mut result = build_forward(
            model,
            &item.frames,
            &item.context_ids,
            &prefix,
            per_item_dropout,
        )?;
        let loss_node = result.graph.sum_ce_valid(result.log_probs, targets, valid);
        total += result.graph.value(loss_node).at(0, 0);
        result.graph.backward(loss_node, &mut grads);
    }
    let scale = F::from_usize_c(n_valid).recip();
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(NeuralError::NonFiniteLoss { batch_id });
    }
    for g in &mut grads {
        g.scale_in_place(scale);
    }
    Ok(LossAndGrads {
        loss,
        n_valid_tokens: n_valid,
        grads,
    })
}

pub struct TrainRun<F: Scalar> {
    pub model: ModelState<F>,
    pub epoch_losses: Vec<f64>,
    /// Set when training aborted on a non-finite loss; `model` then holds
    /// the last finite-state checkpoint.
    pub diverged_at: Option<usize>,
}

/// Adam with bias correction; epoch shuffling and dropout masks are drawn
/// from a single ChaCha stream seeded by `seed`, so two runs with identical
/// seeds produce identical parameters.
pub fn train<F: Scalar>(
    model: ModelState<F>,
    items: &[TrainItem<F>],
    opt: &OptimizerConfig,
    epochs: usize,
    seed: u64,
) -> TrainRun<F> {
    assert!(!items.is_empty(), "no training items");
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m: Vec<Matrix<F>> = model
        .params
        .iter()
        .map(|p| Matrix::zeros(p.rows, p.cols))
        .collect();
    let mut v: Vec<Matrix<F>> = model
        .params
        .iter()
        .map(|p| Matrix::zeros(p.rows, p.cols))
        .collect();
    let mut step = 0u64;
    let mut epoch_losses = Vec::with_capacity(epochs);
    let b1 = F::from_f64_c(opt.beta1);
    let b2 = F::from_f64_c(opt.beta2);
    let lr = F::from_f64_c(opt.learning_rate);
    let eps = F::from_f64_c(opt.eps);
    let dropout_p = model.config.dropout;

    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0f64;
        let mut epoch_tokens = 0usize;
        for (batch_id, chunk) in order.chunks(opt.batch_size.max(1)).enumerate() {
            let batch: Vec<TrainItem<F>> = chunk.iter().map(|&i| items[i].clone()).collect();
            let snapshot = model.params.clone();
            let dropout = if dropout_p > 0.0 {
                Some((&mut rng, dropout_p))
            } else {
                None
            };
            let outcome = loss_and_grads(&model, &batch, batch_id, dropout);
            let lg = match outcome {
                Ok(lg) => lg,
                Err(NeuralError::NonFiniteLoss { .. }) => {
                    model.params = snapshot;
                    return TrainRun {
                        model,
                        epoch_losses,
                        diverged_at: Some(epoch),
                    };
                }
                Err(e) => panic!("forward failed during training: {e}"),
            };
            epoch_loss_sum += lg.loss.to_f64_c() * lg.n_valid_tokens as f64;
            epoch_tokens += lg.n_valid_tokens;

            step += 1;
            let t = step as i32;
            let bc1 = (F::one() - b1.powi(t)).recip();
            let bc2 = (F::one() - b2.powi(t)).recip();
            for ((param, grad), (mi, vi)) in model
                .params
                .iter_mut()
                .zip(&lg.grads)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                for idx in 0..param.data.len() {
                    let g = grad.data[idx];
                    mi.data[idx] = b1 * mi.data[idx] + (F::one() - b1) * g;
                    vi.data[idx] = b2 * vi.data[idx] + (F::one() - b2) * g * g;
                    let m_hat = mi.data[idx] * bc1;
                    let v_hat = vi.data[idx] * bc2;
                    param.data[idx] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            if !model.all_finite() {
                model.params = snapshot;
                return TrainRun {
                    model,
                    epoch_losses,
                    diverged_at: Some(epoch),
                };
            }
        }
        epoch_losses.push(epoch_loss_sum / epoch_tokens.max(1) as f64);
    }
    TrainRun {
        model,
        epoch_losses,
        diverged_at: None,
    }
}

/// Teacher-forced per-position cross entropy of a candidate (BOS-prefixed,
/// EOS-terminated). Candidates longer than `max_target` are truncated and
/// flagged.
pub fn per_token_ce<F: Scalar>(
    model: &ModelState<F>,
    input: &ScoringInput<F>,
    candidate_tokens: &[String],
    vocab: &Vocab,
) -> Result<TokenLosses<F>, NeuralError> {
    let mut ids = vocab.encode(candidate_tokens);
    let truncated = ids.len() > model.config.max_target;
    ids.truncate(model.config.max_target);
    let mut prefix = Vec::with_capacity(ids.len() + 1);
    prefix.push(BOS_ID);
    prefix.extend_from_slice(&ids);
    let mut targets = ids;
    targets.push(EOS_ID);

    let result = build_forward(model, &input.frames, &input.context_ids, &prefix, None)?;
    let losses = result.graph.gather_neg_logp(result.log_probs, &targets);
    let mut tl = TokenLosses::all_valid(losses);
    tl.truncated = truncated;
    Ok(tl)
}

/// Greedy decoding: append the argmax token until EOS or `max_len` tokens.
/// Returns the generated ids, without BOS/EOS.
pub fn generate_greedy<F: Scalar>(
    model: &ModelState<F>,
    input: &ScoringInput<F>,
    max_len: usize,
) -> Result<Vec<u32>, NeuralError> {
    let mut prefix = vec![BOS_ID];
    let mut out = Vec::new();
    for _ in 0..max_len {
        let logp = forward_logprobs(model, &input.frames, &input.context_ids, &prefix)?;
        let last = logp.row(logp.rows - 1);
        let mut best = 0usize;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        if best as u32 == EOS_ID {
            break;
        }
        out.push(best as u32);
        prefix.push(best as u32);
        if prefix.len() > model.config.max_target + 1 {
            break;
        }
    }
    Ok(out)
}

/// Transformer scorer: the model plus the vocabulary used to encode
/// candidates.
pub struct TransformerScorer<F: Scalar> {
    pub model: ModelState<F>,
    pub vocab: Vocab,
}

impl<F: Scalar> Scorer<F> for TransformerScorer<F> {
    fn per_token_losses(
        &self,
        input: &ScoringInput<F>,
        candidate_tokens: &[String],
    ) -> Result<TokenLosses<F>, ScoreError> {
        per_token_ce(&self.model, input, candidate_tokens, &self.vocab).map_err(|e| {
            ScoreError::ScorerFailure {
                candidate: 0,
                msg: e.to_string(),
            }
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config: ModelConfig,
    seed: u64,
    params: Vec<CheckpointParam>,
}

/// Writes the checkpoint as JSON: config, seed, and named parameter arrays
/// in layout order (row-major f64 data).
pub fn save_checkpoint<F: Scalar>(
    model: &ModelState<F>,
    path: &std::path::Path,
) -> Result<(), NeuralError> {
    let file = CheckpointFile {
        config: model.config.clone(),
        seed: model.seed,
        params: model
            .names
            .iter()
            .zip(&model.params)
            .map(|(name, p)| CheckpointParam {
                name: name.clone(),
                rows: p.rows,
                cols: p.cols,
                data: p.data.iter().map(|v| v.to_f64_c()).collect(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &std::path::Path) -> Result<ModelState<F>, NeuralError> {
    let raw = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&raw)?;
    let mut names = Vec::with_capacity(file.params.len());
    let mut params = Vec::with_capacity(file.params.len());
    for p in file.params {
        if p.data.len() != p.rows * p.cols {
            return Err(NeuralError::CheckpointShape {
                name: p.name,
                got: p.data.len(),
                expected: p.rows * p.cols,
            });
        }
        names.push(p.name);
        params.push(Matrix {
            rows: p.rows,
            cols: p.cols,
            data: p.data.into_iter().map(F::from_f64_c).collect(),
        });
    }
    Ok(ModelState {
        config: file.config,
        seed: file.seed,
        names,
        params,
    })
}
