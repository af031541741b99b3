//! Shared pipeline stages behind the subcommands. Every stage is
//! deterministic given the resolved configuration; sample scoring fans out
//! over rayon but collects in index order, so parallel and serial runs emit
//! identical reports.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;

use alvc::corpus::{
    build_samples, corpus_stats, load_corpus, Corpus, CorpusStats, EvalSample, SplitTag,
};
use alvc::metrics::{evaluate, MetricReport};
use alvc::neural::{
    init_model, load_checkpoint, train, training_items, ModelConfig, OptimizerConfig,
    TransformerScorer,
};
use alvc::retrieval::{
    build_candidate_set, popular_comments, CandidateSet, PopularComments, QuerySource, TfIdfIndex,
};
use alvc::scoring::{
    score_candidate_set, train_ngram, NgramScorerWithVocab, ScoredRanking, Scorer, ScoringInput,
};
use alvc::splitter::{apply_split, cross_split_overlap, dedup, split};
use alvc::text::Vocab;

use crate::config::{DatasetMode, ExperimentConfig, ScorerKind};

pub const POPULAR_K: usize = 20;

/// Everything the scoring stages need, prepared once.
pub struct Prepared {
    pub train: Corpus,
    pub vocab: Vocab,
    pub index: TfIdfIndex<f64>,
    pub popular: PopularComments,
    pub eval_corpus: Corpus,
    pub samples: Vec<EvalSample>,
}

pub fn load_stage(config: &ExperimentConfig) -> anyhow::Result<Corpus> {
    let corpus = load_corpus(&config.corpus, &config.schema_version)
        .with_context(|| format!("stage load_corpus ({})", config.corpus.display()))?;
    Ok(match config.dataset {
        DatasetMode::Provided => corpus,
        DatasetMode::Dedup => dedup(&corpus),
    })
}

pub fn prepare(config: &ExperimentConfig) -> anyhow::Result<Prepared> {
    let corpus = load_stage(config)?;
    let n = corpus.n_videos();
    let (n_dev, n_test) = (config.split.n_dev, config.split.n_test);
    if n_dev + n_test > n {
        bail!(
            "stage split: n_dev + n_test = {} exceeds corpus size {n}",
            n_dev + n_test
        );
    }
    let assignment = split(
        &corpus,
        n - n_dev - n_test,
        n_dev,
        n_test,
        config.seeds.split,
    )
    .context("stage split")?;
    let (train_corpus, dev, test) = apply_split(&corpus, &assignment);

    let vocab = Vocab::build(&train_corpus, config.vocab_max_size);
    let index = TfIdfIndex::from_train_pool(&train_corpus);
    let popular = popular_comments(&train_corpus, POPULAR_K);

    let eval_corpus = match config.eval_split {
        SplitTag::Train => train_corpus.clone(),
        SplitTag::Dev => dev,
        SplitTag::Test => {
            if n_test == 0 {
                // degenerate configs evaluate on the training split
                train_corpus.clone()
            } else {
                test
            }
        }
    };
    let s = &config.sample;
    let samples = build_samples(&eval_corpus, s.m, s.n, s.g, s.gt_window_s, s.stride_s)
        .context("stage build_samples")?;

    Ok(Prepared {
        train: train_corpus,
        vocab,
        index,
        popular,
        eval_corpus,
        samples,
    })
}

/// Per-sample candidate seed: decorrelated but reproducible.
fn candidate_seed(base: u64, sample_idx: usize) -> u64 {
    base.wrapping_add(sample_idx as u64)
}

pub fn build_all_candidates(
    prepared: &Prepared,
    query_source: QuerySource,
    seed: u64,
) -> anyhow::Result<Vec<CandidateSet>> {
    prepared
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            build_candidate_set(
                sample,
                &prepared.eval_corpus,
                &prepared.index,
                &prepared.popular,
                query_source,
                candidate_seed(seed, i),
            )
            .with_context(|| format!("stage build_candidates (sample {})", sample.sample_id()))
        })
        .collect()
}

pub enum AnyScorer {
    Ngram(NgramScorerWithVocab),
    Transformer(Box<TransformerScorer<f64>>),
}

impl AnyScorer {
    pub fn as_scorer(&self) -> &dyn Scorer<f64> {
        match self {
            AnyScorer::Ngram(s) => s,
            AnyScorer::Transformer(s) => s.as_ref(),
        }
    }
}

/// Discovers the frame-feature dimensionality of a corpus (defaults to 8
/// when no video carries frames).
pub fn feature_dim(corpus: &Corpus) -> usize {
    corpus
        .videos
        .iter()
        .find_map(|v| v.feature_dim())
        .unwrap_or(8)
}

pub fn model_config(config: &ExperimentConfig, vocab: &Vocab, corpus: &Corpus) -> ModelConfig {
    let m = &config.model;
    ModelConfig {
        d_model: m.d_model,
        n_heads: m.n_heads,
        n_layers: m.n_layers,
        ff_dim: m.ff_dim,
        dropout: m.dropout,
        vocab_size: vocab.len(),
        max_frames: m.max_frames,
        max_context: m.max_context,
        max_target: m.max_target,
        feature_dim: feature_dim(corpus),
    }
}

pub fn build_scorer(config: &ExperimentConfig, prepared: &Prepared) -> anyhow::Result<AnyScorer> {
    match config.scorer {
        ScorerKind::Ngram => {
            let model = train_ngram(
                &prepared.train,
                &prepared.vocab,
                config.ngram.order,
                config.ngram.alpha,
            )
            .context("stage train_ngram")?;
            Ok(AnyScorer::Ngram(NgramScorerWithVocab {
                model,
                vocab: prepared.vocab.clone(),
            }))
        }
        ScorerKind::Transformer => {
            let model = match &config.checkpoint {
                Some(path) => load_checkpoint(path)
                    .with_context(|| format!("stage load_checkpoint ({})", path.display()))?,
                None => {
                    let mc = model_config(config, &prepared.vocab, &prepared.train);
                    let s = &config.sample;
                    let train_samples =
                        build_samples(&prepared.train, s.m, s.n, s.g, s.gt_window_s, s.stride_s)
                            .context("stage build_samples (train)")?;
                    let items =
                        training_items(&prepared.train, &train_samples, &prepared.vocab, &mc);
                    if items.is_empty() {
                        bail!("stage train_transformer: no training items");
                    }
                    let opt = OptimizerConfig {
                        learning_rate: config.optimizer.learning_rate,
                        beta1: config.optimizer.beta1,
                        beta2: config.optimizer.beta2,
                        eps: 1e-8,
                        batch_size: config.optimizer.batch_size,
                    };
                    let run = train(
                        init_model::<f64>(&mc, config.seeds.init),
                        &items,
                        &opt,
                        config.epochs,
                        config.seeds.train,
                    );
                    if let Some(epoch) = run.diverged_at {
                        bail!("stage train_transformer: diverged at epoch {epoch}");
                    }
                    run.model
                }
            };
            Ok(AnyScorer::Transformer(Box::new(TransformerScorer {
                model,
                vocab: prepared.vocab.clone(),
            })))
        }
    }
}

pub struct RunOutput {
    pub rankings: Vec<ScoredRanking>,
    pub report: MetricReport,
}

pub fn score_and_evaluate(
    config: &ExperimentConfig,
    prepared: &Prepared,
    scorer: &AnyScorer,
    candidates: &[CandidateSet],
) -> anyhow::Result<RunOutput> {
    let mc = model_config(config, &prepared.vocab, &prepared.train);
    let rankings: Vec<ScoredRanking> = candidates
        .par_iter()
        .map(|cs| {
            let input = ScoringInput::<f64>::from_sample(
                &prepared.eval_corpus,
                &cs.sample,
                &prepared.vocab,
                mc.max_context,
                mc.max_frames,
            )
            .with_context(|| format!("stage score (sample {})", cs.sample.sample_id()))?
            .masked(config.mask);
            score_candidate_set(
                scorer.as_scorer(),
                &input,
                cs,
                config.aggregation,
                config.direction,
                config.include_masked,
            )
            .with_context(|| format!("stage score (sample {})", cs.sample.sample_id()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let report =
        evaluate(&rankings, config.recall_mode, config.rank_mode).context("stage evaluate")?;
    Ok(RunOutput { rankings, report })
}

/// One full evaluation under the resolved config.
pub fn run_evaluation(config: &ExperimentConfig) -> anyhow::Result<(Prepared, RunOutput)> {
    let prepared = prepare(config)?;
    if prepared.samples.is_empty() {
        bail!("stage build_samples: no evaluation samples were produced");
    }
    let candidates = build_all_candidates(&prepared, config.query_source, config.seeds.candidates)?;
    let scorer = build_scorer(config, &prepared)?;
    let output = score_and_evaluate(config, &prepared, &scorer, &candidates)?;
    Ok((prepared, output))
}

#[derive(Serialize)]
pub struct ReportFile<'a> {
    pub config: &'a ExperimentConfig,
    pub run_label: String,
    pub report: &'a MetricReport,
}

pub fn write_report(
    out_dir: &Path,
    label: &str,
    config: &ExperimentConfig,
    output: &RunOutput,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("stage report (creating {})", out_dir.display()))?;

    let mut tsv = alvc::metrics::results_table_header();
    tsv.push_str(&alvc::metrics::results_table_row(label, &output.report));
    std::fs::write(out_dir.join("report.tsv"), tsv).context("stage report (report.tsv)")?;

    let json = serde_json::to_string_pretty(&ReportFile {
        config,
        run_label: label.to_string(),
        report: &output.report,
    })
    .expect("report serializes");
    std::fs::write(out_dir.join("report.json"), json).context("stage report (report.json)")?;

    let mut rankings_tsv = String::from(alvc::scoring::RANKING_TSV_HEADER);
    for ranking in &output.rankings {
        rankings_tsv.push_str(&ranking.to_tsv_rows());
    }
    std::fs::write(out_dir.join("rankings.tsv"), rankings_tsv)
        .context("stage report (rankings.tsv)")?;
    Ok(())
}

/// Split-aware statistics: per-split columns when a split is configured,
/// one column otherwise.
pub fn stats_columns(
    config: &ExperimentConfig,
) -> anyhow::Result<Vec<(&'static str, CorpusStats)>> {
    let corpus = load_stage(config)?;
    if config.split.n_dev + config.split.n_test > 0 {
        let n = corpus.n_videos();
        let assignment = split(
            &corpus,
            n - config.split.n_dev - config.split.n_test,
            config.split.n_dev,
            config.split.n_test,
            config.seeds.split,
        )
        .context("stage split")?;
        let (train, dev, test) = apply_split(&corpus, &assignment);
        Ok(vec![
            ("Train", corpus_stats(&train)),
            ("Dev", corpus_stats(&dev)),
            ("Test", corpus_stats(&test)),
        ])
    } else {
        Ok(vec![("All", corpus_stats(&corpus))])
    }
}

/// The split subcommand's artifacts: assignment JSON, per-split corpora and
/// the train/test comment-overlap audit.
pub fn run_split(config: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<String> {
    let corpus = load_stage(config)?;
    let n = corpus.n_videos();
    if config.split.n_dev + config.split.n_test > n {
        bail!("stage split: n_dev + n_test exceeds corpus size {n}");
    }
    let assignment = split(
        &corpus,
        n - config.split.n_dev - config.split.n_test,
        config.split.n_dev,
        config.split.n_test,
        config.seeds.split,
    )
    .context("stage split")?;
    let (train, dev, test) = apply_split(&corpus, &assignment);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("assignment.json"),
        serde_json::to_string_pretty(&assignment).expect("assignment serializes"),
    )?;
    alvc::corpus::save_corpus(&train, &out_dir.join("train.jsonl")).context("stage split")?;
    alvc::corpus::save_corpus(&dev, &out_dir.join("dev.jsonl")).context("stage split")?;
    alvc::corpus::save_corpus(&test, &out_dir.join("test.jsonl")).context("stage split")?;
    let overlap = cross_split_overlap(&train, &test);
    std::fs::write(out_dir.join("overlap.tsv"), overlap.to_tsv())?;
    Ok(format!(
        "split {} videos into {}/{}/{}; test comments overlapping train: {}/{}",
        n,
        assignment.train.len(),
        assignment.dev.len(),
        assignment.test.len(),
        overlap.n_overlapping,
        overlap.n_test_comments
    ))
}

/// Matrix rows in grid order with their labels.
pub fn matrix_grid(config: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let mut rows = Vec::new();
    for &qs in &config.matrix.query_sources {
        for &mask in &config.matrix.masks {
            for &agg in &config.matrix.aggregations {
                for &dir in &config.matrix.directions {
                    let mut row = config.clone();
                    row.query_source = qs;
                    row.mask = mask;
                    row.aggregation = agg;
                    row.direction = dir;
                    let label = format!(
                        "{}+{}+{}+{}",
                        agg.as_str(),
                        dir.as_str(),
                        match qs {
                            QuerySource::Title => "title",
                            QuerySource::Context => "context",
                        },
                        mask.as_str()
                    );
                    rows.push((label, row));
                }
            }
        }
    }
    rows
}

#[derive(Serialize)]
pub struct MatrixRow<'a> {
    pub run_label: String,
    pub config: &'a ExperimentConfig,
    pub report: MetricReport,
}

/// Runs the full mode grid, reusing prepared data and scorers; candidate
/// sets are rebuilt only when the query source changes.
pub fn run_matrix(config: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<String> {
    let prepared = prepare(config)?;
    if prepared.samples.is_empty() {
        bail!("stage build_samples: no evaluation samples were produced");
    }
    let scorer = build_scorer(config, &prepared)?;
    let mut candidates_by_qs: BTreeMap<&'static str, Vec<CandidateSet>> = BTreeMap::new();

    let grid = matrix_grid(config);
    let mut tsv = alvc::metrics::results_table_header();
    let mut rows_json = Vec::new();
    for (label, row_config) in &grid {
        let qs_key = match row_config.query_source {
            QuerySource::Title => "title",
            QuerySource::Context => "context",
        };
        if !candidates_by_qs.contains_key(qs_key) {
            let sets =
                build_all_candidates(&prepared, row_config.query_source, config.seeds.candidates)?;
            candidates_by_qs.insert(qs_key, sets);
        }
        let candidates = &candidates_by_qs[qs_key];
        let output = score_and_evaluate(row_config, &prepared, &scorer, candidates)?;
        tsv.push_str(&alvc::metrics::results_table_row(label, &output.report));
        rows_json.push(MatrixRow {
            run_label: label.clone(),
            config: row_config,
            report: output.report,
        });
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("matrix.tsv"), &tsv).context("stage report (matrix.tsv)")?;
    std::fs::write(
        out_dir.join("matrix.json"),
        serde_json::to_string_pretty(&rows_json).expect("matrix serializes"),
    )
    .context("stage report (matrix.json)")?;
    Ok(format!(
        "matrix: {} runs written to {}",
        grid.len(),
        out_dir.display()
    ))
}
