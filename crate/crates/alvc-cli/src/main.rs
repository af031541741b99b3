//! `alvc` — pipeline runner for the live-video-commenting evaluation
//! workbench.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use alvc::corpus::{save_corpus, stats_tsv};
use alvc::retrieval::QuerySource;
use alvc::scoring::{Aggregation, Direction, MaskMode};
use alvc::splitter::{dedup, duplicate_groups_tsv, find_duplicate_videos};

use config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "alvc",
    version,
    about = "Live-video-commenting retrieval-evaluation workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationFlag {
    Sum,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionFlag {
    Asc,
    Desc,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuerySourceFlag {
    Title,
    Context,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskFlag {
    /// Mask the visual input (text only).
    Text,
    /// Mask the text input (visual only).
    Visual,
    /// Both modalities on.
    BothOn,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports and artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; derives all named seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    aggregation: Option<AggregationFlag>,
    #[arg(long, value_enum)]
    direction: Option<DirectionFlag>,
    #[arg(long, value_enum)]
    query_source: Option<QuerySourceFlag>,
    #[arg(long, value_enum)]
    mask: Option<MaskFlag>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            aggregation: self.aggregation.map(|a| match a {
                AggregationFlag::Sum => Aggregation::Sum,
                AggregationFlag::Mean => Aggregation::Mean,
            }),
            direction: self.direction.map(|d| match d {
                DirectionFlag::Asc => Direction::Ascending,
                DirectionFlag::Desc => Direction::Descending,
            }),
            query_source: self.query_source.map(|q| match q {
                QuerySourceFlag::Title => QuerySource::Title,
                QuerySourceFlag::Context => QuerySource::Context,
            }),
            mask: self.mask.map(|m| match m {
                MaskFlag::Text => MaskMode::TextOnly,
                MaskFlag::Visual => MaskMode::VisualOnly,
                MaskFlag::BothOn => MaskMode::TextVisual,
            }),
        }
    }

    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        ExperimentConfig::load(&self.config, &self.overrides())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    /// Videos with pairwise-distinct comments.
    Basic,
    /// Planted duplicate titles (38 groups, one triplicate).
    Duplicates,
    /// One memorizable target comment per video.
    Memorization,
    /// Fluent shared phrasing plus unique-token noise.
    Fluent,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics as TSV (per split when a split is configured).
    Stats(CommonArgs),
    /// Remove duplicate-title videos; writes the deduplicated corpus and the
    /// duplicate groups.
    Dedup(CommonArgs),
    /// Seeded train/dev/test split with a cross-split overlap audit.
    Split(CommonArgs),
    /// Build and serialize the 100-candidate sets.
    BuildCandidates(CommonArgs),
    /// Train the bigram reference scorer and save it.
    TrainNgram(CommonArgs),
    /// Train the toy transformer and save a checkpoint.
    TrainTransformer(CommonArgs),
    /// Score candidate sets and emit the metric report.
    Evaluate(CommonArgs),
    /// Run the full issue-mode grid and emit a comparison table.
    Matrix(CommonArgs),
    /// Generate a synthetic corpus.
    GenFixture {
        #[arg(long, value_enum)]
        kind: FixtureKind,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
        /// Number of videos (fixture-specific interpretation).
        #[arg(long, default_value_t = 30)]
        videos: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn init_rayon() {
    if let Ok(threads) = std::env::var("ALVC_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Stats(args) => {
            let config = args.load()?;
            let columns = pipeline::stats_columns(&config)?;
            let refs: Vec<(&str, &alvc::corpus::CorpusStats)> =
                columns.iter().map(|(n, s)| (*n, s)).collect();
            let tsv = stats_tsv(&refs);
            std::fs::create_dir_all(&args.out)?;
            std::fs::write(args.out.join("stats.tsv"), &tsv).context("stage report (stats.tsv)")?;
            print!("{tsv}");
        }
        Command::Dedup(args) => {
            let config = args.load()?;
            let corpus = alvc::corpus::load_corpus(&config.corpus, &config.schema_version)
                .context("stage load_corpus")?;
            let groups = find_duplicate_videos(&corpus);
            let deduped = dedup(&corpus);
            std::fs::create_dir_all(&args.out)?;
            save_corpus(&deduped, &args.out.join("dedup.jsonl")).context("stage dedup")?;
            std::fs::write(
                args.out.join("duplicates.tsv"),
                duplicate_groups_tsv(&groups),
            )?;
            println!(
                "{} videos, {} duplicate-title groups, removed {} -> {} videos",
                corpus.n_videos(),
                groups.len(),
                corpus.n_videos() - deduped.n_videos(),
                deduped.n_videos()
            );
        }
        Command::Split(args) => {
            let config = args.load()?;
            let summary = pipeline::run_split(&config, &args.out)?;
            println!("{summary}");
        }
        Command::BuildCandidates(args) => {
            let config = args.load()?;
            let prepared = pipeline::prepare(&config)?;
            let candidates = pipeline::build_all_candidates(
                &prepared,
                config.query_source,
                config.seeds.candidates,
            )?;
            std::fs::create_dir_all(&args.out)?;
            let mut jsonl = String::new();
            for cs in &candidates {
                jsonl.push_str(&serde_json::to_string(cs).expect("candidate set serializes"));
                jsonl.push('\n');
            }
            std::fs::write(args.out.join("candidates.jsonl"), jsonl)
                .context("stage report (candidates.jsonl)")?;
            println!("{} candidate sets written", candidates.len());
        }
        Command::TrainNgram(args) => {
            let config = args.load()?;
            let prepared = pipeline::prepare(&config)?;
            let model = alvc::scoring::train_ngram(
                &prepared.train,
                &prepared.vocab,
                config.ngram.order,
                config.ngram.alpha,
            )
            .context("stage train_ngram")?;
            std::fs::create_dir_all(&args.out)?;
            prepared
                .vocab
                .save(&args.out.join("vocab.txt"))
                .context("stage vocab")?;
            std::fs::write(
                args.out.join("ngram.json"),
                serde_json::to_string(&model).expect("ngram serializes"),
            )?;
            println!("bigram scorer over {} ids saved", model.vocab_size);
        }
        Command::TrainTransformer(args) => {
            let config = args.load()?;
            let prepared = pipeline::prepare(&config)?;
            let mc = pipeline::model_config(&config, &prepared.vocab, &prepared.train);
            let s = &config.sample;
            let train_samples = alvc::corpus::build_samples(
                &prepared.train,
                s.m,
                s.n,
                s.g,
                s.gt_window_s,
                s.stride_s,
            )
            .context("stage build_samples (train)")?;
            let items = alvc::neural::training_items::<f64>(
                &prepared.train,
                &train_samples,
                &prepared.vocab,
                &mc,
            );
            if items.is_empty() {
                anyhow::bail!("stage train_transformer: no training items");
            }
            let opt = alvc::neural::OptimizerConfig {
                learning_rate: config.optimizer.learning_rate,
                beta1: config.optimizer.beta1,
                beta2: config.optimizer.beta2,
                eps: 1e-8,
                batch_size: config.optimizer.batch_size,
            };
            let run = alvc::neural::train(
                alvc::neural::init_model::<f64>(&mc, config.seeds.init),
                &items,
                &opt,
                config.epochs,
                config.seeds.train,
            );
            if let Some(epoch) = run.diverged_at {
                anyhow::bail!("stage train_transformer: diverged at epoch {epoch}");
            }
            std::fs::create_dir_all(&args.out)?;
            prepared
                .vocab
                .save(&args.out.join("vocab.txt"))
                .context("stage vocab")?;
            alvc::neural::save_checkpoint(&run.model, &args.out.join("checkpoint.json"))
                .context("stage checkpoint")?;
            println!(
                "trained {} items for {} epochs; final loss {:.4}",
                items.len(),
                config.epochs,
                run.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Evaluate(args) => {
            let config = args.load()?;
            let (_prepared, output) = pipeline::run_evaluation(&config)?;
            let label = format!(
                "{}+{}",
                config.aggregation.as_str(),
                config.direction.as_str()
            );
            pipeline::write_report(&args.out, &label, &config, &output)?;
            print!(
                "{}{}",
                alvc::metrics::results_table_header(),
                alvc::metrics::results_table_row(&label, &output.report)
            );
        }
        Command::Matrix(args) => {
            let config = args.load()?;
            let summary = pipeline::run_matrix(&config, &args.out)?;
            println!("{summary}");
        }
        Command::GenFixture {
            kind,
            out,
            videos,
            seed,
        } => {
            let corpus = match kind {
                FixtureKind::Basic => alvc::fixtures::distinct_comments_corpus(videos, 15, seed),
                FixtureKind::Duplicates => {
                    alvc::fixtures::planted_duplicates_corpus(videos.max(40), seed).0
                }
                FixtureKind::Memorization => alvc::fixtures::memorization_corpus(videos, 8),
                FixtureKind::Fluent => alvc::fixtures::fluent_vs_noise_corpus(videos, seed),
            };
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            save_corpus(&corpus, &out).context("stage gen_fixture")?;
            println!("{} videos written to {}", corpus.n_videos(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    init_rayon();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
