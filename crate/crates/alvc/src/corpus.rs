//! Canonical data model for videos, time-tagged comments and frame features,
//! plus ingestion, statistics and evaluation-sample construction.
//!
//! The on-disk corpus format is UTF-8 JSONL, one video per line:
//!
//! ```json
//! {"video_id": "v1", "title": "...", "duration_s": 60.0,
//!  "frames": [{"t": 0.0, "feat": [0.1, 0.2]}],
//!  "comments": [{"id": "c1", "t": 3.5, "text": "...", "tokens": ["..."]}]}
//! ```
//!
//! When a comment omits `tokens` the fallback tokenizer is applied at load
//! time, so a loaded corpus always satisfies the type invariants.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

/// Supported corpus schema tags.
pub const SCHEMA_V1: &str = "v1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {msg}")]
    Integrity { line: usize, msg: String },
    #[error("unsupported schema version {0:?} (expected \"v1\")")]
    SchemaVersion(String),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    #[serde(rename = "id")]
    pub comment_id: String,
    #[serde(rename = "t")]
    pub time_s: f64,
    #[serde(rename = "text")]
    pub raw_text: String,
    #[serde(default)]
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeature {
    #[serde(rename = "t")]
    pub time_s: f64,
    #[serde(rename = "feat")]
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Video {
    pub video_id: String,
    pub title: String,
    pub duration_s: f64,
    #[serde(default)]
    pub frames: Vec<FrameFeature>,
    #[serde(default)]
    pub comments: Vec<Comment>,
}

impl Video {
    /// Feature dimensionality, if the video has frames.
    pub fn feature_dim(&self) -> Option<usize> {
        self.frames.first().map(|f| f.vector.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub videos: Vec<Video>,
    pub split_tag: Option<SplitTag>,
}

impl Corpus {
    pub fn n_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn n_comments(&self) -> usize {
        self.videos.iter().map(|v| v.comments.len()).sum()
    }

    pub fn video(&self, video_id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }

    /// All comments of all videos, in corpus order.
    pub fn comments(&self) -> impl Iterator<Item = &Comment> {
        self.videos.iter().flat_map(|v| v.comments.iter())
    }
}

/// One evaluation point: a time-stamp plus references (indices into the
/// owning video's `frames` / `comments`) for the model inputs and the
/// ground truths. Reference lists are stored in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub video_id: String,
    pub t: f64,
    pub frame_refs: Vec<usize>,
    pub context_refs: Vec<usize>,
    pub ground_truth_refs: Vec<usize>,
}

impl EvalSample {
    /// Stable content-derived identifier used in reports.
    pub fn sample_id(&self) -> String {
        format!("{}@{:.3}", self.video_id, self.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_videos: usize,
    pub n_comments: usize,
    pub n_words: usize,
    pub avg_words: f64,
    pub total_duration_hrs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Validates one video's invariants; `line` is used for error reporting.
fn validate_video(video: &mut Video, line: usize) -> Result<(), CorpusError> {
    let fail = |msg: String| CorpusError::Integrity { line, msg };
    if !video.duration_s.is_finite() || video.duration_s <= 0.0 {
        return Err(fail(format!(
            "video {}: duration_s must be > 0, got {}",
            video.video_id, video.duration_s
        )));
    }
    let mut dim: Option<usize> = None;
    let mut prev_t = f64::NEG_INFINITY;
    for frame in &video.frames {
        if frame.time_s <= prev_t {
            return Err(fail(format!(
                "video {}: frame times must be strictly increasing ({} after {})",
                video.video_id, frame.time_s, prev_t
            )));
        }
        prev_t = frame.time_s;
        match dim {
            None => dim = Some(frame.vector.len()),
            Some(d) if d != frame.vector.len() => {
                return Err(fail(format!(
                    "video {}: frame feature length {} != {}",
                    video.video_id,
                    frame.vector.len(),
                    d
                )));
            }
            _ => {}
        }
    }
    for comment in &mut video.comments {
        if comment.raw_text.is_empty() {
            return Err(fail(format!(
                "video {}: comment {} has empty text",
                video.video_id, comment.comment_id
            )));
        }
        if comment.tokens.is_empty() {
            comment.tokens = tokenize(&comment.raw_text);
        }
        if comment.tokens.is_empty() {
            return Err(fail(format!(
                "video {}: comment {} tokenizes to nothing",
                video.video_id, comment.comment_id
            )));
        }
        if comment.time_s < 0.0 || comment.time_s > video.duration_s {
            return Err(fail(format!(
                "video {}: comment {} at t={} outside [0, {}]",
                video.video_id, comment.comment_id, comment.time_s, video.duration_s
            )));
        }
    }
    // comments must end up time-sorted; stable so equal stamps keep input order
    video
        .comments
        .sort_by(|a, b| a.time_s.partial_cmp(&b.time_s).unwrap());
    Ok(())
}

/// Loads a JSONL corpus, validating every type invariant. Ingestion order is
/// preserved.
pub fn load_corpus(path: &Path, schema_version: &str) -> Result<Corpus, CorpusError> {
    if schema_version != SCHEMA_V1 {
        return Err(CorpusError::SchemaVersion(schema_version.to_string()));
    }
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut videos = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in file.lines().enumerate() {
        let line_no = idx + 1;
        let raw = line?;
        if raw.trim().is_empty() {
            continue;
        }
        let mut video: Video = serde_json::from_str(&raw).map_err(|source| CorpusError::Parse {
            line: line_no,
            source,
        })?;
        if !seen_ids.insert(video.video_id.clone()) {
            return Err(CorpusError::Integrity {
                line: line_no,
                msg: format!("duplicate video_id {}", video.video_id),
            });
        }
        validate_video(&mut video, line_no)?;
        videos.push(video);
    }
    Ok(Corpus {
        videos,
        split_tag: None,
    })
}

/// Writes the corpus back as JSONL in corpus order.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for video in &corpus.videos {
        let line = serde_json::to_string(video).expect("video serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Corpus-level counts: word total, per-comment average (2 decimals) and
/// total duration in hours (2 decimals).
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let n_videos = corpus.n_videos();
    let n_comments = corpus.n_comments();
    let n_words: usize = corpus.comments().map(|c| c.tokens.len()).sum();
    let total_duration_hrs =
        round2(corpus.videos.iter().map(|v| v.duration_s).sum::<f64>() / 3600.0);
    let (avg_words, warning) = if n_comments == 0 {
        (
            0.0,
            Some("corpus has zero comments; avg_words reported as 0".to_string()),
        )
    } else {
        (round2(n_words as f64 / n_comments as f64), None)
    };
    CorpusStats {
        n_videos,
        n_comments,
        n_words,
        avg_words,
        total_duration_hrs,
        warning,
    }
}

/// Row names follow the published dataset statistics table.
pub const STATS_ROW_NAMES: [&str; 5] = [
    "#Video",
    "#Comment",
    "#Word",
    "Avg. Words",
    "Total Duration (hrs)",
];

/// Emits stats as TSV. One column per named corpus plus a Total column when
/// more than one corpus is given.
pub fn stats_tsv(columns: &[(&str, &CorpusStats)]) -> String {
    let mut out = String::from("Statistic");
    for (name, _) in columns {
        out.push('\t');
        out.push_str(name);
    }
    let with_total = columns.len() > 1;
    if with_total {
        out.push_str("\tTotal");
    }
    out.push('\n');

    let total_videos: usize = columns.iter().map(|(_, s)| s.n_videos).sum();
    let total_comments: usize = columns.iter().map(|(_, s)| s.n_comments).sum();
    let total_words: usize = columns.iter().map(|(_, s)| s.n_words).sum();
    let total_hours: f64 = columns.iter().map(|(_, s)| s.total_duration_hrs).sum();
    let total_avg = if total_comments == 0 {
        0.0
    } else {
        round2(total_words as f64 / total_comments as f64)
    };

    let mut push_row = |name: &str, cells: Vec<String>, total: String| {
        out.push_str(name);
        for cell in cells {
            out.push('\t');
            out.push_str(&cell);
        }
        if with_total {
            out.push('\t');
            out.push_str(&total);
        }
        out.push('\n');
    };

    push_row(
        STATS_ROW_NAMES[0],
        columns
            .iter()
            .map(|(_, s)| s.n_videos.to_string())
            .collect(),
        total_videos.to_string(),
    );
    push_row(
        STATS_ROW_NAMES[1],
        columns
            .iter()
            .map(|(_, s)| s.n_comments.to_string())
            .collect(),
        total_comments.to_string(),
    );
    push_row(
        STATS_ROW_NAMES[2],
        columns.iter().map(|(_, s)| s.n_words.to_string()).collect(),
        total_words.to_string(),
    );
    push_row(
        STATS_ROW_NAMES[3],
        columns
            .iter()
            .map(|(_, s)| format!("{:.2}", s.avg_words))
            .collect(),
        format!("{total_avg:.2}"),
    );
    push_row(
        STATS_ROW_NAMES[4],
        columns
            .iter()
            .map(|(_, s)| format!("{:.2}", s.total_duration_hrs))
            .collect(),
        format!("{:.2}", round2(total_hours)),
    );
    out
}

/// Orders candidate indices by nearness to `t`: absolute distance first,
/// then earlier time, then the supplied id key.
fn nearness_order<K: Ord>(items: &[(usize, f64, K)], t: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, ta, ka) = (&items[a].0, items[a].1, &items[a].2);
        let (ib, tb, kb) = (&items[b].0, items[b].1, &items[b].2);
        let da = (ta - t).abs();
        let db = (tb - t).abs();
        da.partial_cmp(&db)
            .unwrap()
            .then_with(|| ta.partial_cmp(&tb).unwrap())
            .then_with(|| ka.cmp(kb))
            .then_with(|| ia.cmp(ib))
    });
    order.into_iter().map(|i| items[i].0).collect()
}

/// Builds evaluation samples on a fixed time grid.
///
/// For every grid point `t` (multiples of `stride_s` up to the video
/// duration) with at least one comment inside `t ± gt_window_s`:
/// ground truths are the up-to-`g` comments nearest to `t` within the
/// window; the context is the up-to-`n` remaining comments nearest to `t`;
/// frames are the up-to-`m` frames nearest to `t`. Nearness ties break
/// toward the earlier time, then the lower comment id.
pub fn build_samples(
    corpus: &Corpus,
    m: usize,
    n: usize,
    g: usize,
    gt_window_s: f64,
    stride_s: f64,
) -> Result<Vec<EvalSample>, CorpusError> {
    if m < 1 || n < 1 || g < 1 {
        return Err(CorpusError::InvalidArg(format!(
            "m, n, g must be >= 1 (got m={m}, n={n}, g={g})"
        )));
    }
    if !stride_s.is_finite() || stride_s <= 0.0 {
        return Err(CorpusError::InvalidArg(format!(
            "stride_s must be > 0 (got {stride_s})"
        )));
    }
    let mut samples = Vec::new();
    for video in &corpus.videos {
        if video.comments.is_empty() {
            continue;
        }
        let n_steps = (video.duration_s / stride_s).floor() as usize;
        for step in 0..=n_steps {
            let t = step as f64 * stride_s;
            let in_window: Vec<(usize, f64, &str)> = video
                .comments
                .iter()
                .enumerate()
                .filter(|(_, c)| (c.time_s - t).abs() <= gt_window_s)
                .map(|(i, c)| (i, c.time_s, c.comment_id.as_str()))
                .collect();
            if in_window.is_empty() {
                continue;
            }
            let mut ground_truth_refs: Vec<usize> =
                nearness_order(&in_window, t).into_iter().take(g).collect();
            let gt_set: HashSet<usize> = ground_truth_refs.iter().copied().collect();

            let rest: Vec<(usize, f64, &str)> = video
                .comments
                .iter()
                .enumerate()
                .filter(|(i, _)| !gt_set.contains(i))
                .map(|(i, c)| (i, c.time_s, c.comment_id.as_str()))
                .collect();
            let mut context_refs: Vec<usize> =
                nearness_order(&rest, t).into_iter().take(n).collect();

            let frames: Vec<(usize, f64, usize)> = video
                .frames
                .iter()
                .enumerate()
                .map(|(i, f)| (i, f.time_s, i))
                .collect();
            let mut frame_refs: Vec<usize> =
                nearness_order(&frames, t).into_iter().take(m).collect();

            ground_truth_refs.sort_unstable();
            context_refs.sort_unstable();
            frame_refs.sort_unstable();
            samples.push(EvalSample {
                video_id: video.video_id.clone(),
                t,
                frame_refs,
                context_refs,
                ground_truth_refs,
            });
        }
    }
    Ok(samples)
}

/// Deterministic stand-in for precomputed frame features: expands a hash of
/// `(video_id, time)` into `dim` values in `[0, 1)`.
pub fn stub_features(video_id: &str, time_s: f64, dim: usize) -> Vec<f32> {
    // FNV-1a over the id bytes and the time bits
    let mut h: u64 = 0xcbf29ce484222325;
    for b in video_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    for b in time_s.to_bits().to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    // splitmix64 expansion
    let mut state = h;
    (0..dim)
        .map(|_| {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 31;
            // take the top 24 bits for an exact [0,1) f32
            ((z >> 40) as f32) / (1u32 << 24) as f32
        })
        .collect()
}
