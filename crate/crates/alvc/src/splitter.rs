//! Duplicate-video detection, deduplication, leak-free splitting and
//! cross-split comment-overlap auditing.
//!
//! Videos are identified by normalized title: trimmed, with internal
//! whitespace runs collapsed to a single space. No case folding is applied
//! (titles are predominantly CJK).

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, SplitTag};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("split sizes {n_train}+{n_dev}+{n_test} != corpus size {corpus}")]
    SizeMismatch {
        n_train: usize,
        n_dev: usize,
        n_test: usize,
        corpus: usize,
    },
    #[error("corpus has {0} duplicate-title groups; dedup before splitting")]
    DuplicateTitles(usize),
}

/// Videos sharing one normalized title, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DuplicateGroup {
    pub key: String,
    pub member_video_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub n_test_comments: usize,
    pub n_overlapping: usize,
    pub examples: Vec<String>,
}

/// Trim plus collapse of internal whitespace; case is preserved.
pub fn normalize_title(title: &str) -> String {
    title.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Groups videos by normalized title and returns every key with two or more
/// members, ordered by key bytes.
pub fn find_duplicate_videos(corpus: &Corpus) -> Vec<DuplicateGroup> {
    let mut groups: HashMap<String, Vec<String>> = HashMap::new();
    for video in &corpus.videos {
        groups
            .entry(normalize_title(&video.title))
            .or_default()
            .push(video.video_id.clone());
    }
    let mut dups: Vec<DuplicateGroup> = groups
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(key, member_video_ids)| DuplicateGroup {
            key,
            member_video_ids,
        })
        .collect();
    dups.sort_by(|a, b| a.key.as_bytes().cmp(b.key.as_bytes()));
    dups
}

/// Keeps the first video of each duplicate-title group, in corpus order.
/// Idempotent; the result is title-unique.
pub fn dedup(corpus: &Corpus) -> Corpus {
    let mut seen = HashSet::new();
    let videos = corpus
        .videos
        .iter()
        .filter(|v| seen.insert(normalize_title(&v.title)))
        .cloned()
        .collect();
    Corpus {
        videos,
        split_tag: corpus.split_tag,
    }
}

/// Seeded uniform shuffle of the video ids, partitioned train/dev/test in
/// order. The corpus must already be title-unique.
pub fn split(
    corpus: &Corpus,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitAssignment, SplitError> {
    let n_groups = find_duplicate_videos(corpus).len();
    if n_groups > 0 {
        return Err(SplitError::DuplicateTitles(n_groups));
    }
    if n_train + n_dev + n_test != corpus.n_videos() {
        return Err(SplitError::SizeMismatch {
            n_train,
            n_dev,
            n_test,
            corpus: corpus.n_videos(),
        });
    }
    let mut ids: Vec<String> = corpus.videos.iter().map(|v| v.video_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let dev_start = n_train;
    let test_start = n_train + n_dev;
    Ok(SplitAssignment {
        seed,
        train: ids[..dev_start].to_vec(),
        dev: ids[dev_start..test_start].to_vec(),
        test: ids[test_start..].to_vec(),
    })
}

/// Materializes the three split corpora (corpus order preserved within each
/// split) and tags them.
pub fn apply_split(corpus: &Corpus, assignment: &SplitAssignment) -> (Corpus, Corpus, Corpus) {
    let pick = |ids: &[String], tag: SplitTag| {
        let id_set: HashSet<&String> = ids.iter().collect();
        Corpus {
            videos: corpus
                .videos
                .iter()
                .filter(|v| id_set.contains(&v.video_id))
                .cloned()
                .collect(),
            split_tag: Some(tag),
        }
    };
    (
        pick(&assignment.train, SplitTag::Train),
        pick(&assignment.dev, SplitTag::Dev),
        pick(&assignment.test, SplitTag::Test),
    )
}

/// Maximum number of example strings carried in an [`OverlapReport`].
pub const OVERLAP_EXAMPLE_CAP: usize = 10;

/// Counts test comments whose whitespace-normalized text also occurs in the
/// training set: multiset on the test side, set membership on the train side.
pub fn cross_split_overlap(train: &Corpus, test: &Corpus) -> OverlapReport {
    let train_texts: HashSet<String> = train
        .comments()
        .map(|c| normalize_text(&c.raw_text))
        .collect();
    let mut n_test_comments = 0;
    let mut n_overlapping = 0;
    let mut examples = Vec::new();
    let mut example_seen = HashSet::new();
    for comment in test.comments() {
        n_test_comments += 1;
        let norm = normalize_text(&comment.raw_text);
        if train_texts.contains(&norm) {
            n_overlapping += 1;
            if examples.len() < OVERLAP_EXAMPLE_CAP && example_seen.insert(norm.clone()) {
                examples.push(norm);
            }
        }
    }
    OverlapReport {
        n_test_comments,
        n_overlapping,
        examples,
    }
}

fn escape_tsv(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

impl OverlapReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n_test_comments\t{}\n", self.n_test_comments));
        out.push_str(&format!("n_overlapping\t{}\n", self.n_overlapping));
        for ex in &self.examples {
            out.push_str(&format!("example\t{}\n", escape_tsv(ex)));
        }
        out
    }
}

/// Duplicate-group TSV: key, member count, member ids.
pub fn duplicate_groups_tsv(groups: &[DuplicateGroup]) -> String {
    let mut out = String::from("key\tn_members\tmember_video_ids\n");
    for g in groups {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            escape_tsv(&g.key),
            g.member_video_ids.len(),
            g.member_video_ids.join(",")
        ));
    }
    out
}
