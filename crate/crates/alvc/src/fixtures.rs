//! Synthetic corpus generators.
//!
//! Everything here is deterministic given its arguments, so tests and CLI
//! runs that build fixtures are reproducible byte for byte. Generators keep
//! their own ledger of planted facts (counts, duplicate arithmetic) so tests
//! can assert against an independent record instead of re-deriving it from
//! the corpus under test.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{stub_features, Comment, Corpus, EvalSample, FrameFeature, Video};
use crate::text::tokenize;

/// Planted facts about a generated fixture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureLedger {
    pub n_videos: usize,
    pub n_comments: usize,
    pub n_words: usize,
}

pub fn mk_comment(id: &str, t: f64, text: &str) -> Comment {
    Comment {
        comment_id: id.to_string(),
        time_s: t,
        raw_text: text.to_string(),
        tokens: tokenize(text),
    }
}

pub fn mk_video(id: &str, title: &str, duration_s: f64, comments: Vec<Comment>) -> Video {
    let mut comments = comments;
    comments.sort_by(|a, b| a.time_s.partial_cmp(&b.time_s).unwrap());
    Video {
        video_id: id.to_string(),
        title: title.to_string(),
        duration_s,
        frames: vec![],
        comments,
    }
}

/// Attaches `n_frames` stub-featurized frames spaced evenly over the video.
pub fn with_stub_frames(mut video: Video, n_frames: usize, dim: usize) -> Video {
    let step = video.duration_s / (n_frames as f64 + 1.0);
    video.frames = (0..n_frames)
        .map(|i| {
            let t = step * (i as f64 + 1.0);
            FrameFeature {
                time_s: t,
                vector: stub_features(&video.video_id, t, dim),
            }
        })
        .collect();
    video
}

/// Two videos with 3 and 4 comments; the ledger records the planted counts.
pub fn two_video_corpus() -> (Corpus, FixtureLedger) {
    let v1 = with_stub_frames(
        mk_video(
            "vid-1",
            "first video",
            30.0,
            vec![
                mk_comment("c1", 1.0, "hello world"),
                mk_comment("c2", 5.0, "good 好"),
                mk_comment("c3", 9.0, "one"),
            ],
        ),
        3,
        4,
    );
    let v2 = with_stub_frames(
        mk_video(
            "vid-2",
            "second video",
            45.0,
            vec![
                mk_comment("c1", 2.0, "a b c"),
                mk_comment("c2", 11.0, "x"),
                mk_comment("c3", 20.0, "yy zz"),
                mk_comment("c4", 33.0, "深夜"),
            ],
        ),
        3,
        4,
    );
    // words: (2 + 2 + 1) + (3 + 1 + 2 + 2) = 13
    let ledger = FixtureLedger {
        n_videos: 2,
        n_comments: 7,
        n_words: 13,
    };
    (
        Corpus {
            videos: vec![v1, v2],
            split_tag: None,
        },
        ledger,
    )
}

/// One video whose comments have exactly the given token counts.
pub fn video_with_token_counts(id: &str, counts: &[usize]) -> Video {
    let comments = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let text: Vec<String> = (0..n).map(|j| format!("w{i}x{j}")).collect();
            mk_comment(&format!("c{i}"), (i + 1) as f64, &text.join(" "))
        })
        .collect();
    mk_video(id, &format!("video {id}"), 60.0, comments)
}

/// Comments at every integer second in `lo..=hi`.
pub fn comment_grid_video(id: &str, lo: u32, hi: u32) -> Video {
    let comments = (lo..=hi)
        .map(|s| mk_comment(&format!("c{s:03}"), s as f64, &format!("comment at {s}")))
        .collect();
    mk_video(id, &format!("grid {id}"), (hi + 5) as f64, comments)
}

/// Corpus with one single-comment video per title, in the given order.
pub fn titled_corpus(titles: &[&str]) -> Corpus {
    let videos = titles
        .iter()
        .enumerate()
        .map(|(i, title)| {
            mk_video(
                &format!("v{i:03}"),
                title,
                10.0,
                vec![mk_comment("c0", 1.0, &format!("text {i}"))],
            )
        })
        .collect();
    Corpus {
        videos,
        split_tag: None,
    }
}

/// Corpus whose comment texts are all pairwise distinct. Useful wherever
/// candidate construction needs a large unique pool.
pub fn distinct_comments_corpus(n_videos: usize, per_video: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let videos = (0..n_videos)
        .map(|v| {
            let comments = (0..per_video)
                .map(|c| {
                    let t = 1.0 + c as f64;
                    let text = format!("word{v}x{c} tail{}", rng.random_range(0..1000u32));
                    mk_comment(&format!("c{c:03}"), t, &text)
                })
                .collect();
            let video = mk_video(
                &format!("v{v:03}"),
                &format!("topic{} video {v}", v % 5),
                per_video as f64 + 5.0,
                comments,
            );
            with_stub_frames(video, 4, 8)
        })
        .collect();
    Corpus {
        videos,
        split_tag: None,
    }
}

/// Ledger for the planted-duplicate corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateLedger {
    pub n_unique_titles: usize,
    pub n_duplicate_groups: usize,
    pub n_redundant_videos: usize,
}

/// Corpus with `n_unique` distinct titles where 38 titles occur twice and
/// one of those additionally a third time: 38 duplicate groups, 39
/// redundant videos. Duplicate copies share the original's content but get
/// fresh video ids, and are shuffled into seeded positions.
pub fn planted_duplicates_corpus(n_unique: usize, seed: u64) -> (Corpus, DuplicateLedger) {
    assert!(n_unique >= 40, "need at least 40 unique titles");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut videos: Vec<Video> = (0..n_unique)
        .map(|i| {
            let v = mk_video(
                &format!("u{i:04}"),
                &format!("title {i}"),
                20.0,
                vec![
                    mk_comment("c0", 2.0, &format!("remark{i} alpha")),
                    mk_comment("c1", 8.0, &format!("remark{i} beta")),
                ],
            );
            with_stub_frames(v, 2, 4)
        })
        .collect();

    let mut dup_indices: Vec<usize> = (0..n_unique).collect();
    dup_indices.shuffle(&mut rng);
    let chosen: Vec<usize> = dup_indices.into_iter().take(38).collect();
    let mut copies = Vec::new();
    for (k, &orig) in chosen.iter().enumerate() {
        let mut copy = videos[orig].clone();
        copy.video_id = format!("d{k:04}a");
        copies.push(copy);
        if k == 0 {
            // the triplicate: 38 groups but 39 redundant videos
            let mut second = videos[orig].clone();
            second.video_id = format!("d{k:04}b");
            copies.push(second);
        }
    }
    for copy in copies {
        let pos = rng.random_range(0..=videos.len());
        videos.insert(pos, copy);
    }
    let ledger = DuplicateLedger {
        n_unique_titles: n_unique,
        n_duplicate_groups: 38,
        n_redundant_videos: 39,
    };
    (
        Corpus {
            videos,
            split_tag: None,
        },
        ledger,
    )
}

/// Fixture for the plausible-set query-source switch: the eval video's title
/// and its context comments share no vocabulary, and the training pool has
/// separate document families matching each side.
pub struct QueryModeFixture {
    pub train: Corpus,
    pub eval: Corpus,
    pub sample: EvalSample,
    pub n_title_docs: usize,
    pub n_context_docs: usize,
}

pub fn query_mode_fixture(n_neutral: usize) -> QueryModeFixture {
    let n_title_docs = 35;
    let n_context_docs = 35;
    let mut comments = Vec::new();
    let mut t = 1.0;
    let push = |comments: &mut Vec<Comment>, t: &mut f64, text: String| {
        comments.push(mk_comment(&format!("c{:05}", comments.len()), *t, &text));
        *t += 0.01;
    };
    for i in 0..n_title_docs {
        push(&mut comments, &mut t, format!("alpha beta tdoc{i}"));
    }
    for i in 0..n_context_docs {
        push(&mut comments, &mut t, format!("gamma delta cdoc{i}"));
    }
    for i in 0..n_neutral {
        push(&mut comments, &mut t, format!("neutral{i} blob{}", i % 977));
    }
    // 20 popular texts, each repeated 5 times so they are the most frequent
    for i in 0..20 {
        for _ in 0..5 {
            push(&mut comments, &mut t, format!("pop{i} zz{i} rep"));
        }
    }
    let train_video = mk_video("train-0", "pool video", t + 10.0, comments);
    let train = Corpus {
        videos: vec![train_video],
        split_tag: None,
    };

    let eval_video = with_stub_frames(
        mk_video(
            "eval-0",
            "alpha beta",
            20.0,
            vec![
                mk_comment("g0", 10.0, "target comment one"),
                mk_comment("g1", 10.1, "target comment two"),
                mk_comment("x0", 5.0, "gamma delta chatter"),
                mk_comment("x1", 6.0, "gamma delta noise"),
            ],
        ),
        3,
        4,
    );
    let samples = crate::corpus::build_samples(
        &Corpus {
            videos: vec![eval_video.clone()],
            split_tag: None,
        },
        3,
        2,
        2,
        0.5,
        10.0,
    )
    .expect("fixture samples");
    let sample = samples
        .into_iter()
        .find(|s| (s.t - 10.0).abs() < 1e-9)
        .expect("fixture sample at t=10");
    QueryModeFixture {
        train,
        eval: Corpus {
            videos: vec![eval_video],
            split_tag: None,
        },
        sample,
        n_title_docs,
        n_context_docs,
    }
}

/// A corpus built to be memorizable by a tiny sequence model: one target
/// comment per video keyed by video-unique context tokens.
pub fn memorization_corpus(n_samples: usize, feature_dim: usize) -> Corpus {
    let videos = (0..n_samples)
        .map(|i| {
            let video = mk_video(
                &format!("m{i:03}"),
                &format!("memorized video {i}"),
                10.0,
                vec![
                    mk_comment("f0", 1.0, &format!("f{i}q")),
                    mk_comment("k0", 3.0, &format!("c{i}x c{i}y")),
                    mk_comment("k1", 3.5, &format!("c{i}z")),
                    mk_comment("t0", 7.0, &format!("t{i}a t{i}b t{i}c")),
                ],
            );
            with_stub_frames(video, 2, feature_dim)
        })
        .collect();
    Corpus {
        videos,
        split_tag: None,
    }
}

/// Sample parameters matching [`memorization_corpus`]: one sample per video
/// at t=7 with the target comment as single ground truth.
pub fn memorization_samples(corpus: &Corpus) -> Vec<EvalSample> {
    let samples = crate::corpus::build_samples(corpus, 2, 3, 1, 0.5, 7.0).expect("samples");
    samples
        .into_iter()
        .filter(|s| (s.t - 7.0).abs() < 1e-9)
        .collect()
}

/// Corpus for end-to-end n-gram runs: fluent comments share phrasing across
/// videos (so a bigram model scores them well) while unique-token noise
/// comments pad the candidate pool. Noise comments cluster at 9.3..9.6s so
/// that sampling on a whole-second grid with a sub-second window only ever
/// picks fluent ground truths.
pub fn fluent_vs_noise_corpus(n_videos: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fluent = [
        "good video",
        "so good",
        "nice video",
        "very nice",
        "good good good",
        "what a nice video",
    ];
    let videos = (0..n_videos)
        .map(|v| {
            let mut comments = Vec::new();
            for (j, f) in fluent.iter().enumerate() {
                comments.push(mk_comment(&format!("f{j}"), 2.0 + j as f64, f));
            }
            for j in 0..6 {
                let text = format!("xq{v}n{j} zr{}", rng.random_range(0..100_000u32));
                comments.push(mk_comment(&format!("n{j}"), 9.3 + j as f64 * 0.05, &text));
            }
            with_stub_frames(
                mk_video(
                    &format!("v{v:03}"),
                    &format!("clip number {v}"),
                    20.0,
                    comments,
                ),
                3,
                8,
            )
        })
        .collect();
    Corpus {
        videos,
        split_tag: None,
    }
}
