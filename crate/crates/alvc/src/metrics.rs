//! Recall@k, mean rank and mean reciprocal rank over scored rankings, with
//! 95% confidence intervals.
//!
//! Two semantics are provided for multi-ground-truth samples. `Hit`/`Best`
//! (the defaults) treat a sample as a unit: recall asks whether any correct
//! candidate made the top k, MR/MRR use the best-ranked correct candidate.
//! `Pooled`/`All` average over every correct candidate instead. All
//! reductions run in a canonical (sorted) summation order so results are
//! independent of input order and of any parallel chunking upstream.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::scoring::ScoredRanking;

/// z for a two-sided 95% interval.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("k must be >= 1, got {0}")]
    RangeError(usize),
    #[error("no rankings supplied")]
    EmptyInput,
    #[error("need at least {needed} values for a confidence interval, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("unsupported confidence level {0}; only 0.95 is available")]
    UnsupportedLevel(f64),
    #[error("ranking {0} labels no candidate correct")]
    NoCorrect(String),
    #[error("proportion {0} outside [0, 1]")]
    BadProportion(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallMode {
    Hit,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    Best,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ci {
    pub low: f64,
    pub high: f64,
}

impl Ci {
    pub fn half_width(&self) -> f64 {
        (self.high - self.low) / 2.0
    }

    pub fn is_degenerate(&self) -> bool {
        self.low == self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MetricValue {
    fn new(value: f64, ci: Ci) -> Self {
        MetricValue {
            value,
            ci_low: ci.low,
            ci_high: ci.high,
        }
    }

    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub recall_at: BTreeMap<usize, MetricValue>,
    pub mr: MetricValue,
    pub mrr: MetricValue,
    pub n_samples: usize,
    pub recall_mode: RecallMode,
    pub rank_mode: RankMode,
    pub warnings: Vec<String>,
}

/// The recall cutoffs reported by [`evaluate`].
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

fn z_for(level: f64) -> Result<f64, MetricError> {
    if (level - 0.95).abs() < 1e-12 {
        Ok(Z_95)
    } else {
        Err(MetricError::UnsupportedLevel(level))
    }
}

/// Sorts by total order before summing so the reduction is independent of
/// input order.
fn canonical_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.iter().sum()
}

fn correct_ranks_checked(rankings: &[ScoredRanking]) -> Result<Vec<Vec<usize>>, MetricError> {
    if rankings.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    rankings
        .iter()
        .map(|r| {
            let ranks = r.correct_ranks();
            if ranks.is_empty() {
                Err(MetricError::NoCorrect(r.sample_id.clone()))
            } else {
                Ok(ranks)
            }
        })
        .collect()
}

/// Normal-approximation interval `p ± z·sqrt(p(1-p)/n)`, clamped to [0, 1].
/// Degenerate at p in {0, 1}.
pub fn proportion_ci(p_hat: f64, n: usize, level: f64) -> Result<Ci, MetricError> {
    if n == 0 {
        return Err(MetricError::TooFewValues { needed: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(MetricError::BadProportion(p_hat));
    }
    let z = z_for(level)?;
    let half = z * (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    Ok(Ci {
        low: (p_hat - half).max(0.0),
        high: (p_hat + half).min(1.0),
    })
}

/// `mean ± z·s/sqrt(n)` with the sample standard deviation `s`.
pub fn mean_ci(values: &[f64], level: f64) -> Result<Ci, MetricError> {
    if values.len() < 2 {
        return Err(MetricError::TooFewValues {
            needed: 2,
            got: values.len(),
        });
    }
    let z = z_for(level)?;
    let n = values.len() as f64;
    let mean = canonical_sum(values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let s = (canonical_sum(&sq) / (n - 1.0)).sqrt();
    let half = z * s / n.sqrt();
    Ok(Ci {
        low: mean - half,
        high: mean + half,
    })
}

/// Fraction of samples whose best correct candidate ranks within `k` (hit
/// mode), or the fraction of all correct candidates within `k` (pooled).
pub fn recall_at_k(
    rankings: &[ScoredRanking],
    k: usize,
    mode: RecallMode,
) -> Result<f64, MetricError> {
    if k < 1 {
        return Err(MetricError::RangeError(k));
    }
    let per_sample = correct_ranks_checked(rankings)?;
    match mode {
        RecallMode::Hit => {
            let hits = per_sample
                .iter()
                .filter(|ranks| ranks.iter().copied().min().unwrap() <= k)
                .count();
            Ok(hits as f64 / per_sample.len() as f64)
        }
        RecallMode::Pooled => {
            let total: usize = per_sample.iter().map(|r| r.len()).sum();
            let within: usize = per_sample
                .iter()
                .map(|ranks| ranks.iter().filter(|&&r| r <= k).count())
                .sum();
            Ok(within as f64 / total as f64)
        }
    }
}

fn rank_values(rankings: &[ScoredRanking], mode: RankMode) -> Result<Vec<f64>, MetricError> {
    let per_sample = correct_ranks_checked(rankings)?;
    Ok(match mode {
        RankMode::Best => per_sample
            .iter()
            .map(|ranks| *ranks.iter().min().unwrap() as f64)
            .collect(),
        RankMode::All => per_sample
            .iter()
            .flat_map(|ranks| ranks.iter().map(|&r| r as f64))
            .collect(),
    })
}

/// Mean over samples of the best correct rank, or over all correct ranks.
pub fn mean_rank(rankings: &[ScoredRanking], mode: RankMode) -> Result<f64, MetricError> {
    let values = rank_values(rankings, mode)?;
    Ok(canonical_sum(&values) / values.len() as f64)
}

/// Mean reciprocal rank, same mode semantics as [`mean_rank`].
pub fn mrr(rankings: &[ScoredRanking], mode: RankMode) -> Result<f64, MetricError> {
    let values: Vec<f64> = rank_values(rankings, mode)?
        .into_iter()
        .map(|r| 1.0 / r)
        .collect();
    Ok(canonical_sum(&values) / values.len() as f64)
}

/// Assembles Recall@{1,5,10}, MR and MRR with 95% intervals.
pub fn evaluate(
    rankings: &[ScoredRanking],
    recall_mode: RecallMode,
    rank_mode: RankMode,
) -> Result<MetricReport, MetricError> {
    let per_sample = correct_ranks_checked(rankings)?;
    let n_samples = per_sample.len();
    let total_correct: usize = per_sample.iter().map(|r| r.len()).sum();
    let mut warnings = Vec::new();

    let mut recall_at = BTreeMap::new();
    for k in RECALL_KS {
        let value = recall_at_k(rankings, k, recall_mode)?;
        let n = match recall_mode {
            RecallMode::Hit => n_samples,
            RecallMode::Pooled => total_correct,
        };
        let ci = proportion_ci(value, n, 0.95)?;
        if ci.is_degenerate() {
            warnings.push(format!("recall@{k} interval is degenerate at p={value}"));
        }
        recall_at.insert(k, MetricValue::new(value, ci));
    }

    let mr_values = rank_values(rankings, rank_mode)?;
    let mrr_values: Vec<f64> = mr_values.iter().map(|&r| 1.0 / r).collect();
    let mr_value = canonical_sum(&mr_values) / mr_values.len() as f64;
    let mrr_value = canonical_sum(&mrr_values) / mrr_values.len() as f64;
    let mr = MetricValue::new(mr_value, mean_ci(&mr_values, 0.95)?);
    let mrr = MetricValue::new(mrr_value, mean_ci(&mrr_values, 0.95)?);

    Ok(MetricReport {
        recall_at,
        mr,
        mrr,
        n_samples,
        recall_mode,
        rank_mode,
        warnings,
    })
}

/// Header for the results table: one row per run, recalls as percentages.
pub fn results_table_header() -> String {
    "Run Label\tRecall@1\tRecall@5\tRecall@10\tMR\tMRR\n".to_string()
}

/// One results row: `value ± half-width` per metric, recalls as percents.
pub fn results_table_row(label: &str, report: &MetricReport) -> String {
    let recall = |k: usize| {
        let m = &report.recall_at[&k];
        format!("{:.2} ± {:.2}", m.value * 100.0, m.half_width() * 100.0)
    };
    format!(
        "{}\t{}\t{}\t{}\t{:.2} ± {:.2}\t{:.3} ± {:.3}\n",
        label,
        recall(1),
        recall(5),
        recall(10),
        report.mr.value,
        report.mr.half_width(),
        report.mrr.value,
        report.mrr.half_width()
    )
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Category;
    use crate::scoring::{Aggregation, Direction, ScoredEntry};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Builds a ranking with the given 1-based correct ranks out of `n`.
    pub fn ranking_with_correct_at(id: &str, n: usize, correct: &[usize]) -> ScoredRanking {
        let entries = (1..=n)
            .map(|rank| ScoredEntry {
                score: rank as f64,
                rank,
                category: if correct.contains(&rank) {
                    Category::Correct
                } else {
                    Category::Random
                },
            })
            .collect();
        ScoredRanking {
            sample_id: id.to_string(),
            entries,
            aggregation: Aggregation::Mean,
            direction: Direction::Ascending,
        }
    }

    fn uniform_rankings(n_samples: usize, n: usize, g: usize, seed: u64) -> Vec<ScoredRanking> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_samples)
            .map(|i| {
                let mut positions: Vec<usize> = (1..=n).collect();
                positions.shuffle(&mut rng);
                let correct: Vec<usize> = positions[..g].to_vec();
                ranking_with_correct_at(&format!("s{i}"), n, &correct)
            })
            .collect()
    }

    #[test]
    fn oracle_constants_match_frozen_values() {
        // frozen from the hypergeometric oracle; the 100-choose-5 family
        assert!((oracle::binom(100, 5) - 75_287_520.0).abs() < 1e-6);
        assert!((oracle::expected_recall_hit(100, 5, 1) - 0.05).abs() < 1e-12);
        assert!((oracle::expected_recall_hit(100, 5, 5) - 0.230_410_0).abs() < 1e-7);
        assert!((oracle::expected_recall_hit(100, 5, 10) - 0.416_247_6).abs() < 1e-7);
        assert!((oracle::expected_mrr_best(100, 5) - 0.161_668_97).abs() < 1e-7);
        assert!((oracle::expected_mean_rank_best(100, 5) - 16.833_333_3).abs() < 1e-7);
        // the min-rank distribution is a proper distribution
        let total: f64 = (1..=96).map(|r| oracle::p_min_rank(100, 5, r)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_rankings_are_all_ones() {
        let rankings: Vec<ScoredRanking> = (0..4)
            .map(|i| ranking_with_correct_at(&format!("s{i}"), 100, &[1, 2, 3, 4, 5]))
            .collect();
        for mode in [RecallMode::Hit, RecallMode::Pooled] {
            assert_eq!(
                recall_at_k(&rankings, 1, mode).unwrap(),
                if mode == RecallMode::Hit { 1.0 } else { 0.2 }
            );
            assert_eq!(recall_at_k(&rankings, 5, mode).unwrap(), 1.0);
        }
        assert_eq!(mean_rank(&rankings, RankMode::Best).unwrap(), 1.0);
        assert_eq!(mrr(&rankings, RankMode::Best).unwrap(), 1.0);
    }

    #[test]
    fn hand_placed_ranks_match_manual_count() {
        // two samples: correct at {2, 7} and {1, 9}; 10 candidates each
        let rankings = vec![
            ranking_with_correct_at("a", 10, &[2, 7]),
            ranking_with_correct_at("b", 10, &[1, 9]),
        ];
        // hit mode: sample a hits at k=5 via rank 2; sample b via rank 1
        assert_eq!(recall_at_k(&rankings, 1, RecallMode::Hit).unwrap(), 0.5);
        assert_eq!(recall_at_k(&rankings, 5, RecallMode::Hit).unwrap(), 1.0);
        // pooled: ranks {2,7,1,9}, within 5 -> {2,1} of 4
        assert_eq!(recall_at_k(&rankings, 5, RecallMode::Pooled).unwrap(), 0.5);
        assert_eq!(recall_at_k(&rankings, 9, RecallMode::Pooled).unwrap(), 1.0);
    }

    #[test]
    fn mean_rank_fixture() {
        let rankings = vec![
            ranking_with_correct_at("a", 10, &[3]),
            ranking_with_correct_at("b", 10, &[7]),
        ];
        assert_eq!(mean_rank(&rankings, RankMode::Best).unwrap(), 5.0);
        assert_eq!(mean_rank(&rankings, RankMode::All).unwrap(), 5.0);
    }

    #[test]
    fn mrr_fixture() {
        let rankings = vec![
            ranking_with_correct_at("a", 10, &[2]),
            ranking_with_correct_at("b", 10, &[4]),
        ];
        assert_eq!(mrr(&rankings, RankMode::Best).unwrap(), (0.5 + 0.25) / 2.0);
    }

    #[test]
    fn mean_rank_and_mrr_match_enumeration_for_single_gt() {
        // <=10-candidate fixtures, single ground truth: brute-force equality
        let rankings: Vec<ScoredRanking> = (1..=10)
            .map(|r| ranking_with_correct_at(&format!("s{r}"), 10, &[r]))
            .collect();
        let brute_mr: f64 = (1..=10).map(|r| r as f64).sum::<f64>() / 10.0;
        let brute_mrr: f64 = (1..=10).map(|r| 1.0 / r as f64).sum::<f64>() / 10.0;
        assert!((mean_rank(&rankings, RankMode::Best).unwrap() - brute_mr).abs() < 1e-12);
        assert!((mrr(&rankings, RankMode::Best).unwrap() - brute_mrr).abs() < 1e-12);
    }

    #[test]
    fn uniform_rankings_match_hypergeometric_oracle() {
        let n_samples = 20_000;
        let rankings = uniform_rankings(n_samples, 100, 5, 99);
        for k in [1usize, 5, 10] {
            let got = recall_at_k(&rankings, k, RecallMode::Hit).unwrap();
            let expect = oracle::expected_recall_hit(100, 5, k);
            let se = (expect * (1.0 - expect) / n_samples as f64).sqrt();
            assert!(
                (got - expect).abs() <= 3.0 * se,
                "recall@{k}: {got} vs {expect} (3se={})",
                3.0 * se
            );
        }
        let got_mr = mean_rank(&rankings, RankMode::Best).unwrap();
        assert!((got_mr - oracle::expected_mean_rank_best(100, 5)).abs() < 0.5);
        let got_mrr = mrr(&rankings, RankMode::Best).unwrap();
        assert!((got_mrr - oracle::expected_mrr_best(100, 5)).abs() < 0.02);
    }

    #[test]
    fn recall_k_zero_is_range_error() {
        let rankings = vec![ranking_with_correct_at("a", 10, &[1])];
        assert!(matches!(
            recall_at_k(&rankings, 0, RecallMode::Hit),
            Err(MetricError::RangeError(0))
        ));
    }

    #[test]
    fn missing_correct_label_is_an_error() {
        let rankings = vec![ranking_with_correct_at("a", 10, &[])];
        assert!(matches!(
            mean_rank(&rankings, RankMode::Best),
            Err(MetricError::NoCorrect(_))
        ));
    }

    #[test]
    fn proportion_ci_forced_arithmetic() {
        let ci = proportion_ci(0.5, 100, 0.95).unwrap();
        assert!((ci.half_width() - 0.0980).abs() < 1e-4);
        let ci = proportion_ci(0.155, 10_000, 0.95).unwrap();
        assert!((ci.half_width() - 0.0070932).abs() < 1e-6);
    }

    #[test]
    fn proportion_ci_degenerate_at_zero() {
        let ci = proportion_ci(0.0, 50, 0.95).unwrap();
        assert_eq!((ci.low, ci.high), (0.0, 0.0));
        assert!(ci.is_degenerate());
        assert!(proportion_ci(0.5, 0, 0.95).is_err());
    }

    #[test]
    fn mean_ci_hand_computation() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ci = mean_ci(&values, 0.95).unwrap();
        let expected_half = Z_95 * (2.5f64).sqrt() / (5.0f64).sqrt();
        assert!((ci.half_width() - expected_half).abs() < 1e-9);
        assert!((ci.half_width() - 1.386).abs() < 1e-3);
        assert!(((ci.low + ci.high) / 2.0 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mean_ci_constant_and_scaling() {
        let ci = mean_ci(&[4.0, 4.0, 4.0], 0.95).unwrap();
        assert_eq!(ci.low, ci.high);

        let base = [1.0, 2.0, 5.0, 9.0];
        let doubled: Vec<f64> = base.iter().map(|x| x * 2.0).collect();
        let a = mean_ci(&base, 0.95).unwrap();
        let b = mean_ci(&doubled, 0.95).unwrap();
        assert!((b.half_width() - 2.0 * a.half_width()).abs() < 1e-12);
        assert!(((b.low + b.high) - 2.0 * (a.low + a.high)).abs() < 1e-9);
    }

    #[test]
    fn mean_ci_needs_two_values() {
        assert!(matches!(
            mean_ci(&[1.0], 0.95),
            Err(MetricError::TooFewValues { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn unsupported_level_is_rejected() {
        assert!(matches!(
            proportion_ci(0.5, 10, 0.9),
            Err(MetricError::UnsupportedLevel(_))
        ));
    }

    #[test]
    fn evaluate_perfect_and_anti_perfect() {
        let perfect: Vec<ScoredRanking> = (0..3)
            .map(|i| ranking_with_correct_at(&format!("p{i}"), 100, &[1, 2, 3, 4, 5]))
            .collect();
        let report = evaluate(&perfect, RecallMode::Hit, RankMode::Best).unwrap();
        assert_eq!(report.recall_at[&1].value, 1.0);
        assert_eq!(report.mr.value, 1.0);
        assert_eq!(report.mrr.value, 1.0);

        let anti: Vec<ScoredRanking> = (0..3)
            .map(|i| ranking_with_correct_at(&format!("a{i}"), 100, &[96, 97, 98, 99, 100]))
            .collect();
        let report = evaluate(&anti, RecallMode::Hit, RankMode::Best).unwrap();
        assert_eq!(report.mr.value, 96.0);
        assert_eq!(report.recall_at[&10].value, 0.0);
    }

    #[test]
    fn evaluate_is_input_order_invariant() {
        let mut rankings = uniform_rankings(200, 100, 5, 3);
        let a = evaluate(&rankings, RecallMode::Hit, RankMode::Best).unwrap();
        rankings.reverse();
        let b = evaluate(&rankings, RecallMode::Hit, RankMode::Best).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn hit_equals_pooled_for_single_ground_truth() {
        let rankings = uniform_rankings(300, 50, 1, 12);
        for k in [1usize, 5, 10] {
            let hit = recall_at_k(&rankings, k, RecallMode::Hit).unwrap();
            let pooled = recall_at_k(&rankings, k, RecallMode::Pooled).unwrap();
            assert_eq!(hit, pooled);
        }
    }

    #[test]
    fn results_table_shape() {
        let rankings = uniform_rankings(50, 100, 5, 1);
        let report = evaluate(&rankings, RecallMode::Hit, RankMode::Best).unwrap();
        let header = results_table_header();
        assert!(header.contains("Recall@10"));
        let row = results_table_row("baseline", &report);
        assert!(row.starts_with("baseline\t"));
        assert_eq!(row.matches('±').count(), 5);
    }

    proptest! {
        #[test]
        fn recall_monotone_in_k(seed in 0u64..500) {
            let rankings = uniform_rankings(30, 40, 3, seed);
            for mode in [RecallMode::Hit, RecallMode::Pooled] {
                let mut prev = 0.0;
                for k in 1..=40 {
                    let r = recall_at_k(&rankings, k, mode).unwrap();
                    prop_assert!(r >= prev - 1e-15);
                    prev = r;
                }
                prop_assert!((prev - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn report_invariants(seed in 0u64..200) {
            let rankings = uniform_rankings(25, 60, 4, seed);
            let report = evaluate(&rankings, RecallMode::Hit, RankMode::Best).unwrap();
            prop_assert!(report.recall_at[&1].value <= report.recall_at[&5].value);
            prop_assert!(report.recall_at[&5].value <= report.recall_at[&10].value);
            prop_assert!(report.mr.value >= 1.0 && report.mr.value <= 60.0);
            prop_assert!(report.mrr.value > 0.0 && report.mrr.value <= 1.0);
        }
    }
}
