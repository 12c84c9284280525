//! Per-sample scorers in [0, 1] and corpus aggregators, one default per task
//! type. The robustness index is defined over whatever metric a dataset
//! selects, so scorers are pluggable through a small registry keyed by id.

use crate::types::TaskType;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("reference answer list is empty")]
    EmptyReferences,
    #[error("cannot aggregate an empty score list")]
    EmptyDataset,
}

/// A scoring metric: a per-sample scorer plus a corpus aggregator.
///
/// Implementations must keep per-sample scores in [0, 1] and the corpus
/// aggregation permutation-invariant, with all-ones mapping to 1 and
/// all-zeros to 0.
pub trait Metric: Send + Sync {
    fn id(&self) -> &'static str;

    fn per_sample(
        &self,
        normalized_answer: &str,
        ground_truth: &[String],
        choices: Option<&[String]>,
    ) -> Result<f64, MetricError>;

    fn corpus(&self, scores: &[f64]) -> Result<f64, MetricError> {
        corpus_mean(scores)
    }
}

/// 1.0 if the answer equals any reference, else 0.0.
pub fn exact_match(answer: &str, refs: &[String]) -> Result<f64, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::EmptyReferences);
    }
    Ok(if refs.iter().any(|r| r == answer) { 1.0 } else { 0.0 })
}

fn token_counts(text: &str) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for tok in text.split_whitespace() {
        *counts.entry(tok).or_insert(0) += 1;
    }
    counts
}

/// Max over references of the harmonic mean of token precision and recall,
/// counting whitespace tokens with multiplicity. Empty vs empty scores 1.0;
/// empty vs non-empty scores 0.0.
pub fn token_f1(answer: &str, refs: &[String]) -> f64 {
    let ans = token_counts(answer);
    let ans_total: usize = ans.values().sum();
    let mut best = 0.0f64;
    for r in refs {
        let rc = token_counts(r);
        let ref_total: usize = rc.values().sum();
        let f1 = match (ans_total, ref_total) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => {
                let common: usize = ans
                    .iter()
                    .map(|(tok, &c)| c.min(rc.get(tok).copied().unwrap_or(0)))
                    .sum();
                if common == 0 {
                    0.0
                } else {
                    let precision = common as f64 / ans_total as f64;
                    let recall = common as f64 / ref_total as f64;
                    2.0 * precision * recall / (precision + recall)
                }
            }
        };
        best = best.max(f1);
    }
    best
}

const BLEU_MAX_ORDER: usize = 4;

fn ngram_counts<'a>(tokens: &[&'a str], k: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= k {
        for window in tokens.windows(k) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Smoothed sentence-level BLEU: uniform weights over 1-4-gram precisions,
/// add-one smoothing on orders 2-4 (unigram precision is unsmoothed and a
/// zero unigram match scores 0), and brevity penalty exp(1 - r/c) when the
/// candidate is shorter than the closest reference.
pub fn sentence_bleu(answer: &str, refs: &[String]) -> f64 {
    let cand: Vec<&str> = answer.split_whitespace().collect();
    let ref_tokens: Vec<Vec<&str>> = refs.iter().map(|r| r.split_whitespace().collect()).collect();
    if cand.is_empty() {
        return if ref_tokens.iter().all(|r| r.is_empty()) { 1.0 } else { 0.0 };
    }

    // Closest reference length; ties broken toward the shorter reference.
    let r_len = ref_tokens
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(cand.len()), len))
        .unwrap_or(0);

    let mut log_sum = 0.0f64;
    for k in 1..=BLEU_MAX_ORDER {
        let cand_counts = ngram_counts(&cand, k);
        let ref_counts: Vec<_> = ref_tokens.iter().map(|r| ngram_counts(r, k)).collect();
        let total: usize = cand_counts.values().sum();
        let clipped: usize = cand_counts
            .iter()
            .map(|(gram, &count)| {
                let best_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                count.min(best_ref)
            })
            .sum();
        let precision = if k == 1 {
            if clipped == 0 {
                return 0.0;
            }
            clipped as f64 / total as f64
        } else {
            (clipped + 1) as f64 / (total + 1) as f64
        };
        log_sum += precision.ln();
    }

    let brevity = if cand.len() < r_len {
        (1.0 - r_len as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    brevity * (log_sum / BLEU_MAX_ORDER as f64).exp()
}

/// Arithmetic mean of per-sample scores.
pub fn corpus_mean(scores: &[f64]) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

struct ExactMatch;
struct TokenF1;
struct SentenceBleu;

impl Metric for ExactMatch {
    fn id(&self) -> &'static str {
        "exact_match"
    }

    fn per_sample(
        &self,
        answer: &str,
        refs: &[String],
        _choices: Option<&[String]>,
    ) -> Result<f64, MetricError> {
        exact_match(answer, refs)
    }
}

impl Metric for TokenF1 {
    fn id(&self) -> &'static str {
        "token_f1"
    }

    fn per_sample(
        &self,
        answer: &str,
        refs: &[String],
        _choices: Option<&[String]>,
    ) -> Result<f64, MetricError> {
        if refs.is_empty() {
            return Err(MetricError::EmptyReferences);
        }
        Ok(token_f1(answer, refs))
    }
}

impl Metric for SentenceBleu {
    fn id(&self) -> &'static str {
        "sentence_bleu"
    }

    fn per_sample(
        &self,
        answer: &str,
        refs: &[String],
        _choices: Option<&[String]>,
    ) -> Result<f64, MetricError> {
        if refs.is_empty() {
            return Err(MetricError::EmptyReferences);
        }
        Ok(sentence_bleu(answer, refs))
    }
}

/// Look up a registered metric by id. Unknown ids are a manifest
/// configuration error surfaced at load time.
pub fn metric_by_id(id: &str) -> Option<Arc<dyn Metric>> {
    match id {
        "exact_match" => Some(Arc::new(ExactMatch)),
        "token_f1" => Some(Arc::new(TokenF1)),
        "sentence_bleu" => Some(Arc::new(SentenceBleu)),
        _ => None,
    }
}

/// The default metric for a task type.
pub fn default_metric(task: TaskType) -> Arc<dyn Metric> {
    metric_by_id(task.default_metric()).expect("default metric ids are registered")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn refs(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("b", &refs(&["b"])).unwrap(), 1.0);
        assert_eq!(exact_match("yes", &refs(&["no"])).unwrap(), 0.0);
        assert_eq!(exact_match("stop sign", &refs(&["stop sign", "stop"])).unwrap(), 1.0);
        assert_eq!(exact_match("x", &[]), Err(MetricError::EmptyReferences));
    }

    #[test]
    fn token_f1_examples() {
        assert_eq!(token_f1("red car", &refs(&["red car"])), 1.0);
        // precision 1, recall 1/2 -> harmonic mean 2/3
        let partial = token_f1("red", &refs(&["red car"]));
        assert!((partial - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(token_f1("", &refs(&["x"])), 0.0);
        assert_eq!(token_f1("x", &refs(&[""])), 0.0);
        assert_eq!(token_f1("", &refs(&[""])), 1.0);
    }

    #[test]
    fn token_f1_counts_multiplicity() {
        // "a a" vs "a": common = 1, precision 1/2, recall 1 -> 2/3
        let score = token_f1("a a", &refs(&["a"]));
        assert!((score - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn sentence_bleu_identical_is_one() {
        assert_eq!(sentence_bleu("a b c d e", &refs(&["a b c d e"])), 1.0);
    }

    #[test]
    fn sentence_bleu_disjoint_vocab_is_tiny() {
        let score = sentence_bleu("w x y z", &refs(&["a b c d"]));
        assert!(score < 0.05, "disjoint vocab scored {score}");
    }

    #[test]
    fn sentence_bleu_matches_reference_values() {
        // Frozen from an independent implementation of the same smoothing
        // and brevity rules (see bleu_oracle below).
        let score = sentence_bleu("a b c d", &refs(&["a b c d e"]));
        assert!((score - 0.7788007830714049).abs() < 1e-6, "got {score}");

        let score = sentence_bleu("the cat sat on the mat", &refs(&["the cat is on the mat"]));
        assert!((score - 0.48549177170732344).abs() < 1e-6, "got {score}");
    }

    /// Independent oracle: string-keyed n-gram tally, written without sharing
    /// any code with `sentence_bleu`.
    mod bleu_oracle {
        use std::collections::HashMap;

        fn grams(words: &[String], k: usize) -> HashMap<String, usize> {
            let mut out = HashMap::new();
            for start in 0..(words.len() + 1).saturating_sub(k) {
                let key = words[start..start + k].join("\u{1}");
                *out.entry(key).or_insert(0) += 1;
            }
            out
        }

        pub fn bleu(candidate: &str, references: &[String]) -> f64 {
            let cand: Vec<String> = candidate.split_whitespace().map(str::to_string).collect();
            let refs: Vec<Vec<String>> = references
                .iter()
                .map(|r| r.split_whitespace().map(str::to_string).collect())
                .collect();
            if cand.is_empty() {
                return if refs.iter().all(|r| r.is_empty()) { 1.0 } else { 0.0 };
            }
            let mut r_len = 0usize;
            let mut best_gap = usize::MAX;
            for r in &refs {
                let gap = r.len().abs_diff(cand.len());
                if gap < best_gap || (gap == best_gap && r.len() < r_len) {
                    best_gap = gap;
                    r_len = r.len();
                }
            }
            let mut product = 1.0f64;
            for k in 1..=4 {
                let cg = grams(&cand, k);
                let total: usize = cg.values().sum();
                let mut clipped = 0usize;
                for (gram, count) in &cg {
                    let mut best = 0usize;
                    for r in &refs {
                        best = best.max(grams(r, k).get(gram).copied().unwrap_or(0));
                    }
                    clipped += (*count).min(best);
                }
                let p = if k == 1 {
                    if clipped == 0 {
                        return 0.0;
                    }
                    clipped as f64 / total as f64
                } else {
                    (clipped as f64 + 1.0) / (total as f64 + 1.0)
                };
                product *= p.powf(0.25);
            }
            let bp = if cand.len() < r_len {
                (1.0 - r_len as f64 / cand.len() as f64).exp()
            } else {
                1.0
            };
            bp * product
        }
    }

    #[test]
    fn sentence_bleu_agrees_with_independent_oracle() {
        let cases = [
            ("a b c d", vec!["a b c d e"]),
            ("the cat sat on the mat", vec!["the cat is on the mat"]),
            ("one two three", vec!["one two three four five six"]),
            ("a a a a a", vec!["a b", "a a c"]),
            ("sign stop", vec!["stop sign"]),
            ("x", vec!["x"]),
        ];
        for (cand, rs) in cases {
            let rs: Vec<String> = rs.into_iter().map(str::to_string).collect();
            let got = sentence_bleu(cand, &rs);
            let want = bleu_oracle::bleu(cand, &rs);
            assert!((got - want).abs() < 1e-6, "{cand:?}: got {got}, oracle {want}");
        }
    }

    #[test]
    fn corpus_mean_examples() {
        assert_eq!(corpus_mean(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(corpus_mean(&[1.0; 7]).unwrap(), 1.0);
        assert!((corpus_mean(&[0.2, 0.4, 0.9]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(corpus_mean(&[]), Err(MetricError::EmptyDataset));
    }

    #[test]
    fn registry_knows_builtins_and_rejects_unknown() {
        for id in ["exact_match", "token_f1", "sentence_bleu"] {
            assert_eq!(metric_by_id(id).unwrap().id(), id);
        }
        assert!(metric_by_id("cider").is_none());
        assert_eq!(default_metric(TaskType::Captioning).id(), "sentence_bleu");
        assert_eq!(default_metric(TaskType::OpenVqa).id(), "token_f1");
        assert_eq!(default_metric(TaskType::YesNo).id(), "exact_match");
        assert_eq!(default_metric(TaskType::MultipleChoice).id(), "exact_match");
    }

    proptest! {
        /// Every scorer stays in [0, 1] on arbitrary text.
        #[test]
        fn scorers_stay_in_unit_interval(
            answer in "[ -~]{0,40}",
            r1 in "[ -~]{0,40}",
            r2 in "[ -~]{0,40}",
        ) {
            let rs = vec![r1, r2];
            for score in [
                exact_match(&answer, &rs).unwrap(),
                token_f1(&answer, &rs),
                sentence_bleu(&answer, &rs),
            ] {
                prop_assert!((0.0..=1.0).contains(&score), "score {score} out of range");
            }
        }

        /// Reference order never changes a score.
        #[test]
        fn scorers_are_ref_permutation_invariant(
            answer in "[a-z ]{0,24}",
            r1 in "[a-z ]{0,24}",
            r2 in "[a-z ]{0,24}",
        ) {
            let fwd = vec![r1.clone(), r2.clone()];
            let rev = vec![r2, r1];
            prop_assert_eq!(exact_match(&answer, &fwd).unwrap(), exact_match(&answer, &rev).unwrap());
            prop_assert_eq!(token_f1(&answer, &fwd), token_f1(&answer, &rev));
            prop_assert_eq!(sentence_bleu(&answer, &fwd), sentence_bleu(&answer, &rev));
        }

        /// The mean lies within [min, max] of its inputs.
        #[test]
        fn corpus_mean_is_bounded(scores in proptest::collection::vec(0.0f64..=1.0, 1..50)) {
            let mean = corpus_mean(&scores).unwrap();
            let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(mean >= min - 1e-12 && mean <= max + 1e-12);
        }
    }
}
