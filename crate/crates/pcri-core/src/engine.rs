//! PCRI computation: per-sample max aggregation over patches, corpus scores
//! for full-image and best-patch views, the robustness index itself,
//! bootstrap uncertainty for the full-image score, chance floors, the
//! validity gate, interpretation bands, and granularity deltas.

use crate::metrics::Metric;
use crate::types::{GateVerdict, InterpretationLabel, Pcri};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Gate margin on [0, 1]-scaled metrics: one percentage point.
pub const DEFAULT_DELTA: f64 = 0.01;
/// Default number of bootstrap resamples.
pub const DEFAULT_BOOTSTRAP_B: u32 = 1000;
/// Default half-width of the "robust" interpretation band around zero.
pub const DEFAULT_EPSILON_BAND: f64 = 0.02;
/// Number of prediction shuffles used for empirical chance floors.
pub const SHUFFLE_ROUNDS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("score list is empty")]
    EmptyList,
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("sample {sample_id} has no patch scores for n={n}")]
    MissingGranularity { sample_id: String, n: u32 },
    #[error("sample {sample_id} has {got} patch scores for n={n}, expected {expected}")]
    InvalidPatchCount { sample_id: String, n: u32, expected: usize, got: usize },
    #[error("chance floor spec is missing parameters: {0}")]
    MissingParameters(String),
    #[error("granularity delta baseline is zero or undefined")]
    UndefinedBaseline,
}

/// All scores for one sample: the full-image score plus, for each configured
/// grid, the n^2 patch scores in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleViewScores {
    pub sample_id: String,
    pub full_score: f64,
    patch_scores: BTreeMap<u32, Vec<f64>>,
}

impl SampleViewScores {
    pub fn new(
        sample_id: impl Into<String>,
        full_score: f64,
        patch_scores: BTreeMap<u32, Vec<f64>>,
    ) -> Result<Self, EngineError> {
        let sample_id = sample_id.into();
        for (&n, scores) in &patch_scores {
            let expected = (n as usize) * (n as usize);
            if scores.len() != expected {
                return Err(EngineError::InvalidPatchCount {
                    sample_id,
                    n,
                    expected,
                    got: scores.len(),
                });
            }
        }
        Ok(Self { sample_id, full_score, patch_scores })
    }

    pub fn patch_scores(&self, n: u32) -> Option<&[f64]> {
        self.patch_scores.get(&n).map(|v| v.as_slice())
    }

    pub fn grids(&self) -> impl Iterator<Item = u32> + '_ {
        self.patch_scores.keys().copied()
    }
}

/// Pick the best-scoring patch; ties go to the lowest row-major index so
/// results are reproducible.
pub fn best_patch(scores: &[f64]) -> Result<(usize, f64), EngineError> {
    if scores.is_empty() {
        return Err(EngineError::EmptyList);
    }
    let mut best_ix = 0;
    let mut best = scores[0];
    for (ix, &s) in scores.iter().enumerate().skip(1) {
        if s > best {
            best = s;
            best_ix = ix;
        }
    }
    Ok((best_ix, best))
}

/// Corpus score over the full-image responses.
pub fn compute_p_whole(
    records: &[SampleViewScores],
    metric: &dyn Metric,
) -> Result<f64, EngineError> {
    if records.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    let scores: Vec<f64> = records.iter().map(|r| r.full_score).collect();
    metric.corpus(&scores).map_err(|_| EngineError::EmptyDataset)
}

/// Corpus score over each sample's best patch at grid `n`.
pub fn compute_p_patch(
    records: &[SampleViewScores],
    n: u32,
    metric: &dyn Metric,
) -> Result<f64, EngineError> {
    if records.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    let mut best_scores = Vec::with_capacity(records.len());
    for record in records {
        let scores = record.patch_scores(n).ok_or_else(|| EngineError::MissingGranularity {
            sample_id: record.sample_id.clone(),
            n,
        })?;
        best_scores.push(best_patch(scores)?.1);
    }
    metric.corpus(&best_scores).map_err(|_| EngineError::EmptyDataset)
}

/// PCRI_n = 1 - P_patch,n / P_whole; undefined when P_whole is zero.
pub fn compute_pcri(p_patch: f64, p_whole: f64) -> Pcri {
    if p_whole == 0.0 {
        Pcri::Undefined
    } else {
        Pcri::Defined(1.0 - p_patch / p_whole)
    }
}

/// Standard error of the corpus mean via nonparametric bootstrap over
/// evaluation examples: the standard deviation (denominator B) of B
/// resample means, each resample drawn with replacement at the sample count.
///
/// Resample `i` draws from an RNG seeded with `seed + i`, so a parallel
/// implementation would produce the identical value.
pub fn bootstrap_se(scores: &[f64], b: u32, seed: u64) -> Result<f64, EngineError> {
    if scores.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    assert!(b >= 2, "bootstrap requires at least 2 resamples");
    let n = scores.len();
    let mut means = Vec::with_capacity(b as usize);
    for i in 0..u64::from(b) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
        let mut sum = 0.0;
        for _ in 0..n {
            sum += scores[rng.random_range(0..n)];
        }
        means.push(sum / n as f64);
    }
    // Center on the first mean before accumulating; constant resamples then
    // yield an exact zero instead of accumulation dust.
    let offset = means[0];
    let centered_mean =
        means.iter().map(|m| m - offset).sum::<f64>() / means.len() as f64;
    let variance = means
        .iter()
        .map(|m| ((m - offset) - centered_mean).powi(2))
        .sum::<f64>()
        / means.len() as f64;
    Ok(variance.sqrt())
}

/// How a dataset's chance floor is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChanceSpec {
    /// Balanced |Y|-way classification: floor = 1 / classes.
    Balanced { classes: u32 },
    /// Imbalanced classification: floor = the majority-class prior.
    ClassPrior { priors: Vec<f64> },
    /// Retrieval with one relevant item among n candidates: floor ~= k / n.
    Retrieval { k: u32, n: u32 },
    /// Estimated by scoring ground truths against shuffled predictions.
    Shuffle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChanceFloorSource {
    ClosedForm,
    ClassPrior,
    RetrievalKn,
    ShuffleEstimate,
}

/// A dataset's random-guessing baseline, with its derivation recorded for
/// audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceFloor {
    pub dataset_id: String,
    pub value: f64,
    pub source: ChanceFloorSource,
}

/// Prediction/reference pairs from the run, needed only for shuffle floors.
pub struct ShuffleInputs<'a> {
    pub metric: &'a dyn Metric,
    /// Normalized full-image predictions, one per sample.
    pub predictions: &'a [String],
    /// Ground-truth references per sample, aligned with `predictions`.
    pub references: &'a [Vec<String>],
    pub seed: u64,
}

/// Resolve a chance floor from its spec. Closed-form kinds need no run data;
/// `Shuffle` requires `ShuffleInputs` and fails with `MissingParameters`
/// without them.
pub fn chance_floor(
    dataset_id: &str,
    spec: &ChanceSpec,
    shuffle: Option<&ShuffleInputs<'_>>,
) -> Result<ChanceFloor, EngineError> {
    let (value, source) = match spec {
        ChanceSpec::Balanced { classes } => {
            if *classes < 2 {
                return Err(EngineError::MissingParameters(
                    "balanced chance floor needs at least 2 classes".to_string(),
                ));
            }
            (1.0 / f64::from(*classes), ChanceFloorSource::ClosedForm)
        }
        ChanceSpec::ClassPrior { priors } => {
            if priors.is_empty() {
                return Err(EngineError::MissingParameters(
                    "class-prior chance floor needs a prior list".to_string(),
                ));
            }
            let max = priors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (max, ChanceFloorSource::ClassPrior)
        }
        ChanceSpec::Retrieval { k, n } => {
            if *n == 0 || *k == 0 || k >= n {
                return Err(EngineError::MissingParameters(
                    "retrieval chance floor needs 1 <= k < n".to_string(),
                ));
            }
            (f64::from(*k) / f64::from(*n), ChanceFloorSource::RetrievalKn)
        }
        ChanceSpec::Shuffle => {
            let inputs = shuffle.ok_or_else(|| {
                EngineError::MissingParameters(
                    "shuffle chance floor needs run predictions".to_string(),
                )
            })?;
            (shuffle_estimate(inputs)?, ChanceFloorSource::ShuffleEstimate)
        }
    };
    Ok(ChanceFloor { dataset_id: dataset_id.to_string(), value, source })
}

/// Corpus metric over ground truths paired with uniformly shuffled
/// predictions, averaged over `SHUFFLE_ROUNDS` seeded shuffles.
fn shuffle_estimate(inputs: &ShuffleInputs<'_>) -> Result<f64, EngineError> {
    let n = inputs.predictions.len();
    if n == 0 || inputs.references.len() != n {
        return Err(EngineError::MissingParameters(
            "shuffle chance floor needs one prediction per sample".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(inputs.seed);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for _ in 0..SHUFFLE_ROUNDS {
        // Fisher-Yates over the assignment of predictions to samples.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        let mut scores = Vec::with_capacity(n);
        for (sample_ix, &pred_ix) in indices.iter().enumerate() {
            let score = inputs
                .metric
                .per_sample(&inputs.predictions[pred_ix], &inputs.references[sample_ix], None)
                .map_err(|e| EngineError::MissingParameters(e.to_string()))?;
            scores.push(score);
        }
        total += inputs
            .metric
            .corpus(&scores)
            .map_err(|e| EngineError::MissingParameters(e.to_string()))?;
    }
    Ok(total / SHUFFLE_ROUNDS as f64)
}

/// Gate a dataset's full-image score against its chance floor:
/// valid iff p_whole >= floor + max(delta, 2 * se).
pub fn validity_gate(p_whole: f64, se: f64, floor: f64, delta: f64) -> (GateVerdict, f64) {
    let delta_min = delta.max(2.0 * se);
    let verdict = if p_whole >= floor + delta_min {
        GateVerdict::Valid
    } else {
        GateVerdict::NearChanceUnstable
    };
    (verdict, delta_min)
}

/// Map a PCRI value and gate verdict onto an interpretation band.
pub fn interpret(pcri: Pcri, gate: GateVerdict, epsilon_band: f64) -> InterpretationLabel {
    if gate == GateVerdict::NearChanceUnstable {
        return InterpretationLabel::Unreliable;
    }
    match pcri {
        Pcri::Undefined => InterpretationLabel::Unreliable,
        Pcri::Defined(v) => {
            if v.abs() <= epsilon_band {
                InterpretationLabel::Robust
            } else if v < 0.0 {
                InterpretationLabel::GlobalDistracts
            } else {
                InterpretationLabel::NeedsGlobalContext
            }
        }
    }
}

/// Percentage change in PCRI between two granularities:
/// 100 * (pcri_b - pcri_a) / |pcri_a|.
pub fn granularity_delta(pcri_a: Pcri, pcri_b: Pcri) -> Result<f64, EngineError> {
    let (a, b) = match (pcri_a, pcri_b) {
        (Pcri::Defined(a), Pcri::Defined(b)) => (a, b),
        _ => return Err(EngineError::UndefinedBaseline),
    };
    if a == 0.0 {
        return Err(EngineError::UndefinedBaseline);
    }
    Ok(100.0 * (b - a) / a.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use proptest::prelude::*;

    struct MeanMetric;

    impl Metric for MeanMetric {
        fn id(&self) -> &'static str {
            "corpus_mean"
        }

        fn per_sample(
            &self,
            answer: &str,
            refs: &[String],
            _choices: Option<&[String]>,
        ) -> Result<f64, crate::metrics::MetricError> {
            metrics::exact_match(answer, refs)
        }
    }

    fn records(rows: &[(f64, Vec<f64>)]) -> Vec<SampleViewScores> {
        rows.iter()
            .enumerate()
            .map(|(i, (full, patches))| {
                let n = (patches.len() as f64).sqrt() as u32;
                let mut map = BTreeMap::new();
                map.insert(n, patches.clone());
                SampleViewScores::new(format!("s{i}"), *full, map).unwrap()
            })
            .collect()
    }

    #[test]
    fn best_patch_examples() {
        assert_eq!(best_patch(&[0.0, 1.0, 0.0, 0.0]).unwrap(), (1, 1.0));
        assert_eq!(best_patch(&[0.5, 0.5, 0.5, 0.5]).unwrap(), (0, 0.5));
        assert_eq!(best_patch(&[0.1, 0.9, 0.8, 0.9]).unwrap(), (1, 0.9));
        assert_eq!(best_patch(&[]), Err(EngineError::EmptyList));
    }

    #[test]
    fn p_whole_examples() {
        let metric = MeanMetric;
        let all_ones = records(&[(1.0, vec![0.0; 4]), (1.0, vec![0.0; 4])]);
        assert_eq!(compute_p_whole(&all_ones, &metric).unwrap(), 1.0);

        let mixed = records(&[
            (1.0, vec![0.0; 4]),
            (0.0, vec![0.0; 4]),
            (1.0, vec![0.0; 4]),
            (0.0, vec![0.0; 4]),
        ]);
        assert_eq!(compute_p_whole(&mixed, &metric).unwrap(), 0.5);
        assert_eq!(compute_p_whole(&[], &metric), Err(EngineError::EmptyDataset));
    }

    #[test]
    fn p_whole_matches_hand_computed_fixture_mean() {
        // Ten synthetic full scores; hand-computed mean is 6/10.
        let fixture = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let rows: Vec<(f64, Vec<f64>)> = fixture.iter().map(|&f| (f, vec![0.0; 4])).collect();
        let recs = records(&rows);
        assert_eq!(compute_p_whole(&recs, &MeanMetric).unwrap(), 0.6);
    }

    #[test]
    fn p_patch_examples() {
        let metric = MeanMetric;
        let winners = records(&[(0.0, vec![0.0, 1.0, 0.0, 0.0]), (0.0, vec![1.0, 0.0, 0.0, 0.0])]);
        assert_eq!(compute_p_patch(&winners, 2, &metric).unwrap(), 1.0);

        let zeros = records(&[(0.0, vec![0.0; 4]), (0.0, vec![0.0; 4])]);
        assert_eq!(compute_p_patch(&zeros, 2, &metric).unwrap(), 0.0);

        assert_eq!(
            compute_p_patch(&zeros, 3, &metric),
            Err(EngineError::MissingGranularity { sample_id: "s0".to_string(), n: 3 })
        );
    }

    #[test]
    fn p_patch_matches_brute_force_on_mixed_fixture() {
        let rows = [
            (0.0, vec![0.1, 0.9, 0.8, 0.9]),
            (0.0, vec![0.5, 0.5, 0.5, 0.5]),
            (0.0, vec![0.0, 0.0, 0.0, 0.25]),
        ];
        let recs = records(&rows);
        // Independent max-then-mean.
        let mut sum = 0.0;
        for (_, patches) in &rows {
            let mut best = f64::NEG_INFINITY;
            for &p in patches {
                if p > best {
                    best = p;
                }
            }
            sum += best;
        }
        let oracle = sum / rows.len() as f64;
        let got = compute_p_patch(&recs, 2, &MeanMetric).unwrap();
        assert_eq!(got, oracle);
        assert!((got - 0.55).abs() < 1e-12);
    }

    #[test]
    fn pcri_examples() {
        assert_eq!(compute_pcri(0.5, 0.5), Pcri::Defined(0.0));
        assert_eq!(compute_pcri(0.6, 0.4), Pcri::Defined(1.0 - 0.6 / 0.4));
        match compute_pcri(0.6, 0.4) {
            Pcri::Defined(v) => assert!((v - (-0.5)).abs() < 1e-12),
            _ => panic!("defined"),
        }
        assert_eq!(compute_pcri(0.2, 0.8), Pcri::Defined(0.75));
        assert_eq!(compute_pcri(0.3, 0.0), Pcri::Undefined);
    }

    #[test]
    fn bootstrap_constant_scores_have_zero_se() {
        let se = bootstrap_se(&[0.7; 50], 200, 9).unwrap();
        assert_eq!(se, 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic_for_fixed_seed() {
        let scores: Vec<f64> = (0..40).map(|i| f64::from(i % 3) / 2.0).collect();
        let a = bootstrap_se(&scores, 500, 1234).unwrap();
        let b = bootstrap_se(&scores, 500, 1234).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let c = bootstrap_se(&scores, 500, 1235).unwrap();
        assert_ne!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn bootstrap_tracks_binomial_standard_error() {
        // p = 0.5, N = 400 -> sqrt(p(1-p)/N) = 0.025.
        let mut scores = vec![1.0; 200];
        scores.extend(vec![0.0; 200]);
        for seed in [1u64, 2, 3, 4, 5] {
            let se = bootstrap_se(&scores, 1000, seed).unwrap();
            assert!(
                (se - 0.025).abs() / 0.025 < 0.15,
                "seed {seed}: se {se} not within 15% of 0.025"
            );
        }
    }

    #[test]
    fn bootstrap_rejects_empty() {
        assert_eq!(bootstrap_se(&[], 10, 0), Err(EngineError::EmptyDataset));
    }

    #[test]
    fn chance_floor_closed_forms() {
        let balanced = chance_floor("d", &ChanceSpec::Balanced { classes: 4 }, None).unwrap();
        assert_eq!(balanced.value, 0.25);
        assert_eq!(balanced.source, ChanceFloorSource::ClosedForm);

        let retrieval = chance_floor("d", &ChanceSpec::Retrieval { k: 5, n: 100 }, None).unwrap();
        assert_eq!(retrieval.value, 0.05);
        assert_eq!(retrieval.source, ChanceFloorSource::RetrievalKn);

        let prior =
            chance_floor("d", &ChanceSpec::ClassPrior { priors: vec![0.7, 0.3] }, None).unwrap();
        assert_eq!(prior.value, 0.7);
        assert_eq!(prior.source, ChanceFloorSource::ClassPrior);
    }

    #[test]
    fn chance_floor_rejects_bad_parameters() {
        assert!(chance_floor("d", &ChanceSpec::Balanced { classes: 1 }, None).is_err());
        assert!(chance_floor("d", &ChanceSpec::ClassPrior { priors: vec![] }, None).is_err());
        assert!(chance_floor("d", &ChanceSpec::Retrieval { k: 5, n: 5 }, None).is_err());
        assert_eq!(
            chance_floor("d", &ChanceSpec::Shuffle, None),
            Err(EngineError::MissingParameters(
                "shuffle chance floor needs run predictions".to_string()
            ))
        );
    }

    #[test]
    fn shuffle_floor_is_deterministic_and_near_fixed_point_rate() {
        // Unique answers: a shuffled prediction only matches its own sample,
        // so the expected floor is ~1/N.
        let metric = MeanMetric;
        let predictions: Vec<String> = (0..10).map(|i| format!("ans-{i}")).collect();
        let references: Vec<Vec<String>> =
            (0..10).map(|i| vec![format!("ans-{i}")]).collect();
        let inputs = ShuffleInputs { metric: &metric, predictions: &predictions, references: &references, seed: 7 };
        let floor = chance_floor("d", &ChanceSpec::Shuffle, Some(&inputs)).unwrap();
        assert_eq!(floor.source, ChanceFloorSource::ShuffleEstimate);
        assert!((floor.value - 0.1).abs() < 0.05, "floor {}", floor.value);

        let again = chance_floor("d", &ChanceSpec::Shuffle, Some(&inputs)).unwrap();
        assert_eq!(floor.value.to_bits(), again.value.to_bits());
    }

    #[test]
    fn gate_examples() {
        let (verdict, delta_min) = validity_gate(0.30, 0.02, 0.25, DEFAULT_DELTA);
        assert_eq!(delta_min, 0.04);
        assert_eq!(verdict, GateVerdict::Valid);

        let (verdict, delta_min) = validity_gate(0.255, 0.001, 0.25, DEFAULT_DELTA);
        assert_eq!(delta_min, 0.01);
        assert_eq!(verdict, GateVerdict::NearChanceUnstable);

        let (verdict, _) = validity_gate(0.25, 0.0, 0.25, DEFAULT_DELTA);
        assert_eq!(verdict, GateVerdict::NearChanceUnstable);
    }

    #[test]
    fn interpret_examples() {
        let eps = DEFAULT_EPSILON_BAND;
        assert_eq!(
            interpret(Pcri::Defined(-0.516), GateVerdict::Valid, eps),
            InterpretationLabel::GlobalDistracts
        );
        assert_eq!(interpret(Pcri::Defined(0.0), GateVerdict::Valid, eps), InterpretationLabel::Robust);
        assert_eq!(
            interpret(Pcri::Defined(0.237), GateVerdict::Valid, eps),
            InterpretationLabel::NeedsGlobalContext
        );
        assert_eq!(
            interpret(Pcri::Defined(0.5), GateVerdict::NearChanceUnstable, eps),
            InterpretationLabel::Unreliable
        );
        assert_eq!(
            interpret(Pcri::Undefined, GateVerdict::Valid, eps),
            InterpretationLabel::Unreliable
        );
    }

    #[test]
    fn granularity_delta_examples() {
        let d = granularity_delta(Pcri::Defined(-0.036), Pcri::Defined(-0.079)).unwrap();
        assert!((d - (-119.44444444444446)).abs() < 1e-9, "got {d}");
        // Published rounding of the same pair is a 119.6% drop.
        assert!((d.abs() - 119.6).abs() < 1.0);

        assert_eq!(granularity_delta(Pcri::Defined(-0.5), Pcri::Defined(-0.5)).unwrap(), 0.0);
        assert!(
            (granularity_delta(Pcri::Defined(0.2), Pcri::Defined(0.3)).unwrap() - 50.0).abs()
                < 1e-9
        );
        assert_eq!(
            granularity_delta(Pcri::Defined(0.0), Pcri::Defined(0.3)),
            Err(EngineError::UndefinedBaseline)
        );
        assert_eq!(
            granularity_delta(Pcri::Undefined, Pcri::Defined(0.3)),
            Err(EngineError::UndefinedBaseline)
        );
    }

    #[test]
    fn sample_view_scores_validates_patch_counts() {
        let mut map = BTreeMap::new();
        map.insert(2, vec![0.0; 3]);
        assert_eq!(
            SampleViewScores::new("s", 1.0, map),
            Err(EngineError::InvalidPatchCount {
                sample_id: "s".to_string(),
                n: 2,
                expected: 4,
                got: 3
            })
        );
    }

    proptest! {
        /// Sign law: p_patch > p_whole <=> pcri < 0, equality <=> 0.
        #[test]
        fn pcri_sign_law(p_patch in 0.0f64..=1.0, p_whole in 0.001f64..=1.0) {
            match compute_pcri(p_patch, p_whole) {
                Pcri::Defined(v) => {
                    if p_patch > p_whole {
                        prop_assert!(v < 0.0);
                    } else if p_patch == p_whole {
                        prop_assert_eq!(v, 0.0);
                    } else {
                        prop_assert!(v > 0.0);
                    }
                }
                Pcri::Undefined => prop_assert!(false, "p_whole > 0 must be defined"),
            }
        }

        /// Scaling all scores by c in (0, 1] leaves PCRI unchanged under the
        /// mean aggregator.
        #[test]
        fn pcri_is_scale_invariant(
            p_patch in 0.0f64..=1.0,
            p_whole in 0.01f64..=1.0,
            c in 0.01f64..=1.0,
        ) {
            let base = compute_pcri(p_patch, p_whole).value().unwrap();
            let scaled = compute_pcri(c * p_patch, c * p_whole).value().unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }

        /// The best patch dominates every individual patch score.
        #[test]
        fn best_patch_dominates(scores in proptest::collection::vec(0.0f64..=1.0, 1..25)) {
            let (ix, best) = best_patch(&scores).unwrap();
            prop_assert_eq!(best, scores[ix]);
            for &s in &scores {
                prop_assert!(best >= s);
            }
        }

        /// Raising p_whole never flips a valid verdict back to gated.
        #[test]
        fn gate_is_monotone_in_p_whole(
            p in 0.0f64..=1.0,
            bump in 0.0f64..=0.5,
            se in 0.0f64..=0.2,
            floor in 0.0f64..0.9,
        ) {
            let (low, _) = validity_gate(p, se, floor, DEFAULT_DELTA);
            let (high, _) = validity_gate((p + bump).min(1.5), se, floor, DEFAULT_DELTA);
            if low == GateVerdict::Valid {
                prop_assert_eq!(high, GateVerdict::Valid);
            }
        }

        /// Adding a patch can only raise or preserve the per-sample best.
        #[test]
        fn adding_patch_never_lowers_best(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..16),
            extra in 0.0f64..=1.0,
        ) {
            let (_, before) = best_patch(&scores).unwrap();
            let mut bigger = scores.clone();
            bigger.push(extra);
            let (_, after) = best_patch(&bigger).unwrap();
            prop_assert!(after >= before);
        }
    }
}
