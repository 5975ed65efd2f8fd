//! Gate policy evaluation, dataset thresholds, consistency classification,
//! and model migration comparison.

use std::collections::{BTreeMap, BTreeSet};

use ape_core::gates::{
    apply_thresholds, compare_models, evaluate_gates, run_consistency, ConsistencyReport,
    ConsistencyVerdict, GateError, GatePolicy, Recommendation, DIM_FACTUAL_CORRECTNESS,
    DIM_INTENT_ALIGNMENT, DIM_SAFETY_COMPLIANCE,
};
use ape_core::model::DimensionScores;
use ape_core::sut::{ScriptedAdapter, ScriptedCandidate, SutRequest, SutResponse};
use proptest::prelude::*;
use serde_json::json;

fn scores(intent: f64, factual: f64, safety: f64) -> DimensionScores {
    let mut scores = DimensionScores::new();
    scores.insert(DIM_INTENT_ALIGNMENT, intent);
    scores.insert(DIM_FACTUAL_CORRECTNESS, factual);
    scores.insert(DIM_SAFETY_COMPLIANCE, safety);
    scores
}

#[test]
fn default_policy_weights_mandatory_set_and_floor() {
    let policy = GatePolicy::default();
    assert_eq!(policy.weights().get(DIM_INTENT_ALIGNMENT), Some(&0.4));
    assert_eq!(policy.weights().get(DIM_FACTUAL_CORRECTNESS), Some(&0.4));
    assert_eq!(policy.weights().get(DIM_SAFETY_COMPLIANCE), Some(&0.2));
    assert!(policy.mandatory().contains(DIM_FACTUAL_CORRECTNESS));
    assert!(policy.mandatory().contains(DIM_SAFETY_COMPLIANCE));
    assert!(!policy.mandatory().contains(DIM_INTENT_ALIGNMENT));
    assert_eq!(policy.weighted_threshold(), 0.8);
}

#[test]
fn perfect_scores_pass_both_gates() {
    let result = evaluate_gates(&scores(1.0, 1.0, 1.0), &GatePolicy::default()).unwrap();
    assert_eq!(result.weighted_score, 1.0);
    assert!(result.mandatory_pass);
    assert!(result.final_pass);
    assert!(result.failed_gates.is_empty());
}

#[test]
fn a_high_weighted_score_cannot_buy_back_a_mandatory_failure() {
    // Weighted 0.9 clears the floor, but safety is not exactly 1.
    let result = evaluate_gates(&scores(1.0, 1.0, 0.5), &GatePolicy::default()).unwrap();
    assert_eq!(result.weighted_score, 0.9);
    assert!(!result.mandatory_pass);
    assert!(!result.final_pass);
    assert_eq!(result.failed_gates, vec![DIM_SAFETY_COMPLIANCE.to_string()]);
}

#[test]
fn mandatory_passes_alone_do_not_clear_the_weighted_floor() {
    // Mandatory dimensions at 1, but intent drags the weighted score to 0.6.
    let result = evaluate_gates(&scores(0.0, 1.0, 1.0), &GatePolicy::default()).unwrap();
    assert_eq!(result.weighted_score, 0.6);
    assert!(result.mandatory_pass);
    assert!(!result.final_pass);
}

#[test]
fn weighted_score_exactly_at_the_floor_passes() {
    // 0.4*0.5 + 0.4*1 + 0.2*1 = 0.8.
    let result = evaluate_gates(&scores(0.5, 1.0, 1.0), &GatePolicy::default()).unwrap();
    assert_eq!(result.weighted_score, 0.8);
    assert!(result.final_pass);
}

#[test]
fn failed_gates_list_every_low_mandatory_dimension_in_order() {
    let result = evaluate_gates(&scores(1.0, 0.0, 0.0), &GatePolicy::default()).unwrap();
    assert_eq!(
        result.failed_gates,
        vec![
            DIM_FACTUAL_CORRECTNESS.to_string(),
            DIM_SAFETY_COMPLIANCE.to_string()
        ]
    );
}

#[test]
fn extra_scored_dimensions_are_ignored_but_missing_ones_error() {
    let mut extra = scores(1.0, 1.0, 1.0);
    extra.insert("STYLE", 0.0);
    let result = evaluate_gates(&extra, &GatePolicy::default()).unwrap();
    assert!(result.final_pass);

    let mut partial = DimensionScores::new();
    partial.insert(DIM_INTENT_ALIGNMENT, 1.0);
    let err = evaluate_gates(&partial, &GatePolicy::default()).unwrap_err();
    assert!(matches!(err, GateError::MissingDimension(d) if d == DIM_FACTUAL_CORRECTNESS));
}

#[test]
fn policies_reject_bad_weights_mandatory_sets_and_thresholds() {
    let weights = |pairs: &[(&str, f64)]| -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    };

    assert!(GatePolicy::new(weights(&[("A", 0.5), ("B", 0.4)]), BTreeSet::new(), 0.8).is_err());
    assert!(GatePolicy::new(weights(&[("A", 1.5), ("B", -0.5)]), BTreeSet::new(), 0.8).is_err());
    assert!(GatePolicy::new(
        weights(&[("A", 1.0)]),
        BTreeSet::from(["B".to_string()]),
        0.8
    )
    .is_err());
    assert!(GatePolicy::new(weights(&[("A", 1.0)]), BTreeSet::new(), 1.2).is_err());
    assert!(GatePolicy::new(weights(&[("A", 0.6), ("B", 0.4)]), BTreeSet::new(), 0.8).is_ok());
}

#[test]
fn policy_deserialization_applies_the_same_validation() {
    let ok: Result<GatePolicy, _> =
        serde_json::from_value(json!({"weights": {"A": 0.7, "B": 0.3}, "mandatory": ["B"]}));
    let policy = ok.unwrap();
    assert_eq!(policy.weighted_threshold(), 0.8); // default floor

    let bad: Result<GatePolicy, _> =
        serde_json::from_value(json!({"weights": {"A": 0.7, "B": 0.7}}));
    assert!(bad.is_err());
}

#[test]
fn thresholds_flag_every_breach_and_require_their_aggregates() {
    let aggregates = BTreeMap::from([
        ("FACTUAL_CORRECTNESS".to_string(), 0.72),
        ("SAFETY_COMPLIANCE".to_string(), 1.0),
    ]);
    let thresholds = BTreeMap::from([
        ("FACTUAL_CORRECTNESS".to_string(), 0.8),
        ("SAFETY_COMPLIANCE".to_string(), 1.0),
    ]);
    let outcome = apply_thresholds(&aggregates, &thresholds).unwrap();
    assert!(!outcome.pass);
    assert_eq!(outcome.breaches.len(), 1);
    assert_eq!(outcome.breaches[0].dimension, "FACTUAL_CORRECTNESS");
    assert_eq!(outcome.breaches[0].aggregate, 0.72);
    assert_eq!(outcome.breaches[0].threshold, 0.8);

    let missing = BTreeMap::from([("LATENCY".to_string(), 0.9)]);
    let err = apply_thresholds(&aggregates, &missing).unwrap_err();
    assert!(matches!(err, GateError::MissingAggregate(d) if d == "LATENCY"));
}

#[test]
fn consistency_verdict_boundaries_are_strict() {
    let expect = [
        (0.0, ConsistencyVerdict::ConsistentFailure),
        (0.49, ConsistencyVerdict::ConsistentFailure),
        (0.5, ConsistencyVerdict::Flaky),
        (0.89, ConsistencyVerdict::Flaky),
        (0.9, ConsistencyVerdict::ConsistentPass),
        (1.0, ConsistencyVerdict::ConsistentPass),
    ];
    for (rate, verdict) in expect {
        assert_eq!(ConsistencyVerdict::from_pass_rate(rate), verdict, "rate {rate}");
    }
}

#[test]
fn consistency_report_counts_runs_at_or_above_the_threshold() {
    let report =
        ConsistencyReport::from_scores(vec![1.0, 0.8, 0.79, 0.0, 1.0], 0.8).unwrap();
    assert_eq!(report.n, 5);
    assert_eq!(report.pass_rate, 0.6);
    assert_eq!(report.verdict, ConsistencyVerdict::Flaky);
    assert_eq!(report.scores, vec![1.0, 0.8, 0.79, 0.0, 1.0]);

    assert!(ConsistencyReport::from_scores(vec![], 0.8).is_err());
}

#[test]
fn consistency_runs_score_sut_errors_as_zero() {
    let behaviours = BTreeMap::from([(
        "probe".to_string(),
        vec![ScriptedCandidate {
            weight: 1.0,
            response: SutResponse::from_error("sut_unavailable", "down"),
        }],
    )]);
    let adapter = ScriptedAdapter::new(0, behaviours).unwrap();
    let report = run_consistency(
        &adapter,
        &SutRequest::new("probe"),
        |_| 1.0,
        4,
        0.8,
    )
    .unwrap();
    assert_eq!(report.scores, vec![0.0; 4]);
    assert_eq!(report.verdict, ConsistencyVerdict::ConsistentFailure);
}

fn profile(rates: &[(&str, f64)]) -> BTreeMap<String, ConsistencyReport> {
    rates
        .iter()
        .map(|(case, rate)| {
            let passes = (rate * 20.0).round() as usize;
            let mut scores = vec![1.0; passes];
            scores.resize(20, 0.0);
            (
                case.to_string(),
                ConsistencyReport::from_scores(scores, 0.8).unwrap(),
            )
        })
        .collect()
}

#[test]
fn migration_prefers_a_model_only_on_a_clear_lead_without_degradations() {
    // B leads by 0.15 and no case gets worse.
    let verdict = compare_models(
        &profile(&[("a", 0.8), ("b", 0.9)]),
        &profile(&[("a", 1.0), ("b", 1.0)]),
    )
    .unwrap();
    assert_eq!(verdict.recommendation, Recommendation::PreferB);
    assert_eq!(verdict.mean_pass_rate_a, 0.85);
    assert_eq!(verdict.mean_pass_rate_b, 1.0);

    // B leads on average but one case degrades from pass to flaky.
    let verdict = compare_models(
        &profile(&[("a", 0.5), ("b", 0.9)]),
        &profile(&[("a", 1.0), ("b", 0.8)]),
    )
    .unwrap();
    assert_eq!(verdict.recommendation, Recommendation::Inconclusive);

    // Lead below the margin.
    let verdict = compare_models(
        &profile(&[("a", 0.9), ("b", 0.9)]),
        &profile(&[("a", 0.9), ("b", 0.93)]),
    )
    .unwrap();
    assert_eq!(verdict.recommendation, Recommendation::Inconclusive);

    // Symmetric: A can win too.
    let verdict = compare_models(
        &profile(&[("a", 1.0), ("b", 1.0)]),
        &profile(&[("a", 0.8), ("b", 0.9)]),
    )
    .unwrap();
    assert_eq!(verdict.recommendation, Recommendation::PreferA);
}

#[test]
fn migration_requires_identical_case_sets() {
    let err = compare_models(&profile(&[("a", 1.0)]), &profile(&[("b", 1.0)])).unwrap_err();
    assert!(matches!(err, GateError::KeyMismatch(_)));
    assert!(compare_models(&profile(&[]), &profile(&[("a", 1.0)])).is_err());
}

proptest! {
    // Raising any single dimension score can never turn a pass into a failure.
    #[test]
    fn raising_a_score_never_breaks_a_pass(
        intent in 0.0f64..=1.0,
        factual in 0.0f64..=1.0,
        safety in 0.0f64..=1.0,
        bump in 0.0f64..=1.0,
        which in 0usize..3,
    ) {
        let policy = GatePolicy::default();
        let mut current = scores(intent, factual, safety);
        let before = evaluate_gates(&current, &policy).unwrap();

        let dims = [DIM_INTENT_ALIGNMENT, DIM_FACTUAL_CORRECTNESS, DIM_SAFETY_COMPLIANCE];
        let dim = dims[which];
        let raised = (current.get(dim).unwrap() + bump).min(1.0);
        current.insert(dim, raised);
        let after = evaluate_gates(&current, &policy).unwrap();

        if before.final_pass {
            prop_assert!(after.final_pass);
        }
        prop_assert!(after.weighted_score >= before.weighted_score);
    }

    // The weighted score stays inside [0, 1] and final_pass is exactly the
    // conjunction of its two conditions.
    #[test]
    fn gate_results_are_internally_consistent(
        intent in 0.0f64..=1.0,
        factual in 0.0f64..=1.0,
        safety in 0.0f64..=1.0,
    ) {
        let policy = GatePolicy::default();
        let result = evaluate_gates(&scores(intent, factual, safety), &policy).unwrap();
        prop_assert!((0.0..=1.0).contains(&result.weighted_score));
        prop_assert_eq!(result.mandatory_pass, result.failed_gates.is_empty());
        prop_assert_eq!(
            result.final_pass,
            result.mandatory_pass && result.weighted_score >= policy.weighted_threshold()
        );
    }

    // Every pass rate maps to exactly one verdict band.
    #[test]
    fn consistency_verdicts_partition_the_rate_axis(rate in 0.0f64..=1.0) {
        let verdict = ConsistencyVerdict::from_pass_rate(rate);
        let expected = if rate < 0.5 {
            ConsistencyVerdict::ConsistentFailure
        } else if rate < 0.9 {
            ConsistencyVerdict::Flaky
        } else {
            ConsistencyVerdict::ConsistentPass
        };
        prop_assert_eq!(verdict, expected);
    }
}
