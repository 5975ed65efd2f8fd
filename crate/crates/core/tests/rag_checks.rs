//! RAG metric counting, deployment gates, and failure-pattern diagnosis.

use ape_core::judge::JudgeError;
use ape_core::rag::{
    answer_relevancy, apply_rag_gates, context_precision, context_recall, diagnose_rag,
    faithfulness, substring_support, RagDiagnosis, RagGates, RagProfile, RagSample,
};
use proptest::prelude::*;

fn strings(values: &[&str]) -> Vec<String> {
    values.iter().map(|s| s.to_string()).collect()
}

fn counted_sample() -> RagSample {
    RagSample {
        query: "when does the museum open".into(),
        retrieved: strings(&[
            "The museum opens at 9am on weekdays.",
            "Tickets cost 12 euros.",
            "A history of the building's architect.",
            "Guided tours start at 10am.",
        ]),
        response: "It opens at 9am and tours start at 10am.".into(),
        response_claims: strings(&["opens at 9am", "tours start at 10am", "entry is free"]),
        reference_claims: strings(&["opens at 9am", "tickets cost 12 euros"]),
    }
}

#[test]
fn metrics_are_exact_fractions_of_hand_counted_hits() {
    let sample = counted_sample();

    // 3 of 4 chunks mention opening, tickets, or tours; the architect one is noise.
    let precision = context_precision(&sample, |chunk, _| !chunk.contains("architect"));
    assert_eq!(precision, Some(0.75));

    // Both reference claims appear verbatim in some chunk.
    let recall = context_recall(&sample, |claim, retrieved| {
        substring_support(claim, retrieved)
    });
    assert_eq!(recall, Some(1.0));

    // 2 of 3 response claims are grounded; "entry is free" is invented.
    let faith = faithfulness(&sample, |claim, retrieved| {
        substring_support(claim, retrieved)
    });
    assert_eq!(faith, Some(2.0 / 3.0));
}

#[test]
fn undefined_metrics_are_none_not_zero() {
    let no_retrieval = RagSample {
        query: "q".into(),
        retrieved: vec![],
        response: "r".into(),
        response_claims: strings(&["a"]),
        reference_claims: strings(&["b"]),
    };
    // No retrieval: precision is undefined, but claim coverage is a hard 0.
    assert_eq!(context_precision(&no_retrieval, |_, _| true), None);
    assert_eq!(context_recall(&no_retrieval, |_, _| true), Some(0.0));
    assert_eq!(faithfulness(&no_retrieval, |_, _| true), Some(0.0));

    let no_claims = RagSample {
        query: "q".into(),
        retrieved: strings(&["chunk"]),
        response: "r".into(),
        ..RagSample::default()
    };
    assert_eq!(context_recall(&no_claims, |_, _| true), None);
    assert_eq!(faithfulness(&no_claims, |_, _| true), None);
}

#[test]
fn substring_support_is_case_insensitive() {
    let retrieved = strings(&["The Museum OPENS at 9am."]);
    assert!(substring_support("museum opens", &retrieved));
    assert!(!substring_support("museum closes", &retrieved));
    assert!(!substring_support("x", &[]));
}

#[test]
fn answer_relevancy_delegates_to_the_judge_and_range_checks() {
    let sample = counted_sample();
    assert_eq!(answer_relevancy(&sample, |_, _| Ok(0.85)).unwrap(), 0.85);

    let err = answer_relevancy(&sample, |_, _| Ok(1.5)).unwrap_err();
    assert!(matches!(err, JudgeError::Malformed(_)));

    let err = answer_relevancy(&sample, |_, _| {
        Err(JudgeError::Unavailable("down".into()))
    })
    .unwrap_err();
    assert!(matches!(err, JudgeError::Unavailable(_)));
}

fn full_profile(precision: f64, recall: f64, faith: f64, relevancy: f64) -> RagProfile {
    RagProfile {
        context_precision: Some(precision),
        context_recall: Some(recall),
        faithfulness: Some(faith),
        answer_relevancy: Some(relevancy),
    }
}

#[test]
fn default_gate_thresholds() {
    let gates = RagGates::default();
    assert_eq!(gates.faithfulness, 0.90);
    assert_eq!(gates.context_recall, 0.85);
    assert_eq!(gates.context_precision, 0.80);
    assert_eq!(gates.answer_relevancy, 0.80);
    assert!(gates.validate().is_ok());
    assert!(RagGates {
        faithfulness: 1.2,
        ..RagGates::default()
    }
    .validate()
    .is_err());
}

#[test]
fn scores_exactly_at_their_thresholds_are_approved() {
    let gates = RagGates::default();
    let outcome = apply_rag_gates(&full_profile(0.80, 0.85, 0.90, 0.80), &gates).unwrap();
    assert!(outcome.deploy_approved);
    assert!(outcome.gate_results.values().all(|pass| *pass));

    let outcome = apply_rag_gates(&full_profile(0.80, 0.85, 0.899999, 0.80), &gates).unwrap();
    assert!(!outcome.deploy_approved);
    assert_eq!(outcome.gate_results["faithfulness"], false);
    assert_eq!(outcome.gate_results["context_precision"], true);
}

#[test]
fn gates_refuse_profiles_with_undefined_metrics() {
    let partial = RagProfile {
        context_precision: Some(0.9),
        context_recall: Some(0.9),
        faithfulness: None,
        answer_relevancy: Some(0.9),
    };
    let err = apply_rag_gates(&partial, &RagGates::default()).unwrap_err();
    assert!(err.to_string().contains("faithfulness"));
}

#[test]
fn diagnosis_walks_the_pipeline_from_retrieval_upwards() {
    let gates = RagGates::default();
    let expect = [
        (
            full_profile(0.5, 0.9, 0.95, 0.9),
            RagDiagnosis::RetrievalPipelineBroken,
        ),
        (full_profile(0.9, 0.5, 0.95, 0.9), RagDiagnosis::MissingDocuments),
        (full_profile(0.9, 0.9, 0.5, 0.9), RagDiagnosis::Hallucination),
        (full_profile(0.9, 0.9, 0.95, 0.5), RagDiagnosis::PromptIssue),
        (full_profile(0.9, 0.9, 0.95, 0.9), RagDiagnosis::PerformingWell),
    ];
    for (profile, diagnosis) in expect {
        assert_eq!(diagnose_rag(&profile, &gates).unwrap(), diagnosis);
    }
}

#[test]
fn lower_stage_failures_shadow_higher_stage_ones() {
    // Everything is low: the retrieval diagnosis wins.
    let all_low = full_profile(0.1, 0.1, 0.1, 0.1);
    assert_eq!(
        diagnose_rag(&all_low, &RagGates::default()).unwrap(),
        RagDiagnosis::RetrievalPipelineBroken
    );
}

#[test]
fn generation_metrics_are_not_needed_while_retrieval_is_broken() {
    let retrieval_only = RagProfile {
        context_precision: Some(0.1),
        context_recall: Some(0.9),
        faithfulness: None,
        answer_relevancy: None,
    };
    assert_eq!(
        diagnose_rag(&retrieval_only, &RagGates::default()).unwrap(),
        RagDiagnosis::RetrievalPipelineBroken
    );

    // But precision and recall themselves must be defined.
    let missing_recall = RagProfile {
        context_precision: Some(0.9),
        context_recall: None,
        faithfulness: Some(0.9),
        answer_relevancy: Some(0.9),
    };
    assert!(diagnose_rag(&missing_recall, &RagGates::default()).is_err());
}

#[test]
fn diagnosis_descriptions_are_stable() {
    let expect = [
        (
            RagDiagnosis::RetrievalPipelineBroken,
            "Retrieval pipeline broken: check chunking and embeddings",
        ),
        (
            RagDiagnosis::MissingDocuments,
            "Missing documents: recall issue, check index coverage",
        ),
        (
            RagDiagnosis::Hallucination,
            "Hallucination: generation grounding insufficient",
        ),
        (
            RagDiagnosis::PromptIssue,
            "Prompt issue: response shaping or instruction clarity",
        ),
        (
            RagDiagnosis::PerformingWell,
            "System performing well across all dimensions",
        ),
    ];
    for (diagnosis, description) in expect {
        assert_eq!(diagnosis.description(), description);
    }
}

proptest! {
    // Deployment approval and the "performing well" diagnosis are the same
    // statement about a fully defined profile.
    #[test]
    fn approval_and_diagnosis_agree(
        precision in 0.0f64..=1.0,
        recall in 0.0f64..=1.0,
        faith in 0.0f64..=1.0,
        relevancy in 0.0f64..=1.0,
    ) {
        let gates = RagGates::default();
        let profile = full_profile(precision, recall, faith, relevancy);
        let outcome = apply_rag_gates(&profile, &gates).unwrap();
        let diagnosis = diagnose_rag(&profile, &gates).unwrap();
        prop_assert_eq!(
            outcome.deploy_approved,
            diagnosis == RagDiagnosis::PerformingWell
        );
    }

    // Retrieving more never lowers claim support.
    #[test]
    fn extra_retrieval_never_lowers_faithfulness(
        claims in prop::collection::vec("[a-z]{2,6}", 1..5),
        chunks in prop::collection::vec("[a-z ]{0,12}", 0..5),
        extra in "[a-z ]{0,12}",
    ) {
        let sample = RagSample {
            query: "q".into(),
            retrieved: chunks,
            response: String::new(),
            response_claims: claims,
            reference_claims: vec![],
        };
        let before = faithfulness(&sample, |c, r| substring_support(c, r)).unwrap();
        let mut grown = sample.clone();
        grown.retrieved.push(extra);
        let after = faithfulness(&grown, |c, r| substring_support(c, r)).unwrap();
        prop_assert!(after >= before);
    }

    // Claim-coverage metrics always land in [0, 1] when defined.
    #[test]
    fn coverage_fractions_stay_in_range(
        claims in prop::collection::vec("[a-z]{1,5}", 0..6),
        chunks in prop::collection::vec("[a-z]{1,5}", 0..6),
    ) {
        let sample = RagSample {
            query: "q".into(),
            retrieved: chunks,
            response: String::new(),
            response_claims: claims,
            reference_claims: vec![],
        };
        if let Some(value) = faithfulness(&sample, |c, r| substring_support(c, r)) {
            prop_assert!((0.0..=1.0).contains(&value));
        }
    }
}
