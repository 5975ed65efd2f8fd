//! Baselines, the on-disk store, trend history, drift detection, triage,
//! and change-triggered evaluation plans.

use std::collections::{BTreeMap, BTreeSet};

use ape_core::model::{EvalDataset, GoldenCase, PromptRef, RunRecord, ScenarioKind};
use ape_core::regression::{
    compare_to_baseline, detect_drift, incident_to_coverage, plan_triggers, triage, Baseline,
    BaselineStore, ChangeEvent, DriftMode, DriftOutcome, Incident, PlanScope, PromptGraph,
    RegressionError, Symptom, TrendPoint, TrendSeries,
};
use ape_core::sut::{ScriptedAdapter, ScriptedCandidate, SutResponse};
use chrono::{DateTime, TimeZone, Utc};
use serde_json::json;
use tempfile::TempDir;

fn run(run_id: &str, day: u32, metrics: &[(&str, f64)], kpis: &[(&str, f64)]) -> RunRecord {
    RunRecord {
        run_id: run_id.into(),
        timestamp: Utc.with_ymd_and_hms(2026, 8, day, 0, 0, 0).unwrap(),
        dataset_id: "ds-a".into(),
        prompt_version: "1.0".into(),
        model_version: "model-a".into(),
        config_fingerprint: "fp".into(),
        cases: vec![],
        aggregates: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        kpis: kpis.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn point(day: u32, hour: u32, value: f64) -> TrendPoint {
    TrendPoint {
        timestamp: Utc.with_ymd_and_hms(2026, 8, day, hour, 0, 0).unwrap(),
        value,
    }
}

fn series(points: Vec<TrendPoint>) -> TrendSeries {
    TrendSeries::new("ds-a".into(), "accuracy".into(), points).unwrap()
}

#[test]
fn baselines_capture_identity_and_all_run_metrics() {
    let record = run("run-1", 1, &[("FACTUAL_CORRECTNESS", 0.9)], &[("prompt_pass_rate", 0.8)]);
    let baseline = Baseline::from_run(&record);
    assert_eq!(baseline.dataset_id, "ds-a");
    assert_eq!(baseline.prompt_version, "1.0");
    assert_eq!(baseline.model_version, "model-a");
    assert_eq!(baseline.run_id, "run-1");
    assert_eq!(baseline.recorded_at, record.timestamp);
    assert_eq!(baseline.aggregates["FACTUAL_CORRECTNESS"], 0.9);
    assert_eq!(baseline.aggregates["prompt_pass_rate"], 0.8);
}

#[test]
fn declines_regress_only_strictly_beyond_the_margin() {
    let baseline = Baseline::from_run(&run(
        "run-1",
        1,
        &[("accuracy", 0.90), ("safety", 1.0)],
        &[],
    ));

    let report = compare_to_baseline(
        &run("run-2", 2, &[("accuracy", 0.84), ("safety", 1.0)], &[]),
        &baseline,
        0.05,
    )
    .unwrap();
    assert!(report.regressed);
    let accuracy = &report.comparisons[0];
    assert_eq!(accuracy.kpi, "accuracy");
    assert_eq!(accuracy.baseline, 0.90);
    assert_eq!(accuracy.current, 0.84);
    assert_eq!(accuracy.decline, 0.06);
    assert!(accuracy.regressed);
    assert!(!report.comparisons[1].regressed);

    // A decline of exactly the margin is tolerated.
    let at_margin = compare_to_baseline(
        &run("run-3", 3, &[("accuracy", 0.85), ("safety", 1.0)], &[]),
        &baseline,
        0.05,
    )
    .unwrap();
    assert_eq!(at_margin.comparisons[0].decline, 0.05);
    assert!(!at_margin.regressed);

    // Improvements never regress.
    let improved = compare_to_baseline(
        &run("run-4", 4, &[("accuracy", 0.95), ("safety", 1.0)], &[]),
        &baseline,
        0.05,
    )
    .unwrap();
    assert_eq!(improved.comparisons[0].decline, -0.05);
    assert!(!improved.regressed);
}

#[test]
fn kpis_on_one_side_only_are_reported_but_do_not_regress() {
    let baseline = Baseline::from_run(&run("run-1", 1, &[("old_kpi", 0.9)], &[]));
    let report = compare_to_baseline(
        &run("run-2", 2, &[("new_kpi", 0.1)], &[]),
        &baseline,
        0.05,
    )
    .unwrap();
    assert_eq!(report.unmatched_kpis, vec!["new_kpi", "old_kpi"]);
    assert!(report.comparisons.is_empty());
    assert!(!report.regressed);
}

#[test]
fn comparison_rejects_bad_margins_and_foreign_datasets() {
    let baseline = Baseline::from_run(&run("run-1", 1, &[("accuracy", 0.9)], &[]));

    let err = compare_to_baseline(&run("run-2", 2, &[("accuracy", 0.9)], &[]), &baseline, 1.5)
        .unwrap_err();
    assert_eq!(err.to_string(), "margin 1.5 must lie in [0, 1]");

    let mut foreign = run("run-3", 3, &[("accuracy", 0.9)], &[]);
    foreign.dataset_id = "ds-b".into();
    let err = compare_to_baseline(&foreign, &baseline, 0.05).unwrap_err();
    assert_eq!(
        err.to_string(),
        "dataset mismatch: run is for ds-b but baseline is for ds-a"
    );
}

#[test]
fn the_store_sequences_run_files_and_tracks_active_baselines() {
    let dir = TempDir::new().unwrap();
    let store = BaselineStore::open(dir.path()).unwrap();

    let first = run("run-1", 1, &[("FACTUAL_CORRECTNESS", 0.9)], &[("prompt_pass_rate", 0.8)]);
    let second = run("run-2", 2, &[("FACTUAL_CORRECTNESS", 0.85)], &[("prompt_pass_rate", 0.75)]);

    let path1 = store.record_run(&first).unwrap();
    let path2 = store.record_run(&second).unwrap();
    assert_eq!(path1.file_name().unwrap(), "0000-run-1.json");
    assert_eq!(path2.file_name().unwrap(), "0001-run-2.json");
    assert!(path1.starts_with(dir.path().join("runs").join("ds-a")));

    let reloaded: RunRecord =
        serde_json::from_str(&std::fs::read_to_string(&path1).unwrap()).unwrap();
    assert_eq!(reloaded, first);

    // No baseline until one is blessed.
    let err = store.active_baseline("ds-a", "model-a").unwrap_err();
    assert_eq!(
        err.to_string(),
        "no baseline recorded for dataset ds-a on model model-a"
    );

    store.set_baseline(&first).unwrap();
    assert_eq!(
        store.active_baseline("ds-a", "model-a").unwrap().run_id,
        "run-1"
    );

    // Re-blessing replaces; other model versions keep their own slot.
    store.set_baseline(&second).unwrap();
    assert_eq!(
        store.active_baseline("ds-a", "model-a").unwrap().run_id,
        "run-2"
    );
    let mut for_model_b = run("run-9", 3, &[("FACTUAL_CORRECTNESS", 1.0)], &[]);
    for_model_b.model_version = "model-b".into();
    store.set_baseline(&for_model_b).unwrap();
    assert_eq!(
        store.active_baseline("ds-a", "model-b").unwrap().run_id,
        "run-9"
    );
    assert_eq!(
        store.active_baseline("ds-a", "model-a").unwrap().run_id,
        "run-2"
    );
}

#[test]
fn trend_history_rows_pin_the_csv_layout() {
    let dir = TempDir::new().unwrap();
    let store = BaselineStore::open(dir.path()).unwrap();
    store
        .record_run(&run("run-1", 1, &[("FACTUAL_CORRECTNESS", 0.9)], &[("prompt_pass_rate", 0.8)]))
        .unwrap();
    store
        .record_run(&run("run-2", 2, &[("FACTUAL_CORRECTNESS", 0.85)], &[("prompt_pass_rate", 0.75)]))
        .unwrap();

    let text = std::fs::read_to_string(dir.path().join("trends.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines,
        vec![
            "timestamp,dataset_id,prompt_version,run_id,kpi,value",
            "2026-08-01T00:00:00Z,ds-a,1.0,run-1,FACTUAL_CORRECTNESS,0.9",
            "2026-08-01T00:00:00Z,ds-a,1.0,run-1,prompt_pass_rate,0.8",
            "2026-08-02T00:00:00Z,ds-a,1.0,run-2,FACTUAL_CORRECTNESS,0.85",
            "2026-08-02T00:00:00Z,ds-a,1.0,run-2,prompt_pass_rate,0.75",
        ]
    );

    assert_eq!(
        store.kpis("ds-a").unwrap(),
        vec!["FACTUAL_CORRECTNESS", "prompt_pass_rate"]
    );
    assert!(store.kpis("ghost").unwrap().is_empty());

    let trend = store.trend("ds-a", "prompt_pass_rate").unwrap();
    let values: Vec<f64> = trend.points.iter().map(|p| p.value).collect();
    assert_eq!(values, vec![0.8, 0.75]);
    assert!(store.trend("ds-a", "nope").unwrap().points.is_empty());
}

#[test]
fn trend_reads_reject_non_increasing_timestamps() {
    let dir = TempDir::new().unwrap();
    let store = BaselineStore::open(dir.path()).unwrap();
    store.record_run(&run("run-1", 1, &[("accuracy", 0.9)], &[])).unwrap();
    store.record_run(&run("run-2", 1, &[("accuracy", 0.8)], &[])).unwrap();

    let err = store.trend("ds-a", "accuracy").unwrap_err();
    assert!(err.to_string().contains("trend timestamps must strictly increase"));

    let direct = TrendSeries::new(
        "d".into(),
        "k".into(),
        vec![point(2, 0, 0.9), point(1, 0, 0.8)],
    );
    assert!(matches!(direct, Err(RegressionError::Invalid(_))));
}

#[test]
fn drift_needs_two_points_and_a_full_window() {
    let lone = series(vec![point(1, 0, 0.9)]);
    match detect_drift(&lone, 7, 0.05, DriftMode::Relative) {
        DriftOutcome::InsufficientData { reason } => {
            assert_eq!(reason, "need at least 2 trend points, have 1")
        }
        other => panic!("unexpected outcome {other:?}"),
    }

    // Ten points only 12 hours apart: dense but too short a span.
    let mut points = Vec::new();
    for day in 1..=5 {
        points.push(point(day, 0, 0.9));
        points.push(point(day, 12, 0.9));
    }
    let dense = series(points);
    match detect_drift(&dense, 7, 0.05, DriftMode::Relative) {
        DriftOutcome::InsufficientData { reason } => {
            assert_eq!(reason, "series spans 108 hours, needs 7 days")
        }
        other => panic!("unexpected outcome {other:?}"),
    }
}

#[test]
fn drift_measures_from_the_window_start_not_the_series_start() {
    // Days 1-2 predate the 7-day window ending at day 10; the window opens
    // at day 3, so the decline is measured from 0.9, not 0.95.
    let mut points = vec![point(1, 0, 0.95), point(2, 0, 0.95), point(3, 0, 0.9)];
    for day in 4..=9 {
        points.push(point(day, 0, 0.85));
    }
    points.push(point(10, 0, 0.72));
    let drifting = series(points);

    match detect_drift(&drifting, 7, 0.05, DriftMode::Relative) {
        DriftOutcome::Evaluated {
            flagged,
            decline,
            window_start,
            latest,
            points_in_window,
        } => {
            assert!(flagged);
            assert_eq!(decline, 0.2);
            assert_eq!(window_start, 0.9);
            assert_eq!(latest, 0.72);
            assert_eq!(points_in_window, 8);
        }
        other => panic!("unexpected outcome {other:?}"),
    }

    match detect_drift(&drifting, 7, 0.2, DriftMode::Absolute) {
        DriftOutcome::Evaluated { flagged, decline, .. } => {
            assert_eq!(decline, 0.18);
            assert!(!flagged); // 0.18 <= 0.2 in absolute units
        }
        other => panic!("unexpected outcome {other:?}"),
    }
}

#[test]
fn drift_boundaries_zero_starts_and_improvements() {
    // A span of exactly the window is enough.
    let exact = series(vec![point(1, 0, 1.0), point(8, 0, 0.95)]);
    match detect_drift(&exact, 7, 0.05, DriftMode::Relative) {
        DriftOutcome::Evaluated {
            flagged,
            decline,
            points_in_window,
            ..
        } => {
            assert_eq!(decline, 0.05);
            assert!(!flagged); // not strictly beyond the threshold
            assert_eq!(points_in_window, 2);
        }
        other => panic!("unexpected outcome {other:?}"),
    }
    match detect_drift(&exact, 7, 0.049, DriftMode::Relative) {
        DriftOutcome::Evaluated { flagged, .. } => assert!(flagged),
        other => panic!("unexpected outcome {other:?}"),
    }

    // A zero window-start cannot produce a relative decline.
    let flat_zero = series(vec![point(1, 0, 0.0), point(8, 0, 0.0)]);
    match detect_drift(&flat_zero, 7, 0.05, DriftMode::Relative) {
        DriftOutcome::Evaluated { flagged, decline, .. } => {
            assert_eq!(decline, 0.0);
            assert!(!flagged);
        }
        other => panic!("unexpected outcome {other:?}"),
    }

    let improving = series(vec![point(1, 0, 0.8), point(8, 0, 0.9)]);
    match detect_drift(&improving, 7, 0.05, DriftMode::Relative) {
        DriftOutcome::Evaluated { flagged, decline, .. } => {
            assert_eq!(decline, -0.125);
            assert!(!flagged);
        }
        other => panic!("unexpected outcome {other:?}"),
    }
}

#[test]
fn triage_maps_every_symptom_to_a_layer_and_first_check() {
    let expected = [
        (
            Symptom::ResponsesLessAccurate,
            4,
            "Layer 4 regression suite",
            "Model drift or prompt degradation at output level",
        ),
        (
            Symptom::WrongToolsIntermittently,
            2,
            "Layer 2 trajectory tests",
            "Model update changed tool call behaviour",
        ),
        (
            Symptom::WrongToolParameters,
            2,
            "Layer 2 tool call accuracy",
            "Prompt change affected parameter construction logic",
        ),
        (
            Symptom::ContextLossMidway,
            3,
            "Layer 3 coordination tests",
            "State handoff between agents is breaking",
        ),
        (
            Symptom::OutputFormatBreaking,
            0,
            "Layer 0 prompt validation",
            "Prompt output structure has drifted from schema",
        ),
        (
            Symptom::GuardrailMissingUnsafe,
            1,
            "Layer 1 guardrail evaluation",
            "Model update reduced guardrail sensitivity",
        ),
        (
            Symptom::CorrectAnswerWrongReasoning,
            2,
            "Layer 2 trajectory tests",
            "False positive: fragile trajectory that will fail later",
        ),
    ];
    assert_eq!(expected.len(), Symptom::ALL.len());
    for (symptom, layer, check_first, likely_cause) in expected {
        let advice = triage(symptom);
        assert_eq!(advice.symptom, symptom);
        assert_eq!(advice.layer, layer, "{symptom}");
        assert_eq!(advice.check_first, check_first);
        assert_eq!(advice.likely_cause, likely_cause);
    }
}

#[test]
fn symptom_tokens_round_trip_and_match_the_wire_form() {
    for symptom in Symptom::ALL {
        assert_eq!(Symptom::parse(symptom.token()), Some(symptom));
        assert_eq!(format!("{symptom}"), symptom.token());
        let wire = serde_json::to_string(&symptom).unwrap();
        assert_eq!(wire, format!("\"{}\"", symptom.token()));
    }
    assert_eq!(Symptom::parse("everything-is-fine"), None);
}

fn pipeline_graph() -> PromptGraph {
    PromptGraph {
        depends_on: BTreeMap::from([
            ("summarizer".to_string(), vec!["extractor".to_string()]),
            ("reporter".to_string(), vec!["summarizer".to_string()]),
            ("other".to_string(), vec![]),
        ]),
    }
}

fn prompt_set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|n| n.to_string()).collect()
}

#[test]
fn change_events_expand_to_evaluation_plans() {
    let graph = pipeline_graph();

    let daily = plan_triggers(&ChangeEvent::ScheduledDaily, &graph);
    assert_eq!(daily.scope, PlanScope::FullPromptSuite);
    assert_eq!(daily.layers, vec![1]);
    assert!(!daily.blocking);

    let model = plan_triggers(
        &ChangeEvent::ModelVersionChange {
            new_model: "model-b".into(),
        },
        &graph,
    );
    assert_eq!(model.scope, PlanScope::AllPrompts);
    assert_eq!(model.layers, vec![0, 1, 2, 3, 4]);
    assert!(model.blocking);

    // A prompt edit re-checks the prompt and everything consuming it.
    let edit = plan_triggers(
        &ChangeEvent::PromptUpdate {
            prompt_id: "extractor".into(),
        },
        &graph,
    );
    assert_eq!(
        edit.scope,
        PlanScope::Prompts {
            prompts: prompt_set(&["extractor", "summarizer", "reporter"])
        }
    );
    assert_eq!(edit.layers, vec![0, 1]);
    assert!(edit.blocking);

    let leaf_edit = plan_triggers(
        &ChangeEvent::PromptUpdate {
            prompt_id: "reporter".into(),
        },
        &graph,
    );
    assert_eq!(
        leaf_edit.scope,
        PlanScope::Prompts {
            prompts: prompt_set(&["reporter"])
        }
    );

    // An incident walks upstream and runs the layer triage points at.
    let incident = plan_triggers(
        &ChangeEvent::ProductionIncident {
            prompt_id: "reporter".into(),
            symptom: Symptom::ContextLossMidway,
        },
        &graph,
    );
    assert_eq!(
        incident.scope,
        PlanScope::Prompts {
            prompts: prompt_set(&["reporter", "summarizer", "extractor"])
        }
    );
    assert_eq!(incident.layers, vec![3]);
    assert!(!incident.blocking);

    let format_incident = plan_triggers(
        &ChangeEvent::ProductionIncident {
            prompt_id: "other".into(),
            symptom: Symptom::OutputFormatBreaking,
        },
        &graph,
    );
    assert_eq!(format_incident.layers, vec![0]);
}

#[test]
fn dependency_cycles_do_not_hang_plan_expansion() {
    let cyclic = PromptGraph {
        depends_on: BTreeMap::from([
            ("a".to_string(), vec!["b".to_string()]),
            ("b".to_string(), vec!["a".to_string()]),
        ]),
    };
    assert_eq!(cyclic.dependents_of("a"), prompt_set(&["a", "b"]));
    assert_eq!(cyclic.upstream_of("b"), prompt_set(&["a", "b"]));
}

fn coverage_dataset(case_ids: &[&str]) -> EvalDataset {
    EvalDataset {
        dataset_id: "ds".into(),
        prompt: PromptRef {
            id: "p".into(),
            version: "1".into(),
            template_path: None,
        },
        thresholds: BTreeMap::new(),
        layer0: None,
        cases: case_ids
            .iter()
            .map(|id| GoldenCase {
                id: id.to_string(),
                input: format!("input {id}"),
                scenario: ScenarioKind::Normal,
                reference_output: Some(json!("fine")),
                rubrics: None,
                trajectory: None,
            })
            .collect(),
    }
}

fn pre_fix(input: &str, response: SutResponse) -> ScriptedAdapter {
    let behaviours = BTreeMap::from([(
        input.to_string(),
        vec![ScriptedCandidate {
            weight: 1.0,
            response,
        }],
    )]);
    ScriptedAdapter::new(0, behaviours).unwrap()
}

#[test]
fn incidents_become_previously_failing_cases() {
    let mut dataset = coverage_dataset(&["existing"]);
    let incident = Incident {
        failing_input: "crash input".into(),
        expected_behaviour: json!("safe answer"),
        origin_layer: 1,
    };

    let update = incident_to_coverage(&mut dataset, &incident, None).unwrap();
    assert_eq!(update.case_id, "incident-2");
    assert_eq!(update.verified_catches, None);

    let appended = dataset.cases.last().unwrap();
    assert_eq!(appended.id, "incident-2");
    assert_eq!(appended.input, "crash input");
    assert_eq!(appended.scenario, ScenarioKind::PreviouslyFailing);
    assert_eq!(appended.reference_output, Some(json!("safe answer")));

    // Covered inputs are refused.
    let duplicate = Incident {
        failing_input: "crash input".into(),
        expected_behaviour: json!("safe answer"),
        origin_layer: 1,
    };
    let err = incident_to_coverage(&mut dataset, &duplicate, None).unwrap_err();
    assert_eq!(
        err.to_string(),
        "dataset ds already covers input \"crash input\""
    );
}

#[test]
fn incident_case_ids_skip_collisions() {
    let mut dataset = coverage_dataset(&["incident-2"]);
    let incident = Incident {
        failing_input: "new failure".into(),
        expected_behaviour: json!("ok"),
        origin_layer: 0,
    };
    let update = incident_to_coverage(&mut dataset, &incident, None).unwrap();
    assert_eq!(update.case_id, "incident-3");
}

#[test]
fn a_pre_fix_adapter_verifies_the_new_case_catches_the_bug() {
    let incident = Incident {
        failing_input: "crash input".into(),
        expected_behaviour: json!("safe answer"),
        origin_layer: 1,
    };

    // Pre-fix system still answers wrongly: the case catches it.
    let mut dataset = coverage_dataset(&["existing"]);
    let broken = pre_fix("crash input", SutResponse::from_output(json!("wrong answer")));
    let update = incident_to_coverage(&mut dataset, &incident, Some(&broken)).unwrap();
    assert_eq!(update.verified_catches, Some(true));

    // Pre-fix system already answers correctly: the case catches nothing.
    let mut dataset = coverage_dataset(&["existing"]);
    let fine = pre_fix("crash input", SutResponse::from_output(json!("safe answer")));
    let update = incident_to_coverage(&mut dataset, &incident, Some(&fine)).unwrap();
    assert_eq!(update.verified_catches, Some(false));

    // A pre-fix error also counts as catching the regression.
    let mut dataset = coverage_dataset(&["existing"]);
    let crashing = pre_fix(
        "crash input",
        SutResponse::from_error("sut_unavailable", "boom"),
    );
    let update = incident_to_coverage(&mut dataset, &incident, Some(&crashing)).unwrap();
    assert_eq!(update.verified_catches, Some(true));
}
