//! Structured-output, schema, and prompt-template validation behaviour.

use ape_core::layer0::{
    estimate_tokens, validate_prompt_template, validate_schema, validate_structure,
    validate_structured_output, FieldKind, FieldSpec, OutputFormatBlock, SchemaSpec, StructSpec,
    TemplateRequirements,
};
use proptest::prelude::*;
use serde_json::json;

fn items(values: &[&str]) -> Vec<String> {
    values.iter().map(|s| s.to_string()).collect()
}

#[test]
fn matching_output_passes_with_no_failures() {
    let result = validate_structured_output(
        r#"{"type": "line", "items": ["Jan", "Feb"]}"#,
        "line",
        &items(&["Jan", "Feb"]),
    );
    assert!(result.pass);
    assert!(result.failures.is_empty());
    assert!(result.warnings.is_empty());
}

#[test]
fn item_order_does_not_matter() {
    let result = validate_structured_output(
        r#"{"type": "bar", "items": ["South", "North", "West", "East"]}"#,
        "bar",
        &items(&["North", "South", "East", "West"]),
    );
    assert!(result.pass);
}

#[test]
fn items_compare_as_a_multiset_not_a_set() {
    // Same distinct values, different multiplicities: must fail.
    let result = validate_structured_output(
        r#"{"type": "bar", "items": ["a", "a", "b"]}"#,
        "bar",
        &items(&["a", "b", "b"]),
    );
    assert!(!result.pass);
    assert_eq!(
        result.failures,
        vec![r#"Items mismatch: expected ["a", "b", "b"], got ["a", "a", "b"]"#.to_string()]
    );
}

#[test]
fn type_mismatch_names_both_types() {
    let result = validate_structured_output(
        r#"{"type": "pie", "items": []}"#,
        "line",
        &items(&[]),
    );
    assert_eq!(
        result.failures,
        vec![r#"Type mismatch: expected "line", got "pie""#.to_string()]
    );
}

#[test]
fn type_and_items_failures_are_both_reported() {
    let result = validate_structured_output(
        r#"{"type": "pie", "items": ["x"]}"#,
        "line",
        &items(&["y"]),
    );
    assert_eq!(result.failures.len(), 2);
}

#[test]
fn unparseable_and_non_object_outputs_fail_early() {
    let result = validate_structured_output("not json", "line", &items(&[]));
    assert!(!result.pass);
    assert!(result.failures[0].starts_with("output is not valid JSON:"));

    let result = validate_structured_output("[1, 2]", "line", &items(&[]));
    assert_eq!(result.failures, vec!["output is not a JSON object".to_string()]);
}

#[test]
fn missing_or_mistyped_fields_fail() {
    let result = validate_structured_output(r#"{"items": []}"#, "line", &items(&[]));
    assert!(result
        .failures
        .contains(&"output has no string \"type\" field".to_string()));

    let result = validate_structured_output(r#"{"type": "line"}"#, "line", &items(&[]));
    assert_eq!(
        result.failures,
        vec!["output has no array \"items\" field".to_string()]
    );

    let result =
        validate_structured_output(r#"{"type": "line", "items": [1]}"#, "line", &items(&[]));
    assert_eq!(
        result.failures,
        vec!["output \"items\" must be an array of strings".to_string()]
    );
}

#[test]
fn spec_is_derived_from_a_conforming_reference() {
    let spec = StructSpec::from_reference(&json!({"type": "line", "items": ["Jan"]})).unwrap();
    assert_eq!(
        spec,
        StructSpec::TypeItems {
            expected_type: "line".into(),
            expected_items: items(&["Jan"]),
        }
    );
    let result = validate_structure(r#"{"type": "line", "items": ["Jan"]}"#, &spec);
    assert!(result.pass);

    // References of any other shape produce no type/items spec.
    assert_eq!(StructSpec::from_reference(&json!({"type": "line"})), None);
    assert_eq!(
        StructSpec::from_reference(&json!({"type": 3, "items": []})),
        None
    );
    assert_eq!(
        StructSpec::from_reference(&json!({"type": "line", "items": [1]})),
        None
    );
    assert_eq!(StructSpec::from_reference(&json!("plain text")), None);
}

fn chart_schema() -> SchemaSpec {
    SchemaSpec {
        fields: [
            (
                "type".to_string(),
                FieldSpec {
                    kind: FieldKind::String,
                    required: true,
                    allowed_values: Some(vec![json!("line"), json!("bar")]),
                },
            ),
            (
                "items".to_string(),
                FieldSpec {
                    kind: FieldKind::List,
                    required: true,
                    allowed_values: None,
                },
            ),
            (
                "title".to_string(),
                FieldSpec {
                    kind: FieldKind::String,
                    required: false,
                    allowed_values: None,
                },
            ),
        ]
        .into_iter()
        .collect(),
    }
}

#[test]
fn schema_enforces_required_fields_kinds_and_allowed_values() {
    let schema = chart_schema();

    let ok = validate_schema(r#"{"type": "line", "items": []}"#, &schema);
    assert!(ok.pass && ok.warnings.is_empty());

    let missing = validate_schema(r#"{"type": "line"}"#, &schema);
    assert_eq!(missing.failures, vec![r#"missing required field "items""#.to_string()]);

    let mistyped = validate_schema(r#"{"type": "line", "items": "Jan"}"#, &schema);
    assert_eq!(
        mistyped.failures,
        vec![r#"field "items": expected list, got string"#.to_string()]
    );

    let outside = validate_schema(r#"{"type": "pie", "items": []}"#, &schema);
    assert_eq!(
        outside.failures,
        vec![r#"field "type": value "pie" not in allowed set"#.to_string()]
    );

    // An optional field that is absent is fine; present but mistyped is not.
    let bad_title = validate_schema(r#"{"type": "line", "items": [], "title": 7}"#, &schema);
    assert_eq!(
        bad_title.failures,
        vec![r#"field "title": expected string, got number"#.to_string()]
    );
}

#[test]
fn unknown_schema_fields_warn_without_failing() {
    let result = validate_schema(r#"{"type": "line", "items": [], "notes": "x"}"#, &chart_schema());
    assert!(result.pass);
    assert_eq!(result.warnings, vec![r#"unexpected field "notes""#.to_string()]);
}

const GOOD_TEMPLATE: &str = "# Role\nYou chart data.\n\n## Rules:\n- stay safe\n\nOutput\n```json\n{\"type\": \"line\", \"items\": []}\n```\nUser asks: {{query}}\n";

fn full_requirements() -> TemplateRequirements {
    TemplateRequirements {
        required_sections: vec!["Role".into(), "Rules".into(), "Output".into()],
        required_variables: vec!["query".into()],
        max_tokens_estimate: Some(2000),
        output_format_block: Some(OutputFormatBlock { required: true }),
    }
}

#[test]
fn a_complete_template_passes_every_check() {
    let result = validate_prompt_template(GOOD_TEMPLATE, &full_requirements());
    assert!(result.pass, "failures: {:?}", result.failures);
}

#[test]
fn each_template_requirement_fails_with_its_own_message() {
    let requirements = full_requirements();

    let result = validate_prompt_template("just text {{query}}", &requirements);
    assert!(result.failures.contains(&r#"missing section "Role""#.to_string()));
    assert!(result.failures.contains(&"missing output format block".to_string()));

    let no_variable = GOOD_TEMPLATE.replace("{{query}}", "");
    let result = validate_prompt_template(&no_variable, &requirements);
    assert_eq!(result.failures, vec![r#"missing variable "query""#.to_string()]);

    let doubled = format!("{GOOD_TEMPLATE}\nagain {{{{query}}}}\n");
    let result = validate_prompt_template(&doubled, &requirements);
    assert_eq!(
        result.failures,
        vec![r#"variable "query" appears 2 times, expected exactly once"#.to_string()]
    );
}

#[test]
fn token_budget_uses_four_characters_per_token() {
    let body = "x".repeat(9000);
    assert_eq!(estimate_tokens(&body), 2250);

    let requirements = TemplateRequirements {
        max_tokens_estimate: Some(2000),
        ..TemplateRequirements::default()
    };
    let result = validate_prompt_template(&body, &requirements);
    assert_eq!(
        result.failures,
        vec!["estimated 2250 tokens exceed the budget of 2000".to_string()]
    );

    // Exactly at the budget is fine.
    let result = validate_prompt_template(&"x".repeat(8000), &requirements);
    assert!(result.pass);
}

#[test]
fn a_broken_format_block_fails_even_when_the_block_is_optional() {
    let template = "```json\n{broken\n```\n";
    let requirements = TemplateRequirements {
        output_format_block: Some(OutputFormatBlock { required: false }),
        ..TemplateRequirements::default()
    };
    let result = validate_prompt_template(template, &requirements);
    assert!(!result.pass);
    assert!(result.failures[0].starts_with("output format block is not valid JSON:"));

    // Absent block, not required: nothing to check.
    let result = validate_prompt_template("no block here", &requirements);
    assert!(result.pass);
}

#[test]
fn empty_requirements_accept_anything() {
    let result = validate_prompt_template("", &TemplateRequirements::default());
    assert!(result.pass);
}

fn vec_and_permutation() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    prop::collection::vec("[a-z]{1,4}", 0..6)
        .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))
}

proptest! {
    // Permuting the items of a conforming output never changes the verdict.
    #[test]
    fn any_item_permutation_is_accepted((expected, shuffled) in vec_and_permutation()) {
        let output = serde_json::to_string(&json!({"type": "line", "items": shuffled})).unwrap();
        let result = validate_structured_output(&output, "line", &expected);
        prop_assert!(result.pass, "failures: {:?}", result.failures);
    }

    // Dropping one expected item always fails (no silent weakening).
    #[test]
    fn a_missing_item_is_always_caught(expected in prop::collection::vec("[a-z]{1,4}", 1..6)) {
        let mut partial = expected.clone();
        partial.pop();
        let output = serde_json::to_string(&json!({"type": "line", "items": partial})).unwrap();
        let result = validate_structured_output(&output, "line", &expected);
        prop_assert!(!result.pass);
    }
}
