//! Layer 0: deterministic structure checks. No model calls, no judges.
//!
//! Three validators live here: structured-output comparison against a
//! reference (`type` equality plus order-insensitive `items` equality),
//! field-level schema checks, and prompt-template requirements (sections,
//! variable placeholders, a token-estimate budget, and an output-format
//! block). All of them are pure functions over text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Outcome of one deterministic check.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ValidationResult {
    fn from_parts(failures: Vec<String>, warnings: Vec<String>) -> Self {
        Self {
            pass: failures.is_empty(),
            failures,
            warnings,
        }
    }
}

/// What a structured output is validated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructSpec {
    /// Expected `type` string and expected `items`, compared as a multiset.
    TypeItems {
        expected_type: String,
        expected_items: Vec<String>,
    },
    Schema(SchemaSpec),
}

impl StructSpec {
    /// Builds a type/items spec from a reference output of that shape.
    pub fn from_reference(reference: &Value) -> Option<Self> {
        let object = reference.as_object()?;
        let expected_type = object.get("type")?.as_str()?.to_string();
        let expected_items = object
            .get("items")?
            .as_array()?
            .iter()
            .map(|item| item.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()?;
        Some(StructSpec::TypeItems {
            expected_type,
            expected_items,
        })
    }
}

/// Validates an actual output against a [`StructSpec`].
pub fn validate_structure(actual: &str, spec: &StructSpec) -> ValidationResult {
    match spec {
        StructSpec::TypeItems {
            expected_type,
            expected_items,
        } => validate_structured_output(actual, expected_type, expected_items),
        StructSpec::Schema(schema) => validate_schema(actual, schema),
    }
}

/// Deterministic type/items comparison.
///
/// The actual output must be a JSON object whose `type` equals the expected
/// type and whose `items` contains exactly the expected strings, in any order.
pub fn validate_structured_output(
    actual: &str,
    expected_type: &str,
    expected_items: &[String],
) -> ValidationResult {
    let mut failures = Vec::new();
    let value: Value = match serde_json::from_str(actual) {
        Ok(value) => value,
        Err(err) => {
            failures.push(format!("output is not valid JSON: {err}"));
            return ValidationResult::from_parts(failures, Vec::new());
        }
    };
    let Some(object) = value.as_object() else {
        failures.push("output is not a JSON object".into());
        return ValidationResult::from_parts(failures, Vec::new());
    };

    match object.get("type").and_then(Value::as_str) {
        Some(actual_type) if actual_type == expected_type => {}
        Some(actual_type) => failures.push(format!(
            "Type mismatch: expected {expected_type:?}, got {actual_type:?}"
        )),
        None => failures.push("output has no string \"type\" field".into()),
    }

    match object.get("items").and_then(Value::as_array) {
        Some(actual_items) => {
            let strings: Option<Vec<&str>> =
                actual_items.iter().map(Value::as_str).collect();
            match strings {
                Some(mut actual_sorted) => {
                    actual_sorted.sort_unstable();
                    let mut expected_sorted: Vec<&str> =
                        expected_items.iter().map(String::as_str).collect();
                    expected_sorted.sort_unstable();
                    if actual_sorted != expected_sorted {
                        failures.push(format!(
                            "Items mismatch: expected {expected_sorted:?}, got {actual_sorted:?}"
                        ));
                    }
                }
                None => failures.push("output \"items\" must be an array of strings".into()),
            }
        }
        None => failures.push("output has no array \"items\" field".into()),
    }

    ValidationResult::from_parts(failures, Vec::new())
}

/// Value kind a schema field must have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    String,
    Number,
    Boolean,
    List,
    Object,
}

impl FieldKind {
    fn matches(self, value: &Value) -> bool {
        match self {
            FieldKind::String => value.is_string(),
            FieldKind::Number => value.is_number(),
            FieldKind::Boolean => value.is_boolean(),
            FieldKind::List => value.is_array(),
            FieldKind::Object => value.is_object(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            FieldKind::String => "string",
            FieldKind::Number => "number",
            FieldKind::Boolean => "boolean",
            FieldKind::List => "list",
            FieldKind::Object => "object",
        }
    }
}

fn kind_of(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "list",
        Value::Object(_) => "object",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub kind: FieldKind,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_values: Option<Vec<Value>>,
}

/// Field-level schema for structured outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSpec {
    pub fields: BTreeMap<String, FieldSpec>,
}

/// Checks required fields, field kinds, and allowed values.
/// Fields not named by the schema are reported as warnings, not failures.
pub fn validate_schema(actual: &str, schema: &SchemaSpec) -> ValidationResult {
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    let value: Value = match serde_json::from_str(actual) {
        Ok(value) => value,
        Err(err) => {
            failures.push(format!("output is not valid JSON: {err}"));
            return ValidationResult::from_parts(failures, warnings);
        }
    };
    let Some(object) = value.as_object() else {
        failures.push("output is not a JSON object".into());
        return ValidationResult::from_parts(failures, warnings);
    };

    for (name, spec) in &schema.fields {
        let Some(field) = object.get(name) else {
            if spec.required {
                failures.push(format!("missing required field {name:?}"));
            }
            continue;
        };
        if !spec.kind.matches(field) {
            failures.push(format!(
                "field {name:?}: expected {}, got {}",
                spec.kind.name(),
                kind_of(field)
            ));
            continue;
        }
        if let Some(allowed) = &spec.allowed_values {
            if !allowed.contains(field) {
                failures.push(format!("field {name:?}: value {field} not in allowed set"));
            }
        }
    }
    for name in object.keys() {
        if !schema.fields.contains_key(name) {
            warnings.push(format!("unexpected field {name:?}"));
        }
    }

    ValidationResult::from_parts(failures, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFormatBlock {
    pub required: bool,
}

/// Requirements a prompt template must satisfy. Empty lists and unset fields
/// disable the corresponding check.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRequirements {
    /// Section headers that must appear, e.g. `Role`, `Rules`, `Output`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required_sections: Vec<String>,
    /// `{{name}}` placeholders that must appear exactly once each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required_variables: Vec<String>,
    /// Budget on the template's 4-characters-per-token estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens_estimate: Option<usize>,
    /// When required, the template must contain a ```json fenced block that
    /// parses. A present-but-broken block fails even when not required.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_format_block: Option<OutputFormatBlock>,
}

/// A line counts as a section header when, after stripping leading `#`
/// markers and a trailing `:`, it equals the section name.
fn has_section(template: &str, section: &str) -> bool {
    template.lines().any(|line| {
        let stripped = line.trim().trim_start_matches('#').trim();
        let stripped = stripped.strip_suffix(':').unwrap_or(stripped).trim_end();
        stripped == section
    })
}

fn fenced_json_blocks(template: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in template.lines() {
        let trimmed = line.trim();
        match &mut current {
            None => {
                if trimmed == "```json" {
                    current = Some(String::new());
                }
            }
            Some(block) => {
                if trimmed == "```" {
                    blocks.push(std::mem::take(block));
                    current = None;
                } else {
                    block.push_str(line);
                    block.push('\n');
                }
            }
        }
    }
    blocks
}

/// Estimated token count: one token per four characters, rounded up.
pub fn estimate_tokens(template: &str) -> usize {
    template.chars().count().div_ceil(4)
}

/// Validates a prompt template against its declared requirements.
pub fn validate_prompt_template(
    template: &str,
    requirements: &TemplateRequirements,
) -> ValidationResult {
    let mut failures = Vec::new();

    for section in &requirements.required_sections {
        if !has_section(template, section) {
            failures.push(format!("missing section {section:?}"));
        }
    }

    for variable in &requirements.required_variables {
        let placeholder = format!("{{{{{variable}}}}}");
        let count = template.matches(&placeholder).count();
        match count {
            1 => {}
            0 => failures.push(format!("missing variable {variable:?}")),
            n => failures.push(format!(
                "variable {variable:?} appears {n} times, expected exactly once"
            )),
        }
    }

    if let Some(max) = requirements.max_tokens_estimate {
        let estimate = estimate_tokens(template);
        if estimate > max {
            failures.push(format!(
                "estimated {estimate} tokens exceed the budget of {max}"
            ));
        }
    }

    if let Some(block) = &requirements.output_format_block {
        let blocks = fenced_json_blocks(template);
        if blocks.is_empty() {
            if block.required {
                failures.push("missing output format block".into());
            }
        } else {
            for content in &blocks {
                if let Err(err) = serde_json::from_str::<Value>(content) {
                    failures.push(format!("output format block is not valid JSON: {err}"));
                }
            }
        }
    }

    ValidationResult::from_parts(failures, Vec::new())
}
