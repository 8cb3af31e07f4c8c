//! Published JSON schema for training job specs and a checker for the subset of
//! JSON Schema it uses (`type`, `required`, `properties`,
//! `additionalProperties: false`, `enum`, `const`, `minimum`, `exclusiveMinimum`).

use serde_json::{json, Value};

pub const JOB_SCHEMA_VERSION: u32 = 1;

pub fn job_spec_schema() -> Value {
    let positive_int = json!({ "type": "integer", "minimum": 1 });
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "radiogen training job",
        "type": "object",
        "additionalProperties": false,
        "required": [
            "schema_version", "job_id", "base_model_ref", "config", "prompt_set_ref",
            "stage", "output_adapter_ref"
        ],
        "properties": {
            "schema_version": { "const": JOB_SCHEMA_VERSION },
            "job_id": { "type": "string", "minLength": 1 },
            "base_model_ref": { "type": "string", "minLength": 1 },
            "config": {
                "type": "object",
                "additionalProperties": false,
                "required": [
                    "quantization_bits", "lora_r", "lora_alpha", "learning_rate",
                    "batch_size", "grad_accum_steps", "epochs", "max_seq_len"
                ],
                "properties": {
                    "quantization_bits": { "enum": [4, 8, 16] },
                    "lora_r": positive_int,
                    "lora_alpha": positive_int,
                    "learning_rate": { "type": "number", "exclusiveMinimum": 0 },
                    "batch_size": positive_int,
                    "grad_accum_steps": positive_int,
                    "epochs": positive_int,
                    "max_seq_len": positive_int
                }
            },
            "prompt_set_ref": { "type": "string", "minLength": 1 },
            "template_id": { "type": ["integer", "null"], "minimum": 1 },
            "stage": { "enum": ["small_epoch", "full"] },
            "epochs_override": { "type": ["integer", "null"], "minimum": 1 },
            "start_epoch": { "type": ["integer", "null"], "minimum": 0 },
            "resume_adapter_ref": { "type": ["string", "null"] },
            "output_adapter_ref": { "type": "string", "minLength": 1 },
            "freeze_policy": { "enum": ["adapters_only", "embeddings_only", null] }
        }
    })
}

fn type_matches(v: &Value, ty: &str) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

/// Returns every violation found, each prefixed with its JSON pointer.
pub fn check(value: &Value, schema: &Value) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    check_at(value, schema, "", &mut errors);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn check_at(v: &Value, s: &Value, at: &str, errors: &mut Vec<String>) {
    let mut fail = |msg: String| errors.push(format!("{}: {msg}", if at.is_empty() { "/" } else { at }));
    if let Some(ty) = s.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(v, t),
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).any(|t| type_matches(v, t)),
            _ => true,
        };
        if !ok {
            fail(format!("expected type {ty}, found {v}"));
            return;
        }
    }
    if let Some(c) = s.get("const") {
        if v != c {
            fail(format!("expected {c}, found {v}"));
        }
    }
    if let Some(Value::Array(options)) = s.get("enum") {
        if !options.contains(v) {
            fail(format!("{v} is not one of {}", Value::Array(options.clone())));
        }
    }
    if let (Some(min), Some(x)) = (s.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            fail(format!("{x} is below the minimum {min}"));
        }
    }
    if let (Some(min), Some(x)) = (s.get("exclusiveMinimum").and_then(Value::as_f64), v.as_f64()) {
        if x <= min {
            fail(format!("{x} must exceed {min}"));
        }
    }
    if let (Some(min), Some(x)) = (s.get("minLength").and_then(Value::as_u64), v.as_str()) {
        if (x.chars().count() as u64) < min {
            fail(format!("string shorter than {min}"));
        }
    }
    let Some(obj) = v.as_object() else { return };
    if let Some(Value::Array(required)) = s.get("required") {
        for key in required.iter().filter_map(Value::as_str) {
            if !obj.contains_key(key) {
                fail(format!("missing required property {key:?}"));
            }
        }
    }
    let props = s.get("properties").and_then(Value::as_object);
    let closed = s.get("additionalProperties") == Some(&Value::Bool(false));
    for (k, child) in obj {
        match props.and_then(|p| p.get(k)) {
            Some(cs) => check_at(child, cs, &format!("{at}/{k}"), errors),
            None if closed => errors.push(format!("{at}/{k}: unexpected property")),
            None => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checker_reports_each_kind_of_violation() {
        let schema = json!({
            "type": "object",
            "additionalProperties": false,
            "required": ["a", "b"],
            "properties": {
                "a": { "type": "integer", "minimum": 1 },
                "b": { "enum": ["x", "y"] },
                "c": { "type": ["string", "null"], "minLength": 2 }
            }
        });
        assert!(check(&json!({"a": 1, "b": "x", "c": null}), &schema).is_ok());
        let errs = check(&json!({"a": 0, "b": "z", "c": "q", "d": 1}), &schema).unwrap_err();
        assert_eq!(errs.len(), 4, "{errs:?}");
        let errs = check(&json!({"a": "1"}), &schema).unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
    }
}
