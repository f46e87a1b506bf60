//! Minimal JSON Schema checker covering the keywords the published report
//! schema uses: `type`, `required`, `properties`, `additionalProperties`
//! (schema form), `items`, `enum`, `minimum` and `maximum`.

use serde_json::Value;

/// JSON Schema for the `evaluate` report.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.schema.json");

pub fn report_schema() -> Value {
    serde_json::from_str(REPORT_SCHEMA).expect("bundled schema is valid JSON")
}

/// Every violation found, as `path: message` strings; empty when valid.
pub fn validate(schema: &Value, value: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(schema, value, "$", &mut errors);
    errors
}

fn type_matches(ty: &str, v: &Value) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

fn check(schema: &Value, v: &Value, path: &str, errors: &mut Vec<String>) {
    if let Some(ty) = schema.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).any(|t| type_matches(t, v)),
            _ => true,
        };
        if !ok {
            errors.push(format!("{path}: expected type {ty}, got {v}"));
            return;
        }
    }
    if let Some(Value::Array(options)) = schema.get("enum") {
        if !options.contains(v) {
            errors.push(format!("{path}: {v} not among {options:?}"));
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
            if x < min {
                errors.push(format!("{path}: {x} < minimum {min}"));
            }
        }
        if let Some(max) = schema.get("maximum").and_then(Value::as_f64) {
            if x > max {
                errors.push(format!("{path}: {x} > maximum {max}"));
            }
        }
    }
    if let Value::Object(map) = v {
        if let Some(Value::Array(required)) = schema.get("required") {
            for key in required.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    errors.push(format!("{path}: missing required key `{key}`"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (key, child) in map {
            let sub = format!("{path}.{key}");
            match props.and_then(|p| p.get(key)) {
                Some(s) => check(s, child, &sub, errors),
                None => match schema.get("additionalProperties") {
                    Some(Value::Bool(false)) => errors.push(format!("{sub}: unexpected key")),
                    Some(s @ Value::Object(_)) => check(s, child, &sub, errors),
                    _ => {}
                },
            }
        }
    }
    if let (Value::Array(items), Some(item_schema)) = (v, schema.get("items")) {
        for (i, item) in items.iter().enumerate() {
            check(item_schema, item, &format!("{path}[{i}]"), errors);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keywords() {
        let s = json!({
            "type": "object",
            "required": ["a"],
            "properties": {
                "a": {"type": "number", "minimum": 0, "maximum": 1},
                "b": {"type": "array", "items": {"enum": ["x", "y"]}}
            },
            "additionalProperties": false
        });
        assert!(validate(&s, &json!({"a": 0.5, "b": ["x"]})).is_empty());
        assert_eq!(validate(&s, &json!({"b": ["z"], "c": 1})).len(), 3);
        assert_eq!(validate(&s, &json!({"a": 2})).len(), 1);
        assert_eq!(validate(&s, &json!([])).len(), 1);
    }

    #[test]
    fn nullable_union() {
        let s = json!({"type": ["number", "null"]});
        assert!(validate(&s, &json!(null)).is_empty());
        assert!(!validate(&s, &json!("x")).is_empty());
    }

    #[test]
    fn bundled_schema_parses() {
        assert_eq!(report_schema()["type"], "object");
    }
}
