//! Render a `summary.json` as a table: one row per diagnostic with its
//! pass/fail status and the scalar facts (residuals, standard errors,
//! z-scores) from its detail block. Pure rendering; never a gate.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::config::ConfigError;

pub fn cmd_report(summary_path: &Path) -> Result<(), ConfigError> {
    let text = fs::read_to_string(summary_path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", summary_path.display())))?;
    let summary: Value =
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("malformed summary: {e}")))?;
    let object = summary
        .as_object()
        .ok_or_else(|| ConfigError("malformed summary: not an object".into()))?;
    let model = object
        .get("model")
        .and_then(Value::as_str)
        .ok_or_else(|| ConfigError("malformed summary: missing model".into()))?;
    let pass = object
        .get("pass")
        .and_then(Value::as_bool)
        .ok_or_else(|| ConfigError("malformed summary: missing pass".into()))?;
    let diagnostics = object
        .get("diagnostics")
        .and_then(Value::as_array)
        .ok_or_else(|| ConfigError("malformed summary: missing diagnostics".into()))?;

    println!("model: {model}    overall: {}", status(pass));
    println!("{:<28}{:<8}detail", "check", "status");

    let model_pass = object.get("model_pass").and_then(Value::as_bool);
    if let Some(mp) = model_pass {
        let detail = object.get("model_detail").cloned().unwrap_or(Value::Null);
        println!("{:<28}{:<8}{}", "model", status(mp), scalars(&detail));
    }
    for diag in diagnostics {
        let name = diag.get("name").and_then(Value::as_str).unwrap_or("?");
        let diag_pass = diag.get("pass").and_then(Value::as_bool).unwrap_or(false);
        let detail = diag.get("detail").cloned().unwrap_or(Value::Null);
        println!("{name:<28}{:<8}{}", status(diag_pass), scalars(&detail));
    }
    Ok(())
}

fn status(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Flatten the scalar entries of a detail object into `key=value` pairs;
/// arrays and nested objects are summarized by length.
fn scalars(detail: &Value) -> String {
    let Some(object) = detail.as_object() else {
        return String::new();
    };
    let mut parts = Vec::new();
    for (key, value) in object {
        match value {
            Value::Number(n) => parts.push(format!("{key}={n}")),
            Value::Bool(b) => parts.push(format!("{key}={b}")),
            Value::String(s) => parts.push(format!("{key}={s}")),
            Value::Array(a) => parts.push(format!("{key}=[{} entries]", a.len())),
            _ => {}
        }
    }
    parts.join(" ")
}
