//! Golden summaries: a stored `summary.json` plus a relative tolerance for
//! numeric leaves. Everything else must match exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Golden {
    pub tolerance: f64,
    pub summary: Value,
}

impl Golden {
    pub fn new(summary: Value) -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            summary,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("json") + "\n";
        std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    /// Paths (JSON-pointer style) where `actual` departs from the golden summary.
    pub fn diff(&self, actual: &Value) -> Vec<String> {
        let mut out = Vec::new();
        compare(&self.summary, actual, self.tolerance, String::new(), &mut out);
        out
    }
}

fn compare(golden: &Value, actual: &Value, tol: f64, at: String, out: &mut Vec<String>) {
    match (golden, actual) {
        (Value::Number(g), Value::Number(a)) => {
            let (g, a) = (g.as_f64().unwrap_or(f64::NAN), a.as_f64().unwrap_or(f64::NAN));
            if (g - a).abs() > tol * g.abs().max(1.0) {
                out.push(format!("{at}: expected {g:e}, got {a:e}"));
            }
        }
        (Value::Object(g), Value::Object(a)) => {
            for key in g.keys().chain(a.keys().filter(|k| !g.contains_key(*k))) {
                let path = format!("{at}/{key}");
                match (g.get(key), a.get(key)) {
                    (Some(gv), Some(av)) => compare(gv, av, tol, path, out),
                    (Some(_), None) => out.push(format!("{path}: missing")),
                    (None, _) => out.push(format!("{path}: unexpected")),
                }
            }
        }
        (Value::Array(g), Value::Array(a)) if g.len() == a.len() => {
            for (i, (gv, av)) in g.iter().zip(a).enumerate() {
                compare(gv, av, tol, format!("{at}/{i}"), out);
            }
        }
        _ if golden == actual => {}
        _ => out.push(format!("{at}: expected {golden}, got {actual}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn numbers_compare_relatively() {
        let g = Golden::new(json!({ "v": 1000.0, "w": [1.0, null], "ok": true }));
        assert!(g.diff(&json!({ "v": 1000.0 + 1e-7, "w": [1.0, null], "ok": true })).is_empty());
        let d = g.diff(&json!({ "v": 1001.0, "w": [1.0, 2.0], "ok": true, "extra": 1 }));
        assert_eq!(d.len(), 3, "{d:?}");
        assert!(d[0].starts_with("/v"));
    }

    #[test]
    fn missing_keys_and_length_changes_are_reported() {
        let g = Golden::new(json!({ "a": [1, 2], "b": "x" }));
        let d = g.diff(&json!({ "a": [1] }));
        assert_eq!(d, vec!["/a: expected [1,2], got [1]", "/b: missing"]);
    }
}
