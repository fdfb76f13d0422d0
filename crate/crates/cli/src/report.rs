//! In-memory results of one run and their serialization: CSV tables with a
//! header row and 17 significant digits, and a JSON summary.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::Text(v.to_string())
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::Int(v) => v.to_string(),
            Self::Float(v) => format_float(*v),
            Self::Bool(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(file: &str, header: Vec<String>) -> Self {
        Self {
            file: file.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "{}", self.file);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// A pass/fail verdict on one invariant with the measured quantity and the
/// threshold it was compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub tables: Vec<Table>,
    pub values: Map<String, Value>,
    pub checks: Vec<(String, Check)>,
}

/// JSON number, or null for non-finite values.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn matrix(m: &riccati_lab_core::kernels::Mat) -> Value {
    Value::Array(
        m.row_iter()
            .map(|r| Value::Array(r.iter().map(|v| num(*v)).collect()))
            .collect(),
    )
}

impl Report {
    pub fn value(&mut self, key: &str, v: Value) {
        self.values.insert(key.to_string(), v);
    }

    pub fn scalar(&mut self, key: &str, v: f64) {
        self.value(key, num(v));
    }

    /// Records `measured <= threshold`.
    pub fn check_le(&mut self, name: &str, measured: f64, threshold: f64) {
        self.checks.push((
            name.to_string(),
            Check {
                pass: measured <= threshold,
                measured,
                threshold,
            },
        ));
    }

    pub fn check_flag(&mut self, name: &str, pass: bool) {
        self.checks.push((
            name.to_string(),
            Check {
                pass,
                measured: f64::from(u8::from(pass)),
                threshold: 1.0,
            },
        ));
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|(_, c)| c.pass)
    }

    pub fn summary(&self, name: &str, command: &str) -> Value {
        let checks: Map<String, Value> = self
            .checks
            .iter()
            .map(|(k, c)| {
                (
                    k.clone(),
                    json!({ "pass": c.pass, "measured": num(c.measured), "threshold": num(c.threshold) }),
                )
            })
            .collect();
        json!({
            "scenario": name,
            "command": command,
            "values": self.values,
            "checks": checks,
            "all_checks_pass": self.all_pass(),
        })
    }

    pub fn write(&self, dir: &Path, name: &str, command: &str, echo: &Value) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let pretty = |v: &Value| serde_json::to_string_pretty(v).expect("json") + "\n";
        std::fs::write(dir.join("scenario.json"), pretty(echo)).map_err(io)?;
        for t in &self.tables {
            std::fs::write(dir.join(&t.file), t.to_csv()).map_err(io)?;
        }
        std::fs::write(dir.join("summary.json"), pretty(&self.summary(name, command))).map_err(io)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(-2.5), "-2.5000000000000000e0");
        assert_eq!(format_float(f64::NAN), "NaN");
        let s = format_float(std::f64::consts::PI);
        assert_eq!(s.parse::<f64>().unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut t = Table::new("x.csv", &["a", "b", "ok"]);
        t.push(vec![1usize.into(), 0.5.into(), true.into()]);
        assert_eq!(t.to_csv(), "a,b,ok\n1,5.0000000000000000e-1,true\n");
    }

    #[test]
    fn summary_lists_checks() {
        let mut r = Report::default();
        r.scalar("value", 1.5);
        r.check_le("small", 0.1, 1.0);
        r.check_le("large", 2.0, 1.0);
        let s = r.summary("demo", "riccati");
        assert_eq!(s["checks"]["small"]["pass"], json!(true));
        assert_eq!(s["checks"]["large"]["pass"], json!(false));
        assert_eq!(s["all_checks_pass"], json!(false));
        assert_eq!(s["values"]["value"], json!(1.5));
    }
}
