use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Numeric cell with 16 significant digits.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.15e}")
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV table built in memory.
#[derive(Debug, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = line.iter().map(|c| cell(c)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Flattens a JSON value into `(column, cell)` pairs; arrays expand to `name_1, name_2, ...`.
pub fn flatten(value: &Value) -> Vec<(String, String)> {
    fn go(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}_{k}") };
        match v {
            Value::Object(map) => {
                for (k, v) in map {
                    go(&key(k), v, out);
                }
            }
            Value::Array(items) => {
                for (i, v) in items.iter().enumerate() {
                    go(&key(&(i + 1).to_string()), v, out);
                }
            }
            Value::Null => out.push((prefix.into(), String::new())),
            Value::Bool(b) => out.push((prefix.into(), b.to_string())),
            Value::Number(n) => {
                let s = match (n.as_u64(), n.as_i64()) {
                    (Some(u), _) => u.to_string(),
                    (_, Some(i)) => i.to_string(),
                    _ => num(n.as_f64().unwrap_or(f64::NAN)),
                };
                out.push((prefix.into(), s));
            }
            Value::String(s) => out.push((prefix.into(), s.clone())),
        }
    }
    let mut out = Vec::new();
    go("", value, &mut out);
    out
}

/// One-row CSV of a serializable report.
pub fn record_csv<T: Serialize>(report: &T) -> Result<String, CliError> {
    let flat = flatten(&serde_json::to_value(report)?);
    let (header, row): (Vec<String>, Vec<String>) = flat.into_iter().unzip();
    let mut t = Table::new(header);
    t.push(row);
    Ok(t.render())
}

pub fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes the finished output once, to `path` or stdout.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io { path: p.to_path_buf(), source: e }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::Io { path: "<stdout>".into(), source: e })
        }
    }
}
