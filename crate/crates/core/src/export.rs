//! Output documents. Every file carries a header naming the tool, its version
//! and the configuration that produced it. Matrices are row-major nested
//! arrays in JSON and long-format `k,name,row,col,value` rows in CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;
use crate::linalg::to_rows;

pub const TOOL: &str = "lfns";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `{tool, version, command, config}`.
pub fn header(command: &str, config: &impl Serialize) -> Result<Value> {
    Ok(json!({
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "config": serde_json::to_value(config)?,
    }))
}

pub fn matrix(m: &DMatrix<f64>) -> Value {
    json!(to_rows(m))
}

pub fn vector(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<_>>())
}

pub fn matrices(ms: &[DMatrix<f64>]) -> Value {
    Value::Array(ms.iter().map(matrix).collect())
}

/// Writes `{"meta": header, ...body}` pretty-printed. `body` must be an object.
pub fn write_json(path: &Path, header: &Value, body: Value) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("meta".into(), header.clone());
    if let Value::Object(fields) = body {
        doc.extend(fields);
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Line-delimited records with the header as the first line.
pub fn write_jsonl<I: IntoIterator<Item = Value>>(path: &Path, header: &Value, records: I) -> Result<()> {
    let mut text = serde_json::to_string(&json!({ "meta": header }))?;
    text.push('\n');
    for r in records {
        text.push_str(&serde_json::to_string(&r)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// CSV with `# `-prefixed header lines ahead of the column row.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Long-format entries of `m` under `name` at step `k`.
    pub fn push_matrix(&mut self, k: Option<usize>, name: &str, m: &DMatrix<f64>) {
        let step = k.map(|k| k.to_string()).unwrap_or_default();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.push(vec![step.clone(), name.to_string(), i.to_string(), j.to_string(), num(m[(i, j)])]);
            }
        }
    }

    pub fn long_format() -> Self {
        Table::new(["k", "name", "row", "col", "value"])
    }

    pub fn render(&self, header: &Value) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "# {}", serde_json::to_string(header)?).expect("string write");
        writeln!(out, "{}", self.columns.join(",")).expect("string write");
        for r in &self.rows {
            writeln!(out, "{}", r.join(",")).expect("string write");
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path, header: &Value) -> Result<()> {
        fs::write(path, self.render(header)?)?;
        Ok(())
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrices_are_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matrix(&m), json!([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]));
        let mut t = Table::long_format();
        t.push_matrix(Some(0), "p", &m);
        assert_eq!(t.rows[1], vec!["0", "p", "0", "1", "2.0"]);
    }

    #[test]
    fn csv_header_comes_first() {
        let h = header("solve", &json!({"seed": 1})).unwrap();
        let text = Table::new(["a"]).render(&h).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# {"));
        assert_eq!(lines.next(), Some("a"));
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, -1e-300, 123456.789, 1.0 / 3.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::NAN), "nan");
    }
}
