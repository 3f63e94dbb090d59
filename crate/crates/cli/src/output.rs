//! Output files: CSV tables, a JSON summary and a plotting manifest.
//!
//! Floats are written with 12 significant digits in every file so that two
//! runs of the same configuration produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i32> for Cell {
    fn from(v: i32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// `x` with 12 significant digits in scientific notation.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000000e0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.11e}")
}

/// `x` rounded to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if x.is_finite() {
        format_float(x).parse().unwrap_or(x)
    } else {
        x
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem; written as `<prefix>_<name>.csv`.
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match r[k] {
                    Cell::Int(v) => v as f64,
                    Cell::Float(v) => v,
                    _ => f64::NAN,
                })
                .collect(),
        )
    }

    pub fn to_csv(&self, comment: &str) -> String {
        let mut s = String::new();
        s.push_str("# ");
        s.push_str(comment);
        s.push('\n');
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// One entry of the plotting manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotSpec {
    pub table: String,
    pub x: String,
    pub y: Vec<String>,
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
}

impl PlotSpec {
    pub fn new(table: &str, x: &str, y: &[&str], title: &str, xlabel: &str, ylabel: &str) -> Self {
        Self {
            table: table.to_string(),
            x: x.to_string(),
            y: y.iter().map(|s| s.to_string()).collect(),
            title: title.to_string(),
            xlabel: xlabel.to_string(),
            ylabel: ylabel.to_string(),
        }
    }
}

/// Everything a scenario produces.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub tables: Vec<Table>,
    pub summary: Map<String, Value>,
    pub plots: Vec<PlotSpec>,
    /// Extra JSON documents written verbatim as `<prefix>_<name>.json`.
    pub documents: Vec<(String, Value)>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.summary.get(key)?.as_f64()
    }
}

/// JSON number rounded to 12 significant digits; non-finite values become
/// `null`.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(round12(x)).map(Value::Number).unwrap_or(Value::Null)
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

/// Round every float in a JSON tree.
pub fn rounded(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => num(n.as_f64().unwrap()),
        Value::Array(a) => Value::Array(a.into_iter().map(rounded).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        other => other,
    }
}

pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment(&self) -> String {
        format!(
            "rotkit {VERSION} command={} config_sha256={} seed={}",
            self.command, self.config_hash, self.seed
        )
    }
}

/// Write all files of `report` into `dir`; returns the written paths.
pub fn write_report(report: &Report, dir: &Path, prefix: &str, prov: &Provenance) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let comment = prov.comment();
    let mut write = |name: String, body: &[u8]| -> std::io::Result<()> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(body)?;
        written.push(path);
        Ok(())
    };
    for t in &report.tables {
        write(format!("{prefix}_{}.csv", t.name), t.to_csv(&comment).as_bytes())?;
    }

    let mut summary = Map::new();
    summary.insert("command".into(), prov.command.clone().into());
    summary.insert("config_sha256".into(), prov.config_hash.clone().into());
    summary.insert("seed".into(), prov.seed.into());
    summary.insert("version".into(), VERSION.into());
    for (k, v) in &report.summary {
        summary.insert(k.clone(), rounded(v.clone()));
    }
    write(format!("{prefix}_summary.json"), pretty(&Value::Object(summary)).as_bytes())?;

    let plots: Vec<Value> = report
        .plots
        .iter()
        .map(|p| {
            let mut v = serde_json::to_value(p).expect("plot spec serializes");
            v["file"] = format!("{prefix}_{}.csv", p.table).into();
            v
        })
        .collect();
    let manifest = serde_json::json!({ "version": VERSION, "comment_lines": 1, "plots": plots });
    write(format!("{prefix}_plots.json"), pretty(&manifest).as_bytes())?;

    for (name, doc) in &report.documents {
        write(format!("{prefix}_{name}.json"), pretty(&rounded(doc.clone())).as_bytes())?;
    }
    Ok(written)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_float(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(format_float(-0.0), "0.00000000000e0");
        assert_eq!(format_float(12.0), "1.20000000000e1");
        assert_eq!(round12(0.1 + 0.2), 0.3);
    }

    #[test]
    fn csv_has_comment_and_header() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![Cell::Int(1), Cell::Float(0.5)]);
        let csv = t.to_csv("hello");
        assert_eq!(csv, "# hello\na,b\n1,5.00000000000e-1\n");
    }
}
