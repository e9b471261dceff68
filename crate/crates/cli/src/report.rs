//! Output serialization.
//!
//! The CSV dialect is fixed: comma separator, one header row, LF line
//! endings, UTF-8. Lines starting with `#` are comments; a truncated run
//! records its reason as a trailing comment row. Numbers carry 17
//! significant digits so that emit -> parse -> emit is byte identical.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Formats a float with enough digits for exact round-tripping.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A rectangular numeric table with optional comment rows.
pub struct Table {
    pub preamble: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub trailing: Vec<String>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            preamble: Vec::new(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            trailing: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn comment(&mut self, text: &str) {
        self.preamble.push(text.to_string());
    }

    pub fn trailing_comment(&mut self, text: &str) {
        self.trailing.push(text.to_string());
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in &self.preamble {
            writeln!(out, "# {line}").unwrap();
        }
        writeln!(out, "{}", self.columns.join(",")).unwrap();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        for line in &self.trailing {
            writeln!(out, "# {line}").unwrap();
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, String> {
        let mut preamble = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut trailing = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if let Some(comment) = line.strip_prefix("# ") {
                if columns.is_none() {
                    preamble.push(comment.to_string());
                } else {
                    trailing.push(comment.to_string());
                }
                continue;
            }
            let Some(cols) = &columns else {
                columns = Some(line.split(',').map(|s| s.to_string()).collect());
                continue;
            };
            if !trailing.is_empty() {
                return Err(format!("line {}: data after trailing comments", lineno + 1));
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|s| s.parse::<f64>()).collect();
            let row = row.map_err(|e| format!("line {}: {e}", lineno + 1))?;
            if row.len() != cols.len() {
                return Err(format!(
                    "line {}: expected {} cells, found {}",
                    lineno + 1,
                    cols.len(),
                    row.len()
                ));
            }
            rows.push(row);
        }
        let columns = columns.ok_or("missing header row")?;
        Ok(Table {
            preamble,
            columns,
            rows,
            trailing,
        })
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(name, &x)| (name.clone(), serde_json::json!(x)))
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        let doc = serde_json::json!({
            "notes": self.preamble,
            "rows": rows,
            "trailing_notes": self.trailing,
        });
        let mut text = serde_json::to_string_pretty(&doc).unwrap();
        text.push('\n');
        text
    }
}

/// Writes to the given path, or stdout when no path is set.
pub fn write_output(out: Option<&Path>, text: &str) -> Result<(), String> {
    match out {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| format!("cannot write to stdout: {e}"))
        }
        Some(path) => std::fs::write(path, text)
            .map_err(|e| format!("cannot write {}: {e}", path.display())),
    }
}
