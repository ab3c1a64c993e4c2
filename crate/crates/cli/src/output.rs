//! Byte-exact table emission.
//!
//! Every subcommand produces one table and renders it as CSV or JSON.
//! Both renderers are deliberately hand-rolled on top of `std::fmt`: the
//! byte-for-byte stability of the output is part of the test surface, so
//! the full formatting pipeline stays inside this file. CSV uses `.` as
//! the decimal separator, `\n` line endings, and always writes the header
//! row. Floats print through Rust's shortest-round-trip formatter, so a
//! value like 82.8125 appears exactly as `82.8125`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliResult;

/// Output format selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// One table value.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    U64(u64),
    Usize(usize),
    F64(f64),
    Bool(bool),
    Str(String),
}

impl Cell {
    fn raw_text(&self) -> String {
        match self {
            Cell::U64(v) => v.to_string(),
            Cell::Usize(v) => v.to_string(),
            Cell::F64(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Str(v) => v.clone(),
        }
    }

    fn json_text(&self) -> String {
        match self {
            Cell::U64(v) => v.to_string(),
            Cell::Usize(v) => v.to_string(),
            Cell::F64(v) if v.is_finite() => v.to_string(),
            // JSON has no literal for non-finite numbers.
            Cell::F64(_) => "null".to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Str(v) => json_string(v),
        }
    }
}

/// Quotes a CSV field only when it needs quoting.
fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// JSON string literal with the mandatory escapes.
fn json_string(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for ch in text.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// A column-ordered result table.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|c| csv_field(&c.raw_text())).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("[");
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(if i == 0 { "\n" } else { ",\n" });
            out.push_str("  {");
            for (j, (col, cell)) in self.columns.iter().zip(row).enumerate() {
                if j > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "{}: {}", json_string(col), cell.json_text());
            }
            out.push('}');
        }
        if !self.rows.is_empty() {
            out.push('\n');
        }
        out.push_str("]\n");
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

/// Writes the rendered table to `out` (or stdout when `None`).
pub fn emit(table: &Table, format: Format, out: Option<&Path>) -> CliResult<()> {
    let body = table.render(format);
    match out {
        Some(path) => std::fs::write(path, body.as_bytes())?,
        None => {
            use std::io::Write;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(body.as_bytes())?;
            lock.flush()?;
        }
    }
    Ok(())
}
