//! CSV / JSON / SVG emission. Every file carries the tool version, the CSV
//! schema version and the config hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::svg::{line_chart, Chart};

pub const TOOL: &str = "spdcmux";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Bumped whenever a CSV column is added, removed or renamed.
pub const CSV_SCHEMA: u32 = 1;

/// A CSV table with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem.
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&'static str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }
}

/// Shortest round-trip representation; identical inputs give identical text.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Everything a runner produces.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub tables: Vec<Table>,
    pub json: Vec<(String, serde_json::Value)>,
    pub charts: Vec<Chart>,
}

#[derive(Debug, Clone, Serialize)]
struct Envelope<'a> {
    tool: &'a str,
    version: &'a str,
    config_sha256: &'a str,
    data: &'a serde_json::Value,
}

pub fn header_line(config_hash: &str) -> String {
    format!("# {TOOL} {VERSION} csv_schema={CSV_SCHEMA} config_sha256={config_hash}\n")
}

/// CSV text of a table, including the metadata comment line.
pub fn render_csv(table: &Table, config_hash: &str) -> std::io::Result<String> {
    let mut buf = header_line(config_hash).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&table.header)?;
        for r in &table.rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Writes all outputs under `dir` and returns the written paths.
pub fn emit_outputs(outputs: &Outputs, dir: &Path, config_hash: &str, svg: bool) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in &outputs.tables {
        let path = dir.join(format!("{}.csv", t.name));
        write_file(&path, render_csv(t, config_hash)?.as_bytes())?;
        written.push(path);
    }
    for (name, value) in &outputs.json {
        let path = dir.join(format!("{name}.json"));
        let env = Envelope {
            tool: TOOL,
            version: VERSION,
            config_sha256: config_hash,
            data: value,
        };
        let mut text = serde_json::to_string_pretty(&env).map_err(std::io::Error::other)?;
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        written.push(path);
    }
    if svg {
        for c in &outputs.charts {
            let path = dir.join(format!("{}.svg", c.name));
            write_file(&path, line_chart(c, config_hash).as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
