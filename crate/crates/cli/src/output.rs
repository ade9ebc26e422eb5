//! CSV tables with `#` header lines carrying the resolved configuration.

use anyhow::{Context, Result};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub file: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Extra `# key = value` lines after the configuration.
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(file: &str, columns: &[&str]) -> Self {
        Table { file: file.into(), columns: columns.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Removes a column whose entries are all empty.
    pub fn drop_if_empty(&mut self, column: &str) {
        let Some(i) = self.columns.iter().position(|c| c == column) else { return };
        if self.rows.iter().all(|r| r[i].is_empty()) {
            self.columns.remove(i);
            for r in &mut self.rows {
                r.remove(i);
            }
        }
    }

    pub fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.notes.push(format!("{key} = {value}"));
    }
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:e}")
    }
}

/// Writes every table into `dir`; returns the paths in table order.
pub fn write_tables(dir: &Path, task: &str, config: &str, tables: &[Table]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut paths = Vec::new();
    for t in tables {
        let path = dir.join(&t.file);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "# jjaqed {} task = {task}", env!("CARGO_PKG_VERSION"))?;
        writeln!(out, "# generated_unix = {stamp}")?;
        writeln!(out, "# --- resolved config ---")?;
        for line in config.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "# --- results ---")?;
        for n in &t.notes {
            writeln!(out, "# {n}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&t.columns)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// The configuration embedded in a file written by [`write_tables`].
pub fn embedded_config(text: &str) -> String {
    let mut out = String::new();
    let mut inside = false;
    for line in text.lines() {
        match line {
            "# --- resolved config ---" => inside = true,
            "# --- results ---" => break,
            l if inside => {
                out.push_str(l.strip_prefix("# ").unwrap_or(l.trim_start_matches('#')));
                out.push('\n');
            }
            _ => {}
        }
    }
    out
}

/// File body without the timestamp line.
pub fn without_stamp(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with("# generated_unix")).collect::<Vec<_>>().join("\n")
}
