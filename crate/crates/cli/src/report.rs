//! Report assembly: a human-readable summary, a machine-readable key/value
//! document with a stable field order, and CSV plot data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Ordered report: scalar results, tables and warnings, rendered to both the
/// text and the machine format. Re-running an identical configuration
/// reproduces every numeric field byte for byte (the timestamp lives on a
/// dedicated comment line of the machine file and in the text file only).
pub struct Report {
    title: String,
    fields: Vec<(String, String)>,
    warnings: Vec<String>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report { title: title.into(), fields: Vec::new(), warnings: Vec::new() }
    }

    pub fn field(&mut self, key: &str, value: impl std::fmt::Display) {
        self.fields.push((key.to_string(), value.to_string()));
    }

    /// Monte-Carlo estimate: value plus `<key>_se`.
    pub fn estimate(&mut self, key: &str, value: f64, se: f64) {
        self.field(key, value);
        self.field(&format!("{key}_se"), se);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn extend_echo(&mut self, echo: &[(String, String)]) {
        for (k, v) in echo {
            self.fields.push((k.clone(), v.clone()));
        }
    }

    fn timestamp() -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }

    fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{}\n", self.title));
        out.push_str(&"=".repeat(self.title.len()));
        out.push('\n');
        out.push_str(&format!("generated_at_unix: {}\n\n", Self::timestamp()));
        let width = self.fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &self.fields {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        if !self.warnings.is_empty() {
            out.push_str("\nwarnings:\n");
            for w in &self.warnings {
                out.push_str(&format!("  - {w}\n"));
            }
        }
        out
    }

    fn render_machine(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# timestamp = {}\n", Self::timestamp()));
        for (k, v) in &self.fields {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (i, w) in self.warnings.iter().enumerate() {
            out.push_str(&format!("warning.{i} = {w}\n"));
        }
        out
    }

    /// Write `<prefix>_report.txt` and `<prefix>_report.kv` under `dir`.
    pub fn write(&self, dir: &Path, prefix: &str) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let txt = dir.join(format!("{prefix}_report.txt"));
        let kv = dir.join(format!("{prefix}_report.kv"));
        fs::write(&txt, self.render_text())?;
        fs::write(&kv, self.render_machine())?;
        Ok(vec![txt, kv])
    }
}

/// CSV writer with a header row, '.' decimal separator and Unix newlines.
pub struct CsvFile {
    path: PathBuf,
    rows: Vec<String>,
}

impl CsvFile {
    pub fn new(dir: &Path, name: &str, header: &str) -> Self {
        CsvFile { path: dir.join(name), rows: vec![header.to_string()] }
    }

    pub fn row(&mut self, cells: &[f64]) {
        self.rows
            .push(cells.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
    }

    pub fn write(self) -> std::io::Result<PathBuf> {
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(&self.path)?;
        for row in &self.rows {
            writeln!(f, "{row}")?;
        }
        Ok(self.path)
    }
}
