//! Line-oriented `key = value` reports with CSV side tables.
//!
//! `run.report` lists scalar entries in insertion order and names its
//! tables with `table = <name>` lines; each table lives next to it in
//! `run.<name>.csv`.

use std::fmt::{Display, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use super::eval::EvalReport;
use super::train::LossBreakdown;
use crate::error::{Error, Result};

const HEADER: &str = "# evanon report";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub entries: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

fn check_key(key: &str) -> Result<()> {
    let ok = !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '/'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("invalid report key {key:?}")))
    }
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an entry, or overwrite it in place if the key exists.
    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        check_key(key)?;
        let value = value.to_string();
        if value.contains('\n') {
            return Err(Error::invalid(format!(
                "report value for {key} spans lines"
            )));
        }
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn add_table(&mut self, name: &str, columns: &[&str], rows: Vec<Vec<f64>>) -> Result<()> {
        check_key(name)?;
        if rows.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::invalid(format!(
                "table {name}: row width differs from header"
            )));
        }
        if self.tables.iter().any(|t| t.name == name) {
            return Err(Error::invalid(format!("duplicate table {name}")));
        }
        self.tables.push(Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows,
        });
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Scalars of a retrieval evaluation under `prefix`, plus its CMC curve
    /// as table `<prefix>.cmc`.
    pub fn push_eval(&mut self, prefix: &str, r: &EvalReport) -> Result<()> {
        self.set(&format!("{prefix}.query"), &r.query)?;
        self.set(&format!("{prefix}.gallery"), &r.gallery)?;
        self.set(&format!("{prefix}.queries"), r.queries)?;
        self.set(&format!("{prefix}.chance"), r.chance)?;
        for k in [1, 5, 10] {
            self.set(&format!("{prefix}.rank{k}"), r.rank(k))?;
        }
        self.set(&format!("{prefix}.map"), r.map)?;
        if let Some(q) = r.quality {
            self.set(&format!("{prefix}.ssim"), q.ssim)?;
            self.set(&format!("{prefix}.psnr"), q.psnr)?;
        }
        let rows = r
            .cmc
            .iter()
            .enumerate()
            .map(|(k, v)| vec![(k + 1) as f64, *v])
            .collect();
        self.add_table(&format!("{prefix}.cmc"), &["rank", "rate"], rows)
    }

    pub fn push_curve(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let rows = values
            .iter()
            .enumerate()
            .map(|(e, v)| vec![(e + 1) as f64, *v])
            .collect();
        self.add_table(name, &["epoch", "loss"], rows)
    }

    pub fn push_losses(&mut self, name: &str, log: &[LossBreakdown]) -> Result<()> {
        let rows = log
            .iter()
            .enumerate()
            .map(|(e, b)| vec![(e + 1) as f64, b.l_struct, b.l_rec, b.l_reid, b.l_total])
            .collect();
        self.add_table(
            name,
            &["epoch", "l_struct", "l_rec", "l_reid", "l_total"],
            rows,
        )
    }
}

/// Path of table `name` belonging to the report at `path`.
pub fn table_path(path: &Path, name: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{name}.csv"))
}

pub fn format_report(report: &Report) -> String {
    let mut out = format!("{HEADER}\n");
    for (k, v) in &report.entries {
        let _ = writeln!(out, "{k} = {v}");
    }
    for t in &report.tables {
        let _ = writeln!(out, "table = {}", t.name);
    }
    out
}

pub fn format_table(table: &Table) -> String {
    let mut out = table.columns.join(",");
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn emit_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_report(report)).map_err(|e| Error::io(path, e))?;
    for t in &report.tables {
        let p = table_path(path, &t.name);
        fs::write(&p, format_table(t)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_table(path: &Path, name: &str) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let columns: Vec<String> = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing header"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| parse_error(path, i + 2, format!("bad number {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != columns.len() {
            return Err(parse_error(path, i + 2, "row width differs from header"));
        }
        rows.push(row);
    }
    Ok(Table {
        name: name.to_string(),
        columns,
        rows,
    })
}

pub fn parse_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report = Report::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| parse_error(path, i + 1, "expected `key = value`"))?;
        if k == "table" {
            report.tables.push(parse_table(&table_path(path, v), v)?);
        } else {
            report.entries.push((k.to_string(), v.to_string()));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new();
        r.set("seed", 7).unwrap();
        r.set("raw.ssim", 0.1 + 0.2).unwrap();
        r.set("note", "anonymized path").unwrap();
        r.push_curve("attacker.curve", &[0.9, 0.5, 1.0 / 3.0])
            .unwrap();
        r
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.report");
        let r = sample();
        emit_report(&r, &path).unwrap();
        let back = parse_report(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get_f64("raw.ssim"), Some(0.1 + 0.2));
        assert!(dir.path().join("run.attacker.curve.csv").exists());
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(format_report(&Report::new()), format!("{HEADER}\n"));
    }

    #[test]
    fn output_is_stable() {
        assert_eq!(format_report(&sample()), format_report(&sample()));
        let text = format_report(&sample());
        assert!(text.starts_with("# evanon report\nseed = 7\nraw.ssim = 0.30000000000000004\n"));
    }

    #[test]
    fn bad_keys_are_rejected() {
        assert!(Report::new().set("a b", 1).is_err());
        assert!(Report::new().set("x", "two\nlines").is_err());
    }
}
