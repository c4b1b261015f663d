//! On-disk formats: versioned CSV tables and key/value manifests.
//!
//! Every CSV starts with a `# chemotaxis-lab <kind> v<N>` comment line
//! followed by a fixed header row. Reals are written with 17 significant
//! digits so a read-back reproduces them bit for bit; a missing value is an
//! empty cell.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chemotaxis_core::DiagnosticsRecord;
use thiserror::Error;

use crate::verdicts::{Status, Verdict};

pub const RECORDS_VERSION: &str = "# chemotaxis-lab records v1";
pub const SWEEP_VERSION: &str = "# chemotaxis-lab eps-sweep v1";
pub const REFINEMENT_VERSION: &str = "# chemotaxis-lab refinement v1";
pub const MANIFEST_VERSION: &str = "# chemotaxis-lab manifest v1";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: expected columns [{expected}], found [{found}]")]
    Schema {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: missing version line `{expected}`")]
    Version { path: PathBuf, expected: String },
    #[error("{path}: row {row}, column `{column}`: cannot parse `{value}`")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
}

pub type Result<T> = std::result::Result<T, OutputError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a versioned table of optional reals.
pub fn write_table(
    path: &Path,
    version: &str,
    header: &[&str],
    rows: &[Vec<Option<f64>>],
) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{version}").map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.map(fmt_real).unwrap_or_default()))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads a table written by [`write_table`], checking version and header.
pub fn read_table(path: &Path, version: &str, header: &[&str]) -> Result<Vec<Vec<Option<f64>>>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    if text.lines().next() != Some(version) {
        return Err(OutputError::Version {
            path: path.to_path_buf(),
            expected: version.to_string(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let found: Vec<String> = reader
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(String::from)
        .collect();
    if found != header {
        return Err(OutputError::Schema {
            path: path.to_path_buf(),
            expected: header.join(","),
            found: found.join(","),
        });
    }
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .zip(header)
            .map(|(cell, column)| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .map(Some)
                        .map_err(|_| OutputError::Parse {
                            path: path.to_path_buf(),
                            row: k + 1,
                            column: column.to_string(),
                            value: cell.to_string(),
                        })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_records(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let rows: Vec<Vec<Option<f64>>> = records.iter().map(|r| r.values().to_vec()).collect();
    write_table(path, RECORDS_VERSION, &DiagnosticsRecord::COLUMNS, &rows)
}

/// Reads `records.csv` back into records.
pub fn read_records(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let rows = read_table(path, RECORDS_VERSION, &DiagnosticsRecord::COLUMNS)?;
    rows.into_iter()
        .enumerate()
        .map(|(k, row)| {
            let req = |i: usize| {
                row[i].ok_or_else(|| OutputError::Parse {
                    path: path.to_path_buf(),
                    row: k + 1,
                    column: DiagnosticsRecord::COLUMNS[i].to_string(),
                    value: String::new(),
                })
            };
            Ok(DiagnosticsRecord {
                t: req(0)?,
                dt_used: req(1)?,
                mass_u: req(2)?,
                mass_v: req(3)?,
                w_l1: req(4)?,
                w_l2: req(5)?,
                w_l4: req(6)?,
                w_linf: req(7)?,
                entropy: req(8)?,
                dissipation: req(9)?,
                identity_residual: req(10)?,
                hessian_log_lhs: req(11)?,
                hessian_log_rhs: req(12)?,
                compound_2d: req(13)?,
                conv_u: req(14)?,
                conv_v: req(15)?,
                conv_w: req(16)?,
                dist_mean_u: req(17)?,
                dist_mean_v: req(18)?,
                weighted_lp_y: row[19],
                cumulative_consumption: req(20)?,
                min_u: req(21)?,
                min_v: req(22)?,
                min_w: req(23)?,
            })
        })
        .collect()
}

/// Human-readable key/value text with a machine-parsable verdict block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub sections: Vec<(String, Vec<(String, String)>)>,
    pub verdicts: Vec<Verdict>,
}

impl Manifest {
    pub fn section(&mut self, name: &str, entries: Vec<(String, String)>) {
        self.sections.push((name.to_string(), entries));
    }

    /// True when no verdict failed.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MANIFEST_VERSION}");
        for (name, entries) in &self.sections {
            let _ = writeln!(out, "\n[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        let _ = writeln!(out, "\n[verdicts]");
        for v in &self.verdicts {
            let _ = writeln!(out, "{}", v.line());
        }
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "\n[overall]\nstatus = {status}");
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(io_err(path))
    }
}

/// `(name, status)` pairs from the `[verdicts]` block of a rendered manifest.
pub fn parse_verdicts(text: &str) -> Vec<(String, Status)> {
    let mut inside = false;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('[') {
            inside = line == "[verdicts]";
            continue;
        }
        if !inside || line.is_empty() {
            continue;
        }
        if let Some((name, rest)) = line.split_once(" = ") {
            let word = rest.split_whitespace().next().unwrap_or("");
            if let Some(status) = Status::from_word(word) {
                out.push((name.to_string(), status));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip_through_the_text_format() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
            0.0,
        ] {
            assert_eq!(fmt_real(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_real(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn table_schema_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_table(&path, SWEEP_VERSION, &["a", "b"], &[vec![Some(1.0), None]]).unwrap();
        let rows = read_table(&path, SWEEP_VERSION, &["a", "b"]).unwrap();
        assert_eq!(rows, vec![vec![Some(1.0), None]]);
        assert!(matches!(
            read_table(&path, SWEEP_VERSION, &["a", "c"]),
            Err(OutputError::Schema { .. })
        ));
        assert!(matches!(
            read_table(&path, RECORDS_VERSION, &["a", "b"]),
            Err(OutputError::Version { .. })
        ));
    }

    #[test]
    fn verdict_block_parses_back() {
        let mut m = Manifest::default();
        m.section("run", vec![("steps".into(), "10".into())]);
        m.verdicts.push(Verdict::check("a", 1.0, 2.0, true, ""));
        m.verdicts
            .push(Verdict::check("b", 3.0, 2.0, false, "too big"));
        m.verdicts.push(Verdict::skipped("c", "not applicable"));
        let text = m.render();
        assert_eq!(
            parse_verdicts(&text),
            vec![
                ("a".to_string(), Status::Pass),
                ("b".to_string(), Status::Fail),
                ("c".to_string(), Status::Skipped)
            ]
        );
        assert!(!m.passed());
        assert!(text.contains("status = FAIL"));
    }
}
