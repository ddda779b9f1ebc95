//! Matrix and marginal file I/O.
//!
//! Matrices travel as row-major CSV (optional header, `#` comment lines
//! ignored) or as a JSON object `{rows, cols, entries, row_marginal?,
//! col_marginal?}`. Every output file is written to a temporary sibling and
//! renamed into place, and numeric text uses the shortest representation
//! that round-trips, so written files re-read bit-identically.

use coopcomm::{Dense, MarginalVector, NonnegMatrix};
use std::fmt::Write as _;
use std::path::Path;
use std::process;

/// A failure with the process exit code it should produce.
#[derive(Debug)]
pub struct CliFailure {
    pub code: i32,
    pub message: String,
}

impl CliFailure {
    pub fn precondition(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<coopcomm::Error> for CliFailure {
    fn from(err: coopcomm::Error) -> Self {
        CliFailure::precondition(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliFailure>;

/// A matrix file, possibly carrying its marginals (JSON form only).
pub struct MatrixFile {
    pub matrix: NonnegMatrix,
    pub row_marginal: Option<MarginalVector>,
    pub col_marginal: Option<MarginalVector>,
}

pub fn read_matrix_file(path: &Path) -> CliResult<MatrixFile> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        read_matrix_json(path, &text)
    } else {
        Ok(MatrixFile {
            matrix: parse_matrix_csv(path, &text)?,
            row_marginal: None,
            col_marginal: None,
        })
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliFailure::precondition(format!("{}: {e}", path.display())))
}

fn read_matrix_json(path: &Path, text: &str) -> CliResult<MatrixFile> {
    #[derive(serde::Deserialize)]
    struct JsonMatrix {
        rows: usize,
        cols: usize,
        entries: Vec<f64>,
        #[serde(default)]
        row_marginal: Option<Vec<f64>>,
        #[serde(default)]
        col_marginal: Option<Vec<f64>>,
    }
    let parsed: JsonMatrix = serde_json::from_str(text)
        .map_err(|e| CliFailure::precondition(format!("{}: {e}", path.display())))?;
    let matrix = NonnegMatrix::new(parsed.rows, parsed.cols, parsed.entries)?;
    let row_marginal = parsed.row_marginal.map(MarginalVector::new).transpose()?;
    let col_marginal = parsed.col_marginal.map(MarginalVector::new).transpose()?;
    Ok(MatrixFile {
        matrix,
        row_marginal,
        col_marginal,
    })
}

fn numeric_rows(path: &Path, text: &str) -> CliResult<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut header_allowed = true;
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                rows.push(values);
                header_allowed = false;
            }
            Err(_) if header_allowed => {
                // one optional header line before any data
                header_allowed = false;
            }
            Err(_) => {
                let col = fields
                    .iter()
                    .position(|f| f.parse::<f64>().is_err())
                    .unwrap_or(0)
                    + 1;
                return Err(CliFailure::precondition(format!(
                    "{}: line {}, column {col}: not a number",
                    path.display(),
                    lineno + 1
                )));
            }
        }
    }
    Ok(rows)
}

fn parse_matrix_csv(path: &Path, text: &str) -> CliResult<NonnegMatrix> {
    let rows = numeric_rows(path, text)?;
    if rows.is_empty() {
        return Err(CliFailure::precondition(format!(
            "{}: no matrix rows found",
            path.display()
        )));
    }
    let width = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(CliFailure::precondition(format!(
                "{}: line with row {} has {} fields, expected {width}",
                path.display(),
                i + 1,
                row.len()
            )));
        }
    }
    Ok(NonnegMatrix::from_rows(&rows)?)
}

/// A marginal is a CSV with all its numbers on one line or one per line.
pub fn read_marginal(path: &Path) -> CliResult<MarginalVector> {
    let text = read_text(path)?;
    let rows = numeric_rows(path, &text)?;
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    if values.is_empty() {
        return Err(CliFailure::precondition(format!(
            "{}: no marginal entries found",
            path.display()
        )));
    }
    Ok(MarginalVector::new(values)?)
}

/// Render a matrix as CSV with the resolved run config echoed up top.
pub fn matrix_csv(m: &impl Dense, config: &serde_json::Value) -> String {
    let mut out = format!("# config: {config}\n");
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m.get(i, j));
        }
        out.push('\n');
    }
    out
}

pub fn matrix_json(m: &impl Dense) -> serde_json::Value {
    serde_json::json!({
        "rows": m.rows(),
        "cols": m.cols(),
        "entries": m.as_slice(),
    })
}

/// Write via a temporary sibling plus rename, so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
        process::id()
    ));
    std::fs::write(&tmp, contents)
        .map_err(|e| CliFailure::precondition(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliFailure::precondition(format!("{}: {e}", path.display())))?;
    Ok(())
}
