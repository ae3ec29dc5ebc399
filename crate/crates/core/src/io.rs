//! CSV dataset exchange. One row per sample: the label, then the feature
//! values. A header row is optional and recognised by a non-numeric label
//! cell.

use std::path::Path;

use crate::datagen::Dataset;
use crate::error::{Error, Result};

fn input_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Input {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a dataset whose labels lie in `0..n_classes`. Given labels start
/// equal to the file's labels; features are kept as written.
pub fn ingest_csv(path: &Path, n_classes: usize) -> Result<Dataset> {
    if n_classes == 0 {
        return Err(Error::param("n_classes must be positive"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::io(path, source),
            other => input_error(path, format!("{other:?}")),
        })?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim: Option<usize> = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| input_error(path, format!("row {}: {e}", row + 1)))?;
        let line = record.position().map_or(row as u64 + 1, |p| p.line());
        let mut cells = record.iter();
        let label_cell = cells.next().unwrap_or("");
        if row == 0 && label_cell.parse::<f64>().is_err() {
            continue;
        }
        if record.len() < 2 {
            return Err(input_error(path, format!("line {line}: expected a label and at least one feature")));
        }
        match dim {
            None => dim = Some(record.len() - 1),
            Some(d) if d != record.len() - 1 => {
                return Err(input_error(
                    path,
                    format!("line {line}: {} features, expected {d}", record.len() - 1),
                ))
            }
            Some(_) => {}
        }
        let label: usize = label_cell
            .parse()
            .map_err(|_| input_error(path, format!("line {line}: label `{label_cell}` is not a non-negative integer")))?;
        if label >= n_classes {
            return Err(input_error(
                path,
                format!("line {line}: label {label} is out of range for {n_classes} classes"),
            ));
        }
        labels.push(label);
        for (col, cell) in cells.enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| input_error(path, format!("line {line}, column {}: `{cell}` is not a number", col + 2)))?;
            if !v.is_finite() {
                return Err(input_error(path, format!("line {line}, column {}: non-finite value", col + 2)));
            }
            features.push(v);
        }
    }
    let dim = dim.ok_or_else(|| input_error(path, "no data rows"))?;
    Dataset::new(features, dim, labels, n_classes).map_err(|e| e.context(path.display().to_string()))
}

/// Writes `dataset` with a header row; `given_labels` selects which labels are written.
/// Values use Rust's shortest round-trip float formatting.
pub fn export_csv(dataset: &Dataset, path: &Path, given_labels: bool) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => input_error(path, format!("{other:?}")),
    })?;
    let write_err = |e: csv::Error| input_error(path, e.to_string());
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.dim()).map(|j| format!("x{j}")));
    writer.write_record(&header).map_err(write_err)?;
    for i in 0..dataset.len() {
        let label = if given_labels { dataset.given_label(i) } else { dataset.true_label(i) };
        let mut row = vec![label.to_string()];
        row.extend(dataset.x(i).iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(write_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
