//! Headerless CSV ingestion: one file per sensor with one row per sample,
//! plus a labels file with one integer per line. Rows and columns in error
//! messages are 1-based.

use std::path::Path;

use super::{MultimodalDataset, SensorData};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn read_matrix(path: &Path) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::file(path, io),
            other => Error::Validation(format!("{}: {other:?}", path.display())),
        })?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Cell {
            row: r + 1,
            col: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Cell {
                row: r + 1,
                col: record.len().min(w) + 1,
                message: format!("{}: {} cells, expected {w}", path.display(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Cell {
                row: r + 1,
                col: c + 1,
                message: format!("{}: not a number: {cell:?}", path.display()),
            })?;
            if !v.is_finite() {
                return Err(Error::Cell {
                    row: r + 1,
                    col: c + 1,
                    message: format!("{}: non-finite value", path.display()),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Validation(format!("{} is empty", path.display())))?;
    Tensor::matrix(rows, width, values)
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Cell {
                row: i + 1,
                col: 1,
                message: format!("{}: not a class index: {:?}", path.display(), l.trim()),
            })
        })
        .collect()
}

/// Loads raw sensor matrices as they are; apply
/// [`normalize_minmax`](super::normalize_minmax) before training.
pub fn load_csv(sensors: &[(&str, &Path)], labels: &Path) -> Result<MultimodalDataset> {
    let labels = load_labels(labels)?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = Vec::with_capacity(sensors.len());
    for (id, path) in sensors {
        let data = read_matrix(path)?;
        if data.rows() != labels.len() {
            return Err(Error::Alignment(format!(
                "{} has {} rows but there are {} labels",
                path.display(),
                data.rows(),
                labels.len()
            )));
        }
        out.push(SensorData {
            id: (*id).to_owned(),
            data,
        });
    }
    MultimodalDataset::new(out, labels, n_classes)
}
