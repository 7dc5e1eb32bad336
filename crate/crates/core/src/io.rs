//! CSV ingestion and emission.
//!
//! Comma-separated, optional header row. A missing cell is an empty field
//! or the literal `NaN` (any case). Observed cells keep their original text
//! so that a pass-through write reproduces them byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::MaskedDataset;
use crate::error::{Error, Result};

/// A parsed CSV table.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub dataset: MaskedDataset,
    /// Original text of every cell (empty for missing cells).
    pub raw: Vec<Vec<String>>,
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("nan")
}

fn parse_cell(s: &str) -> Option<f64> {
    let t = s.trim();
    if is_missing_token(t) {
        None
    } else {
        t.parse::<f64>().ok()
    }
}

pub fn read_csv_path(path: &Path) -> Result<CsvTable> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(file).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_csv<R: Read>(reader: R) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(reader);
    let mut records: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        records.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    if records.is_empty() {
        return Err(Error::Parse("empty CSV input".into()));
    }
    let first_is_header = records[0]
        .iter()
        .any(|s| !is_missing_token(s) && s.parse::<f64>().is_err());
    let names = if first_is_header {
        Some(records.remove(0))
    } else {
        None
    };
    if records.is_empty() {
        return Err(Error::Parse("CSV has a header but no data rows".into()));
    }
    let n = records.len();
    let m = records[0].len();
    let mut values = DMatrix::from_element(n, m, f64::NAN);
    let mut mask = DMatrix::from_element(n, m, false);
    let mut raw = Vec::with_capacity(n);
    for (i, rec) in records.into_iter().enumerate() {
        for (j, cell) in rec.iter().enumerate() {
            match parse_cell(cell) {
                Some(v) => {
                    values[(i, j)] = v;
                    mask[(i, j)] = true;
                }
                None if is_missing_token(cell) => {}
                None => {
                    return Err(Error::Parse(format!(
                        "row {}, column {}: cannot parse {cell:?}",
                        i + 1 + usize::from(first_is_header),
                        j + 1
                    )))
                }
            }
        }
        raw.push(
            rec.into_iter()
                .map(|c| if is_missing_token(&c) { String::new() } else { c })
                .collect(),
        );
    }
    let dataset = MaskedDataset::new(values, mask, names)?;
    Ok(CsvTable { dataset, raw })
}

/// Formats a value for emission.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Writes a matrix; cells with `mask == false` become empty fields.
pub fn write_matrix<W: Write>(
    writer: W,
    names: Option<&[String]>,
    values: &DMatrix<f64>,
    mask: Option<&DMatrix<bool>>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    if let Some(names) = names {
        w.write_record(names)?;
    }
    for i in 0..values.nrows() {
        let row: Vec<String> = (0..values.ncols())
            .map(|j| match mask {
                Some(mk) if !mk[(i, j)] => String::new(),
                _ => format_value(values[(i, j)]),
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

impl CsvTable {
    /// Writes `imputed`, keeping the original text of every observed cell.
    pub fn write_imputed<W: Write>(&self, writer: W, imputed: &DMatrix<f64>) -> Result<()> {
        let ds = &self.dataset;
        if imputed.shape() != ds.values().shape() {
            return Err(Error::DimensionMismatch(format!(
                "imputed matrix is {:?}, table is {:?}",
                imputed.shape(),
                ds.values().shape()
            )));
        }
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        if let Some(names) = ds.feature_names() {
            w.write_record(names)?;
        }
        for i in 0..ds.nrows() {
            let row: Vec<String> = (0..ds.ncols())
                .map(|j| {
                    if ds.is_observed(i, j) {
                        self.raw[i][j].clone()
                    } else {
                        format_value(imputed[(i, j)])
                    }
                })
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes a single integer column with a header.
pub fn write_column<W: Write, T: ToString>(writer: W, header: &str, col: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record([header])?;
    for v in col {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_missing_tokens() {
        let text = "a,b,c\n1,,3\nNaN,2.50,nan\n4,5,6\n";
        let t = read_csv(text.as_bytes()).unwrap();
        let ds = &t.dataset;
        assert_eq!(ds.feature_names().unwrap(), ["a", "b", "c"]);
        assert_eq!(ds.nrows(), 3);
        assert_eq!(ds.get(0, 1), None);
        assert_eq!(ds.get(1, 0), None);
        assert_eq!(ds.get(1, 2), None);
        assert_eq!(ds.get(1, 1), Some(2.5));
        assert_eq!(ds.n_missing(), 3);
    }

    #[test]
    fn headerless_pass_through_is_byte_exact() {
        let text = "1.50,2,3e0\n4,5.000,6\n";
        let t = read_csv(text.as_bytes()).unwrap();
        assert!(t.dataset.feature_names().is_none());
        let mut out = Vec::new();
        t.write_imputed(&mut out, t.dataset.values()).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn garbage_cell_is_a_parse_error() {
        let text = "1,2\n3,abc\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn masked_write_leaves_empty_fields() {
        let v = DMatrix::from_row_slice(1, 3, &[1.0, 2.5, 3.0]);
        let m = DMatrix::from_row_slice(1, 3, &[true, false, true]);
        let mut out = Vec::new();
        write_matrix(&mut out, None, &v, Some(&m)).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "1,,3\n");
    }
}
