//! CSV readers and writers shared by the file formats.
//!
//! All readers skip `#` comment lines so files written with a manifest
//! header can be read back.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(rdr)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Csv {
        row,
        column: 0,
        message: e.to_string(),
    }
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

pub(crate) fn parse_f64(rec: &csv::StringRecord, column: usize) -> Result<f64> {
    let field = rec.get(column).ok_or_else(|| Error::Csv {
        row: record_line(rec),
        column: column + 1,
        message: "missing field".into(),
    })?;
    field.parse::<f64>().map_err(|_| Error::Csv {
        row: record_line(rec),
        column: column + 1,
        message: format!("expected a number, got {field:?}"),
    })
}

/// A grid file: a header row of names, a row of values, then rows of cells.
pub(crate) struct GridCsv {
    pub header: BTreeMap<String, f64>,
    pub rows: Vec<Vec<f64>>,
}

impl GridCsv {
    pub fn require(&self, key: &str) -> Result<f64> {
        self.header.get(key).copied().ok_or_else(|| Error::Csv {
            row: 1,
            column: 0,
            message: format!("header is missing {key:?}"),
        })
    }
}

pub(crate) fn read_grid<R: Read>(rdr: R) -> Result<GridCsv> {
    let mut records = reader(rdr).into_records();
    let names = records
        .next()
        .ok_or_else(|| Error::Csv {
            row: 1,
            column: 0,
            message: "empty file".into(),
        })?
        .map_err(csv_err)?;
    let values = records
        .next()
        .ok_or_else(|| Error::Csv {
            row: 2,
            column: 0,
            message: "missing header values".into(),
        })?
        .map_err(csv_err)?;
    if values.len() != names.len() {
        return Err(Error::Csv {
            row: record_line(&values),
            column: values.len().min(names.len()) + 1,
            message: format!("expected {} header values, got {}", names.len(), values.len()),
        });
    }
    let mut header = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        header.insert(name.to_string(), parse_f64(&values, i)?);
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let row = (0..rec.len())
            .map(|c| parse_f64(&rec, c))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Csv {
                    row: record_line(&rec),
                    column: row.len().min(first.len()) + 1,
                    message: format!("expected {} cells, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Csv {
            row: 3,
            column: 0,
            message: "grid has no rows".into(),
        });
    }
    Ok(GridCsv { header, rows })
}

pub(crate) fn write_grid<W: Write>(
    mut w: W,
    header: &[(&str, f64)],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    let names: Vec<&str> = header.iter().map(|(k, _)| *k).collect();
    writeln!(w, "{}", names.join(","))?;
    let values: Vec<String> = header.iter().map(|(_, v)| format!("{v:?}")).collect();
    writeln!(w, "{}", values.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
