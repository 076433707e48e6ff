//! Regressor/measurement traces as CSV.
//!
//! Header `k,y_1..y_p,phi_1_1..phi_p_n[,gamma_1_1..gamma_p_p]`, one row per
//! step, `φ` and `Γ` flattened row-major. Floats are written in shortest
//! round-trip form, so a trace survives write → read bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use gfrls::{RectMatrix, Sample, SpdMatrix, Vector};
use nalgebra::DMatrix;

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Header(String),
    #[error("row {row}, column {column}: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("trace has no rows")]
    Empty,
}

/// Column layout implied by a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub p: usize,
    pub weighted: bool,
}

impl Layout {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["k".to_string()];
        h.extend((1..=self.p).map(|i| format!("y_{i}")));
        for i in 1..=self.p {
            h.extend((1..=self.n).map(|j| format!("phi_{i}_{j}")));
        }
        if self.weighted {
            for i in 1..=self.p {
                h.extend((1..=self.p).map(|j| format!("gamma_{i}_{j}")));
            }
        }
        h
    }

    fn from_header(cols: &[String]) -> Result<Self, SchemaError> {
        if cols.first().map(String::as_str) != Some("k") {
            return Err(SchemaError::Header("first column must be `k`".into()));
        }
        let p = cols[1..].iter().take_while(|c| c.starts_with("y_")).count();
        if p == 0 {
            return Err(SchemaError::Header("no `y_` columns".into()));
        }
        let n_phi = cols[1 + p..].iter().take_while(|c| c.starts_with("phi_")).count();
        if n_phi == 0 || n_phi % p != 0 {
            return Err(SchemaError::Header(format!(
                "{n_phi} `phi_` columns is not a multiple of p = {p}"
            )));
        }
        let rest = cols.len() - 1 - p - n_phi;
        let layout = Self {
            n: n_phi / p,
            p,
            weighted: rest > 0,
        };
        if rest != 0 && rest != p * p {
            return Err(SchemaError::Header(format!(
                "expected 0 or {} `gamma_` columns, found {rest}",
                p * p
            )));
        }
        let expected = layout.header();
        if let Some((got, want)) = cols.iter().zip(&expected).find(|(g, w)| g != w) {
            return Err(SchemaError::Header(format!("found column `{got}` where `{want}` was expected")));
        }
        Ok(layout)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_trace(path: &Path) -> Result<(Layout, Vec<Sample>), SchemaError> {
    read_trace_from(std::fs::File::open(path)?)
}

pub fn read_trace_from<R: Read>(reader: R) -> Result<(Layout, Vec<Sample>), SchemaError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| SchemaError::Header(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let layout = Layout::from_header(&header)?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // Data rows are numbered from 1; the header is row 0.
        let row = i + 1;
        let rec = rec.map_err(|e| SchemaError::Row {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(SchemaError::Row {
                row,
                message: format!("{} fields, header has {}", rec.len(), header.len()),
            });
        }
        let k: usize = rec[0].trim().parse().map_err(|_| SchemaError::Cell {
            row,
            column: "k".into(),
            message: format!("`{}` is not a step index", &rec[0]),
        })?;
        if k != samples.len() {
            return Err(SchemaError::Cell {
                row,
                column: "k".into(),
                message: format!("expected step {}, found {k}", samples.len()),
            });
        }
        let mut vals = Vec::with_capacity(rec.len() - 1);
        for (j, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| SchemaError::Cell {
                row,
                column: header[j].clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(SchemaError::Cell {
                    row,
                    column: header[j].clone(),
                    message: format!("`{cell}` is not finite"),
                });
            }
            vals.push(v);
        }
        let (p, n) = (layout.p, layout.n);
        let y = Vector::from_column_slice(&vals[..p]);
        let phi = RectMatrix::from_row_slice(p, n, &vals[p..p + p * n]).map_err(|e| SchemaError::Row {
            row,
            message: e.to_string(),
        })?;
        let gamma = if layout.weighted {
            let g = DMatrix::from_row_slice(p, p, &vals[p + p * n..]);
            SpdMatrix::from_matrix(g).map_err(|e| SchemaError::Cell {
                row,
                column: "gamma".into(),
                message: e.to_string(),
            })?
        } else {
            SpdMatrix::identity(p)
        };
        let sample = Sample::new(y, phi, gamma).map_err(|e| SchemaError::Row {
            row,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(SchemaError::Empty);
    }
    Ok((layout, samples))
}

pub fn write_trace(path: &Path, samples: &[Sample], weighted: bool) -> Result<(), SchemaError> {
    let file = std::fs::File::create(path)?;
    write_trace_to(file, samples, weighted)
}

pub fn write_trace_to<W: Write>(writer: W, samples: &[Sample], weighted: bool) -> Result<(), SchemaError> {
    let first = samples.first().ok_or(SchemaError::Empty)?;
    let layout = Layout {
        n: first.n(),
        p: first.p(),
        weighted,
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(layout.header()).map_err(csv_io)?;
    for (k, s) in samples.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(s.y.iter().map(|v| fmt_f64(*v)));
        let phi = s.phi.as_matrix();
        for i in 0..layout.p {
            rec.extend((0..layout.n).map(|j| fmt_f64(phi[(i, j)])));
        }
        if weighted {
            let g = s.gamma.as_matrix();
            for i in 0..layout.p {
                rec.extend((0..layout.p).map(|j| fmt_f64(g[(i, j)])));
            }
        }
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}
