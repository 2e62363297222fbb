//! Matrix and tuple ingest.
//!
//! Matrices are read from row-major decimal CSV (no header) or from JSON of
//! the form `{"n": N, "data": [[…], …]}`. Gram matrices are symmetrized on
//! ingest; an asymmetry above `1e-12` is logged.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{build_product_scale, symmetrize, ScaleTupleTrunc};
use crate::weightfn::{Weight, WeightSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub n: usize,
    pub data: Vec<Vec<f64>>,
}

fn from_rows(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse("matrix has no rows".into()));
    }
    let cols = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Parse(format!("row {} has {} entries, expected {cols}", i + 1, rows[i].len())));
    }
    Ok(DMatrix::from_row_iterator(n, cols, rows.into_iter().flatten()))
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("CSV row {}: {e}", i + 1)))?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("CSV row {}: bad number {s:?}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    from_rows(rows)
}

pub fn read_matrix_json(text: &str) -> Result<DMatrix<f64>> {
    let m: MatrixJson = serde_json::from_str(text).map_err(|e| Error::Parse(format!("matrix JSON: {e}")))?;
    if m.data.len() != m.n {
        return Err(Error::Parse(format!("matrix JSON declares n = {} but has {} rows", m.n, m.data.len())));
    }
    let g = from_rows(m.data)?;
    if g.ncols() != m.n {
        return Err(Error::Parse(format!("matrix JSON declares n = {} but rows have {} entries", m.n, g.ncols())));
    }
    Ok(g)
}

/// Reads a matrix file, JSON when the extension is `.json` or the content
/// starts with `{`, CSV otherwise.
pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        read_matrix_json(&text)
    } else {
        read_matrix_csv(text.as_bytes())
    }
}

/// Reads a Gram matrix and symmetrizes it.
pub fn read_gram_file(path: &Path) -> Result<DMatrix<f64>> {
    let g = read_matrix_file(path)?;
    if g.nrows() != g.ncols() {
        return Err(Error::Parse(format!("{}: Gram matrix is {}×{}", path.display(), g.nrows(), g.ncols())));
    }
    let (g, asym) = symmetrize(&g);
    if asym > 1e-12 {
        log::warn!("{}: asymmetry {asym:e} removed by symmetrization", path.display());
    }
    Ok(g)
}

pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
        w.write_record(&row).map_err(|e| Error::CapacityExceeded(format!("writing CSV: {e}")))?;
    }
    w.flush().map_err(|e| Error::CapacityExceeded(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn matrix_to_json(m: &DMatrix<f64>) -> MatrixJson {
    MatrixJson { n: m.nrows(), data: (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect() }
}

/// JSON description of a tuple. Exactly one of `weights` (diagonal levels
/// `w₁, w₂, …` over `w₀ ≡ 1`), `factors` (product scale) or `grams` is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<WeightSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<WeightSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grams: Option<Vec<MatrixJson>>,
}

impl TupleSpec {
    /// Builds the tuple; `size` (the truncation dimension) falls back to
    /// `default_size` for weight-based tuples.
    pub fn build(&self, default_size: Option<usize>) -> Result<ScaleTupleTrunc> {
        let size = || {
            self.size
                .or(default_size)
                .ok_or_else(|| Error::Parse("tuple needs a truncation size".into()))
        };
        let parse_all = |specs: &[WeightSpec]| specs.iter().map(Weight::from_spec).collect::<Result<Vec<_>>>();
        match (&self.weights, &self.factors, &self.grams) {
            (Some(ws), None, None) => ScaleTupleTrunc::from_weights(&parse_all(ws)?, size()?),
            (None, Some(fs), None) => {
                let fs = parse_all(fs)?;
                let n = self.length.unwrap_or(fs.len() + 1);
                build_product_scale(&fs, n, size()?)
            }
            (None, None, Some(gs)) => {
                let grams = gs
                    .iter()
                    .map(|g| read_matrix_json(&serde_json::to_string(g).expect("serializable")))
                    .collect::<Result<Vec<_>>>()?;
                ScaleTupleTrunc::from_grams(grams)
            }
            _ => Err(Error::Parse("tuple needs exactly one of weights, factors or grams".into())),
        }
    }
}

pub fn read_tuple_spec(text: &str) -> Result<TupleSpec> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("tuple JSON: {e}")))
}
