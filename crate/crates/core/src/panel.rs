//! Two-way arrays of `(y, x)` cells indexed by a row cluster `g` and a
//! column cluster `h`, plus CSV ingestion and validation.
//!
//! Each `(g, h)` pair holds at most one observation. Cells may be missing;
//! downstream estimators sum over the cells that are present.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::numeric_rank;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("cannot parse value in row {row}, column `{column}`")]
    ParseFailure { row: usize, column: String },
    #[error("non-finite value in row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },
    #[error("duplicate cell (g={g}, h={h})")]
    DuplicateCell { g: String, h: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("regressor vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cell index ({g}, {h}) outside a {g_count}×{h_count} grid")]
    IndexOutOfRange { g: usize, h: usize, g_count: usize, h_count: usize },
    #[error("regressor dimension must be at least 1")]
    NoRegressors,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense position of a cell in the `G × H` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub g: usize,
    pub h: usize,
}

/// Column names used to read a long-format panel file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub g: String,
    pub h: String,
    pub y: String,
    pub x: Vec<String>,
}

impl PanelSchema {
    pub fn new(g: &str, h: &str, y: &str, x: &[&str]) -> Self {
        PanelSchema {
            g: g.to_string(),
            h: h.to_string(),
            y: y.to_string(),
            x: x.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Immutable two-way array. Cells are stored in insertion order; regressors
/// are kept as a row-major `n × d` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelArray {
    g_labels: Vec<String>,
    h_labels: Vec<String>,
    cells: Vec<CellIndex>,
    y: Vec<f64>,
    x: Vec<f64>,
    d: usize,
}

impl PanelArray {
    /// Builds a complete `G × H` grid from row-major (`g` outer, `h` inner)
    /// responses and regressors. Labels are the decimal indices.
    pub fn from_grid(
        g_count: usize,
        h_count: usize,
        d: usize,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self, PanelError> {
        let cells = (0..g_count)
            .flat_map(|g| (0..h_count).map(move |h| CellIndex { g, h }))
            .collect();
        Self::from_cells(g_count, h_count, d, cells, y, x)
    }

    /// Builds a panel from explicit dense cell indices.
    pub fn from_cells(
        g_count: usize,
        h_count: usize,
        d: usize,
        cells: Vec<CellIndex>,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self, PanelError> {
        let g_labels = (0..g_count).map(|g| g.to_string()).collect();
        let h_labels = (0..h_count).map(|h| h.to_string()).collect();
        Self::with_labels(g_labels, h_labels, d, cells, y, x)
    }

    fn with_labels(
        g_labels: Vec<String>,
        h_labels: Vec<String>,
        d: usize,
        cells: Vec<CellIndex>,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self, PanelError> {
        if d == 0 {
            return Err(PanelError::NoRegressors);
        }
        if cells.is_empty() {
            return Err(PanelError::EmptyFile);
        }
        if y.len() != cells.len() {
            return Err(PanelError::DimensionMismatch { expected: cells.len(), got: y.len() });
        }
        if x.len() != cells.len() * d {
            return Err(PanelError::DimensionMismatch { expected: cells.len() * d, got: x.len() });
        }
        let (g_count, h_count) = (g_labels.len(), h_labels.len());
        let mut seen = vec![false; g_count * h_count];
        for (i, c) in cells.iter().enumerate() {
            if c.g >= g_count || c.h >= h_count {
                return Err(PanelError::IndexOutOfRange { g: c.g, h: c.h, g_count, h_count });
            }
            let slot = &mut seen[c.g * h_count + c.h];
            if *slot {
                return Err(PanelError::DuplicateCell {
                    g: g_labels[c.g].clone(),
                    h: h_labels[c.h].clone(),
                });
            }
            *slot = true;
            if !y[i].is_finite() {
                return Err(PanelError::NonFinite { row: i, column: "y".into() });
            }
            if let Some(j) = x[i * d..(i + 1) * d].iter().position(|v| !v.is_finite()) {
                return Err(PanelError::NonFinite { row: i, column: format!("x{}", j + 1) });
            }
        }
        Ok(PanelArray { g_labels, h_labels, cells, y, x, d })
    }

    pub fn g_count(&self) -> usize {
        self.g_labels.len()
    }

    pub fn h_count(&self) -> usize {
        self.h_labels.len()
    }

    /// Number of present cells.
    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn cells(&self) -> &[CellIndex] {
        &self.cells
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Row-major `n × d` design matrix.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn g_labels(&self) -> &[String] {
        &self.g_labels
    }

    pub fn h_labels(&self) -> &[String] {
        &self.h_labels
    }

    /// Same regressors, new responses.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self, PanelError> {
        Self::with_labels(
            self.g_labels.clone(),
            self.h_labels.clone(),
            self.d,
            self.cells.clone(),
            y,
            self.x.clone(),
        )
    }

    /// Same responses, new row-major regressors of width `d`.
    pub fn with_design(&self, d: usize, x: Vec<f64>) -> Result<Self, PanelError> {
        Self::with_labels(
            self.g_labels.clone(),
            self.h_labels.clone(),
            d,
            self.cells.clone(),
            self.y.clone(),
            x,
        )
    }

    /// Renames dense row-cluster indices by `perm` (`g ↦ perm[g]`) and
    /// column-cluster indices by `h_perm`. Cell storage order is unchanged.
    pub fn relabeled(&self, g_perm: &[usize], h_perm: &[usize]) -> Result<Self, PanelError> {
        let mut g_labels = vec![String::new(); self.g_count()];
        for (g, &to) in g_perm.iter().enumerate() {
            g_labels[to] = self.g_labels[g].clone();
        }
        let mut h_labels = vec![String::new(); self.h_count()];
        for (h, &to) in h_perm.iter().enumerate() {
            h_labels[to] = self.h_labels[h].clone();
        }
        let cells = self
            .cells
            .iter()
            .map(|c| CellIndex { g: g_perm[c.g], h: h_perm[c.h] })
            .collect();
        Self::with_labels(g_labels, h_labels, self.d, cells, self.y.clone(), self.x.clone())
    }

    /// Set of `(g label, h label, y, x)` tuples, sorted by labels. Two panels
    /// with equal cell sets compare equal regardless of storage order.
    pub fn labeled_cells(&self) -> Vec<(String, String, f64, Vec<f64>)> {
        let mut out: Vec<_> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                (
                    self.g_labels[c.g].clone(),
                    self.h_labels[c.h].clone(),
                    self.y[i],
                    self.x_row(i).to_vec(),
                )
            })
            .collect();
        out.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        out
    }
}

/// Summary of structural problems in a panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub missing_cell_count: usize,
    pub duplicate_count: usize,
    pub rank_estimate: usize,
    pub messages: Vec<String>,
}

/// Diagnostic pass over a panel: missing cells, duplicates and the numeric
/// rank of the stacked design.
pub fn validate(panel: &PanelArray) -> ValidationReport {
    let grid = panel.g_count() * panel.h_count();
    let missing_cell_count = grid - panel.n();
    let rank_estimate = numeric_rank(panel.x(), panel.n(), panel.d());
    let mut messages = Vec::new();
    if missing_cell_count > 0 {
        messages.push(format!(
            "{missing_cell_count} of {grid} cells missing; sums use present cells only"
        ));
    }
    if rank_estimate < panel.d() {
        messages.push(format!("design has numeric rank {rank_estimate} < d = {}", panel.d()));
    }
    if panel.n() <= panel.d() {
        messages.push(format!("n = {} does not exceed d = {}", panel.n(), panel.d()));
    }
    if panel.g_count() < 2 || panel.h_count() < 2 {
        messages.push("two-way inference needs at least two clusters per dimension".into());
    }
    ValidationReport { missing_cell_count, duplicate_count: 0, rank_estimate, messages }
}

/// Reads a long-format panel (one row per cell) from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelArray, PanelError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Column names of a CSV file, in file order.
pub fn read_headers(path: impl AsRef<Path>) -> Result<Vec<String>, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    Ok(rdr.headers()?.iter().map(str::to_string).collect())
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelArray, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let g_col = col(&schema.g)?;
    let h_col = col(&schema.h)?;
    let y_col = col(&schema.y)?;
    let x_cols = schema.x.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;
    if x_cols.is_empty() {
        return Err(PanelError::NoRegressors);
    }
    let d = x_cols.len();

    let mut g_map: HashMap<String, usize> = HashMap::new();
    let mut h_map: HashMap<String, usize> = HashMap::new();
    let mut g_labels = Vec::new();
    let mut h_labels = Vec::new();
    let mut cells = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();

    let parse = |rec: &csv::StringRecord, idx: usize, name: &str, row: usize| {
        rec.get(idx)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| PanelError::ParseFailure { row, column: name.to_string() })
    };

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // 1-based data row number (the header is row 0)
        let row = i + 1;
        let intern = |map: &mut HashMap<String, usize>, labels: &mut Vec<String>, s: &str| {
            *map.entry(s.to_string()).or_insert_with(|| {
                labels.push(s.to_string());
                labels.len() - 1
            })
        };
        let g_raw = rec.get(g_col).ok_or(PanelError::ParseFailure { row, column: schema.g.clone() })?;
        let h_raw = rec.get(h_col).ok_or(PanelError::ParseFailure { row, column: schema.h.clone() })?;
        let g = intern(&mut g_map, &mut g_labels, g_raw);
        let h = intern(&mut h_map, &mut h_labels, h_raw);
        cells.push(CellIndex { g, h });
        y.push(parse(&rec, y_col, &schema.y, row)?);
        for (&c, name) in x_cols.iter().zip(&schema.x) {
            x.push(parse(&rec, c, name, row)?);
        }
    }
    if cells.is_empty() {
        return Err(PanelError::EmptyFile);
    }
    PanelArray::with_labels(g_labels, h_labels, d, cells, y, x).map_err(|e| match e {
        PanelError::NonFinite { row, column } => {
            let column = if column == "y" {
                schema.y.clone()
            } else {
                let j: usize = column[1..].parse().unwrap_or(1);
                schema.x[j - 1].clone()
            };
            PanelError::NonFinite { row: row + 1, column }
        }
        other => other,
    })
}

/// Writes a panel in the long format read by [`load_csv`]. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_csv<W: Write>(
    panel: &PanelArray,
    schema: &PanelSchema,
    writer: W,
) -> Result<(), PanelError> {
    if schema.x.len() != panel.d() {
        return Err(PanelError::DimensionMismatch { expected: panel.d(), got: schema.x.len() });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.g.as_str(), schema.h.as_str(), schema.y.as_str()];
    header.extend(schema.x.iter().map(String::as_str));
    w.write_record(&header)?;
    for (i, c) in panel.cells().iter().enumerate() {
        let mut rec = vec![
            panel.g_labels()[c.g].clone(),
            panel.h_labels()[c.h].clone(),
            format!("{:?}", panel.y()[i]),
        ];
        rec.extend(panel.x_row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
