//! Plain CSV grids.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grid with `cols` values per line; values printed round-trip exact.
pub fn write_grid_csv(path: &Path, values: &[f64], cols: usize) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 24);
    for row in values.chunks(cols) {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{v:e}").expect("write to string");
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        FieldGrid { rows, cols, values }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Read a rectangular numeric CSV grid. Empty cells and `nan` read as NaN.
pub fn read_grid_csv(path: &Path) -> Result<FieldGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grid_csv(&text).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_grid_csv(text: &str) -> std::result::Result<FieldGrid, String> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split(',') {
            let tok = tok.trim();
            let v = if tok.is_empty() {
                f64::NAN
            } else {
                tok.parse::<f64>().map_err(|e| format!("line {}: {tok:?}: {e}", ln + 1))?
            };
            values.push(v);
        }
        let n = values.len() - before;
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => return Err(format!("line {}: expected {c} columns, found {n}", ln + 1)),
            _ => {}
        }
        rows += 1;
    }
    Ok(FieldGrid {
        rows,
        cols: cols.unwrap_or(0),
        values,
    })
}
