//! Row-list sparse matrix used for the design blocks.

use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMatrix {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, rows: Vec::new() }
    }

    /// Append a row; entries are kept sorted by column.
    pub fn push_row(&mut self, mut entries: Vec<(usize, f64)>) {
        debug_assert!(entries.iter().all(|&(c, _)| c < self.ncols));
        entries.sort_by_key(|&(c, _)| c);
        self.rows.push(entries);
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn row_dot(&self, r: usize, z: &[f64]) -> f64 {
        self.rows[r].iter().map(|&(c, v)| v * z[c]).sum()
    }

    pub fn mul_vec(&self, z: &[f64]) -> Vec<f64> {
        (0..self.nrows()).map(|r| self.row_dot(r, z)).collect()
    }

    /// `Aᵀ y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (row, &w) in self.rows.iter().zip(y) {
            for &(c, v) in row {
                out[c] += v * w;
            }
        }
        out
    }

    /// Copy with every row multiplied by the matching factor.
    pub fn scale_rows(&self, factors: &[f64]) -> Self {
        Self {
            ncols: self.ncols,
            rows: self
                .rows
                .iter()
                .zip(factors)
                .map(|(row, &s)| row.iter().map(|&(c, v)| (c, v * s)).collect())
                .collect(),
        }
    }

    /// Stack `other` below `self`.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.ncols);
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Self { ncols: self.ncols, rows }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut d = vec![0.0; self.ncols];
                for &(c, v) in row {
                    d[c] += v;
                }
                d
            })
            .collect()
    }

    /// One `label row col value` line per stored entry, structural zeros included.
    pub fn write_triplets<W: Write>(&self, label: &str, out: &mut W) -> io::Result<()> {
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                writeln!(out, "{label} {r} {c} {v:e}")?;
            }
        }
        Ok(())
    }
}
