//! Minimal sparse-matrix support.
//!
//! The matrices assembled here (projection rows, regularizer rows) are sparse
//! by construction but every dense operation we need downstream is small, so a
//! compressed-sparse-row container with triplet assembly, a few products and a
//! MatrixMarket reader/writer is all that is required.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Immutable sparse matrix in compressed-sparse-row form.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets.
    ///
    /// Duplicate entries are summed; explicit zeros are kept so the stored
    /// pattern is deterministic. Panics if an index is out of bounds, since
    /// that is always a programming error on the caller's side.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &entries {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over the stored entries of one row as `(col, value)` pairs.
    pub fn row_entries(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c, v))
    }

    /// Computes `self * x`.
    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols, "dimension mismatch in matvec");
        let mut y = DVector::zeros(self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for (c, v) in self.row_entries(r) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// Computes the dense product `self * rhs`.
    pub fn mul_dense(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(rhs.nrows(), self.ncols, "dimension mismatch in mul_dense");
        let mut out = DMatrix::zeros(self.nrows, rhs.ncols());
        for r in 0..self.nrows {
            for (c, v) in self.row_entries(r) {
                for k in 0..rhs.ncols() {
                    out[(r, k)] += v * rhs[(c, k)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row_entries(r) {
                out[(r, c)] += v;
            }
        }
        out
    }

    /// Converts a dense matrix, keeping entries with `|v| > drop_tol`.
    pub fn from_dense(m: &DMatrix<f64>, drop_tol: f64) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v.abs() > drop_tol {
                    triplets.push((r, c, v));
                }
            }
        }
        SparseMatrix::from_triplets(m.nrows(), m.ncols(), &triplets)
    }

    /// Expands a per-vertex operator to act on interleaved `xyz` coordinate
    /// vectors: entry `(r, c, w)` becomes `(3r + k, 3c + k, w)` for `k` in
    /// `0..3`, so each scalar row applies identically to the three
    /// coordinates of every vertex.
    pub fn expand_per_vertex(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(3 * self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row_entries(r) {
                for k in 0..3 {
                    triplets.push((3 * r + k, 3 * c + k, v));
                }
            }
        }
        SparseMatrix::from_triplets(3 * self.nrows, 3 * self.ncols, &triplets)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Writes the matrix in MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for (c, v) in self.row_entries(r) {
                writeln!(w, "{} {} {}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }

    /// Reads a matrix in MatrixMarket coordinate format (real, general).
    pub fn read_matrix_market<R: BufRead>(r: R) -> Result<SparseMatrix> {
        let mut lines = r.lines().enumerate();
        let (line_no, header) = match lines.next() {
            Some((idx, line)) => (idx, line?),
            None => return Err(parse_err(1, "empty MatrixMarket stream")),
        };
        let header = header.trim().to_ascii_lowercase();
        if !header.starts_with("%%matrixmarket matrix coordinate real") {
            return Err(parse_err(
                line_no + 1,
                "expected MatrixMarket 'matrix coordinate real' header",
            ));
        }

        let mut dims: Option<(usize, usize, usize)> = None;
        let mut triplets = Vec::new();
        for item in lines {
            let (idx, line) = (item.0, item.1?);
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match dims {
                None => {
                    if fields.len() != 3 {
                        return Err(parse_err(line_no, "size line must have three fields"));
                    }
                    let nrows = parse_field(fields[0], line_no)?;
                    let ncols = parse_field(fields[1], line_no)?;
                    let nnz = parse_field(fields[2], line_no)?;
                    dims = Some((nrows, ncols, nnz));
                    triplets.reserve(nnz);
                }
                Some((nrows, ncols, _)) => {
                    if fields.len() != 3 {
                        return Err(parse_err(line_no, "entry must have three fields"));
                    }
                    let r: usize = parse_field(fields[0], line_no)?;
                    let c: usize = parse_field(fields[1], line_no)?;
                    let v: f64 = fields[2]
                        .parse()
                        .map_err(|_| parse_err(line_no, "bad value field"))?;
                    if r == 0 || c == 0 || r > nrows || c > ncols {
                        return Err(parse_err(line_no, "index out of bounds"));
                    }
                    triplets.push((r - 1, c - 1, v));
                }
            }
        }
        let (nrows, ncols, nnz) = dims.ok_or_else(|| parse_err(0, "missing size line"))?;
        if triplets.len() != nnz {
            return Err(parse_err(
                0,
                format!("expected {} entries, found {}", nnz, triplets.len()),
            ));
        }
        Ok(SparseMatrix::from_triplets(nrows, ncols, &triplets))
    }
}

fn parse_field(s: &str, line: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(line, format!("bad integer field '{s}'")))
}

fn parse_err(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        line,
        detail: detail.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = SparseMatrix::from_triplets(
            2,
            3,
            &[(1, 2, 4.0), (0, 1, 1.0), (1, 2, -1.0), (0, 0, 2.0)],
        );
        assert_eq!(m.nnz(), 3);
        let d = m.to_dense();
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(0, 1)], 1.0);
        assert_eq!(d[(1, 2)], 3.0);
    }

    #[test]
    fn matvec_matches_dense() {
        let m = SparseMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, -3.0)]);
        let x = DVector::from_vec(vec![5.0, 7.0]);
        let y = m.matvec(&x);
        let yd = m.to_dense() * &x;
        assert_relative_eq!(y, yd, epsilon = 1e-14);
    }

    #[test]
    fn mul_dense_matches_dense() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.5), (1, 0, -2.0), (1, 2, 0.5)]);
        let rhs = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_relative_eq!(m.mul_dense(&rhs), m.to_dense() * &rhs, epsilon = 1e-14);
    }

    #[test]
    fn expand_per_vertex_applies_rows_per_coordinate() {
        // One scalar row [1, -2] over two vertices expands to three rows,
        // one per coordinate, acting on an interleaved xyz vector.
        let a = SparseMatrix::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, -2.0)]);
        let full = a.expand_per_vertex();
        assert_eq!((full.nrows(), full.ncols()), (3, 6));
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
        let y = full.matvec(&x);
        assert_relative_eq!(y[0], 1.0 - 20.0, epsilon = 1e-14);
        assert_relative_eq!(y[1], 2.0 - 40.0, epsilon = 1e-14);
        assert_relative_eq!(y[2], 3.0 - 60.0, epsilon = 1e-14);
    }

    #[test]
    fn matrix_market_roundtrip() {
        let m = SparseMatrix::from_triplets(
            3,
            4,
            &[(0, 0, 1.25), (2, 3, -7.5e-3), (1, 1, 42.0), (2, 0, 1e-17)],
        );
        let mut buf = Vec::new();
        m.write_matrix_market(&mut buf).unwrap();
        let back = SparseMatrix::read_matrix_market(buf.as_slice()).unwrap();
        assert_eq!(back.nrows(), 3);
        assert_eq!(back.ncols(), 4);
        assert_eq!(back.nnz(), m.nnz());
        assert_relative_eq!(back.to_dense(), m.to_dense(), epsilon = 0.0);
    }

    #[test]
    fn matrix_market_rejects_garbage() {
        assert!(SparseMatrix::read_matrix_market("not a header\n1 1 0\n".as_bytes()).is_err());
        assert!(SparseMatrix::read_matrix_market(
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n".as_bytes()
        )
        .is_err());
    }
}
