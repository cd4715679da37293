//! Matrix Market coordinate-format import/export (real general/symmetric).

use super::SparseMatrix;
use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

pub fn write_matrix_market(path: &Path, a: &SparseMatrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(f, "{} {} {}", a.n_rows, a.n_cols, a.nnz())?;
    for r in 0..a.n_rows {
        let (cols, vals) = a.row(r);
        for (c, v) in cols.iter().zip(vals) {
            writeln!(f, "{} {} {:.17e}", r + 1, c + 1, v)?;
        }
    }
    Ok(())
}

pub fn read_matrix_market(path: &Path) -> Result<SparseMatrix> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let banner = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix market file".into()))??;
    let banner_lc = banner.to_lowercase();
    if !banner_lc.starts_with("%%matrixmarket matrix coordinate real") {
        return Err(Error::Parse(format!("unsupported matrix market banner: {banner}")));
    }
    let symmetric = banner_lc.contains("symmetric");
    if !symmetric && !banner_lc.contains("general") {
        return Err(Error::Parse(format!("unsupported symmetry qualifier: {banner}")));
    }

    let mut size_line = None;
    for line in lines.by_ref() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        size_line = Some(trimmed.to_string());
        break;
    }
    let size_line = size_line.ok_or_else(|| Error::Parse("missing size line".into()))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("size line: {e}"))))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::Parse("size line must have 3 fields".into()));
    }
    let (n_rows, n_cols, nnz) = (dims[0], dims[1], dims[2]);

    let mut triplets = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    let mut read = 0usize;
    for line in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let r: usize = it
            .next()
            .ok_or_else(|| Error::Parse("entry missing row".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("row index: {e}")))?;
        let c: usize = it
            .next()
            .ok_or_else(|| Error::Parse("entry missing col".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("col index: {e}")))?;
        let v: f64 = it
            .next()
            .ok_or_else(|| Error::Parse("entry missing value".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("value: {e}")))?;
        if r == 0 || c == 0 || r > n_rows || c > n_cols {
            return Err(Error::Parse(format!("entry ({r}, {c}) out of bounds")));
        }
        triplets.push((r - 1, c - 1, v));
        if symmetric && r != c {
            triplets.push((c - 1, r - 1, v));
        }
        read += 1;
    }
    if read != nnz {
        return Err(Error::Parse(format!("expected {nnz} entries, found {read}")));
    }
    SparseMatrix::from_triplets(n_rows, n_cols, &triplets)
}
