//! Artifact output: grayscale PGM images of nodal fields and small CSV
//! tables. PGM is the portable, dependency-free format the experiment runner
//! writes for every image artifact; richer encodings are the caller's job.
//!
//! Rendering maps a value range linearly onto the sample depth and flips the
//! vertical axis so that y = 1 (the top of the unit square) becomes the first
//! image row.

use crate::error::{Error, Result};
use crate::fem::NodalField;
use std::fs;
use std::io::{BufWriter, Read as _, Write as _};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

/// Writes a 2D field as binary PGM (P5), mapping [lo, hi] linearly to
/// [0, maxval] with clamping. A degenerate range renders mid-gray.
pub fn write_pgm_with_range(
    path: &Path,
    field: &NodalField,
    depth: PgmDepth,
    lo: f64,
    hi: f64,
) -> Result<()> {
    let grid = field.grid;
    if grid.dim != 2 {
        return Err(Error::InvalidArgument("PGM output needs a 2D field".into()));
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument("PGM range must be finite".into()));
    }
    let nps = grid.nodes_per_side;
    let maxval = depth.maxval();
    let span = hi - lo;
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{nps} {nps}\n{maxval}\n")?;
    for row in 0..nps {
        let iy = nps - 1 - row;
        for ix in 0..nps {
            let v = field.values[grid.node(ix, iy)];
            let t = if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
            let q = (t * maxval as f64).round() as u32;
            match depth {
                PgmDepth::Eight => out.write_all(&[q as u8])?,
                PgmDepth::Sixteen => out.write_all(&(q as u16).to_be_bytes())?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes a 2D field as binary PGM scaled to its own min/max.
pub fn write_pgm(path: &Path, field: &NodalField, depth: PgmDepth) -> Result<()> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &field.values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return Err(Error::NonFinite("PGM field".into()));
    }
    write_pgm_with_range(path, field, depth, lo, hi)
}

/// Parsed PGM: dimensions, maximum sample value and row-major samples
/// (top row first, as stored).
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub samples: Vec<u16>,
}

/// Reads a binary (P5) PGM file.
pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Parse("not a binary PGM (P5) file".into()));
    }
    let parse = |s: String| -> Result<usize> {
        s.parse().map_err(|_| Error::Parse(format!("bad PGM header field '{s}'")))
    };
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let maxval = parse(token()?)? as u32;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("unsupported PGM maxval {maxval}")));
    }
    pos += 1; // single whitespace byte after maxval
    let n = width * height;
    let wide = maxval > 255;
    let need = n * if wide { 2 } else { 1 };
    if bytes.len() < pos + need {
        return Err(Error::Parse("PGM data shorter than header implies".into()));
    }
    let samples = if wide {
        bytes[pos..pos + need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        bytes[pos..pos + need].iter().map(|&b| b as u16).collect()
    };
    Ok(PgmImage { width, height, maxval, samples })
}

/// Writes a CSV table with a header row; every row must match the header
/// width. Values print with Rust's shortest round-trip float formatting.
pub fn write_csv_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_csv_table_with_comments(path, &[], header, rows)
}

/// Like [`write_csv_table`] but with leading `# ...` provenance lines, which
/// [`read_csv_table`] skips.
pub fn write_csv_table_with_comments(
    path: &Path,
    comments: &[&str],
    header: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    let mut file = BufWriter::new(fs::File::create(path)?);
    for c in comments {
        writeln!(file, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Dimension(format!(
                "CSV row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back a CSV table written by `write_csv_table`, skipping `#` comment
/// lines.
pub fn read_csv_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("CSV header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("CSV row: {e}")))?;
        let row: Result<Vec<f64>> = rec
            .iter()
            .map(|f| f.parse().map_err(|_| Error::Parse(format!("bad CSV number '{f}'"))))
            .collect();
        rows.push(row?);
    }
    Ok((header, rows))
}
