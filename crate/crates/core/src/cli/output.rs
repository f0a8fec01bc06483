//! CSV and PGM emitters. Reals are written with 17 significant digits so they
//! parse back to the same `f64`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nncore::Tensor;

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV line of reals, `\n`-terminated.
pub fn real_row(prefix: &[String], values: &[f64]) -> String {
    let mut line = String::new();
    for (i, field) in prefix
        .iter()
        .cloned()
        .chain(values.iter().map(|&v| fmt_real(v)))
        .enumerate()
    {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&field);
    }
    line.push('\n');
    line
}

/// `header` then one row per tensor row, with the row index first.
pub fn matrix_csv(header: &str, m: &Tensor) -> String {
    let mut out = String::new();
    writeln!(out, "{header}").expect("string write");
    for (i, r) in m.iter_rows().enumerate() {
        out.push_str(&real_row(&[i.to_string()], r));
    }
    out
}

/// `index,<p>0,<p>1,...` for a `cols`-wide matrix.
pub fn indexed_header(prefixes: &[(&str, usize)]) -> String {
    let mut h = String::from("index");
    for (p, cols) in prefixes {
        for c in 0..*cols {
            write!(h, ",{p}{c}").expect("string write");
        }
    }
    h
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Appends `row` to the CSV at `path`, writing `header` first if the file is
/// new or empty.
pub fn append_csv(path: impl AsRef<Path>, header: &str, row: &str) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(header);
        text.push('\n');
    }
    text.push_str(row);
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Side length if `dim` is a perfect square.
pub fn square_side(dim: usize) -> Option<usize> {
    let s = (dim as f64).sqrt().round() as usize;
    (s * s == dim).then_some(s)
}

/// Tile columns for `n` tiles: about twice as wide as tall.
pub fn grid_columns(n: usize) -> usize {
    let c = (2.0 * n as f64).sqrt().ceil() as usize;
    c.clamp(1, n.max(1))
}

/// Binary PGM (P5, maxval 255) of square `side × side` tiles laid out
/// row-major in a grid `cols` tiles wide. Pixels are `round(255·v)` with `v`
/// clamped to `[0, 1]`; empty cells stay black.
pub fn pgm_grid(tiles: &[&[f64]], side: usize, cols: usize) -> Vec<u8> {
    let rows = tiles.len().div_ceil(cols).max(1);
    let (w, h) = (cols * side, rows * side);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + w * h, 0);
    for (t, tile) in tiles.iter().enumerate() {
        let (gr, gc) = (t / cols, t % cols);
        for y in 0..side {
            for x in 0..side {
                let v = tile[y * side + x];
                let px = (255.0 * v.clamp(0.0, 1.0)).round() as u8;
                out[header + (gr * side + y) * w + gc * side + x] = px;
            }
        }
    }
    out
}
