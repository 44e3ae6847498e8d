//! ESRI ASCII grid (`.asc`) reading and writing.
//!
//! Header keys are case-insensitive and may appear in any order:
//! `ncols`, `nrows`, `xllcorner`/`xllcenter`, `yllcorner`/`yllcenter`,
//! `cellsize` (or the `dx`/`dy` pair for rectangular tiles) and the optional
//! `nodata_value` (default -9999). Data follows as `nrows` lines of `ncols`
//! numbers, northernmost row first.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::scenario::GridGeometry;

pub const DEFAULT_NODATA: f64 = -9999.0;

/// A raw raster: geometry, NODATA marker and row-major values (top row first).
#[derive(Debug, Clone, PartialEq)]
pub struct AsciiGrid<T> {
    pub geometry: GridGeometry<T>,
    pub nodata: T,
    pub values: Vec<T>,
}

impl<T: Real> AsciiGrid<T> {
    pub fn is_nodata(&self, v: T) -> bool {
        v == self.nodata
    }
}

#[derive(Default)]
struct Header {
    ncols: Option<usize>,
    nrows: Option<usize>,
    xll: Option<(f64, bool)>,
    yll: Option<(f64, bool)>,
    cellsize: Option<f64>,
    dx: Option<f64>,
    dy: Option<f64>,
    nodata: Option<f64>,
}

fn column_of(line: &str, token: &str) -> usize {
    token.as_ptr() as usize - line.as_ptr() as usize + 1
}

fn parse_f64(line_no: usize, line: &str, token: &str) -> Result<f64> {
    let v: f64 = token.parse().map_err(|_| {
        Error::parse(line_no, column_of(line, token), format!("non-numeric token '{token}'"))
    })?;
    if !v.is_finite() {
        return Err(Error::parse(
            line_no,
            column_of(line, token),
            format!("non-finite value '{token}'"),
        ));
    }
    Ok(v)
}

fn looks_numeric(token: &str) -> bool {
    token
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.'))
}

pub fn read_ascii_grid<T: Real, R: BufRead>(reader: R) -> Result<AsciiGrid<T>> {
    let mut header = Header::default();
    let mut lines = reader.lines().enumerate();
    let mut first_data: Option<(usize, String)> = None;

    for (idx, line) in lines.by_ref() {
        let line = line?;
        let line_no = idx + 1;
        let mut tokens = line.split_whitespace();
        let Some(key) = tokens.next() else { continue };
        if looks_numeric(key) {
            first_data = Some((line_no, line));
            break;
        }
        let value = tokens.next().ok_or_else(|| {
            Error::parse(line_no, column_of(&line, key), format!("header key '{key}' has no value"))
        })?;
        if let Some(extra) = tokens.next() {
            return Err(Error::parse(
                line_no,
                column_of(&line, extra),
                "unexpected token after header value",
            ));
        }
        let count = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    Error::parse(line_no, column_of(&line, v), format!("'{v}' is not a positive integer"))
                })
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => header.ncols = Some(count(value)?),
            "nrows" => header.nrows = Some(count(value)?),
            "xllcorner" => header.xll = Some((parse_f64(line_no, &line, value)?, false)),
            "xllcenter" => header.xll = Some((parse_f64(line_no, &line, value)?, true)),
            "yllcorner" => header.yll = Some((parse_f64(line_no, &line, value)?, false)),
            "yllcenter" => header.yll = Some((parse_f64(line_no, &line, value)?, true)),
            "cellsize" => header.cellsize = Some(parse_f64(line_no, &line, value)?),
            "dx" => header.dx = Some(parse_f64(line_no, &line, value)?),
            "dy" => header.dy = Some(parse_f64(line_no, &line, value)?),
            "nodata_value" => header.nodata = Some(parse_f64(line_no, &line, value)?),
            other => {
                return Err(Error::parse(
                    line_no,
                    column_of(&line, key),
                    format!("unknown header key '{other}'"),
                ))
            }
        }
    }

    let header_line = first_data.as_ref().map_or(1, |(n, _)| *n);
    let missing = |what: &str| Error::parse(header_line, 1, format!("header is missing '{what}'"));
    let n_cols = header.ncols.ok_or_else(|| missing("ncols"))?;
    let n_rows = header.nrows.ok_or_else(|| missing("nrows"))?;
    let (dx, dy) = match (header.cellsize, header.dx, header.dy) {
        (Some(c), None, None) => (c, c),
        (None, Some(dx), Some(dy)) => (dx, dy),
        (None, _, _) => return Err(missing("cellsize")),
        _ => {
            return Err(Error::parse(header_line, 1, "header mixes cellsize with dx/dy"))
        }
    };
    let (x0, x_center) = header.xll.ok_or_else(|| missing("xllcorner"))?;
    let (y0, y_center) = header.yll.ok_or_else(|| missing("yllcorner"))?;
    let x0 = if x_center { x0 - dx / 2.0 } else { x0 };
    let y0 = if y_center { y0 - dy / 2.0 } else { y0 };
    let geometry = GridGeometry::new(n_cols, n_rows, T::lit(dx), T::lit(dy), (T::lit(x0), T::lit(y0)))
        .map_err(|e| Error::parse(header_line, 1, e.to_string()))?;
    let nodata = header.nodata.unwrap_or(DEFAULT_NODATA);

    let mut values = Vec::with_capacity(n_cols * n_rows);
    let mut rows_read = 0usize;
    let mut last_line = header_line;
    if let Some((line_no, line)) = first_data {
        rows_read += usize::from(parse_row(line_no, &line, n_cols, &mut values)?);
        last_line = line_no;
    }
    for (idx, line) in lines {
        let line = line?;
        let line_no = idx + 1;
        if rows_read == n_rows {
            if let Some(token) = line.split_whitespace().next() {
                return Err(Error::parse(
                    line_no,
                    column_of(&line, token),
                    format!("more than {n_rows} data rows"),
                ));
            }
            continue;
        }
        rows_read += usize::from(parse_row(line_no, &line, n_cols, &mut values)?);
        last_line = line_no;
    }
    if rows_read != n_rows {
        return Err(Error::parse(
            last_line + 1,
            1,
            format!("expected {n_rows} data rows, found {rows_read}"),
        ));
    }

    Ok(AsciiGrid {
        geometry,
        nodata: T::lit(nodata),
        values,
    })
}

/// Appends one data row; returns `false` for blank lines.
fn parse_row<T: Real>(line_no: usize, line: &str, n_cols: usize, values: &mut Vec<T>) -> Result<bool> {
    let mut n = 0usize;
    for token in line.split_whitespace() {
        n += 1;
        if n > n_cols {
            return Err(Error::parse(
                line_no,
                column_of(line, token),
                format!("row has more than {n_cols} values"),
            ));
        }
        values.push(T::lit(parse_f64(line_no, line, token)?));
    }
    if n == 0 {
        return Ok(false);
    }
    if n < n_cols {
        return Err(Error::parse(
            line_no,
            line.trim_end().len() + 1,
            format!("row has {n} values, expected {n_cols}"),
        ));
    }
    Ok(true)
}

pub fn write_ascii_grid<T: Real, W: Write>(grid: &AsciiGrid<T>, mut out: W) -> Result<()> {
    let g = &grid.geometry;
    writeln!(out, "ncols {}", g.n_cols)?;
    writeln!(out, "nrows {}", g.n_rows)?;
    writeln!(out, "xllcorner {}", g.origin.0)?;
    writeln!(out, "yllcorner {}", g.origin.1)?;
    if g.cell_width == g.cell_height {
        writeln!(out, "cellsize {}", g.cell_width)?;
    } else {
        writeln!(out, "dx {}", g.cell_width)?;
        writeln!(out, "dy {}", g.cell_height)?;
    }
    writeln!(out, "nodata_value {}", grid.nodata)?;
    let mut line = String::new();
    for row in grid.values.chunks(g.n_cols) {
        line.clear();
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                line.push(' ');
            }
            line.push_str(&v.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}
