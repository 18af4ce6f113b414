//! CSV and JSON files.
//!
//! A series file is a single CSV column. Its optional header cell is either
//! a name or `T=<period>`, which declares the period.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use parid_core::charfn::PdfGrid;
use parid_core::identification::BicTable;
use parid_core::residuals::ResidualBlocks;
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.into(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Input {
        path: path.into(),
        message: e.to_string(),
    }
}

/// A series read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    pub period: Option<usize>,
}

fn parse_period(cell: &str) -> Option<usize> {
    let (key, value) = cell.split_once('=')?;
    if key.trim().eq_ignore_ascii_case("t") {
        value.trim().parse().ok()
    } else {
        None
    }
}

pub fn read_series(path: &Path) -> CliResult<Series> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let mut values = Vec::new();
    let mut period = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 1 {
            return Err(CliError::Input {
                path: path.into(),
                message: format!("line {}: expected one column, found {}", i + 1, rec.len()),
            });
        }
        let cell = &rec[0];
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ if i == 0 => period = parse_period(cell),
            _ => {
                return Err(CliError::Input {
                    path: path.into(),
                    message: format!("line {}: {cell:?} is not a finite number", i + 1),
                })
            }
        }
    }
    if values.is_empty() {
        return Err(CliError::Input {
            path: path.into(),
            message: "no values".into(),
        });
    }
    Ok(Series { values, period })
}

pub fn write_series(path: &Path, values: &[f64], period: usize) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "T={period}").map_err(io_err(path))?;
    for v in values {
        writeln!(w, "{v}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn writer(path: &Path) -> CliResult<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

/// Writes rows of already formatted cells.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// One row per block: `n, r1, ..., rT`.
pub fn write_blocks(path: &Path, blocks: &ResidualBlocks) -> CliResult<()> {
    let header: Vec<String> = std::iter::once("n".to_string())
        .chain((1..=blocks.period()).map(|k| format!("r{k}")))
        .collect();
    let rows: Vec<Vec<String>> = blocks
        .rows()
        .enumerate()
        .map(|(n, r)| {
            std::iter::once((n + 1).to_string())
                .chain(r.iter().map(f64::to_string))
                .collect()
        })
        .collect();
    write_table(path, &header, &rows)
}

/// Node coordinates and density: `x1, ..., xT, density`.
pub fn write_pdf_grid(path: &Path, grid: &PdfGrid) -> CliResult<()> {
    let mut header: Vec<String> = (1..=grid.dim()).map(|k| format!("x{k}")).collect();
    header.push("density".into());
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            let idx = grid.node_index(i);
            let mut row: Vec<String> = grid.node_coords(&idx).iter().map(f64::to_string).collect();
            row.push(grid.values()[i].to_string());
            row
        })
        .collect();
    write_table(path, &header, &rows)
}

/// Columns `p_star, T_star, bic, selected, density_path`.
pub fn write_bic_table(path: &Path, table: &BicTable) -> CliResult<()> {
    let header: Vec<String> = ["p_star", "T_star", "bic", "selected", "density_path"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = table
        .entries
        .iter()
        .map(|e| {
            vec![
                e.p_star.to_string(),
                e.t_star.to_string(),
                e.bic.to_string(),
                ((e.p_star, e.t_star) == table.selected).to_string(),
                e.density.map(|d| d.as_str()).unwrap_or("none").to_string(),
            ]
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io {
        path: path.into(),
        source: e.into(),
    })?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn ensure_dir(dir: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir.to_path_buf())
}
