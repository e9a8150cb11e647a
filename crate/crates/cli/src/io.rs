//! CSV datasets and atomic file output.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use spatial_sdr::{Coordinates, DMatrix, SpatialSample};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult, Stage};

/// Whether a dataset must, may or must not carry the response column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Required,
    Optional,
    Forbidden,
}

/// Rows of `s1, s2, [y,] x1 .. xp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub coords: Coordinates,
    pub y: Option<Vec<f64>>,
    pub x: DMatrix<f64>,
}

impl Dataset {
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn into_sample(self) -> CliResult<SpatialSample> {
        let y = self
            .y
            .ok_or_else(|| CliError::input("read", "dataset has no y column"))?;
        SpatialSample::new(self.coords, self.x, y).stage("read")
    }
}

fn open(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input("read", format!("{}: {e}", path.display())))
}

fn parse_cell(cell: &str, row: usize, column: &str, path: &Path) -> CliResult<f64> {
    let bad = |what: &str| {
        CliError::input(
            "read",
            format!("{}: row {row}, column {column}: {what}", path.display()),
        )
    };
    if cell.is_empty() {
        return Err(bad("missing value"));
    }
    let v: f64 = cell.parse().map_err(|_| bad(&format!("'{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(bad("value is not finite"));
    }
    Ok(v)
}

/// Reads the named columns of a CSV file; rows are numbered from 1 after
/// the header.
fn read_columns(path: &Path, rdr: &mut csv::Reader<std::fs::File>, columns: &[usize], names: &[String]) -> CliResult<Vec<Vec<f64>>> {
    let width = rdr
        .headers()
        .map_err(|e| CliError::input("read", format!("{}: {e}", path.display())))?
        .len();
    let mut rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| CliError::input("read", format!("{}: row {row}: {e}", path.display())))?;
        if record.len() != width {
            return Err(CliError::input(
                "read",
                format!(
                    "{}: row {row} has {} fields, expected {width}",
                    path.display(),
                    record.len()
                ),
            ));
        }
        let values = columns
            .iter()
            .zip(names)
            .map(|(&c, name)| parse_cell(&record[c], row, name, path))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(CliError::input("read", format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn coordinates(rows: &[Vec<f64>]) -> CliResult<Coordinates> {
    Coordinates::new(rows.iter().map(|r| [r[0], r[1]]).collect()).stage("read")
}

/// Reads a dataset, checking the header is exactly `s1, s2, [y,] x1 .. xp`.
pub fn read_dataset(path: &Path, response: Response) -> CliResult<Dataset> {
    let mut rdr = open(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::input("read", format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let has_y = header.get(2).is_some_and(|h| h == "y");
    match (response, has_y) {
        (Response::Required, false) => {
            return Err(CliError::input("read", format!("{}: third column must be y", path.display())))
        }
        (Response::Forbidden, true) => {
            return Err(CliError::input("read", format!("{}: unexpected y column", path.display())))
        }
        _ => {}
    }
    let first_x = if has_y { 3 } else { 2 };
    let p = header.len().saturating_sub(first_x);
    let expected: Vec<String> = ["s1", "s2"]
        .iter()
        .map(|s| s.to_string())
        .chain(has_y.then(|| "y".to_string()))
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect();
    if p == 0 || header != expected {
        return Err(CliError::input(
            "read",
            format!(
                "{}: header must be s1,s2,{}x1..xp, got {}",
                path.display(),
                if has_y { "y," } else { "" },
                header.join(",")
            ),
        ));
    }
    let columns: Vec<usize> = (0..header.len()).collect();
    let rows = read_columns(path, &mut rdr, &columns, &header)?;
    let coords = coordinates(&rows)?;
    let y = has_y.then(|| rows.iter().map(|r| r[2]).collect());
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][first_x + j]);
    Ok(Dataset { coords, y, x })
}

/// Reads the listed columns by name, ignoring any others.
pub fn read_named(path: &Path, names: &[&str]) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = open(path)?;
    let header: HashMap<String, usize> = rdr
        .headers()
        .map_err(|e| CliError::input("read", format!("{}: {e}", path.display())))?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_owned(), i))
        .collect();
    let columns = names
        .iter()
        .map(|n| {
            header
                .get(*n)
                .copied()
                .ok_or_else(|| CliError::input("read", format!("{}: missing column {n}", path.display())))
        })
        .collect::<CliResult<Vec<usize>>>()?;
    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    read_columns(path, &mut rdr, &columns, &names)
}

/// CSV text of a sample in dataset layout.
pub fn dataset_csv(sample: &SpatialSample, with_y: bool) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["s1".to_string(), "s2".to_string()];
    if with_y {
        header.push("y".into());
    }
    header.extend((1..=sample.p()).map(|j| format!("x{j}")));
    let fail = |e: csv::Error| CliError::input("write", e.to_string());
    w.write_record(&header).map_err(fail)?;
    for i in 0..sample.n() {
        let [s1, s2] = sample.coords().get(i);
        let mut row = vec![s1.to_string(), s2.to_string()];
        if with_y {
            row.push(sample.y()[i].to_string());
        }
        row.extend(sample.x().row(i).iter().map(f64::to_string));
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::input("write", e.to_string()))
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let fail = |e: std::io::Error| CliError::input("write", format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}
