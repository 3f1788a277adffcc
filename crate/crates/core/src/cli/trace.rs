use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Name of the long-format file written by [`emit_plot_data`]; never read
/// back as a trace.
pub const PLOT_FILE: &str = "plot_data.csv";

/// A numeric table whose first column is the abscissa of every other column.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::InvalidParameter(format!("{}: {e}", path.display()))
}

impl Trace {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width of trace {}", self.name);
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// CSV text; floats use the shortest representation that parses back to
    /// the same value.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let path = Path::new(&self.name);
        w.write_record(&self.columns).map_err(|e| csv_error(path, e))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(|e| csv_error(path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        fs::write(&path, self.to_csv()?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidParameter(format!("bad trace path {}", path.display())))?
            .to_string();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let columns: Vec<String> = r
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let row = rec
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| {
                        Error::InvalidParameter(format!("{}: non-numeric entry {v:?}", path.display()))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self { name, columns, rows })
    }
}

/// Traces of a run directory, sorted by name.
pub fn read_traces(dir: &Path) -> Result<Vec<Trace>> {
    if !dir.is_dir() {
        return Err(Error::InvalidParameter(format!("{} is not a directory", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| {
        p.extension().is_some_and(|e| e == "csv") && p.file_name().is_some_and(|n| n != PLOT_FILE)
    });
    paths.sort();
    paths.iter().map(|p| Trace::read(p)).collect()
}

/// Long-format `(series, x, y)` table of every trace in `dir`, one series per
/// non-abscissa column, named `trace.column`. Nothing is written unless the
/// whole table could be built.
pub fn emit_plot_data(dir: &Path) -> Result<PathBuf> {
    let traces = read_traces(dir)?;
    if traces.iter().all(|t| t.rows.is_empty() || t.columns.len() < 2) {
        return Err(Error::InvalidParameter(format!("no traces in {}", dir.display())));
    }
    let path = dir.join(PLOT_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "x", "y"]).map_err(|e| csv_error(&path, e))?;
    for t in &traces {
        for (j, col) in t.columns.iter().enumerate().skip(1) {
            let series = format!("{}.{col}", t.name);
            for row in &t.rows {
                w.write_record([series.clone(), row[0].to_string(), row[j].to_string()])
                    .map_err(|e| csv_error(&path, e))?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    fs::write(&path, bytes)?;
    Ok(path)
}

/// Rows of a long-format plot file.
pub fn read_plot_data(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidParameter(format!("{}: malformed row", path.display())))
        };
        out.push((rec.get(0).unwrap_or_default().to_string(), num(1)?, num(2)?));
    }
    Ok(out)
}
