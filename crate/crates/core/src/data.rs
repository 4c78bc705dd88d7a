//! Sampled input/output records and stacked signal windows.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A sampled input/output record, optionally carrying the true state and
/// noise traces of the generating simulation for oracle tests.
#[derive(Debug, Clone)]
pub struct IoDataset {
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    /// Sample time in seconds.
    pub ts: f64,
    pub x_true: Option<Vec<DVector<f64>>>,
    pub e_true: Option<Vec<DVector<f64>>>,
}

impl IoDataset {
    pub fn new(u: Vec<DVector<f64>>, y: Vec<DVector<f64>>, ts: f64) -> Result<Self> {
        let ds = Self { u, y, ts, x_true: None, e_true: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_traces(
        mut self,
        x_true: Option<Vec<DVector<f64>>>,
        e_true: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        self.x_true = x_true;
        self.e_true = e_true;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.u.is_empty() || self.u.len() != self.y.len() {
            return Err(Error::Dim(format!(
                "u has {} samples, y has {}; need equal and >= 1",
                self.u.len(),
                self.y.len()
            )));
        }
        for (name, trace) in [("x_true", &self.x_true), ("e_true", &self.e_true)] {
            if let Some(t) = trace {
                if t.len() != self.u.len() {
                    return Err(Error::Dim(format!("{name} has {} samples, expected {}", t.len(), self.u.len())));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn nu(&self) -> usize {
        self.u[0].len()
    }

    pub fn ny(&self) -> usize {
        self.y[0].len()
    }

    /// Writes the record as CSV: `k,u_*,y_*[,x_*][,e_*]`, one row per sample,
    /// with enough digits to round-trip 64-bit floats exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["k".to_string()];
        header.extend((0..self.nu()).map(|i| format!("u_{i}")));
        header.extend((0..self.ny()).map(|i| format!("y_{i}")));
        if let Some(x) = &self.x_true {
            header.extend((0..x[0].len()).map(|i| format!("x_{i}")));
        }
        if let Some(e) = &self.e_true {
            header.extend((0..e[0].len()).map(|i| format!("e_{i}")));
        }
        writeln!(f, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string()];
            row.extend(self.u[k].iter().map(|v| fmt_f64(*v)));
            row.extend(self.y[k].iter().map(|v| fmt_f64(*v)));
            if let Some(x) = &self.x_true {
                row.extend(x[k].iter().map(|v| fmt_f64(*v)));
            }
            if let Some(e) = &self.e_true {
                row.extend(e[k].iter().map(|v| fmt_f64(*v)));
            }
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads a record written by [`IoDataset::write_csv`].
    pub fn read_csv(path: &Path, ts: f64) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let count = |p: &str| cols.iter().filter(|c| c.starts_with(p)).count();
        let (nu, ny, nx, ne) = (count("u_"), count("y_"), count("x_"), count("e_"));
        if nu == 0 || ny == 0 {
            return Err(Error::Parse(format!("dataset header missing u_/y_ columns: {header}")));
        }
        let mut u = Vec::new();
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut e = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .trim()
                .split(',')
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {s:?}"))))
                .collect::<Result<_>>()?;
            if vals.len() != nu + ny + nx + ne {
                return Err(Error::Parse(format!("row has {} values, expected {}", vals.len(), nu + ny + nx + ne)));
            }
            u.push(DVector::from_row_slice(&vals[..nu]));
            y.push(DVector::from_row_slice(&vals[nu..nu + ny]));
            if nx > 0 {
                x.push(DVector::from_row_slice(&vals[nu + ny..nu + ny + nx]));
            }
            if ne > 0 {
                e.push(DVector::from_row_slice(&vals[nu + ny + nx..]));
            }
        }
        IoDataset::new(u, y, ts)?.with_traces(
            (nx > 0).then_some(x),
            (ne > 0).then_some(e),
        )
    }
}

/// Formats with 17 significant digits so that parsing recovers the exact bits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A window of stacked samples in descending time: block 0 holds the most
/// recent sample, block `n` the oldest.
#[derive(Debug, Clone)]
pub struct StackedWindow {
    pub y_stack: DVector<f64>,
    pub u_stack: DVector<f64>,
    pub n: usize,
}

/// Stacks the `n+1` samples ending at index `k` (inclusive), newest first:
/// block `j` of each stack holds the sample at `k - j`.
pub fn make_window(data: &IoDataset, k: usize, n: usize) -> Result<StackedWindow> {
    if k >= data.len() {
        return Err(Error::IndexOutOfRange(format!(
            "window end k={k} outside data of length {}",
            data.len()
        )));
    }
    if k < n {
        return Err(Error::IndexOutOfRange(format!(
            "window of length n+1={} underflows data start at k={k}",
            n + 1
        )));
    }
    let (ny, nu) = (data.ny(), data.nu());
    let mut y_stack = DVector::zeros((n + 1) * ny);
    let mut u_stack = DVector::zeros((n + 1) * nu);
    for j in 0..=n {
        y_stack.rows_mut(j * ny, ny).copy_from(&data.y[k - j]);
        u_stack.rows_mut(j * nu, nu).copy_from(&data.u[k - j]);
    }
    Ok(StackedWindow { y_stack, u_stack, n })
}
