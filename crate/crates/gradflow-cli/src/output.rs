use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

/// Numeric table written both as CSV and as a whitespace-separated gnuplot file.
#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Writes `<name>.csv` and `<name>.dat` into `dir`; returns the file names.
    pub fn save(&self, dir: &Path) -> Result<Vec<String>> {
        let csv_name = format!("{}.csv", self.name);
        let dat_name = format!("{}.dat", self.name);
        let mut wr = csv::Writer::from_path(dir.join(&csv_name)).with_context(|| format!("creating {csv_name}"))?;
        wr.write_record(&self.columns)?;
        for row in &self.rows {
            wr.write_record(row.iter().map(|x| fmt(*x)))?;
        }
        wr.flush()?;

        let mut dat = BufWriter::new(File::create(dir.join(&dat_name)).with_context(|| format!("creating {dat_name}"))?);
        writeln!(dat, "# {}", self.columns.join(" "))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|x| fmt(*x)).collect();
            writeln!(dat, "{}", line.join(" "))?;
        }
        dat.flush()?;
        Ok(vec![csv_name, dat_name])
    }
}

fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.12e}")
    } else {
        x.to_string()
    }
}
