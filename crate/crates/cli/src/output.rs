//! Output directory bookkeeping and the plain CSV tables every command emits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use stann::metrics::ScoreRow;

use crate::CliError;

/// Output directory that remembers which files a run wrote.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn create_file(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let f = File::create(self.path(name))?;
        if !self.files.iter().any(|x| x == name) {
            self.files.push(name.to_string());
        }
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

pub fn write_loss_curve<W: Write>(curve: &[f64], mut w: W) -> Result<(), CliError> {
    writeln!(w, "epoch,loss")?;
    for (e, l) in curve.iter().enumerate() {
        writeln!(w, "{e},{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores<W: Write>(rows: &[ScoreRow], mut w: W) -> Result<(), CliError> {
    writeln!(w, "origin,series,mase,theil_u,mda")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.origin, r.series, r.mase, r.theil_u, r.mda
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Series-averaged scores per origin.
pub fn write_origin_scores<W: Write>(rows: &[ScoreRow], mut w: W) -> Result<(), CliError> {
    writeln!(w, "origin,mase,theil_u,mda")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.origin, r.mase, r.theil_u, r.mda)?;
    }
    w.flush()?;
    Ok(())
}

/// `(origin, ipf[series][step])`; steps are numbered from 1.
pub fn write_ipf<W: Write>(per_origin: &[(usize, &[Vec<f64>])], mut w: W) -> Result<(), CliError> {
    writeln!(w, "origin,series,step,value")?;
    for (origin, series) in per_origin {
        for (i, steps) in series.iter().enumerate() {
            for (h, v) in steps.iter().enumerate() {
                writeln!(w, "{origin},{i},{},{v}", h + 1)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `(origin, tau × n row-major)`; steps are numbered from 1.
pub fn write_forecasts<W: Write>(
    per_origin: &[(usize, &[f64])],
    n: usize,
    mut w: W,
) -> Result<(), CliError> {
    writeln!(w, "origin,step,series,value")?;
    for (origin, values) in per_origin {
        for (k, v) in values.iter().enumerate() {
            writeln!(w, "{origin},{},{},{v}", k / n + 1, k % n)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Forecasts of one model keyed by origin, `tau × n` row-major each.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredForecasts {
    pub tau: usize,
    pub n: usize,
    pub origins: Vec<(usize, Vec<f64>)>,
}

/// Reads the table written by [`write_forecasts`]. Every origin must cover
/// the same complete `step × series` grid.
pub fn read_forecasts(path: &Path) -> Result<StoredForecasts, CliError> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["origin", "step", "series", "value"] {
        return Err(bad("expected header origin,step,series,value".into()));
    }
    let mut cells: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
        let int = |k: usize| {
            field(k)
                .parse::<usize>()
                .map_err(|_| bad(format!("row {}: bad integer `{}`", line + 2, field(k))))
        };
        let value = field(3)
            .parse::<f64>()
            .map_err(|_| bad(format!("row {}: bad value `{}`", line + 2, field(3))))?;
        cells.push((int(0)?, int(1)?, int(2)?, value));
    }
    if cells.is_empty() {
        return Err(bad("no forecasts".into()));
    }
    let tau = cells.iter().map(|c| c.1).max().unwrap_or(0);
    let n = cells.iter().map(|c| c.2).max().unwrap_or(0) + 1;
    if cells.iter().any(|c| c.1 == 0) {
        return Err(bad("steps are numbered from 1".into()));
    }
    let mut origins: Vec<(usize, Vec<Option<f64>>)> = Vec::new();
    for (o, step, series, v) in cells {
        let pos = match origins.iter().position(|x| x.0 == o) {
            Some(p) => p,
            None => {
                origins.push((o, vec![None; tau * n]));
                origins.len() - 1
            }
        };
        let slot = &mut origins[pos].1[(step - 1) * n + series];
        if slot.replace(v).is_some() {
            return Err(bad(format!(
                "duplicate cell origin {o} step {step} series {series}"
            )));
        }
    }
    origins.sort_by_key(|x| x.0);
    let origins = origins
        .into_iter()
        .map(|(o, cells)| {
            cells
                .into_iter()
                .collect::<Option<Vec<f64>>>()
                .map(|v| (o, v))
                .ok_or_else(|| bad(format!("origin {o} is missing cells")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StoredForecasts { tau, n, origins })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forecasts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let a = vec![1.0 / 3.0, 2.0, 3.5, -4.0];
        let b = vec![0.1, 0.2, 0.3, 0.4];
        let f = File::create(&p).unwrap();
        write_forecasts(&[(7, &a), (9, &b)], 2, f).unwrap();
        let back = read_forecasts(&p).unwrap();
        assert_eq!((back.tau, back.n), (2, 2));
        assert_eq!(back.origins, vec![(7, a), (9, b)]);
    }

    #[test]
    fn incomplete_grid_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "origin,step,series,value\n1,1,0,1\n1,2,0,1\n1,2,1,1\n").unwrap();
        assert!(matches!(read_forecasts(&p), Err(CliError::Data(_))));
    }
}
