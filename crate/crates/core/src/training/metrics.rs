use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,stage,lr,l_r,l_e,l_t,L_c,top1,top5";

/// One epoch's record. Terms that do not apply to the stage are `None` and
/// written as empty fields; `top1` / `top5` are error rates in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub l_r: Option<f64>,
    pub l_e: Option<f64>,
    pub l_t: Option<f64>,
    pub l_c: Option<f64>,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EpochMetrics {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage,
            self.lr,
            field(self.l_r),
            field(self.l_e),
            field(self.l_t),
            field(self.l_c),
            field(self.top1),
            field(self.top5)
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != 9 {
            return Err(Error::invalid(format!(
                "metrics line has {} fields, expected 9",
                cols.len()
            )));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::invalid(format!("bad metrics value `{s}`")))
            }
        };
        let bad = |s: &str| Error::invalid(format!("bad metrics value `{s}`"));
        Ok(Self {
            epoch: cols[0].parse().map_err(|_| bad(cols[0]))?,
            stage: cols[1].parse().map_err(|_| bad(cols[1]))?,
            lr: cols[2].parse().map_err(|_| bad(cols[2]))?,
            l_r: opt(cols[3])?,
            l_e: opt(cols[4])?,
            l_t: opt(cols[5])?,
            l_c: opt(cols[6])?,
            top1: opt(cols[7])?,
            top5: opt(cols[8])?,
        })
    }
}

/// Parses a metrics log, skipping header lines.
pub fn parse_metrics(text: &str) -> Result<Vec<EpochMetrics>> {
    text.lines()
        .filter(|l| !l.is_empty() && *l != METRICS_HEADER)
        .map(EpochMetrics::parse_line)
        .collect()
}

/// Append-only CSV log; the header is written when the file is new or empty.
#[derive(Clone, Debug)]
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let empty = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if empty {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{METRICS_HEADER}")?;
        }
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rec: &EpochMetrics) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{}", rec.csv_line())?;
        f.flush()?;
        Ok(())
    }
}
