use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::HarnessError;

/// One metrics.csv row, appended at every evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub wall_clock_s: f64,
    pub global_version: u64,
    pub mean_eval_score: f64,
    pub loss: f64,
    pub rejected_batches: u64,
    pub stale_discards: u64,
}

/// Appends rows to metrics.csv, enforcing wall-clock and version
/// monotonicity across its lifetime.
pub struct MetricsWriter {
    out: BufWriter<File>,
    last_clock: f64,
    last_version: u64,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(
            out,
            "wall_clock_s,global_version,mean_eval_score,loss,rejected_batches,stale_discards"
        )?;
        Ok(MetricsWriter {
            out,
            last_clock: f64::NEG_INFINITY,
            last_version: 0,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<(), HarnessError> {
        if row.wall_clock_s < self.last_clock {
            return Err(HarnessError::Config(format!(
                "metrics wall clock went backwards: {} after {}",
                row.wall_clock_s, self.last_clock
            )));
        }
        if row.global_version < self.last_version {
            return Err(HarnessError::Config(format!(
                "metrics version went backwards: {} after {}",
                row.global_version, self.last_version
            )));
        }
        self.last_clock = row.wall_clock_s;
        self.last_version = row.global_version;
        writeln!(
            self.out,
            "{:.6},{},{},{},{},{}",
            row.wall_clock_s,
            row.global_version,
            row.mean_eval_score,
            row.loss,
            row.rejected_batches,
            row.stale_discards
        )?;
        self.out.flush()?;
        Ok(())
    }
}
