//! Versioned suite files and per-trial debug dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TaskSuite, Trial};
use crate::{Error, Result};

const SUITE_FORMAT: &str = "ctxlearn-suite";
const SUITE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SuiteFile {
    format: String,
    version: u32,
    suite: TaskSuite,
}

pub fn write_suite(path: &Path, suite: &TaskSuite) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let file = SuiteFile { format: SUITE_FORMAT.into(), version: SUITE_VERSION, suite: suite.clone() };
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_suite(path: &Path) -> Result<TaskSuite> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let file: SuiteFile = serde_json::from_reader(BufReader::new(f))?;
    if file.format != SUITE_FORMAT || file.version != SUITE_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: expected {SUITE_FORMAT} v{SUITE_VERSION}, found {} v{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    Ok(file.suite)
}

/// One CSV row per time step: `t, c, x, z, s1..s5, y1..y3` (`x` and `z` are zero-based).
pub fn write_trial_dump(path: &Path, trial: &Trial) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "c", "x", "z", "s1", "s2", "s3", "s4", "s5", "y1", "y2", "y3"])?;
    for t in 0..trial.len() {
        let mut row = vec![t.to_string(), trial.task.to_string(), trial.x_true.to_string(), trial.z_true[t].to_string()];
        row.extend(trial.q(t).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
