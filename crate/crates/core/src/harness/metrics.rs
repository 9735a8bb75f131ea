use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// First line of every metrics file.
pub const SCHEMA_LINE: &str = "# ctxlearn-metrics v1";
pub const COLUMNS: [&str; 9] =
    ["run_id", "seed", "phase", "global_step", "trained_task", "eval_task", "test_loss", "performance", "task_model_ll"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub phase: String,
    /// Batches, or task-model trials for phases that do not train the network.
    pub global_step: u64,
    pub trained_task: String,
    pub eval_task: String,
    pub test_loss: Option<f64>,
    pub performance: Option<f64>,
    pub task_model_ll: Option<f64>,
}

/// Append-only table of evaluation records.
///
/// Within a run, `global_step` never decreases and a `(phase, global_step,
/// eval_task)` key appears at most once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricRow>,
    last: HashMap<String, (u64, Vec<(String, String)>)>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        let entry = self.last.entry(row.run_id.clone()).or_insert((row.global_step, Vec::new()));
        if row.global_step < entry.0 {
            return Err(Error::Shape(format!(
                "metrics for run {} went back from step {} to {}",
                row.run_id, entry.0, row.global_step
            )));
        }
        if row.global_step > entry.0 {
            *entry = (row.global_step, Vec::new());
        }
        let key = (row.phase.clone(), row.eval_task.clone());
        if entry.1.contains(&key) {
            return Err(Error::Shape(format!(
                "duplicate metrics row for run {} step {} ({}, {})",
                row.run_id, row.global_step, key.0, key.1
            )));
        }
        entry.1.push(key);
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: MetricsLog) -> Result<()> {
        for r in other.rows {
            self.push(r)?;
        }
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn runs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.run_id) {
                out.push(r.run_id.clone());
            }
        }
        out
    }

    /// Last recorded row for each evaluated task of a run phase, in first-seen task order.
    pub fn final_rows(&self, run_id: &str, phase: &str) -> Vec<&MetricRow> {
        let mut out: Vec<&MetricRow> = Vec::new();
        for r in self.rows.iter().filter(|r| r.run_id == run_id && r.phase == phase) {
            match out.iter_mut().find(|o| o.eval_task == r.eval_task) {
                Some(o) => *o = r,
                None => out.push(r),
            }
        }
        out
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Shape(e.to_string()))
    }

    fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "{SCHEMA_LINE}").map_err(|e| Error::io("<metrics>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.run_id.clone(),
                r.seed.to_string(),
                r.phase.clone(),
                r.global_step.to_string(),
                r.trained_task.clone(),
                r.eval_task.clone(),
                opt(r.test_loss),
                opt(r.performance),
                opt(r.task_model_ll),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<metrics>", e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let (first, body) = text.split_once('\n').unwrap_or((text, ""));
        if first.trim_end() != SCHEMA_LINE {
            return Err(Error::Checkpoint(format!("not a metrics file (expected {SCHEMA_LINE:?})")));
        }
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != COLUMNS {
            return Err(Error::Checkpoint(format!("unexpected metrics columns {header:?}")));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Checkpoint(format!("bad number {s:?}")))
            }
        };
        let int = |s: &str| -> Result<u64> { s.parse().map_err(|_| Error::Checkpoint(format!("bad integer {s:?}"))) };
        let mut log = Self::new();
        for rec in rd.records() {
            let rec = rec?;
            log.push(MetricRow {
                run_id: rec[0].to_string(),
                seed: int(&rec[1])?,
                phase: rec[2].to_string(),
                global_step: int(&rec[3])?,
                trained_task: rec[4].to_string(),
                eval_task: rec[5].to_string(),
                test_loss: num(&rec[6])?,
                performance: num(&rec[7])?,
                task_model_ll: num(&rec[8])?,
            })?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, task: &str) -> MetricRow {
        MetricRow {
            run_id: "r".into(),
            seed: 3,
            phase: "train".into(),
            global_step: step,
            trained_task: "DelayPro".into(),
            eval_task: task.into(),
            test_loss: Some(0.125),
            performance: Some(0.5),
            task_model_ll: None,
        }
    }

    #[test]
    fn schema_is_stable() {
        let mut log = MetricsLog::new();
        log.push(row(0, "DelayPro")).unwrap();
        let golden = "# ctxlearn-metrics v1\n\
            run_id,seed,phase,global_step,trained_task,eval_task,test_loss,performance,task_model_ll\n\
            r,3,train,0,DelayPro,DelayPro,0.125,0.5,\n";
        assert_eq!(log.to_csv_string().unwrap(), golden);
    }

    #[test]
    fn rows_must_not_go_back_in_time() {
        let mut log = MetricsLog::new();
        log.push(row(5, "DelayPro")).unwrap();
        log.push(row(5, "DelayAnti")).unwrap();
        assert!(log.push(row(5, "DelayPro")).is_err());
        assert!(log.push(row(4, "MemoryPro")).is_err());
        log.push(row(6, "DelayPro")).unwrap();
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn csv_roundtrip() {
        let mut log = MetricsLog::new();
        for s in 0..4 {
            let mut r = row(s, "DMPro");
            r.test_loss = Some(0.1 + s as f64 / 3.0);
            r.task_model_ll = Some(-12.5);
            log.push(r).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        log.write_csv(&p).unwrap();
        assert_eq!(MetricsLog::read_csv(&p).unwrap(), log);
        std::fs::write(&p, "run_id\n").unwrap();
        assert!(MetricsLog::read_csv(&p).is_err());
    }

    #[test]
    fn final_rows_pick_the_last_eval() {
        let mut log = MetricsLog::new();
        for s in 0..3 {
            let mut r = row(s, "DMPro");
            r.performance = Some(s as f64);
            log.push(r).unwrap();
        }
        let f = log.final_rows("r", "train");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].performance, Some(2.0));
    }
}
