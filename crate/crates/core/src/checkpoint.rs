//! Versioned JSON container for trained models.
//!
//! ```json
//! {"format": "ctxlearn-checkpoint", "version": 1, "kind": "...", "payload": {...}}
//! ```
//! Floats are written with round-trip precision, so reading a checkpoint back
//! reproduces the model bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::GeneralLearner;
use crate::contextrnn::{ContextBank, TrainState};
use crate::taskmodel::TaskModel;
use crate::{Error, Result};

pub const FORMAT: &str = "ctxlearn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Checkpoint {
    TaskModel(TaskModel),
    ContextBank { bank: ContextBank, train: TrainState },
    /// Task model and context bank trained together.
    Full { task_model: TaskModel, bank: ContextBank, train: TrainState },
    GeneralRnn(GeneralLearner),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::TaskModel(_) => "task_model",
            Checkpoint::ContextBank { .. } => "context_bank",
            Checkpoint::Full { .. } => "full",
            Checkpoint::GeneralRnn(_) => "general_rnn",
        }
    }

    /// One-paragraph human-readable description.
    pub fn summary(&self) -> String {
        let tm = |m: &TaskModel| {
            format!(
                "task model: {} trials, {} tasks seen, {} epoch slots used, sigma_hat {:.4}",
                m.n_trials,
                (0..m.tables.f_cx.len()).filter(|&c| m.tables.task_seen(c)).count(),
                m.tables.encountered_epochs().len(),
                m.params.sigma_hat
            )
        };
        let bank = |b: &ContextBank| {
            format!(
                "context bank: N={} r={} allocated {:?}, {} trainable parameters",
                b.cfg.n_hidden,
                b.cfg.rank,
                b.allocated(),
                b.n_trainable()
            )
        };
        match self {
            Checkpoint::TaskModel(m) => tm(m),
            Checkpoint::ContextBank { bank: b, .. } => bank(b),
            Checkpoint::Full { task_model, bank: b, .. } => format!("{}\n{}", tm(task_model), bank(b)),
            Checkpoint::GeneralRnn(l) => format!(
                "general rnn ({}): N={} tasks={} {} parameters, {} optimizer steps",
                l.rule.name(),
                l.net.cfg.n_hidden,
                l.net.n_tasks,
                l.net.n_params(),
                l.adam.steps
            ),
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    format: &'a str,
    version: u32,
    #[serde(flatten)]
    body: &'a Checkpoint,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &Envelope { format: FORMAT, version: VERSION, body: ck })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(f))?;
    let header: Header = serde_json::from_value(value.clone())
        .map_err(|e| Error::Checkpoint(format!("{}: missing header ({e})", path.display())))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: expected {FORMAT} v{VERSION}, found {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{BaselineConfig, Rule};
    use crate::contextrnn::RnnConfig;
    use crate::rng;
    use crate::taskgen::{build_default_suite, sample_trial_indexed, GenConfig};
    use crate::taskmodel::TaskModelConfig;

    fn trained_task_model() -> TaskModel {
        let cfg = GenConfig::default();
        let suite = build_default_suite(&cfg);
        let mut m = TaskModel::new(TaskModelConfig::default()).unwrap();
        for i in 0..20 {
            let tr = sample_trial_indexed(&suite, (i % 2) as usize, &cfg, 1, 1, i).unwrap();
            m.learn_trial(&tr).unwrap();
        }
        m
    }

    fn roundtrip(ck: &Checkpoint) -> Checkpoint {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        write_checkpoint(&p, ck).unwrap();
        read_checkpoint(&p).unwrap()
    }

    #[test]
    fn every_kind_roundtrips_exactly() {
        let rnn = RnnConfig { n_hidden: 16, ..RnnConfig::default() };
        let mut g = rng::substream(1, 4, 0);
        let mut bank = ContextBank::new(rnn.clone(), 4, 1e-3).unwrap();
        bank.allocate(0, &mut g).unwrap();
        bank.allocate(2, &mut g).unwrap();
        let train = TrainState::new(4, 1e-3);
        let learner = GeneralLearner::new(Rule::Owp, BaselineConfig::default(), rnn, 6, &mut g).unwrap();
        let tm = trained_task_model();
        let cks = [
            Checkpoint::TaskModel(tm.clone()),
            Checkpoint::ContextBank { bank: bank.clone(), train: train.clone() },
            Checkpoint::Full { task_model: tm, bank, train },
            Checkpoint::GeneralRnn(learner),
        ];
        for ck in &cks {
            let back = roundtrip(ck);
            assert_eq!(&back, ck, "{}", ck.kind());
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        std::fs::write(&p, r#"{"format":"ctxlearn-checkpoint","version":9,"kind":"task_model","payload":{}}"#).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Checkpoint(_))));
        std::fs::write(&p, r#"{"version":1}"#).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
