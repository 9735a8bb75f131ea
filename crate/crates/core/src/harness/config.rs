use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::contextrnn::RnnConfig;
use crate::taskgen::{GenConfig, TaskSuite};
use crate::taskmodel::TaskModelConfig;
use crate::{Error, Result};

pub const DEFAULT_ORDERS: [[&str; 6]; 4] = [
    ["DelayPro", "DelayAnti", "MemoryPro", "MemoryAnti", "DMPro", "DMAnti"],
    ["DMAnti", "DMPro", "MemoryAnti", "MemoryPro", "DelayAnti", "DelayPro"],
    ["MemoryAnti", "DelayAnti", "DMAnti", "DelayPro", "DMPro", "MemoryPro"],
    ["MemoryPro", "MemoryAnti", "DMPro", "DMAnti", "DelayPro", "DelayAnti"],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompgenConfig {
    /// Tasks the network is pretrained on, in order.
    pub pretrain: Vec<String>,
    pub target: String,
    /// Task-model trials on the target task with the network frozen.
    pub max_trials: usize,
    /// Evaluate every this many target trials.
    pub eval_every: usize,
    /// Target-task trials given to the unfrozen baselines.
    pub baseline_trials: usize,
    pub baseline_batch_size: usize,
}

impl Default for CompgenConfig {
    fn default() -> Self {
        Self {
            pretrain: vec!["MPrimePro".into(), "MPrimeAnti".into(), "MemoryPro".into()],
            target: "MemoryAnti".into(),
            max_trials: 128,
            eval_every: 4,
            baseline_trials: 512,
            baseline_batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Ordered `(A, B)` pairs.
    pub pairs: Vec<[String; 2]>,
    /// Batches spent on `A` in the backward-transfer runs.
    pub short_budget: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        let p = |a: &str, b: &str| [a.to_string(), b.to_string()];
        Self {
            pairs: vec![p("DelayPro", "DelayAnti"), p("MemoryPro", "MemoryAnti"), p("DMPro", "DelayPro")],
            short_budget: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    /// Task orders for continual runs; every order is run with every seed.
    pub orders: Vec<Vec<String>>,
    pub seeds: Vec<u64>,
    pub taskmodel_trials_per_task: usize,
    pub batches_per_task: usize,
    pub batch_size: usize,
    /// Evaluate every this many batches.
    pub eval_every: usize,
    pub n_eval: usize,
    /// Base learning rate `η_z` of every context.
    pub context_lr: f64,
    /// Gating entries below this are dropped before the network sees them.
    pub gating_floor: f64,
    /// Keep the recurrent noise on during evaluation.
    pub eval_noise: bool,
    pub gen: GenConfig,
    pub taskmodel: TaskModelConfig,
    pub rnn: RnnConfig,
    pub baseline: BaselineConfig,
    pub compgen: CompgenConfig,
    pub transfer: TransferConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset("desk").expect("desk preset")
    }
}

impl ExperimentConfig {
    pub const PRESETS: [&'static str; 3] = ["desk", "paper", "smoke"];

    pub fn preset(name: &str) -> Result<Self> {
        let orders = DEFAULT_ORDERS.iter().map(|o| o.iter().map(|s| s.to_string()).collect()).collect();
        let base = Self {
            preset: name.to_string(),
            orders,
            seeds: vec![0, 1],
            taskmodel_trials_per_task: 500,
            batches_per_task: 300,
            batch_size: 64,
            eval_every: 25,
            n_eval: 200,
            context_lr: 0.001,
            gating_floor: 1e-4,
            eval_noise: true,
            gen: GenConfig::default(),
            taskmodel: TaskModelConfig::default(),
            rnn: RnnConfig { n_hidden: 128, ..RnnConfig::default() },
            baseline: BaselineConfig::default(),
            compgen: CompgenConfig::default(),
            transfer: TransferConfig::default(),
        };
        match name {
            "desk" => Ok(base),
            "paper" => Ok(Self {
                seeds: vec![0, 1, 2, 3, 4],
                batches_per_task: 1000,
                batch_size: 256,
                eval_every: 50,
                rnn: RnnConfig::default(),
                transfer: TransferConfig { short_budget: 300, ..TransferConfig::default() },
                ..base
            }),
            "smoke" => Ok(Self {
                orders: vec![base.orders[0].clone()],
                seeds: vec![0],
                taskmodel_trials_per_task: 60,
                batches_per_task: 6,
                batch_size: 8,
                eval_every: 3,
                n_eval: 16,
                rnn: RnnConfig { n_hidden: 16, ..RnnConfig::default() },
                baseline: BaselineConfig { stat_trials: 16, ..BaselineConfig::default() },
                compgen: CompgenConfig { max_trials: 8, eval_every: 4, baseline_trials: 16, ..CompgenConfig::default() },
                transfer: TransferConfig { short_budget: 3, ..TransferConfig::default() },
                ..base
            }),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected one of desk, paper, smoke)"))),
        }
    }

    /// Preset values overlaid with a TOML document. Only the keys present in
    /// the document change; unknown keys are rejected.
    pub fn from_toml_over(preset: &str, doc: &str) -> Result<Self> {
        let over: toml::Table = doc.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        let preset = over.get("preset").and_then(|v| v.as_str()).unwrap_or(preset).to_string();
        let base = toml::Table::try_from(Self::preset(&preset)?).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, over);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(preset: &str, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let doc = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml_over(preset, &doc)
            }
            None => {
                let cfg = Self::preset(preset)?;
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.orders.is_empty() || self.orders.iter().any(Vec::is_empty) {
            return bad("every task order must be nonempty".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let counts = [
            ("taskmodel_trials_per_task", self.taskmodel_trials_per_task),
            ("batches_per_task", self.batches_per_task),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("n_eval", self.n_eval),
            ("compgen.max_trials", self.compgen.max_trials),
            ("compgen.eval_every", self.compgen.eval_every),
            ("compgen.baseline_trials", self.compgen.baseline_trials),
            ("compgen.baseline_batch_size", self.compgen.baseline_batch_size),
            ("transfer.short_budget", self.transfer.short_budget),
        ];
        for (k, v) in counts {
            if v == 0 {
                return bad(format!("{k} must be positive"));
            }
        }
        if !(self.context_lr > 0.0) {
            return bad("context_lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gating_floor) {
            return bad("gating_floor must lie in [0, 1)".into());
        }
        self.gen.validate()?;
        self.taskmodel.validate()?;
        self.rnn.validate()?;
        self.baseline.validate()?;
        if self.taskmodel.n_x != self.gen.n_x {
            return bad("taskmodel.n_x must equal gen.n_x".into());
        }
        let suite = self.suite();
        for name in self.orders.iter().flatten().chain(&self.compgen.pretrain).chain([&self.compgen.target]) {
            suite.task_by_name(name)?;
        }
        for [a, b] in &self.transfer.pairs {
            suite.task_by_name(a)?;
            suite.task_by_name(b)?;
        }
        if suite.tasks.len() > self.taskmodel.c_slots {
            return bad("taskmodel.c_slots is smaller than the number of tasks".into());
        }
        Ok(())
    }

    /// The six base tasks plus the two M′ tasks.
    pub fn suite(&self) -> TaskSuite {
        crate::taskgen::build_default_suite(&self.gen).with_mprime()
    }

    pub fn resolve_order(&self, suite: &TaskSuite, order: &[String]) -> Result<Vec<usize>> {
        order.iter().map(|n| suite.task_by_name(n).map(|t| t.id)).collect()
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in ExperimentConfig::PRESETS {
            ExperimentConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(ExperimentConfig::preset("huge").is_err());
    }

    #[test]
    fn toml_overlay_changes_only_given_keys() {
        let cfg = ExperimentConfig::from_toml_over("desk", "batch_size = 32\n[rnn]\nrank = 2\n").unwrap();
        let desk = ExperimentConfig::preset("desk").unwrap();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.rnn.rank, 2);
        assert_eq!(cfg.rnn.n_hidden, desk.rnn.n_hidden);
        assert_eq!(cfg.batches_per_task, desk.batches_per_task);
    }

    #[test]
    fn resolved_config_roundtrips() {
        let cfg = ExperimentConfig::preset("paper").unwrap();
        let back = ExperimentConfig::from_toml_over("desk", &cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(ExperimentConfig::from_toml_over("desk", "bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_over("desk", "batch_size = 0").is_err());
        assert!(ExperimentConfig::from_toml_over("desk", "orders = [[\"Nope\"]]").is_err());
        assert!(ExperimentConfig::from_toml_over("desk", "orders = []").is_err());
    }
}
