use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::GenConfig;
use crate::{Error, Result, INPUT_DIM, OBS_DIM, OUTPUT_DIM};

/// Stimulus strength pairs `(γ, γ′)` of the decision-making tasks, indexed by `x`.
pub const DM_STRENGTHS: [(f64, f64); 8] = [
    (0.5, 1.0),
    (1.0, 2.0),
    (0.5, 2.0),
    (0.2, 1.5),
    (1.0, 0.5),
    (2.0, 1.0),
    (2.0, 0.5),
    (1.5, 0.2),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpochLabel {
    F,
    S,
    #[serde(rename = "R_P")]
    RP,
    #[serde(rename = "R_A")]
    RA,
    M,
    #[serde(rename = "R_MP")]
    RMP,
    #[serde(rename = "R_MA")]
    RMA,
    #[serde(rename = "S_DM")]
    SDM,
    #[serde(rename = "R_DMP")]
    RDMP,
    #[serde(rename = "R_DMA")]
    RDMA,
}

impl EpochLabel {
    pub const ALL: [EpochLabel; 10] = [
        EpochLabel::F,
        EpochLabel::S,
        EpochLabel::RP,
        EpochLabel::RA,
        EpochLabel::M,
        EpochLabel::RMP,
        EpochLabel::RMA,
        EpochLabel::SDM,
        EpochLabel::RDMP,
        EpochLabel::RDMA,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EpochLabel::F => "F",
            EpochLabel::S => "S",
            EpochLabel::RP => "R_P",
            EpochLabel::RA => "R_A",
            EpochLabel::M => "M",
            EpochLabel::RMP => "R_MP",
            EpochLabel::RMA => "R_MA",
            EpochLabel::SDM => "S_DM",
            EpochLabel::RDMP => "R_DMP",
            EpochLabel::RDMA => "R_DMA",
        }
    }

    pub fn is_response(self) -> bool {
        matches!(
            self,
            EpochLabel::RP | EpochLabel::RA | EpochLabel::RMP | EpochLabel::RMA | EpochLabel::RDMP | EpochLabel::RDMA
        )
    }
}

/// Convention for the fixation-cue channel (input 5) during the decision
/// stimulus epoch `S_DM`.
///
/// `FixationOn` keeps the cue at 0 like every other non-response epoch, so the
/// go signal marks the start of the response. `TableLiteral` sets it to 1 as
/// printed in the original mean table, which makes `S_DM` and the decision
/// response epochs indistinguishable from the inputs alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmCue {
    #[default]
    FixationOn,
    TableLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsMean {
    pub s: [f64; INPUT_DIM],
    pub y: [f64; OUTPUT_DIM],
}

impl ObsMean {
    pub const ZERO: ObsMean = ObsMean { s: [0.0; INPUT_DIM], y: [0.0; OUTPUT_DIM] };

    pub fn q(&self) -> [f64; OBS_DIM] {
        let mut q = [0.0; OBS_DIM];
        q[..INPUT_DIM].copy_from_slice(&self.s);
        q[INPUT_DIM..].copy_from_slice(&self.y);
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDef {
    pub id: usize,
    pub label: EpochLabel,
    /// One mean per trial variable.
    pub means: Vec<ObsMean>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDef {
    pub id: usize,
    pub name: String,
    /// Epoch ids in visiting order; the last one is absorbing.
    pub sequence: Vec<usize>,
    /// `Π^c` over all epoch ids.
    pub initial: Vec<f64>,
    /// `Λ^c`, row = current epoch, column = next epoch.
    pub transitions: Vec<Vec<f64>>,
    pub terminal: Vec<usize>,
}

impl TaskDef {
    fn chain(id: usize, name: &str, sequence: Vec<usize>, n_epochs: usize, self_prob: f64) -> TaskDef {
        let mut initial = vec![0.0; n_epochs];
        initial[sequence[0]] = 1.0;
        let mut transitions = vec![vec![0.0; n_epochs]; n_epochs];
        for (i, &e) in sequence.iter().enumerate() {
            match sequence.get(i + 1) {
                Some(&next) => {
                    transitions[e][e] = self_prob;
                    transitions[e][next] = 1.0 - self_prob;
                }
                None => transitions[e][e] = 1.0,
            }
        }
        // rows of unreachable epochs are self-loops so the table stays stochastic
        for (e, row) in transitions.iter_mut().enumerate() {
            if row.iter().sum::<f64>() == 0.0 {
                row[e] = 1.0;
            }
        }
        let terminal = vec![*sequence.last().expect("non-empty sequence")];
        TaskDef { id, name: name.to_string(), sequence, initial, transitions, terminal }
    }

    pub fn visits(&self, epoch: usize) -> bool {
        self.sequence.contains(&epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub n_x: usize,
    pub dm_cue: DmCue,
    pub epochs: Vec<EpochDef>,
    pub tasks: Vec<TaskDef>,
}

impl TaskSuite {
    pub fn epoch_id(&self, label: EpochLabel) -> usize {
        self.epochs.iter().position(|e| e.label == label).expect("epoch present in suite")
    }

    pub fn mean(&self, epoch: usize, x: usize) -> &ObsMean {
        &self.epochs[epoch].means[x]
    }

    pub fn task(&self, c: usize) -> Result<&TaskDef> {
        self.tasks.get(c).ok_or_else(|| Error::UnknownTask(c.to_string()))
    }

    /// Looks a task up by name; `M'Pro` and `MPrimePro` are both accepted.
    pub fn task_by_name(&self, name: &str) -> Result<&TaskDef> {
        let canon = name.replace(['\'', '′'], "Prime").to_ascii_lowercase();
        self.tasks
            .iter()
            .find(|t| t.name.to_ascii_lowercase() == canon)
            .ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    /// Appends the two M′ tasks (memory tasks without the memory epoch).
    pub fn with_mprime(mut self) -> Self {
        if self.tasks.iter().any(|t| t.name == "MPrimePro") {
            return self;
        }
        let [pro, anti] = make_mprime_tasks(&self);
        self.tasks.push(pro);
        self.tasks.push(anti);
        self
    }

    pub fn is_response(&self, epoch: usize) -> bool {
        self.epochs[epoch].label.is_response()
    }

    /// Epoch id used once fixation and memory are merged (they share all means).
    pub fn merged_epoch(&self, epoch: usize) -> usize {
        if self.epochs[epoch].label == EpochLabel::M {
            self.epoch_id(EpochLabel::F)
        } else {
            epoch
        }
    }

    /// Response direction of epoch `epoch` under trial variable `x`.
    pub fn target_angle(&self, epoch: usize, x: usize) -> f64 {
        let y = self.mean(epoch, x).y;
        y[1].atan2(y[0])
    }
}

fn unit(theta: f64) -> (f64, f64) {
    (theta.cos(), theta.sin())
}

fn epoch_means(label: EpochLabel, n_x: usize, dm_cue: DmCue) -> Vec<ObsMean> {
    (0..n_x)
        .map(|x| {
            let theta = 2.0 * PI * x as f64 / n_x as f64;
            let (c, s) = unit(theta);
            let (ca, sa) = unit(theta + PI);
            let (g, gp) = DM_STRENGTHS[x];
            // θ = 0 with strength γ on inputs 1-2, θ′ = π with strength γ′ on inputs 3-4
            let (c0, s0) = unit(0.0);
            let (c1, s1) = unit(PI);
            let dm_s = |cue: f64| [g * c0, g * s0, gp * c1, gp * s1, cue];
            let dm_dir = |toward_stronger: bool| {
                let phi = if (g > gp) == toward_stronger { 0.0 } else { PI };
                let (a, b) = unit(phi);
                [a, b, 1.0]
            };
            match label {
                EpochLabel::F | EpochLabel::M => ObsMean::ZERO,
                EpochLabel::S => ObsMean { s: [c, s, 0.0, 0.0, 0.0], y: [0.0; 3] },
                EpochLabel::RP => ObsMean { s: [c, s, 0.0, 0.0, 1.0], y: [c, s, 1.0] },
                EpochLabel::RA => ObsMean { s: [c, s, 0.0, 0.0, 1.0], y: [ca, sa, 1.0] },
                EpochLabel::RMP => ObsMean { s: [0.0, 0.0, 0.0, 0.0, 1.0], y: [c, s, 1.0] },
                EpochLabel::RMA => ObsMean { s: [0.0, 0.0, 0.0, 0.0, 1.0], y: [ca, sa, 1.0] },
                EpochLabel::SDM => {
                    let cue = match dm_cue {
                        DmCue::FixationOn => 0.0,
                        DmCue::TableLiteral => 1.0,
                    };
                    ObsMean { s: dm_s(cue), y: [1.0, 0.0, 0.0] }
                }
                EpochLabel::RDMP => ObsMean { s: dm_s(1.0), y: dm_dir(true) },
                EpochLabel::RDMA => ObsMean { s: dm_s(1.0), y: dm_dir(false) },
            }
        })
        .collect()
}

/// The ten shared epochs and the six base tasks.
pub fn build_default_suite(cfg: &GenConfig) -> TaskSuite {
    let epochs: Vec<EpochDef> = EpochLabel::ALL
        .iter()
        .enumerate()
        .map(|(id, &label)| EpochDef { id, label, means: epoch_means(label, cfg.n_x, cfg.dm_cue) })
        .collect();
    let n = epochs.len();
    let id = |l: EpochLabel| EpochLabel::ALL.iter().position(|&e| e == l).unwrap();
    use EpochLabel::*;
    let specs: [(&str, Vec<EpochLabel>); 6] = [
        ("DelayPro", vec![F, S, RP]),
        ("DelayAnti", vec![F, S, RA]),
        ("MemoryPro", vec![F, S, M, RMP]),
        ("MemoryAnti", vec![F, S, M, RMA]),
        ("DMPro", vec![F, SDM, RDMP]),
        ("DMAnti", vec![F, SDM, RDMA]),
    ];
    let tasks = specs
        .into_iter()
        .enumerate()
        .map(|(c, (name, seq))| TaskDef::chain(c, name, seq.into_iter().map(id).collect(), n, cfg.self_prob))
        .collect();
    TaskSuite { n_x: cfg.n_x, dm_cue: cfg.dm_cue, epochs, tasks }
}

/// `M′Pro` (F → S → R_MP) and `M′Anti` (F → S → R_MA). No new epochs.
pub fn make_mprime_tasks(suite: &TaskSuite) -> [TaskDef; 2] {
    let n = suite.epochs.len();
    let base = suite.tasks.len();
    let f = suite.epoch_id(EpochLabel::F);
    let s = suite.epoch_id(EpochLabel::S);
    // the self-transition of the existing tables is reused
    let self_prob = suite.tasks[0].transitions[f][f];
    [
        TaskDef::chain(base, "MPrimePro", vec![f, s, suite.epoch_id(EpochLabel::RMP)], n, self_prob),
        TaskDef::chain(base + 1, "MPrimeAnti", vec![f, s, suite.epoch_id(EpochLabel::RMA)], n, self_prob),
    ]
}
