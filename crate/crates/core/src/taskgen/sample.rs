use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GenConfig, TaskDef, TaskSuite};
use crate::rng::{self, Rng};
use crate::{Error, Result, INPUT_DIM, OBS_DIM, OUTPUT_DIM};

/// One execution of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub s: Vec<[f64; INPUT_DIM]>,
    pub y: Vec<[f64; OUTPUT_DIM]>,
    pub task: usize,
    pub z_true: Vec<usize>,
    /// Zero-based trial variable.
    pub x_true: usize,
}

impl Trial {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn q(&self, t: usize) -> [f64; OBS_DIM] {
        let mut q = [0.0; OBS_DIM];
        q[..INPUT_DIM].copy_from_slice(&self.s[t]);
        q[INPUT_DIM..].copy_from_slice(&self.y[t]);
        q
    }

    pub fn observations(&self) -> Vec<[f64; OBS_DIM]> {
        (0..self.len()).map(|t| self.q(t)).collect()
    }

    /// Inputs as seen by a recurrent network, with extra isotropic noise on `s`.
    pub fn rnn_inputs(&self, noise_std: f64, rng: &mut Rng) -> Vec<[f64; INPUT_DIM]> {
        self.s
            .iter()
            .map(|s| {
                let mut out = *s;
                if noise_std > 0.0 {
                    for v in out.iter_mut() {
                        *v += noise_std * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                out
            })
            .collect()
    }

    /// First time step spent in a response epoch.
    pub fn response_onset(&self, suite: &TaskSuite) -> Option<usize> {
        self.z_true.iter().position(|&z| suite.is_response(z))
    }
}

/// Samples an epoch path of length `cfg.trial_len`.
///
/// Each non-terminal epoch is held for `min_epoch_dur` steps and then extended
/// one step at a time with probability `self_prob`. An epoch is cut short when
/// the remaining steps are exactly enough for the later epochs to meet their
/// minimum duration. The last epoch absorbs until the end of the trial.
pub fn sample_epoch_path(task: &TaskDef, cfg: &GenConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    let k = task.sequence.len();
    if task.terminal.is_empty() || k == 0 {
        return Err(Error::Config(format!("task {} has no terminal epoch", task.name)));
    }
    let needed = k * cfg.min_epoch_dur;
    if cfg.trial_len < needed {
        return Err(Error::TrialTooShort { task: task.id, needed, trial_len: cfg.trial_len });
    }
    let mut path = Vec::with_capacity(cfg.trial_len);
    for (i, &epoch) in task.sequence[..k - 1].iter().enumerate() {
        let max_dur = cfg.trial_len - path.len() - (k - 1 - i) * cfg.min_epoch_dur;
        let mut dur = cfg.min_epoch_dur;
        while dur < max_dur && rng.random::<f64>() < cfg.self_prob {
            dur += 1;
        }
        path.extend(std::iter::repeat_n(epoch, dur));
    }
    path.resize(cfg.trial_len, task.sequence[k - 1]);
    Ok(path)
}

/// Samples `x`, an epoch path and noisy observations around the mean table.
pub fn sample_trial(suite: &TaskSuite, c: usize, cfg: &GenConfig, rng: &mut Rng) -> Result<Trial> {
    let task = suite.task(c)?;
    let x = rng.random_range(0..suite.n_x);
    let z = sample_epoch_path(task, cfg, rng)?;
    let mut s = Vec::with_capacity(z.len());
    let mut y = Vec::with_capacity(z.len());
    for &epoch in &z {
        let m = suite.mean(epoch, x);
        let mut st = m.s;
        let mut yt = m.y;
        if cfg.sigma > 0.0 {
            for v in st.iter_mut().chain(yt.iter_mut()) {
                *v += cfg.sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        s.push(st);
        y.push(yt);
    }
    Ok(Trial { s, y, task: c, z_true: z, x_true: x })
}

/// Trial number `index` of `stream`, independent of every other trial.
pub fn sample_trial_indexed(
    suite: &TaskSuite,
    c: usize,
    cfg: &GenConfig,
    seed: u64,
    stream: u64,
    index: u64,
) -> Result<Trial> {
    let mut rng = rng::substream(seed, stream.wrapping_mul(1009).wrapping_add(c as u64), index);
    sample_trial(suite, c, cfg, &mut rng)
}
