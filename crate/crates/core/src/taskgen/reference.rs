//! Likelihood of a trial under the generating parameters.
//!
//! The generating process holds every epoch for a minimum number of steps, so
//! it is not itself a first-order chain. The reference is the first-order HMM
//! that is closest to it in the maximum-likelihood sense: fixation and memory
//! share one state (their means coincide), means and noise are the true ones,
//! and the transition tables are complete-data estimates from a large number
//! of sampled epoch paths.

use serde::{Deserialize, Serialize};

use super::{sample_epoch_path, GenConfig, TaskSuite, Trial};
use crate::rng::{self, stream};
use crate::taskmodel::HmmView;
use crate::{Error, Result, OBS_DIM};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceTask {
    pub task: usize,
    /// Merged epoch ids the task can occupy, in first-visit order.
    pub states: Vec<usize>,
    pub initial: Vec<f64>,
    /// Row = current state.
    pub transitions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub n_epochs: usize,
    pub n_x: usize,
    pub sigma: f64,
    /// `[epoch][x]` mean observations.
    pub means: Vec<Vec<[f64; OBS_DIM]>>,
    pub tasks: Vec<ReferenceTask>,
}

impl ReferenceModel {
    /// Fits the transition tables of every task in `suite` from `n_paths`
    /// sampled epoch paths each.
    pub fn fit(suite: &TaskSuite, cfg: &GenConfig, n_paths: usize) -> Result<Self> {
        cfg.validate()?;
        if cfg.sigma <= 0.0 {
            return Err(Error::Config("reference likelihood needs sigma > 0".into()));
        }
        if n_paths == 0 {
            return Err(Error::Config("reference fit needs at least one path".into()));
        }
        let mut tasks = Vec::with_capacity(suite.tasks.len());
        for task in &suite.tasks {
            let mut states: Vec<usize> = Vec::new();
            for &e in &task.sequence {
                let m = suite.merged_epoch(e);
                if !states.contains(&m) {
                    states.push(m);
                }
            }
            let k = states.len();
            let local = |e: usize| states.iter().position(|&s| s == suite.merged_epoch(e)).unwrap();
            let mut init = vec![0.0; k];
            let mut counts = vec![vec![0.0; k]; k];
            for i in 0..n_paths {
                let mut r = rng::substream(cfg.seed, stream::REFERENCE * 1009 + task.id as u64, i as u64);
                let path = sample_epoch_path(task, cfg, &mut r)?;
                init[local(path[0])] += 1.0;
                for w in path.windows(2) {
                    counts[local(w[0])][local(w[1])] += 1.0;
                }
            }
            let total: f64 = init.iter().sum();
            init.iter_mut().for_each(|p| *p /= total);
            for (i, row) in counts.iter_mut().enumerate() {
                let n: f64 = row.iter().sum();
                if n > 0.0 {
                    row.iter_mut().for_each(|p| *p /= n);
                } else {
                    row[i] = 1.0;
                }
            }
            tasks.push(ReferenceTask { task: task.id, states, initial: init, transitions: counts });
        }
        let means = suite.epochs.iter().map(|e| e.means.iter().map(|m| m.q()).collect()).collect();
        Ok(Self { n_epochs: suite.epochs.len(), n_x: suite.n_x, sigma: cfg.sigma, means, tasks })
    }

    pub fn task(&self, c: usize) -> Result<&ReferenceTask> {
        self.tasks.iter().find(|t| t.task == c).ok_or(Error::UnseenTask { task: c })
    }

    /// The reference HMM of task `c` in the form used by the inference code.
    pub fn view(&self, c: usize) -> Result<HmmView> {
        let rt = self.task(c)?;
        let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        let mut means = Vec::with_capacity(rt.states.len() * self.n_x);
        for &z in &rt.states {
            means.extend(self.means[z].iter().copied());
        }
        Ok(HmmView {
            task: c,
            slots: rt.states.clone(),
            n_slots: self.n_epochs,
            n_x: self.n_x,
            log_init: rt.initial.iter().map(|&p| ln(p)).collect(),
            log_trans: rt.transitions.iter().flatten().map(|&p| ln(p)).collect(),
            means,
            valid: vec![true; rt.states.len() * self.n_x],
            sigma: self.sigma,
            log_x_prior: vec![-(self.n_x as f64).ln(); self.n_x],
        })
    }
}

/// `log p(q_{1:T} | c)` of `trial` under the reference parameters.
pub fn ground_truth_ll(reference: &ReferenceModel, trial: &Trial) -> Result<f64> {
    let view = reference.view(trial.task)?;
    let le = view.log_emissions(&trial.observations());
    Ok(view.forward(&le)?.ll)
}
