//! Full-rank comparison learners: one shared [`GeneralRnn`] with a one-hot
//! task input, trained with plain Adam, EWC or OWP.

mod ewc;
mod general;
mod owp;

pub use ewc::{ewc_loss_grad, fisher_estimate, EwcState};
pub use general::{GeneralLayout, GeneralRnn, GeneralRollout};
pub use owp::{owp_project, owp_update_stats, ActivityTrace, OwpState, Projector};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contextrnn::{LossMask, RnnConfig};
use crate::rng::{self, Rng};
use crate::{Error, Result, INPUT_DIM, OUTPUT_DIM};

const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Adam,
    Ewc,
    Owp,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Adam, Rule::Ewc, Rule::Owp];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Adam => "adam",
            Rule::Ewc => "ewc",
            Rule::Owp => "owp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub lr: f64,
    pub l2: f64,
    /// Std of `W_rec` entries is `rec_gain/√N`.
    pub rec_gain: f64,
    pub ewc_lambda: f64,
    /// Trials used for the Fisher estimate and the OWP activity statistics.
    pub stat_trials: usize,
    /// OWP ridge per accumulated time point.
    pub owp_lambda_scale: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { lr: 0.01, l2: 1e-5, rec_gain: 0.8, ewc_lambda: 1e5, stat_trials: 256, owp_lambda_scale: 0.001 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.l2 >= 0.0
            && self.rec_gain >= 0.0
            && self.ewc_lambda >= 0.0
            && self.stat_trials > 0
            && self.owp_lambda_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid baseline config: {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneralSample {
    pub task: usize,
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub targets: Vec<[f64; OUTPUT_DIM]>,
    pub mask: LossMask,
    pub noise: Option<(u64, u64, u64)>,
}

/// Mean loss and mean gradient over a batch; chunked so the reduction order
/// is fixed regardless of thread count.
pub fn general_batch_gradient(net: &GeneralRnn, batch: &[GeneralSample]) -> Result<(f64, Vec<f64>)> {
    let n = net.n_params();
    let scale = 1.0 / batch.len().max(1) as f64;
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let mut loss = 0.0;
            for s in chunk {
                let mut r = s.noise.map(|(a, b, c)| rng::substream(a, b, c));
                let ro = net.forward(s.task, &s.inputs, r.as_mut())?;
                loss += net.backward(s.task, &ro, &s.inputs, &s.targets, &s.mask, scale, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = vec![0.0; n];
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        total.iter_mut().zip(g).for_each(|(t, x)| *t += x);
    }
    Ok((loss * scale, total))
}

pub fn general_batch_forward(net: &GeneralRnn, batch: &[GeneralSample]) -> Result<Vec<GeneralRollout>> {
    batch
        .par_iter()
        .map(|s| {
            let mut r = s.noise.map(|(a, b, c)| rng::substream(a, b, c));
            net.forward(s.task, &s.inputs, r.as_mut())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatAdam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl FlatAdam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], steps: 0 }
    }

    /// The update `Δ` such that the new parameters are `w − Δ`.
    pub fn step(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps)
            })
            .collect()
    }
}

/// A general RNN plus the state of its update rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralLearner {
    pub rule: Rule,
    pub cfg: BaselineConfig,
    pub net: GeneralRnn,
    pub adam: FlatAdam,
    pub ewc: Option<EwcState>,
    pub owp: Option<OwpState>,
}

impl GeneralLearner {
    pub fn new(rule: Rule, cfg: BaselineConfig, rnn: RnnConfig, n_tasks: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let net = GeneralRnn::new(rnn, n_tasks, cfg.rec_gain, rng)?;
        let n = net.n_params();
        let ewc = (rule == Rule::Ewc).then(|| EwcState::new(n, cfg.ewc_lambda));
        let owp = (rule == Rule::Owp).then(|| OwpState::new(net.layout(), cfg.owp_lambda_scale));
        Ok(Self { rule, cfg, net, adam: FlatAdam::new(n), ewc, owp })
    }

    /// Applies one update from a raw loss gradient. EWC adds its penalty
    /// gradient before Adam; OWP projects the Adam step.
    pub fn apply_gradient(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.net.n_params() {
            return Err(Error::Shape("gradient does not match the general rnn".into()));
        }
        let mut g: Vec<f64> = grad.iter().zip(&self.net.w).map(|(&g, &w)| g + self.cfg.l2 * w).collect();
        if let Some(st) = &self.ewc {
            ewc_loss_grad(&self.net.w, &mut g, st);
        }
        let mut delta = self.adam.step(&g, self.cfg.lr);
        if let Some(st) = &self.owp {
            owp_project(&mut delta, st, self.net.layout())?;
        }
        for (w, d) in self.net.w.iter_mut().zip(&delta) {
            *w -= d;
        }
        if self.net.w.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite { t: 0 });
        }
        Ok(())
    }

    /// One optimizer step on a batch; returns the mean task loss.
    pub fn train_batch(&mut self, batch: &[GeneralSample]) -> Result<f64> {
        let (loss, g) = general_batch_gradient(&self.net, batch)?;
        self.apply_gradient(&g)?;
        Ok(loss)
    }

    /// Consolidation at the end of a task, from trials of that task.
    pub fn end_task(&mut self, samples: &[GeneralSample]) -> Result<()> {
        match self.rule {
            Rule::Adam => Ok(()),
            Rule::Ewc => {
                let fisher = fisher_estimate(&self.net, samples)?;
                let st = self.ewc.as_mut().expect("ewc state");
                st.consolidate(&self.net.w, &fisher)
            }
            Rule::Owp => {
                let rollouts = general_batch_forward(&self.net, samples)?;
                let traces: Vec<ActivityTrace> = samples
                    .iter()
                    .zip(rollouts)
                    .map(|(s, ro)| ActivityTrace { task: s.task, inputs: s.inputs.clone(), h: ro.h, y_hat: ro.y_hat })
                    .collect();
                let st = self.owp.as_mut().expect("owp state");
                owp_update_stats(st, &self.net, &traces)
            }
        }
    }
}
