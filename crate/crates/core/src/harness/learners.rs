//! Adapters that put the context-gated network and the full-rank baselines
//! behind one training/evaluation interface.

use rayon::prelude::*;

use super::ExperimentConfig;
use crate::baselines::{GeneralLearner, GeneralSample, Rule};
use crate::checkpoint::Checkpoint;
use crate::contextrnn::{
    adam_step, batch_gradient, evaluate_perf, forward_trial, weighted_mse, ContextBank, LossMask, Sample, TrainState,
};
use crate::rng::{self, stream};
use crate::taskgen::{GenConfig, TaskSuite, Trial};
use crate::taskmodel::TaskModel;
use crate::{Error, Gating, Result, INPUT_DIM, OUTPUT_DIM};

/// Offset separating evaluation noise streams from training ones.
const EVAL_OFFSET: u64 = 500;
/// Offset for trials drawn for end-of-task statistics.
const AUX_OFFSET: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub loss: f64,
    pub performance: f64,
    pub task_model_ll: Option<f64>,
}

pub trait ContinualLearner {
    fn label(&self) -> &'static str;
    /// Whether `task` can be evaluated yet.
    fn can_evaluate(&self, task: usize) -> bool;
    /// One optimizer step on a batch of `task`; `first_index` is the trial
    /// index of `batch[0]` within the task's training stream.
    fn train_batch(&mut self, task: usize, batch: &[Trial], first_index: u64) -> Result<f64>;
    fn end_task(&mut self, task: usize) -> Result<()>;
    /// Must not change the learner.
    fn evaluate(&self, task: usize, trials: &[Trial]) -> Result<EvalSummary>;
    fn state_checksum(&self) -> u64;
    fn checkpoint(&self) -> Checkpoint;
    fn isolation_violations(&self) -> &[String] {
        &[]
    }
}

/// Noisy network inputs and the recurrent-noise key of trial `index`.
fn network_io(
    trial: &Trial,
    gen: &GenConfig,
    seed: u64,
    offset: u64,
    index: u64,
    noise: bool,
) -> (Vec<[f64; INPUT_DIM]>, Option<(u64, u64, u64)>) {
    let tag = offset + trial.task as u64;
    let mut r = rng::substream(seed, stream::INPUT_NOISE * 1009 + tag, index);
    let inputs = trial.rnn_inputs(gen.input_noise_std, &mut r);
    let key = noise.then_some((seed, stream::RNN_NOISE * 1009 + tag, index));
    (inputs, key)
}

fn fnv(h: &mut u64, v: u64) {
    *h ^= v;
    *h = h.wrapping_mul(0x100_0000_01b3);
}

pub(crate) fn digest(values: impl IntoIterator<Item = f64>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325;
    for v in values {
        fnv(&mut h, v.to_bits());
    }
    h
}

fn summarize(parts: Vec<(f64, bool, Option<f64>)>) -> EvalSummary {
    let n = parts.len().max(1) as f64;
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / n;
    let performance = parts.iter().filter(|p| p.1).count() as f64 / n;
    let ll = parts.iter().map(|p| p.2).sum::<Option<f64>>().map(|s| s / n);
    EvalSummary { loss, performance, task_model_ll: ll }
}

/// Task model plus context-gated low-rank network.
#[derive(Debug, Clone)]
pub struct ContextLearner {
    pub suite: TaskSuite,
    pub gen: GenConfig,
    pub task_model: TaskModel,
    pub bank: ContextBank,
    pub train: TrainState,
    pub seed: u64,
    pub gating_floor: f64,
    pub eval_noise: bool,
    /// Trials of each task the task model learns from before it stops updating.
    pub tm_quota: usize,
    pub tm_seen: Vec<usize>,
    current: Option<usize>,
    mass_sum: Vec<f64>,
    mass_trials: usize,
    gated: Vec<bool>,
    start_checksums: Vec<(usize, u64)>,
    violations: Vec<String>,
}

impl ContextLearner {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let task_model = TaskModel::new(cfg.taskmodel.clone())?;
        let n_ctx = cfg.taskmodel.z_slots;
        let bank = ContextBank::new(cfg.rnn.clone(), n_ctx, cfg.context_lr)?;
        let train = TrainState::new(n_ctx, cfg.context_lr);
        Ok(Self::from_parts(cfg, seed, task_model, bank, train))
    }

    pub fn from_parts(cfg: &ExperimentConfig, seed: u64, task_model: TaskModel, bank: ContextBank, train: TrainState) -> Self {
        let suite = cfg.suite();
        let n_ctx = bank.n_ctx();
        Self {
            tm_seen: vec![0; suite.tasks.len()],
            suite,
            gen: cfg.gen.clone(),
            task_model,
            bank,
            train,
            seed,
            gating_floor: cfg.gating_floor,
            eval_noise: cfg.eval_noise,
            tm_quota: cfg.taskmodel_trials_per_task,
            current: None,
            mass_sum: vec![0.0; n_ctx],
            mass_trials: 0,
            gated: vec![false; n_ctx],
            start_checksums: Vec::new(),
            violations: Vec::new(),
        }
    }

    fn begin_task(&mut self) {
        self.mass_sum.fill(0.0);
        self.mass_trials = 0;
        self.gated.fill(false);
        self.start_checksums = self.bank.allocated().into_iter().map(|z| (z, self.bank.checksum(&[z]))).collect();
    }

    /// One task-model update with the network untouched.
    pub fn learn_taskmodel_trial(&mut self, trial: &Trial) -> Result<()> {
        self.task_model.learn_trial(trial)?;
        self.tm_seen[trial.task] += 1;
        Ok(())
    }

    fn gating(&self, g: Result<Gating>) -> Result<Gating> {
        let mut g = g?;
        g.floor(self.gating_floor);
        Ok(g)
    }

    /// Test-time outputs of one trial. All-unallocated gating yields zero output.
    fn eval_outputs(&self, trial: &Trial, index: u64) -> Result<Vec<[f64; OUTPUT_DIM]>> {
        let g = self.gating(self.task_model.test_time_infer(&trial.s, trial.task))?;
        let (inputs, key) = network_io(trial, &self.gen, self.seed, EVAL_OFFSET, index, self.eval_noise);
        let mut r = key.map(|(a, b, c)| rng::substream(a, b, c));
        match forward_trial(&self.bank, &g, &inputs, r.as_mut()) {
            Ok(ro) => Ok(ro.y_hat),
            Err(Error::NoAllocatedMass { .. }) => Ok(vec![[0.0; OUTPUT_DIM]; trial.len()]),
            Err(e) => Err(e),
        }
    }
}

impl ContinualLearner for ContextLearner {
    fn label(&self) -> &'static str {
        "context_rnn"
    }

    fn can_evaluate(&self, task: usize) -> bool {
        self.task_model.tables.task_seen(task)
    }

    fn train_batch(&mut self, task: usize, batch: &[Trial], first_index: u64) -> Result<f64> {
        if self.current != Some(task) {
            self.current = Some(task);
            self.begin_task();
        }
        for tr in batch {
            if self.tm_seen[task] >= self.tm_quota {
                break;
            }
            self.learn_taskmodel_trial(tr)?;
        }
        let gatings: Vec<Gating> = batch
            .par_iter()
            .map(|tr| self.gating(self.task_model.train_time_infer(tr)))
            .collect::<Result<_>>()?;
        let n_ctx = self.bank.n_ctx();
        let mut batch_mass = vec![0.0; n_ctx];
        for g in &gatings {
            for row in g.rows() {
                for (z, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        self.gated[z] = true;
                    }
                }
            }
            for (m, p) in batch_mass.iter_mut().zip(g.mean_mass()) {
                *m += p / batch.len() as f64;
            }
        }
        for z in 0..n_ctx {
            if self.gated[z] && !self.bank.is_allocated(z) {
                self.bank.allocate(z, &mut rng::substream(self.seed, stream::INIT, z as u64))?;
            }
        }
        let samples: Vec<Sample> = batch
            .iter()
            .zip(gatings)
            .enumerate()
            .map(|(i, (tr, gating))| {
                let (inputs, noise) = network_io(tr, &self.gen, self.seed, 0, first_index + i as u64, true);
                Sample { inputs, targets: tr.y.clone(), mask: LossMask::for_trial(tr, &self.suite), gating, noise }
            })
            .collect();
        let (loss, grads) = batch_gradient(&self.bank, &samples)?;
        let l2_mask: Vec<bool> = batch_mass.iter().map(|&m| m > self.train.active_thresh).collect();
        adam_step(&mut self.bank, &mut self.train, &grads, &l2_mask)?;
        for (s, m) in self.mass_sum.iter_mut().zip(&batch_mass) {
            *s += m * batch.len() as f64;
        }
        self.mass_trials += batch.len();
        Ok(loss)
    }

    fn end_task(&mut self, task: usize) -> Result<()> {
        if self.current != Some(task) {
            return Ok(());
        }
        self.current = None;
        if self.mass_trials > 0 {
            let mean: Vec<f64> = self.mass_sum.iter().map(|s| s / self.mass_trials as f64).collect();
            self.train.decay_lr(&mut self.bank, &mean);
        }
        for &(z, ck) in &self.start_checksums {
            if !self.gated[z] && self.bank.checksum(&[z]) != ck {
                self.violations.push(format!("context {z} changed while ungated during task {}", self.suite.tasks[task].name));
            }
        }
        Ok(())
    }

    fn evaluate(&self, task: usize, trials: &[Trial]) -> Result<EvalSummary> {
        let parts: Vec<(f64, bool, Option<f64>)> = trials
            .par_iter()
            .enumerate()
            .map(|(i, tr)| {
                debug_assert_eq!(tr.task, task);
                let y_hat = self.eval_outputs(tr, i as u64)?;
                let loss = weighted_mse(&y_hat, &tr.y, &LossMask::for_trial(tr, &self.suite));
                let ll = self.task_model.log_likelihood(tr)?;
                Ok((loss, evaluate_perf(&y_hat, tr, &self.suite), Some(ll)))
            })
            .collect::<Result<_>>()?;
        Ok(summarize(parts))
    }

    fn state_checksum(&self) -> u64 {
        let p = &self.task_model.params;
        let tm = digest(p.q_hat.iter().flatten().chain(&p.lambda_hat).chain(&p.pi_hat).chain([&p.sigma_hat]).copied());
        let mut h = self.bank.checksum(&self.bank.allocated());
        fnv(&mut h, tm);
        fnv(&mut h, digest(self.bank.lr.iter().copied()));
        h
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::Full { task_model: self.task_model.clone(), bank: self.bank.clone(), train: self.train.clone() }
    }

    fn isolation_violations(&self) -> &[String] {
        &self.violations
    }
}

/// A full-rank baseline with its update rule.
#[derive(Debug, Clone)]
pub struct BaselineLearner {
    pub suite: TaskSuite,
    pub gen: GenConfig,
    pub learner: GeneralLearner,
    pub seed: u64,
    pub eval_noise: bool,
    pub stat_trials: usize,
    seen: Vec<bool>,
}

impl BaselineLearner {
    pub fn new(cfg: &ExperimentConfig, rule: Rule, seed: u64) -> Result<Self> {
        let suite = cfg.suite();
        let mut r = rng::substream(seed, stream::INIT, 1 << 20);
        let learner = GeneralLearner::new(rule, cfg.baseline.clone(), cfg.rnn.clone(), suite.tasks.len(), &mut r)?;
        Ok(Self::from_learner(cfg, seed, learner))
    }

    pub fn from_learner(cfg: &ExperimentConfig, seed: u64, learner: GeneralLearner) -> Self {
        let suite = cfg.suite();
        Self {
            seen: vec![false; suite.tasks.len()],
            suite,
            gen: cfg.gen.clone(),
            learner,
            seed,
            eval_noise: cfg.eval_noise,
            stat_trials: cfg.baseline.stat_trials,
        }
    }

    /// Treats every task as evaluable, e.g. after loading from a checkpoint.
    pub fn mark_all_seen(&mut self) {
        self.seen.iter_mut().for_each(|s| *s = true);
    }

    fn sample(&self, tr: &Trial, offset: u64, index: u64, noise: bool) -> GeneralSample {
        let (inputs, noise) = network_io(tr, &self.gen, self.seed, offset, index, noise);
        GeneralSample { task: tr.task, inputs, targets: tr.y.clone(), mask: LossMask::for_trial(tr, &self.suite), noise }
    }
}

impl ContinualLearner for BaselineLearner {
    fn label(&self) -> &'static str {
        self.learner.rule.name()
    }

    fn can_evaluate(&self, task: usize) -> bool {
        self.seen.get(task).copied().unwrap_or(false)
    }

    fn train_batch(&mut self, task: usize, batch: &[Trial], first_index: u64) -> Result<f64> {
        self.seen[task] = true;
        let samples: Vec<GeneralSample> =
            batch.iter().enumerate().map(|(i, tr)| self.sample(tr, 0, first_index + i as u64, true)).collect();
        self.learner.train_batch(&samples)
    }

    fn end_task(&mut self, task: usize) -> Result<()> {
        let samples: Vec<GeneralSample> = (0..self.stat_trials as u64)
            .map(|i| {
                let tr = crate::taskgen::sample_trial_indexed(&self.suite, task, &self.gen, self.seed, stream::AUX_TRIALS, i)?;
                Ok(self.sample(&tr, AUX_OFFSET, i, true))
            })
            .collect::<Result<_>>()?;
        self.learner.end_task(&samples)
    }

    fn evaluate(&self, _task: usize, trials: &[Trial]) -> Result<EvalSummary> {
        let parts: Vec<(f64, bool, Option<f64>)> = trials
            .par_iter()
            .enumerate()
            .map(|(i, tr)| {
                let s = self.sample(tr, EVAL_OFFSET, i as u64, self.eval_noise);
                let mut r = s.noise.map(|(a, b, c)| rng::substream(a, b, c));
                let ro = self.learner.net.forward(s.task, &s.inputs, r.as_mut())?;
                let loss = weighted_mse(&ro.y_hat, &s.targets, &s.mask);
                Ok((loss, evaluate_perf(&ro.y_hat, tr, &self.suite), None))
            })
            .collect::<Result<_>>()?;
        Ok(summarize(parts))
    }

    fn state_checksum(&self) -> u64 {
        digest(self.learner.net.w.iter().copied())
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::GeneralRnn(self.learner.clone())
    }
}
