use std::collections::BTreeMap;

use super::learners::{BaselineLearner, ContextLearner, ContinualLearner};
use super::{ExperimentConfig, MetricRow, MetricsLog};
use crate::baselines::Rule;
use crate::checkpoint::Checkpoint;
use crate::rng::stream;
use crate::taskgen::{ground_truth_ll, sample_trial_indexed, ReferenceModel, TaskSuite, Trial};
use crate::taskmodel::TaskModel;
use crate::{Error, Result};

/// Epoch paths sampled per task when fitting the ground-truth reference model.
pub const REFERENCE_PATHS: usize = 20_000;
/// Task-model trials between evaluations in [`run_taskmodel`].
pub const TASKMODEL_EVAL_EVERY: usize = 25;
/// Accuracy after 512 target trials reported for full-model training
/// (Adam, OWP, hypernetwork) in the compositional-generalization experiment.
pub const COMPGEN_REFERENCE: [(&str, f64); 3] = [("adam", 0.56), ("owp", 0.53), ("hypernetwork", 0.64)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    ContextRnn,
    Baseline(Rule),
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] =
        [LearnerKind::ContextRnn, LearnerKind::Baseline(Rule::Adam), LearnerKind::Baseline(Rule::Ewc), LearnerKind::Baseline(Rule::Owp)];

    pub fn label(self) -> &'static str {
        match self {
            LearnerKind::ContextRnn => "context_rnn",
            LearnerKind::Baseline(r) => r.name(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown learner {s:?} (expected context_rnn, adam, ewc or owp)")))
    }

    pub fn build(self, cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn ContinualLearner + Send>> {
        Ok(match self {
            LearnerKind::ContextRnn => Box::new(ContextLearner::new(cfg, seed)?),
            LearnerKind::Baseline(rule) => Box::new(BaselineLearner::new(cfg, rule, seed)?),
        })
    }
}

/// Everything a run produced. On failure `error` is set and `log` holds the
/// rows written before the failure.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub log: MetricsLog,
    pub isolation_violations: Vec<String>,
    pub checkpoints: Vec<(String, Checkpoint)>,
    pub error: Option<Error>,
}

impl RunOutput {
    fn absorb(&mut self, other: RunOutput) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.log.extend(other.log) {
            self.error = Some(e);
            return;
        }
        self.isolation_violations.extend(other.isolation_violations);
        self.checkpoints.extend(other.checkpoints);
        self.error = other.error;
    }

    pub fn into_result(self) -> Result<(MetricsLog, Vec<String>)> {
        match self.error {
            Some(e) => Err(e),
            None => Ok((self.log, self.isolation_violations)),
        }
    }
}

/// Compact order tag, e.g. `0-1-2-3-4-5`.
pub fn order_tag(order: &[usize]) -> String {
    order.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

/// The fixed held-out trials of a task.
pub fn eval_trials(suite: &TaskSuite, cfg: &ExperimentConfig, seed: u64, task: usize, n: usize) -> Result<Vec<Trial>> {
    (0..n as u64).map(|i| sample_trial_indexed(suite, task, &cfg.gen, seed, stream::EVAL_TRIALS, i)).collect()
}

/// One learner, one run id, one growing log.
pub struct Session<'a, L: ContinualLearner + ?Sized> {
    pub cfg: &'a ExperimentConfig,
    pub suite: TaskSuite,
    pub seed: u64,
    pub run_id: String,
    pub learner: &'a mut L,
    pub log: MetricsLog,
    pub step: u64,
    next_index: Vec<u64>,
    trained: Vec<usize>,
    eval_sets: BTreeMap<usize, Vec<Trial>>,
}

impl<'a, L: ContinualLearner + ?Sized> Session<'a, L> {
    pub fn new(cfg: &'a ExperimentConfig, seed: u64, run_id: String, learner: &'a mut L) -> Self {
        let suite = cfg.suite();
        Self {
            next_index: vec![0; suite.tasks.len()],
            suite,
            cfg,
            seed,
            run_id,
            learner,
            log: MetricsLog::new(),
            step: 0,
            trained: Vec::new(),
            eval_sets: BTreeMap::new(),
        }
    }

    /// Trains `task` for `n_batches` batches of `batch_size`, evaluating every
    /// `eval_every` batches and after the last one.
    pub fn train_task(&mut self, task: usize, n_batches: usize, batch_size: usize, eval_every: usize, phase: &str) -> Result<()> {
        if !self.trained.contains(&task) {
            self.trained.push(task);
        }
        for b in 0..n_batches {
            let first = self.next_index[task];
            let batch: Vec<Trial> = (0..batch_size as u64)
                .map(|i| sample_trial_indexed(&self.suite, task, &self.cfg.gen, self.seed, stream::TRAIN_TRIALS, first + i))
                .collect::<Result<_>>()?;
            self.learner.train_batch(task, &batch, first)?;
            self.next_index[task] += batch_size as u64;
            self.step += 1;
            if (b + 1) % eval_every == 0 || b + 1 == n_batches {
                self.evaluate(phase, task)?;
            }
        }
        self.learner.end_task(task)
    }

    /// Adds one row per evaluable task trained so far in this session.
    pub fn evaluate(&mut self, phase: &str, trained_task: usize) -> Result<()> {
        self.evaluate_tasks(phase, trained_task, &self.trained.clone())
    }

    pub fn evaluate_tasks(&mut self, phase: &str, trained_task: usize, tasks: &[usize]) -> Result<()> {
        let before = self.learner.state_checksum();
        for &task in tasks {
            if !self.learner.can_evaluate(task) {
                continue;
            }
            if !self.eval_sets.contains_key(&task) {
                let set = eval_trials(&self.suite, self.cfg, self.seed, task, self.cfg.n_eval)?;
                self.eval_sets.insert(task, set);
            }
            let s = self.learner.evaluate(task, &self.eval_sets[&task])?;
            self.log.push(MetricRow {
                run_id: self.run_id.clone(),
                seed: self.seed,
                phase: phase.to_string(),
                global_step: self.step,
                trained_task: self.suite.tasks[trained_task].name.clone(),
                eval_task: self.suite.tasks[task].name.clone(),
                test_loss: Some(s.loss),
                performance: Some(s.performance),
                task_model_ll: s.task_model_ll,
            })?;
        }
        if self.learner.state_checksum() != before {
            return Err(Error::Shape(format!("evaluation changed the state of {}", self.learner.label())));
        }
        Ok(())
    }

    fn finish(self, result: Result<()>) -> RunOutput {
        RunOutput {
            isolation_violations: self.learner.isolation_violations().iter().map(|v| format!("{}: {v}", self.run_id)).collect(),
            checkpoints: vec![(self.run_id.clone(), self.learner.checkpoint())],
            log: self.log,
            error: result.err(),
        }
    }
}

/// Sequential training on one task order with one seed.
pub fn run_continual_single(cfg: &ExperimentConfig, kind: LearnerKind, order: &[usize], seed: u64) -> RunOutput {
    let mut learner = match kind.build(cfg, seed) {
        Ok(l) => l,
        Err(e) => return RunOutput { error: Some(e), ..RunOutput::default() },
    };
    let run_id = format!("continual/{}/{}/s{seed}", kind.label(), order_tag(order));
    let mut s = Session::new(cfg, seed, run_id, learner.as_mut());
    let result = order
        .iter()
        .try_for_each(|&task| s.train_task(task, cfg.batches_per_task, cfg.batch_size, cfg.eval_every, "continual"));
    s.finish(result)
}

/// Every configured order with every configured seed.
pub fn run_continual(cfg: &ExperimentConfig, kind: LearnerKind) -> RunOutput {
    let mut out = RunOutput::default();
    let suite = cfg.suite();
    for order in &cfg.orders {
        let order = match cfg.resolve_order(&suite, order) {
            Ok(o) => o,
            Err(e) => {
                out.error = Some(e);
                return out;
            }
        };
        for &seed in &cfg.seeds {
            out.absorb(run_continual_single(cfg, kind, &order, seed));
            if out.error.is_some() {
                return out;
            }
        }
    }
    out
}

fn resolve_pairs(cfg: &ExperimentConfig) -> Result<Vec<(usize, usize)>> {
    let suite = cfg.suite();
    cfg.transfer
        .pairs
        .iter()
        .map(|[a, b]| Ok((suite.task_by_name(a)?.id, suite.task_by_name(b)?.id)))
        .collect()
}

/// For each pair `(A, B)`: `A` then `B` (phases `first`, `second`), and `B`
/// from scratch (phase `second` of a `scratch>B` run).
pub fn run_transfer_forward(cfg: &ExperimentConfig, kind: LearnerKind, seed: u64) -> RunOutput {
    let mut out = RunOutput::default();
    let pairs = match resolve_pairs(cfg) {
        Ok(p) => p,
        Err(e) => return RunOutput { error: Some(e), ..RunOutput::default() },
    };
    let suite = cfg.suite();
    let mut scratch_done = Vec::new();
    for (a, b) in pairs {
        let (na, nb) = (&suite.tasks[a].name, &suite.tasks[b].name);
        let run = || -> RunOutput {
            let mut learner = match kind.build(cfg, seed) {
                Ok(l) => l,
                Err(e) => return RunOutput { error: Some(e), ..RunOutput::default() },
            };
            let mut s = Session::new(cfg, seed, format!("transfer_fwd/{}/{na}>{nb}/s{seed}", kind.label()), learner.as_mut());
            let r = s
                .train_task(a, cfg.batches_per_task, cfg.batch_size, cfg.eval_every, "first")
                .and_then(|_| s.train_task(b, cfg.batches_per_task, cfg.batch_size, cfg.eval_every, "second"));
            s.finish(r)
        };
        out.absorb(run());
        if !scratch_done.contains(&b) && out.error.is_none() {
            scratch_done.push(b);
            let mut learner = match kind.build(cfg, seed) {
                Ok(l) => l,
                Err(e) => {
                    out.error = Some(e);
                    return out;
                }
            };
            let mut s = Session::new(cfg, seed, format!("transfer_fwd/{}/scratch>{nb}/s{seed}", kind.label()), learner.as_mut());
            let r = s.train_task(b, cfg.batches_per_task, cfg.batch_size, cfg.eval_every, "second");
            out.absorb(s.finish(r));
        }
        if out.error.is_some() {
            break;
        }
    }
    out
}

/// For each pair `(A, B)`: `A` on the short budget, then `B` in full, with
/// both evaluated throughout.
pub fn run_transfer_backward(cfg: &ExperimentConfig, kind: LearnerKind, seed: u64) -> RunOutput {
    let mut out = RunOutput::default();
    let pairs = match resolve_pairs(cfg) {
        Ok(p) => p,
        Err(e) => return RunOutput { error: Some(e), ..RunOutput::default() },
    };
    let suite = cfg.suite();
    for (a, b) in pairs {
        let (na, nb) = (&suite.tasks[a].name, &suite.tasks[b].name);
        let mut learner = match kind.build(cfg, seed) {
            Ok(l) => l,
            Err(e) => {
                out.error = Some(e);
                return out;
            }
        };
        let mut s = Session::new(cfg, seed, format!("transfer_bwd/{}/{na}>{nb}/s{seed}", kind.label()), learner.as_mut());
        let r = s
            .train_task(a, cfg.transfer.short_budget, cfg.batch_size, cfg.eval_every, "first")
            .and_then(|_| s.train_task(b, cfg.batches_per_task, cfg.batch_size, cfg.eval_every, "second"));
        out.absorb(s.finish(r));
        if out.error.is_some() {
            break;
        }
    }
    out
}

/// Pretrains every learner on the compgen pretraining tasks, then adapts to the
/// target task: the context network frozen with only the task model learning,
/// the baselines by full-model training.
pub fn run_compgen(cfg: &ExperimentConfig, seed: u64) -> RunOutput {
    let mut out = RunOutput::default();
    let r = (|| -> Result<()> {
        let suite = cfg.suite();
        let pre: Vec<usize> = cfg.compgen.pretrain.iter().map(|n| suite.task_by_name(n).map(|t| t.id)).collect::<Result<_>>()?;
        let target = suite.task_by_name(&cfg.compgen.target)?.id;
        let target_name = suite.tasks[target].name.clone();

        // context network
        let mut learner = ContextLearner::new(cfg, seed)?;
        let mut s = Session::new(cfg, seed, format!("compgen/context_rnn/s{seed}/pretrain"), &mut learner);
        let r = pre.iter().try_for_each(|&t| s.train_task(t, cfg.batches_per_task, cfg.batch_size, cfg.eval_every, "pretrain"));
        out.absorb(s.finish(r));
        if out.error.is_some() {
            return Ok(());
        }
        let frozen = learner.bank.checksum(&learner.bank.allocated());
        let mut s = Session::new(cfg, seed, format!("compgen/context_rnn/s{seed}/adapt"), &mut learner);
        let r = (|| -> Result<()> {
            for k in 0..cfg.compgen.max_trials as u64 {
                let tr = sample_trial_indexed(&s.suite, target, &cfg.gen, seed, stream::TRAIN_TRIALS, k)?;
                s.learner.learn_taskmodel_trial(&tr)?;
                s.step = k + 1;
                if s.step.is_multiple_of(cfg.compgen.eval_every as u64) || s.step == 1 || s.step == cfg.compgen.max_trials as u64 {
                    s.evaluate_tasks("adapt", target, &[target])?;
                }
            }
            Ok(())
        })();
        let mut adapted = s.finish(r);
        if learner.bank.checksum(&learner.bank.allocated()) != frozen {
            adapted.isolation_violations.push(format!("compgen/context_rnn/s{seed}: frozen network changed"));
        }
        out.absorb(adapted);
        if out.error.is_some() {
            return Ok(());
        }

        // baselines
        for rule in Rule::ALL {
            let mut learner = BaselineLearner::new(cfg, rule, seed)?;
            let label = rule.name();
            let mut s = Session::new(cfg, seed, format!("compgen/{label}/s{seed}/pretrain"), &mut learner);
            let r = pre.iter().try_for_each(|&t| s.train_task(t, cfg.batches_per_task, cfg.batch_size, cfg.eval_every, "pretrain"));
            out.absorb(s.finish(r));
            if out.error.is_some() {
                return Ok(());
            }
            let bs = cfg.compgen.baseline_batch_size;
            let n_batches = cfg.compgen.baseline_trials.div_ceil(bs);
            let mut s = Session::new(cfg, seed, format!("compgen/{label}/s{seed}/adapt"), &mut learner);
            let r = (|| -> Result<()> {
                for b in 0..n_batches as u64 {
                    let first = b * bs as u64;
                    let batch: Vec<Trial> = (0..bs as u64)
                        .map(|i| sample_trial_indexed(&s.suite, target, &cfg.gen, seed, stream::TRAIN_TRIALS, first + i))
                        .collect::<Result<_>>()?;
                    s.learner.train_batch(target, &batch, first)?;
                    s.step = first + bs as u64;
                    s.evaluate_tasks("adapt", target, &[target])?;
                }
                Ok(())
            })();
            out.absorb(s.finish(r));
            if out.error.is_some() {
                return Ok(());
            }
        }

        let mut refs = MetricsLog::new();
        for (name, perf) in COMPGEN_REFERENCE {
            refs.push(MetricRow {
                run_id: format!("compgen/reference/{name}/s{seed}"),
                seed,
                phase: "reference".into(),
                global_step: 512,
                trained_task: target_name.clone(),
                eval_task: target_name.clone(),
                test_loss: None,
                performance: Some(perf),
                task_model_ll: None,
            })?;
        }
        out.absorb(RunOutput { log: refs, ..RunOutput::default() });
        Ok(())
    })();
    if let Err(e) = r {
        out.error.get_or_insert(e);
    }
    out
}

/// Fraction of time steps whose argmax slot maps to the true epoch (F and M
/// merged), with each slot mapped to the true epoch it most often coincides with.
pub fn epoch_accuracy(gatings: &[crate::Gating], trials: &[Trial], suite: &TaskSuite) -> f64 {
    let n_epochs = suite.epochs.len();
    let argmaxes: Vec<Vec<usize>> = gatings
        .iter()
        .map(|g| {
            g.rows()
                .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (z, &p)| if p > b.1 { (z, p) } else { b }).0)
                .collect()
        })
        .collect();
    let n_slots = gatings.first().map_or(0, |g| g.n_ctx());
    let mut votes = vec![vec![0usize; n_epochs]; n_slots];
    for (am, tr) in argmaxes.iter().zip(trials) {
        for (t, &z) in am.iter().enumerate() {
            votes[z][suite.merged_epoch(tr.z_true[t])] += 1;
        }
    }
    let map: Vec<usize> = votes.iter().map(|v| (0..n_epochs).max_by_key(|&e| (v[e], std::cmp::Reverse(e))).unwrap_or(0)).collect();
    let (mut hit, mut tot) = (0usize, 0usize);
    for (am, tr) in argmaxes.iter().zip(trials) {
        for (t, &z) in am.iter().enumerate() {
            hit += (map[z] == suite.merged_epoch(tr.z_true[t])) as usize;
            tot += 1;
        }
    }
    if tot == 0 {
        0.0
    } else {
        hit as f64 / tot as f64
    }
}

/// Task model alone: `taskmodel_trials_per_task` trials per task in order,
/// with held-out LL and test-time epoch accuracy every few trials, and the
/// ground-truth-parameter LL of each task as a `reference` row.
pub fn run_taskmodel(cfg: &ExperimentConfig, order: &[usize], seed: u64) -> (RunOutput, Option<TaskModel>) {
    let mut out = RunOutput::default();
    let run_id = format!("taskmodel/{}/s{seed}", order_tag(order));
    let r = (|| -> Result<TaskModel> {
        let suite = cfg.suite();
        let reference = ReferenceModel::fit(&suite, &cfg.gen, REFERENCE_PATHS)?;
        let mut held = BTreeMap::new();
        let mut refs = MetricsLog::new();
        for &c in order {
            let trials = eval_trials(&suite, cfg, seed, c, cfg.n_eval)?;
            let gt: f64 = trials.iter().map(|t| ground_truth_ll(&reference, t)).sum::<Result<f64>>()? / trials.len() as f64;
            refs.push(MetricRow {
                run_id: format!("{run_id}/reference"),
                seed,
                phase: "reference".into(),
                global_step: 0,
                trained_task: String::new(),
                eval_task: suite.tasks[c].name.clone(),
                test_loss: None,
                performance: None,
                task_model_ll: Some(gt),
            })?;
            held.insert(c, trials);
        }
        out.log.extend(refs)?;
        let mut tm = TaskModel::new(cfg.taskmodel.clone())?;
        let mut seen: Vec<usize> = Vec::new();
        let mut step = 0u64;
        for &c in order {
            seen.push(c);
            for i in 0..cfg.taskmodel_trials_per_task {
                let tr = sample_trial_indexed(&suite, c, &cfg.gen, seed, stream::TASKMODEL_TRIALS, i as u64)?;
                tm.learn_trial(&tr)?;
                step += 1;
                if (i + 1) % TASKMODEL_EVAL_EVERY == 0 || i + 1 == cfg.taskmodel_trials_per_task {
                    for &e in &seen {
                        let trials = &held[&e];
                        let ll = trials.iter().map(|t| tm.log_likelihood(t)).sum::<Result<f64>>()? / trials.len() as f64;
                        let gatings: Vec<crate::Gating> =
                            trials.iter().map(|t| tm.test_time_infer(&t.s, e)).collect::<Result<_>>()?;
                        out.log.push(MetricRow {
                            run_id: run_id.clone(),
                            seed,
                            phase: "taskmodel".into(),
                            global_step: step,
                            trained_task: suite.tasks[c].name.clone(),
                            eval_task: suite.tasks[e].name.clone(),
                            test_loss: None,
                            performance: Some(epoch_accuracy(&gatings, trials, &suite)),
                            task_model_ll: Some(ll),
                        })?;
                    }
                }
            }
        }
        Ok(tm)
    })();
    match r {
        Ok(tm) => {
            out.checkpoints.push((run_id, Checkpoint::TaskModel(tm.clone())));
            (out, Some(tm))
        }
        Err(e) => {
            out.error = Some(e);
            (out, None)
        }
    }
}

/// Batches into phase `second` until the test loss of `task` first falls to
/// `threshold`, if it ever does.
pub fn steps_to_loss(log: &MetricsLog, run_id: &str, task: &str, threshold: f64) -> Option<u64> {
    let rows: Vec<&MetricRow> =
        log.rows().iter().filter(|r| r.run_id == run_id && r.phase == "second" && r.eval_task == task).collect();
    let start = log.rows().iter().filter(|r| r.run_id == run_id && r.phase == "first").map(|r| r.global_step).max().unwrap_or(0);
    rows.iter().find(|r| r.test_loss.is_some_and(|l| l <= threshold)).map(|r| r.global_step - start)
}
