//! The "what" system: a task-conditioned HMM over epochs `z` and a per-trial
//! variable `x`, learned online with incremental EM and used to infer the
//! time-varying context of a trial.
//!
//! Epochs and trial variables are discovered, not given. Each slot index is a
//! learned cluster; the encounter tables record which `(task, x̃)` and
//! `(x̃, z̃)` combinations exist so far.

mod em;
mod hmm;
mod init;

pub use em::{batch_em, em_update, trial_stats, GateMask};
pub use hmm::{ForwardPass, HmmView, PosteriorBundle};
pub use init::{cluster_segments, incremental_init, segment, Cluster, InitOutcome, Segment};

#[cfg(test)]
pub(crate) use hmm::oracle as hmm_oracle;

use serde::{Deserialize, Serialize};

use crate::taskgen::Trial;
use crate::{Error, Gating, Result, INPUT_DIM, OBS_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskModelConfig {
    /// Epoch slots `Ẑ`.
    pub z_slots: usize,
    /// Task slots `Ĉ`.
    pub c_slots: usize,
    /// Trial-variable slots.
    pub n_x: usize,
    pub eta_params: f64,
    pub eta_stats: f64,
    pub em_iters: usize,
    /// Familiarity radius in units of `σ̂` (Euclidean over all channels).
    pub match_tol_sigmas: f64,
    /// Change-point threshold on `‖q_t − q_{t−1}‖`, in units of `σ̂`.
    pub seg_thresh_sigmas: f64,
    /// Segments shorter than this are treated as noise during initialization.
    pub min_segment_len: usize,
    /// Minimum posterior visitation for an emission cell to be updated.
    pub gate_thresh: f64,
    pub sigma_init: f64,
    /// Self-transition of a freshly initialized task row.
    pub new_task_self_prob: f64,
}

impl Default for TaskModelConfig {
    fn default() -> Self {
        Self {
            z_slots: 16,
            c_slots: 12,
            n_x: 8,
            eta_params: 0.2,
            eta_stats: 0.02,
            em_iters: 2,
            match_tol_sigmas: 4.0,
            seg_thresh_sigmas: 6.0,
            min_segment_len: 3,
            gate_thresh: 0.01,
            sigma_init: 0.1,
            new_task_self_prob: 0.8,
        }
    }
}

impl TaskModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("taskmodel: {m}")));
        if self.z_slots == 0 || self.c_slots == 0 || self.n_x == 0 {
            return bad("slot counts must be positive");
        }
        if !(self.eta_params > 0.0 && self.eta_params <= 1.0) {
            return bad("eta_params must lie in (0, 1]");
        }
        if !(self.eta_stats >= 0.0 && self.eta_stats < 1.0) {
            return bad("eta_stats must lie in [0, 1)");
        }
        if self.em_iters == 0 {
            return bad("em_iters must be at least 1");
        }
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return bad("sigma_init must be positive");
        }
        if !(self.match_tol_sigmas > 0.0 && self.seg_thresh_sigmas > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.gate_thresh >= 0.0) {
            return bad("gate_thresh must be non-negative");
        }
        if !(self.new_task_self_prob > 0.0 && self.new_task_self_prob <= 1.0) {
            return bad("new_task_self_prob must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Learned parameters. Tables are flat and row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModelParams {
    pub z_slots: usize,
    pub c_slots: usize,
    pub n_x: usize,
    /// `[z][x]` emission means.
    pub q_hat: Vec<[f64; OBS_DIM]>,
    pub sigma_hat: f64,
    /// `[c][z][z′]`
    pub lambda_hat: Vec<f64>,
    /// `[c][z]`
    pub pi_hat: Vec<f64>,
}

impl TaskModelParams {
    pub fn new(z_slots: usize, c_slots: usize, n_x: usize, sigma: f64) -> Self {
        Self {
            z_slots,
            c_slots,
            n_x,
            q_hat: vec![[0.0; OBS_DIM]; z_slots * n_x],
            sigma_hat: sigma,
            lambda_hat: vec![0.0; c_slots * z_slots * z_slots],
            pi_hat: vec![0.0; c_slots * z_slots],
        }
    }

    pub fn mean(&self, z: usize, x: usize) -> &[f64; OBS_DIM] {
        &self.q_hat[z * self.n_x + x]
    }

    pub fn mean_mut(&mut self, z: usize, x: usize) -> &mut [f64; OBS_DIM] {
        &mut self.q_hat[z * self.n_x + x]
    }

    pub fn trans(&self, c: usize, z: usize, zn: usize) -> f64 {
        self.lambda_hat[(c * self.z_slots + z) * self.z_slots + zn]
    }

    pub fn trans_row_mut(&mut self, c: usize, z: usize) -> &mut [f64] {
        let i = (c * self.z_slots + z) * self.z_slots;
        &mut self.lambda_hat[i..i + self.z_slots]
    }

    pub fn init(&self, c: usize, z: usize) -> f64 {
        self.pi_hat[c * self.z_slots + z]
    }

    pub fn init_row_mut(&mut self, c: usize) -> &mut [f64] {
        let i = c * self.z_slots;
        &mut self.pi_hat[i..i + self.z_slots]
    }
}

/// Monotone records of which slot combinations have been seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterTables {
    pub z_slots: usize,
    pub c_slots: usize,
    pub n_x: usize,
    /// `[c][x]`
    pub f_cx: Vec<bool>,
    /// `[x][z]`
    pub f_xz: Vec<bool>,
    /// `[c][z]`: epochs that task `c` can occupy.
    pub task_epochs: Vec<bool>,
}

impl EncounterTables {
    pub fn new(z_slots: usize, c_slots: usize, n_x: usize) -> Self {
        Self {
            z_slots,
            c_slots,
            n_x,
            f_cx: vec![false; c_slots * n_x],
            f_xz: vec![false; n_x * z_slots],
            task_epochs: vec![false; c_slots * z_slots],
        }
    }

    pub fn cx(&self, c: usize, x: usize) -> bool {
        self.f_cx[c * self.n_x + x]
    }

    pub fn xz(&self, x: usize, z: usize) -> bool {
        self.f_xz[x * self.z_slots + z]
    }

    pub fn task_seen(&self, c: usize) -> bool {
        c < self.c_slots && (0..self.n_x).any(|x| self.cx(c, x))
    }

    pub fn epochs_of(&self, c: usize) -> Vec<usize> {
        (0..self.z_slots).filter(|&z| self.task_epochs[c * self.z_slots + z]).collect()
    }

    /// Epoch slots seeded under at least one trial variable.
    pub fn encountered_epochs(&self) -> Vec<usize> {
        (0..self.z_slots).filter(|&z| (0..self.n_x).any(|x| self.xz(x, z))).collect()
    }

    /// True if every bit set in `self` is also set in `later`.
    pub fn is_subset_of(&self, later: &EncounterTables) -> bool {
        let sub = |a: &[bool], b: &[bool]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| !x || *y);
        sub(&self.f_cx, &later.f_cx) && sub(&self.f_xz, &later.f_xz) && sub(&self.task_epochs, &later.task_epochs)
    }
}

/// Decayed expected sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    pub z_slots: usize,
    pub c_slots: usize,
    pub n_x: usize,
    /// `[z][x]` `Σ γ q`
    pub em_sum: Vec<[f64; OBS_DIM]>,
    /// `[z][x]` `Σ γ`
    pub em_count: Vec<f64>,
    /// `[z][x]` `Σ γ ‖q‖²`
    pub em_sq: Vec<f64>,
    /// `[c][z][z′]`
    pub trans: Vec<f64>,
    /// `[c][z]`
    pub init: Vec<f64>,
}

impl SuffStats {
    pub fn zeros(z_slots: usize, c_slots: usize, n_x: usize) -> Self {
        Self {
            z_slots,
            c_slots,
            n_x,
            em_sum: vec![[0.0; OBS_DIM]; z_slots * n_x],
            em_count: vec![0.0; z_slots * n_x],
            em_sq: vec![0.0; z_slots * n_x],
            trans: vec![0.0; c_slots * z_slots * z_slots],
            init: vec![0.0; c_slots * z_slots],
        }
    }

    /// `decay · self + other`
    pub fn decayed_plus(&self, decay: f64, other: &SuffStats) -> SuffStats {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| decay * x + y).collect::<Vec<_>>();
        SuffStats {
            em_sum: self
                .em_sum
                .iter()
                .zip(&other.em_sum)
                .map(|(a, b)| std::array::from_fn(|k| decay * a[k] + b[k]))
                .collect(),
            em_count: mix(&self.em_count, &other.em_count),
            em_sq: mix(&self.em_sq, &other.em_sq),
            trans: mix(&self.trans, &other.trans),
            init: mix(&self.init, &other.init),
            ..*self
        }
    }

    pub fn add_assign(&mut self, other: &SuffStats) {
        *self = self.decayed_plus(1.0, other);
    }

    pub fn total_count(&self) -> f64 {
        self.em_count.iter().sum()
    }
}

/// Outcome of one online learning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_index: u64,
    pub task: usize,
    /// Log-likelihood of the trial under the parameters right after initialization.
    pub ll: f64,
    pub x_tilde: usize,
    /// `(z, x)` cells seeded by this trial.
    pub new_cells: Vec<(usize, usize)>,
    pub n_encountered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub cfg: TaskModelConfig,
    pub params: TaskModelParams,
    pub stats: SuffStats,
    pub tables: EncounterTables,
    pub n_trials: u64,
}

impl TaskModel {
    pub fn new(cfg: TaskModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            params: TaskModelParams::new(cfg.z_slots, cfg.c_slots, cfg.n_x, cfg.sigma_init),
            stats: SuffStats::zeros(cfg.z_slots, cfg.c_slots, cfg.n_x),
            tables: EncounterTables::new(cfg.z_slots, cfg.c_slots, cfg.n_x),
            n_trials: 0,
            cfg,
        })
    }

    pub fn z_slots(&self) -> usize {
        self.cfg.z_slots
    }

    /// The HMM of task `c` restricted to its epochs and trial variables.
    pub fn view(&self, c: usize) -> Result<HmmView> {
        build_view(&self.params, &self.tables, c)
    }

    pub fn smooth(&self, obs: &[[f64; OBS_DIM]], c: usize) -> Result<PosteriorBundle> {
        let v = self.view(c)?;
        v.smooth(&v.log_emissions(obs))
    }

    /// `log p(q_{1:T} | c)` of a trial.
    pub fn log_likelihood(&self, trial: &Trial) -> Result<f64> {
        let v = self.view(trial.task)?;
        Ok(v.forward(&v.log_emissions(&trial.observations()))?.ll)
    }

    /// Training-time context `p(z_t | s_{1:t}, y_{1:t}, c)`.
    pub fn train_time_infer(&self, trial: &Trial) -> Result<Gating> {
        self.filter(&trial.observations(), trial.task)
    }

    /// Test-time context `p(z_t | s_{1:t}, c)`, from the inputs alone.
    pub fn test_time_infer(&self, s: &[[f64; INPUT_DIM]], c: usize) -> Result<Gating> {
        self.filter(s, c)
    }

    fn filter<O: AsRef<[f64]>>(&self, obs: &[O], c: usize) -> Result<Gating> {
        let v = self.view(c)?;
        let probs = v.filter(&v.log_emissions(obs))?;
        Ok(Gating::new(self.cfg.z_slots, probs))
    }

    /// One online incremental-EM step on a labelled trial. On error the model
    /// is left untouched.
    pub fn learn_trial(&mut self, trial: &Trial) -> Result<TrialReport> {
        let c = trial.task;
        let obs = trial.observations();
        let mut params = self.params.clone();
        let mut tables = self.tables.clone();
        let outcome = incremental_init(&mut params, &mut tables, &obs, c, &self.cfg)?;

        let base = params.clone();
        let mut temp = params;
        let mut stats_hat = self.stats.clone();
        let mut ll = f64::NAN;
        for k in 0..self.cfg.em_iters {
            let view = build_view(&temp, &tables, c)?;
            let post = view.smooth(&view.log_emissions(&obs))?;
            if k == 0 {
                ll = post.ll;
            }
            let x = trial_stats(&post, &obs, c, &self.stats);
            let mask = GateMask::from_posterior(&post, c, self.cfg.gate_thresh);
            stats_hat = self.stats.decayed_plus(1.0 - self.cfg.eta_stats, &x);
            temp = em_update(&base, &tables, &stats_hat, &mask, self.cfg.eta_params);
        }
        if !temp.sigma_hat.is_finite() || temp.q_hat.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: 0 });
        }
        self.params = temp;
        self.stats = stats_hat;
        self.tables = tables;
        let report = TrialReport {
            trial_index: self.n_trials,
            task: c,
            ll,
            x_tilde: outcome.x_tilde,
            new_cells: outcome.new_cells,
            n_encountered: self.tables.encountered_epochs().len(),
        };
        self.n_trials += 1;
        Ok(report)
    }
}

pub(crate) fn build_view(params: &TaskModelParams, tables: &EncounterTables, c: usize) -> Result<HmmView> {
    if !tables.task_seen(c) {
        return Err(Error::UnseenTask { task: c });
    }
    let slots = tables.epochs_of(c);
    let nx = params.n_x;
    let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let marked: Vec<bool> = (0..nx).map(|x| tables.cx(c, x)).collect();
    let n_marked = marked.iter().filter(|&&m| m).count() as f64;
    let mut log_trans = Vec::with_capacity(slots.len() * slots.len());
    for &z in &slots {
        for &zn in &slots {
            log_trans.push(ln(params.trans(c, z, zn)));
        }
    }
    let mut means = Vec::with_capacity(slots.len() * nx);
    let mut valid = Vec::with_capacity(slots.len() * nx);
    for &z in &slots {
        for x in 0..nx {
            means.push(*params.mean(z, x));
            valid.push(marked[x] && tables.xz(x, z));
        }
    }
    Ok(HmmView {
        task: c,
        log_init: slots.iter().map(|&z| ln(params.init(c, z))).collect(),
        slots,
        n_slots: params.z_slots,
        n_x: nx,
        log_trans,
        means,
        valid,
        sigma: params.sigma_hat,
        log_x_prior: marked.iter().map(|&m| if m { -n_marked.ln() } else { f64::NEG_INFINITY }).collect(),
    })
}
