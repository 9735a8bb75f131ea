//! Expected sufficient statistics and the gated, blended M-step.

use super::{build_view, EncounterTables, PosteriorBundle, SuffStats, TaskModel, TaskModelParams};
use crate::taskgen::Trial;
use crate::{Result, OBS_DIM};

/// Which parameters an M-step may touch.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMask {
    /// `[z][x]`
    pub emissions: Vec<bool>,
    /// Tasks whose transition and initial rows are updated.
    pub tasks: Vec<usize>,
    pub sigma: bool,
}

impl GateMask {
    /// Emission cells visited with more than `thresh` posterior mass in this
    /// trial, and the rows of task `c`.
    pub fn from_posterior(post: &PosteriorBundle, c: usize, thresh: f64) -> Self {
        Self::from_posteriors(std::iter::once((post, c)), thresh)
    }

    fn from_posteriors<'a>(posts: impl Iterator<Item = (&'a PosteriorBundle, usize)>, thresh: f64) -> Self {
        let mut emissions = Vec::new();
        let mut tasks = Vec::new();
        for (post, c) in posts {
            let n_slots = post.slots.iter().max().map_or(0, |m| m + 1);
            let need = n_slots.max(emissions.len() / post.n_x.max(1)) * post.n_x;
            if emissions.len() < need {
                emissions.resize(need, false);
            }
            for (zl, &z) in post.slots.iter().enumerate() {
                for x in 0..post.n_x {
                    if post.visits(zl, x) > thresh {
                        emissions[z * post.n_x + x] = true;
                    }
                }
            }
            if !tasks.contains(&c) {
                tasks.push(c);
            }
        }
        Self { emissions, tasks, sigma: true }
    }

    fn emission(&self, z: usize, x: usize, n_x: usize) -> bool {
        self.emissions.get(z * n_x + x).copied().unwrap_or(false)
    }
}

/// Single-trial expected statistics from a posterior over task `c`, shaped
/// like `shape`.
pub fn trial_stats(post: &PosteriorBundle, obs: &[[f64; OBS_DIM]], c: usize, shape: &SuffStats) -> SuffStats {
    let mut out = SuffStats::zeros(shape.z_slots, shape.c_slots, shape.n_x);
    let (nx, zs) = (shape.n_x, shape.z_slots);
    let nz = post.nz();
    for (t, q) in obs.iter().enumerate() {
        let sq: f64 = q.iter().map(|v| v * v).sum();
        for (zl, &z) in post.slots.iter().enumerate() {
            for x in 0..nx {
                let g = post.gamma_local(t, zl, x);
                if g == 0.0 {
                    continue;
                }
                let i = z * nx + x;
                out.em_count[i] += g;
                out.em_sq[i] += g * sq;
                for k in 0..OBS_DIM {
                    out.em_sum[i][k] += g * q[k];
                }
            }
        }
    }
    for (zl, &z) in post.slots.iter().enumerate() {
        out.init[c * zs + z] = (0..nx).map(|x| post.gamma_local(0, zl, x)).sum();
    }
    for t in 0..post.t_len.saturating_sub(1) {
        for a in 0..nz {
            for b in 0..nz {
                let v: f64 = (0..nx).map(|x| post.xi_local(t, a, b, x)).sum();
                out.trans[(c * zs + post.slots[a]) * zs + post.slots[b]] += v;
            }
        }
    }
    out
}

/// `Θ ← Θ ⊙ (1 − η M) + η f(S) ⊙ M`, with `f` the maximum-likelihood map from
/// statistics to parameters. Cells whose statistics are empty are left alone.
pub fn em_update(
    base: &TaskModelParams,
    tables: &EncounterTables,
    stats: &SuffStats,
    mask: &GateMask,
    eta: f64,
) -> TaskModelParams {
    let mut out = base.clone();
    let (nx, zs) = (base.n_x, base.z_slots);
    let mut resid = 0.0;
    let mut mass = 0.0;
    for z in 0..zs {
        for x in 0..nx {
            let i = z * nx + x;
            let n = stats.em_count[i];
            if n <= 0.0 {
                continue;
            }
            let ml: [f64; OBS_DIM] = std::array::from_fn(|k| stats.em_sum[i][k] / n);
            let norm2: f64 = stats.em_sum[i].iter().map(|v| v * v).sum::<f64>() / n;
            resid += (stats.em_sq[i] - norm2).max(0.0);
            mass += n;
            if mask.emission(z, x, nx) {
                let m = &mut out.q_hat[i];
                for k in 0..OBS_DIM {
                    m[k] = (1.0 - eta) * m[k] + eta * ml[k];
                }
            }
        }
    }
    if mask.sigma && mass > 0.0 {
        let var_ml = resid / (OBS_DIM as f64 * mass);
        let var = (1.0 - eta) * base.sigma_hat * base.sigma_hat + eta * var_ml;
        out.sigma_hat = var.sqrt().max(1e-6);
    }
    for &c in &mask.tasks {
        let epochs = tables.epochs_of(c);
        for &z in &epochs {
            let row = &stats.trans[(c * zs + z) * zs..(c * zs + z + 1) * zs];
            let n: f64 = row.iter().sum();
            if n <= 0.0 {
                continue;
            }
            let dst = out.trans_row_mut(c, z);
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (1.0 - eta) * *d + eta * v / n;
            }
        }
        let init = &stats.init[c * zs..(c + 1) * zs];
        let n: f64 = init.iter().sum();
        if n > 0.0 {
            let dst = out.init_row_mut(c);
            for (d, &v) in dst.iter_mut().zip(init) {
                *d = (1.0 - eta) * *d + eta * v / n;
            }
        }
    }
    out
}

/// Full-batch EM over `trials` starting from the model's current parameters,
/// with every cell the data touches updated outright. Returns the total
/// log-likelihood measured in each E-step.
pub fn batch_em(model: &mut TaskModel, trials: &[Trial], iters: usize) -> Result<Vec<f64>> {
    let mut lls = Vec::with_capacity(iters);
    for _ in 0..iters {
        let mut total = SuffStats::zeros(model.cfg.z_slots, model.cfg.c_slots, model.cfg.n_x);
        let mut ll = 0.0;
        let mut posts = Vec::with_capacity(trials.len());
        for tr in trials {
            let view = build_view(&model.params, &model.tables, tr.task)?;
            let obs = tr.observations();
            let post = view.smooth(&view.log_emissions(&obs))?;
            ll += post.ll;
            total.add_assign(&trial_stats(&post, &obs, tr.task, &total));
            posts.push((post, tr.task));
        }
        let mask = GateMask::from_posteriors(posts.iter().map(|(p, c)| (p, *c)), 0.0);
        model.params = em_update(&model.params, &model.tables, &total, &mask, 1.0);
        lls.push(ll);
    }
    Ok(lls)
}
