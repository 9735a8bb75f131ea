//! Incremental initialization: find the piecewise-constant pieces of a trial,
//! recognize the ones that match known emission means, pick the trial
//! variable slot `x̃`, and seed fresh epoch slots for the rest.

use super::{EncounterTables, TaskModelConfig, TaskModelParams};
use crate::{Error, Result, OBS_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub mean: [f64; OBS_DIM],
}

/// Maximal runs between change points, where a change point is a step with
/// `‖q_t − q_{t−1}‖ > thresh`. Runs shorter than `min_len` are dropped unless
/// that would drop everything.
pub fn segment(obs: &[[f64; OBS_DIM]], thresh: f64, min_len: usize) -> Vec<Segment> {
    let mut bounds = vec![0];
    for t in 1..obs.len() {
        if dist(&obs[t], &obs[t - 1]) > thresh {
            bounds.push(t);
        }
    }
    bounds.push(obs.len());
    let all: Vec<Segment> = bounds
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let len = w[1] - w[0];
            let mut mean = [0.0; OBS_DIM];
            for q in &obs[w[0]..w[1]] {
                for k in 0..OBS_DIM {
                    mean[k] += q[k] / len as f64;
                }
            }
            Segment { start: w[0], len, mean }
        })
        .collect();
    let kept: Vec<Segment> = all.iter().filter(|s| s.len >= min_len).cloned().collect();
    if kept.is_empty() {
        all
    } else {
        kept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub mean: [f64; OBS_DIM],
    pub weight: usize,
    pub segments: Vec<usize>,
}

/// Greedy merge of segment means in order of appearance: a segment joins the
/// first cluster whose running mean lies within `tol`.
pub fn cluster_segments(segs: &[Segment], tol: f64) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::new();
    for (i, s) in segs.iter().enumerate() {
        match out.iter_mut().find(|c| dist(&c.mean, &s.mean) < tol) {
            Some(c) => {
                let w = (c.weight + s.len) as f64;
                for k in 0..OBS_DIM {
                    c.mean[k] = (c.mean[k] * c.weight as f64 + s.mean[k] * s.len as f64) / w;
                }
                c.weight += s.len;
                c.segments.push(i);
            }
            None => out.push(Cluster { mean: s.mean, weight: s.len, segments: vec![i] }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitOutcome {
    pub x_tilde: usize,
    /// Epoch slot chosen for each cluster.
    pub cluster_slots: Vec<usize>,
    pub new_cells: Vec<(usize, usize)>,
}

pub(crate) fn dist(a: &[f64; OBS_DIM], b: &[f64; OBS_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest seeded mean under `x` within `tol`, lowest slot on ties.
fn nearest(params: &TaskModelParams, tables: &EncounterTables, x: usize, m: &[f64; OBS_DIM], tol: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for z in 0..tables.z_slots {
        if !tables.xz(x, z) {
            continue;
        }
        let d = dist(params.mean(z, x), m);
        if d < tol && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((z, d));
        }
    }
    best
}

/// Runs the three-step initialization for a trial of task `c`, updating
/// `params` and `tables` in place.
///
/// `x̃` is chosen as follows. If some `x̃` explains every cluster with a seeded
/// mean, take it, preferring ones already used by `c`, then the smallest total
/// distance, then the lowest index. Otherwise take the unused-by-`c` slot that
/// explains the most clusters. Ties go to the slot that explains the earliest
/// clusters: the trial variable is fixed when the trial starts, while a
/// familiar-looking late segment may belong to another task's response under
/// a different trial variable. Remaining ties go to the lowest index. With every slot already
/// used by `c` and none explaining the whole trial, the same ranking runs over all slots and
/// the missing cells are seeded under the winner. This repairs an earlier trial that was
/// filed under the wrong slot because a short epoch was dropped during segmentation.
pub fn incremental_init(
    params: &mut TaskModelParams,
    tables: &mut EncounterTables,
    obs: &[[f64; OBS_DIM]],
    c: usize,
    cfg: &TaskModelConfig,
) -> Result<InitOutcome> {
    if c >= tables.c_slots {
        return Err(Error::SlotExhausted { kind: "task", capacity: tables.c_slots });
    }
    if obs.is_empty() {
        return Err(Error::Shape("empty trial".into()));
    }
    let sigma = params.sigma_hat;
    let segs = segment(obs, cfg.seg_thresh_sigmas * sigma, cfg.min_segment_len);
    let tol = cfg.match_tol_sigmas * sigma;
    let clusters = cluster_segments(&segs, tol);

    let nx = tables.n_x;
    let matches: Vec<Vec<Option<(usize, f64)>>> = (0..nx)
        .map(|x| clusters.iter().map(|cl| nearest(params, tables, x, &cl.mean, tol)).collect())
        .collect();
    let full: Vec<usize> = (0..nx).filter(|&x| matches[x].iter().all(Option::is_some)).collect();
    let total = |x: usize| matches[x].iter().map(|m| m.map_or(0.0, |(_, d)| d)).sum::<f64>();
    let count = |x: usize| matches[x].iter().filter(|m| m.is_some()).count();
    // clusters are in order of first appearance, so comparing these vectors
    // favours the slot that explains the earliest part of the trial
    let pattern = |x: usize| matches[x].iter().map(Option::is_some).collect::<Vec<bool>>();

    let x_tilde = if !full.is_empty() {
        let key = |&x: &usize| (!tables.cx(c, x), total(x));
        *full
            .iter()
            .min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap().then(a.cmp(b)))
            .unwrap()
    } else {
        let best = |xs: &mut dyn Iterator<Item = usize>| {
            xs.max_by(|&a, &b| count(a).cmp(&count(b)).then(pattern(a).cmp(&pattern(b))).then(b.cmp(&a)))
        };
        best(&mut (0..nx).filter(|&x| !tables.cx(c, x))).or_else(|| best(&mut (0..nx))).unwrap_or(0)
    };

    let mut cluster_slots = Vec::with_capacity(clusters.len());
    let mut new_cells = Vec::new();
    let mut used: Vec<usize> = matches[x_tilde].iter().flatten().map(|&(z, _)| z).collect();
    for (k, cl) in clusters.iter().enumerate() {
        let z = match matches[x_tilde][k] {
            Some((z, _)) => z,
            None => {
                let z = (0..tables.z_slots)
                    .find(|&z| !tables.xz(x_tilde, z) && !used.contains(&z))
                    .ok_or(Error::SlotExhausted { kind: "epoch", capacity: tables.z_slots })?;
                used.push(z);
                *params.mean_mut(z, x_tilde) = cl.mean;
                tables.f_xz[x_tilde * tables.z_slots + z] = true;
                new_cells.push((z, x_tilde));
                z
            }
        };
        cluster_slots.push(z);
    }
    tables.f_cx[c * nx + x_tilde] = true;

    let before = tables.epochs_of(c);
    let mut added: Vec<usize> = cluster_slots.iter().copied().filter(|z| !before.contains(z)).collect();
    added.sort_unstable();
    added.dedup();
    for &z in &added {
        tables.task_epochs[c * tables.z_slots + z] = true;
    }
    if !added.is_empty() {
        extend_task_rows(params, tables, c, &before, cfg.new_task_self_prob);
    }
    Ok(InitOutcome { x_tilde, cluster_slots, new_cells })
}

/// Gives task `c` transition rows over its (possibly enlarged) epoch set.
/// A brand-new task gets sticky rows and a uniform start; an existing one keeps
/// 90% of each old row and spreads 10% over the new epochs.
fn extend_task_rows(params: &mut TaskModelParams, tables: &EncounterTables, c: usize, before: &[usize], self_prob: f64) {
    let now = tables.epochs_of(c);
    let fresh: Vec<usize> = now.iter().copied().filter(|z| !before.contains(z)).collect();
    let n = now.len() as f64;
    if before.is_empty() {
        for &z in &now {
            let row = params.trans_row_mut(c, z);
            row.fill(0.0);
            for &zn in &now {
                row[zn] = if zn == z {
                    if n > 1.0 { self_prob } else { 1.0 }
                } else {
                    (1.0 - self_prob) / (n - 1.0)
                };
            }
        }
        let init = params.init_row_mut(c);
        init.fill(0.0);
        for &z in &now {
            init[z] = 1.0 / n;
        }
        return;
    }
    let share = 0.1 / fresh.len() as f64;
    for &z in before {
        let row = params.trans_row_mut(c, z);
        row.iter_mut().for_each(|p| *p *= 0.9);
        for &zn in &fresh {
            row[zn] += share;
        }
    }
    for &z in &fresh {
        let row = params.trans_row_mut(c, z);
        row.fill(0.0);
        for &zn in &now {
            row[zn] = if zn == z { self_prob } else { (1.0 - self_prob) / (n - 1.0) };
        }
    }
    let init = params.init_row_mut(c);
    init.iter_mut().for_each(|p| *p *= 0.9);
    for &z in &fresh {
        init[z] += share;
    }
}
