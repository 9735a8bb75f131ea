//! Exact inference for a task-conditioned HMM whose emissions are isotropic
//! Gaussians indexed by `(epoch, trial variable)`.
//!
//! Everything is carried in log space. A view restricts the state space to
//! the epochs a task can visit; outputs are scattered back to the full slot
//! width on request.

use serde::{Deserialize, Serialize};

use crate::linalg::logsumexp;
use crate::{Error, Result, OBS_DIM};

/// A task's HMM restricted to its reachable epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmView {
    pub task: usize,
    /// Local state index -> global slot id.
    pub slots: Vec<usize>,
    /// Width of slot-indexed outputs.
    pub n_slots: usize,
    pub n_x: usize,
    pub log_init: Vec<f64>,
    /// `nz x nz`, row = current state.
    pub log_trans: Vec<f64>,
    /// `nz x n_x` means.
    pub means: Vec<[f64; OBS_DIM]>,
    /// Whether the `(z, x)` emission exists; missing ones have zero density.
    pub valid: Vec<bool>,
    pub sigma: f64,
    pub log_x_prior: Vec<f64>,
}

/// Forward messages `log α_t(z, x) = log p(q_{1:t}, z_t = z | x)`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub t_len: usize,
    pub nz: usize,
    pub n_x: usize,
    pub log_alpha: Vec<f64>,
    /// `log p(q_t | q_{1:t-1})`; sums to `ll`.
    pub log_norm: Vec<f64>,
    pub ll: f64,
}

impl ForwardPass {
    pub fn at(&self, t: usize, z: usize, x: usize) -> f64 {
        self.log_alpha[(t * self.nz + z) * self.n_x + x]
    }
}

/// Smoothed posteriors for one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorBundle {
    pub slots: Vec<usize>,
    pub n_x: usize,
    pub t_len: usize,
    /// `[T][nz][n_x]`, `p(z_t, x | q_{1:T})`.
    pub gamma: Vec<f64>,
    /// `[T-1][nz][nz][n_x]`, `p(z_t, z_{t+1}, x | q_{1:T})`.
    pub xi: Vec<f64>,
    pub ll: f64,
}

impl PosteriorBundle {
    pub fn nz(&self) -> usize {
        self.slots.len()
    }

    fn local(&self, slot: usize) -> Option<usize> {
        self.slots.iter().position(|&s| s == slot)
    }

    pub fn gamma_local(&self, t: usize, z: usize, x: usize) -> f64 {
        self.gamma[(t * self.nz() + z) * self.n_x + x]
    }

    pub fn xi_local(&self, t: usize, from: usize, to: usize, x: usize) -> f64 {
        let nz = self.nz();
        self.xi[((t * nz + from) * nz + to) * self.n_x + x]
    }

    /// `γ_t(slot, x)`, zero for slots outside the task.
    pub fn gamma_at(&self, t: usize, slot: usize, x: usize) -> f64 {
        self.local(slot).map_or(0.0, |z| self.gamma_local(t, z, x))
    }

    pub fn xi_at(&self, t: usize, from: usize, to: usize, x: usize) -> f64 {
        match (self.local(from), self.local(to)) {
            (Some(a), Some(b)) => self.xi_local(t, a, b, x),
            _ => 0.0,
        }
    }

    /// `p(z_t | q_{1:T})` over local states.
    pub fn epoch_marginal(&self, t: usize) -> Vec<f64> {
        (0..self.nz()).map(|z| (0..self.n_x).map(|x| self.gamma_local(t, z, x)).sum()).collect()
    }

    /// `p(x | q_{1:T})`.
    pub fn x_marginal(&self) -> Vec<f64> {
        (0..self.n_x).map(|x| (0..self.nz()).map(|z| self.gamma_local(0, z, x)).sum()).collect()
    }

    /// `Σ_t γ_t(z, x)`, the expected number of visits.
    pub fn visits(&self, z: usize, x: usize) -> f64 {
        (0..self.t_len).map(|t| self.gamma_local(t, z, x)).sum()
    }
}

impl HmmView {
    pub fn nz(&self) -> usize {
        self.slots.len()
    }

    fn trans(&self, from: usize, to: usize) -> f64 {
        self.log_trans[from * self.nz() + to]
    }

    /// `log N(q_t; q̂_{z,x}, σ² I)` restricted to the leading `obs[t].len()` channels.
    pub fn log_emissions<O: AsRef<[f64]>>(&self, obs: &[O]) -> Vec<f64> {
        let (nz, nx) = (self.nz(), self.n_x);
        let mut out = vec![f64::NEG_INFINITY; obs.len() * nz * nx];
        let var = self.sigma * self.sigma;
        for (t, o) in obs.iter().enumerate() {
            let o = o.as_ref();
            let d = o.len();
            let norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * var).ln();
            for z in 0..nz {
                for x in 0..nx {
                    if !self.valid[z * nx + x] {
                        continue;
                    }
                    let m = &self.means[z * nx + x];
                    let sq: f64 = o.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                    out[(t * nz + z) * nx + x] = norm - 0.5 * sq / var;
                }
            }
        }
        out
    }

    pub fn forward(&self, log_em: &[f64]) -> Result<ForwardPass> {
        let (nz, nx) = (self.nz(), self.n_x);
        let t_len = log_em.len() / (nz * nx).max(1);
        if t_len == 0 {
            return Err(Error::Shape("empty observation sequence".into()));
        }
        let mut la = vec![f64::NEG_INFINITY; t_len * nz * nx];
        let mut log_norm = Vec::with_capacity(t_len);
        let mut prev_total = 0.0;
        let mut col = vec![0.0; nz];
        for t in 0..t_len {
            for x in 0..nx {
                for z in 0..nz {
                    let e = log_em[(t * nz + z) * nx + x];
                    let v = if e == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else if t == 0 {
                        self.log_init[z] + e
                    } else {
                        for (zp, c) in col.iter_mut().enumerate() {
                            *c = la[((t - 1) * nz + zp) * nx + x] + self.trans(zp, z);
                        }
                        logsumexp(col.iter().copied()) + e
                    };
                    la[(t * nz + z) * nx + x] = v;
                }
            }
            // log p(q_{1:t}) including the x prior
            let total = logsumexp(
                (0..nx).flat_map(|x| (0..nz).map(move |z| (z, x))).map(|(z, x)| la[(t * nz + z) * nx + x] + self.log_x_prior[x]),
            );
            if !total.is_finite() {
                return Err(Error::ZeroLikelihood { t, task: self.task });
            }
            log_norm.push(total - prev_total);
            prev_total = total;
        }
        Ok(ForwardPass { t_len, nz, n_x: nx, log_alpha: la, log_norm, ll: prev_total })
    }

    pub fn backward(&self, log_em: &[f64]) -> Result<Vec<f64>> {
        let (nz, nx) = (self.nz(), self.n_x);
        let t_len = log_em.len() / (nz * nx).max(1);
        let mut lb = vec![0.0; t_len * nz * nx];
        let mut col = vec![0.0; nz];
        for t in (0..t_len.saturating_sub(1)).rev() {
            let mut any = false;
            for x in 0..nx {
                for z in 0..nz {
                    for (zn, c) in col.iter_mut().enumerate() {
                        *c = self.trans(z, zn) + log_em[((t + 1) * nz + zn) * nx + x] + lb[((t + 1) * nz + zn) * nx + x];
                    }
                    let v = logsumexp(col.iter().copied());
                    any |= v.is_finite();
                    lb[(t * nz + z) * nx + x] = v;
                }
            }
            if !any {
                return Err(Error::ZeroLikelihood { t: t + 1, task: self.task });
            }
        }
        Ok(lb)
    }

    /// Smoothed single and pairwise posteriors plus the marginal log-likelihood.
    pub fn smooth(&self, log_em: &[f64]) -> Result<PosteriorBundle> {
        let fwd = self.forward(log_em)?;
        let lb = self.backward(log_em)?;
        let (nz, nx, t_len) = (self.nz(), self.n_x, fwd.t_len);
        let ll = fwd.ll;
        let mut gamma = vec![0.0; t_len * nz * nx];
        for t in 0..t_len {
            for z in 0..nz {
                for x in 0..nx {
                    let i = (t * nz + z) * nx + x;
                    let v = fwd.log_alpha[i] + lb[i] + self.log_x_prior[x] - ll;
                    gamma[i] = if v.is_finite() { v.exp() } else { 0.0 };
                }
            }
        }
        let mut xi = vec![0.0; t_len.saturating_sub(1) * nz * nz * nx];
        for t in 0..t_len.saturating_sub(1) {
            for from in 0..nz {
                for to in 0..nz {
                    for x in 0..nx {
                        let v = fwd.log_alpha[(t * nz + from) * nx + x]
                            + self.trans(from, to)
                            + log_em[((t + 1) * nz + to) * nx + x]
                            + lb[((t + 1) * nz + to) * nx + x]
                            + self.log_x_prior[x]
                            - ll;
                        xi[((t * nz + from) * nz + to) * nx + x] = if v.is_finite() { v.exp() } else { 0.0 };
                    }
                }
            }
        }
        Ok(PosteriorBundle { slots: self.slots.clone(), n_x: nx, t_len, gamma, xi, ll })
    }

    /// Causal filtering posterior `p(z_t | obs_{1:t})` marginalized over `x`,
    /// scattered into rows of width `n_slots`.
    pub fn filter(&self, log_em: &[f64]) -> Result<Vec<f64>> {
        let fwd = self.forward(log_em)?;
        let (nz, nx) = (self.nz(), self.n_x);
        let mut out = vec![0.0; fwd.t_len * self.n_slots];
        let mut w = vec![0.0; nz];
        for t in 0..fwd.t_len {
            for (z, wz) in w.iter_mut().enumerate() {
                *wz = logsumexp((0..nx).map(|x| fwd.at(t, z, x) + self.log_x_prior[x]));
            }
            let total = logsumexp(w.iter().copied());
            for (z, wz) in w.iter().enumerate() {
                out[t * self.n_slots + self.slots[z]] = (wz - total).exp();
            }
        }
        Ok(out)
    }
}
