//! Orthogonal weight-space projection with activity-history projectors on
//! both sides of each weight matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{GeneralLayout, GeneralRnn};
use crate::{Error, Result, INPUT_DIM, OUTPUT_DIM};

/// Uncentred second-moment accumulator with its cached ridge projector
/// `P = (A/λ + I)⁻¹`, `λ = λ_scale · points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub dim: usize,
    /// Row-major `dim × dim`.
    pub acc: Vec<f64>,
    pub points: u64,
    pub p: Vec<f64>,
}

impl Projector {
    pub fn new(dim: usize) -> Self {
        Self { dim, acc: vec![0.0; dim * dim], points: 0, p: identity(dim) }
    }

    pub fn add(&mut self, x: &[f64]) {
        let d = self.dim;
        for i in 0..d {
            if x[i] == 0.0 {
                continue;
            }
            let row = &mut self.acc[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] += x[i] * x[j];
            }
        }
        self.points += 1;
    }

    pub fn ridge(&self, lambda_scale: f64) -> f64 {
        lambda_scale * self.points as f64
    }

    pub fn refresh(&mut self, lambda_scale: f64) -> Result<()> {
        if self.points == 0 {
            self.p = identity(self.dim);
            return Ok(());
        }
        let lambda = self.ridge(lambda_scale);
        if !(lambda > 0.0) {
            return Err(Error::Config("owp ridge must be positive".into()));
        }
        let d = self.dim;
        let m = DMatrix::from_fn(d, d, |i, j| self.acc[i * d + j] / lambda + if i == j { 1.0 } else { 0.0 });
        let chol = m.cholesky().ok_or(Error::Singular("owp projector".into()))?;
        let inv = chol.inverse();
        // symmetrize away rounding
        self.p = (0..d * d).map(|k| 0.5 * (inv[(k / d, k % d)] + inv[(k % d, k / d)])).collect();
        Ok(())
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.p)
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwpState {
    pub lambda_scale: f64,
    /// Presynaptic `[φ(h_t); s_t; onehot(c)]` of the recurrent block.
    pub z: Projector,
    /// Hidden state `h_{t+1}` produced by the recurrent block.
    pub h: Projector,
    /// `φ(h_{t+1})` feeding the readout.
    pub r: Projector,
    /// Readout `ŷ_t`.
    pub y: Projector,
}

/// Activity of one trial as needed by [`owp_update_stats`].
#[derive(Debug, Clone)]
pub struct ActivityTrace {
    pub task: usize,
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub h: Vec<Vec<f64>>,
    pub y_hat: Vec<[f64; OUTPUT_DIM]>,
}

impl OwpState {
    pub fn new(layout: GeneralLayout, lambda_scale: f64) -> Self {
        Self {
            lambda_scale,
            z: Projector::new(layout.z_dim()),
            h: Projector::new(layout.n),
            r: Projector::new(layout.n),
            y: Projector::new(OUTPUT_DIM),
        }
    }
}

/// Accumulates outer products of every time step of `traces` and refreshes
/// the cached projectors. An empty trace set leaves the state untouched.
pub fn owp_update_stats(st: &mut OwpState, net: &GeneralRnn, traces: &[ActivityTrace]) -> Result<()> {
    if traces.is_empty() {
        return Ok(());
    }
    let l = net.layout();
    let act = net.cfg.activation;
    let mut z = vec![0.0; l.z_dim()];
    for tr in traces {
        if tr.h.len() != tr.inputs.len() + 1 || tr.y_hat.len() != tr.inputs.len() || tr.task >= l.n_tasks {
            return Err(Error::Shape("activity trace lengths disagree".into()));
        }
        for t in 0..tr.inputs.len() {
            for i in 0..l.n {
                z[i] = act.apply(tr.h[t][i]);
            }
            z[l.n..l.n + INPUT_DIM].copy_from_slice(&tr.inputs[t]);
            z[l.n + INPUT_DIM..].fill(0.0);
            z[l.n + INPUT_DIM + tr.task] = 1.0;
            st.z.add(&z);
            st.h.add(&tr.h[t + 1]);
            let r: Vec<f64> = tr.h[t + 1].iter().map(|&v| act.apply(v)).collect();
            st.r.add(&r);
            st.y.add(&tr.y_hat[t]);
        }
    }
    for p in [&mut st.z, &mut st.h, &mut st.r, &mut st.y] {
        p.refresh(st.lambda_scale)?;
    }
    Ok(())
}

/// Replaces `grad` (flat, [`GeneralLayout`] order) by its two-sided projection:
/// `P_h G P_z` on `[W_rec W_in W_task]`, `P_h g` on `b_in`, `P_y G P_r` on
/// `W_out`, `P_y g` on `b_out`.
pub fn owp_project(grad: &mut [f64], st: &OwpState, layout: GeneralLayout) -> Result<()> {
    if grad.len() != layout.len() || st.z.dim != layout.z_dim() || st.h.dim != layout.n {
        return Err(Error::Shape("owp state does not match the gradient".into()));
    }
    let n = layout.n;
    let nc = layout.n_tasks;
    let zd = layout.z_dim();
    let g = DMatrix::from_fn(n, zd, |i, j| {
        if j < n {
            grad[layout.w_rec().start + i * n + j]
        } else if j < n + INPUT_DIM {
            grad[layout.w_in().start + i * INPUT_DIM + j - n]
        } else {
            grad[layout.w_task().start + i * nc + j - n - INPUT_DIM]
        }
    });
    let ph = st.h.matrix();
    let pg = &ph * g * st.z.matrix();
    for i in 0..n {
        for j in 0..zd {
            let v = pg[(i, j)];
            if j < n {
                grad[layout.w_rec().start + i * n + j] = v;
            } else if j < n + INPUT_DIM {
                grad[layout.w_in().start + i * INPUT_DIM + j - n] = v;
            } else {
                grad[layout.w_task().start + i * nc + j - n - INPUT_DIM] = v;
            }
        }
    }
    let b = &ph * DMatrix::from_column_slice(n, 1, &grad[layout.b_in()]);
    grad[layout.b_in()].copy_from_slice(b.as_slice());

    let py = st.y.matrix();
    let go = DMatrix::from_row_slice(OUTPUT_DIM, n, &grad[layout.w_out()]);
    let po = &py * go * st.r.matrix();
    for k in 0..OUTPUT_DIM {
        for j in 0..n {
            grad[layout.w_out().start + k * n + j] = po[(k, j)];
        }
    }
    let bo = &py * DMatrix::from_column_slice(OUTPUT_DIM, 1, &grad[layout.b_out()]);
    grad[layout.b_out()].copy_from_slice(bo.as_slice());
    Ok(())
}
