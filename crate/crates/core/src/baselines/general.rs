//! Full-rank RNN with a one-hot task input, shared by every baseline.

use std::ops::Range;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::contextrnn::{weighted_mse, LossMask, RnnConfig};
use crate::linalg::{axpy, gemv_acc, gemv_t_acc, ger};
use crate::rng::Rng;
use crate::{Error, Result, INPUT_DIM, OUTPUT_DIM};

/// Offsets inside the flat parameter vector:
/// `W_rec (N×N) | W_in (N×5) | W_task (N×C) | b_in (N) | W_out (3×N) | b_out (3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneralLayout {
    pub n: usize,
    pub n_tasks: usize,
}

impl GeneralLayout {
    pub fn w_rec(&self) -> Range<usize> {
        0..self.n * self.n
    }
    pub fn w_in(&self) -> Range<usize> {
        let s = self.n * self.n;
        s..s + self.n * INPUT_DIM
    }
    pub fn w_task(&self) -> Range<usize> {
        let s = self.w_in().end;
        s..s + self.n * self.n_tasks
    }
    pub fn b_in(&self) -> Range<usize> {
        let s = self.w_task().end;
        s..s + self.n
    }
    pub fn w_out(&self) -> Range<usize> {
        let s = self.b_in().end;
        s..s + OUTPUT_DIM * self.n
    }
    pub fn b_out(&self) -> Range<usize> {
        let s = self.w_out().end;
        s..s + OUTPUT_DIM
    }
    pub fn len(&self) -> usize {
        self.b_out().end
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Width of the concatenated presynaptic vector `[φ(h); s; onehot(c)]`.
    pub fn z_dim(&self) -> usize {
        self.n + INPUT_DIM + self.n_tasks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralRnn {
    pub cfg: RnnConfig,
    pub n_tasks: usize,
    pub w: Vec<f64>,
}

/// Forward pass record of one trial.
#[derive(Debug, Clone)]
pub struct GeneralRollout {
    pub y_hat: Vec<[f64; OUTPUT_DIM]>,
    /// `h_0 … h_T`
    pub h: Vec<Vec<f64>>,
}

impl GeneralRnn {
    /// `W_rec` entries with std `gain/√N`, `W_in` `1/√5`, `W_task` `1/√C`,
    /// `W_out` `1/√N`, zero biases.
    pub fn new(cfg: RnnConfig, n_tasks: usize, rec_gain: f64, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if n_tasks == 0 {
            return Err(Error::Config("general rnn needs at least one task".into()));
        }
        let l = GeneralLayout { n: cfg.n_hidden, n_tasks };
        let mut w = vec![0.0; l.len()];
        let n = l.n as f64;
        for (range, std) in [
            (l.w_rec(), rec_gain / n.sqrt()),
            (l.w_in(), 1.0 / (INPUT_DIM as f64).sqrt()),
            (l.w_task(), 1.0 / (n_tasks as f64).sqrt()),
            (l.w_out(), 1.0 / n.sqrt()),
        ] {
            for v in &mut w[range] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self { cfg, n_tasks, w })
    }

    pub fn layout(&self) -> GeneralLayout {
        GeneralLayout { n: self.cfg.n_hidden, n_tasks: self.n_tasks }
    }

    pub fn n_params(&self) -> usize {
        self.w.len()
    }

    pub fn forward(&self, task: usize, s: &[[f64; INPUT_DIM]], rng: Option<&mut Rng>) -> Result<GeneralRollout> {
        if task >= self.n_tasks {
            return Err(Error::UnknownTask(task.to_string()));
        }
        let l = self.layout();
        let n = l.n;
        let cfg = &self.cfg;
        let ns = cfg.noise_scale();
        let mut rng = rng.filter(|_| ns > 0.0);
        // task input folds into a constant bias
        let mut bias = self.w[l.b_in()].to_vec();
        for i in 0..n {
            bias[i] += self.w[l.w_task()][i * l.n_tasks + task];
        }
        let mut h = vec![vec![0.0; n]];
        let mut y_hat = Vec::with_capacity(s.len());
        let mut r = vec![0.0; n];
        for (t, st) in s.iter().enumerate() {
            for (ri, &hi) in r.iter_mut().zip(&h[t]) {
                *ri = cfg.activation.apply(hi);
            }
            let mut pre = bias.clone();
            gemv_acc(&self.w[l.w_rec()], &r, 1.0, &mut pre);
            gemv_acc(&self.w[l.w_in()], st, 1.0, &mut pre);
            let hn: Vec<f64> = (0..n)
                .map(|i| {
                    let xi = rng.as_deref_mut().map_or(0.0, |g| ns * g.sample::<f64, _>(StandardNormal));
                    (1.0 - cfg.alpha) * h[t][i] + cfg.alpha * (pre[i] + xi)
                })
                .collect();
            if hn.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t });
            }
            for (ri, &hi) in r.iter_mut().zip(&hn) {
                *ri = cfg.activation.apply(hi);
            }
            let mut y = [0.0; OUTPUT_DIM];
            y.copy_from_slice(&self.w[l.b_out()]);
            gemv_acc(&self.w[l.w_out()], &r, 1.0, &mut y);
            y_hat.push(y);
            h.push(hn);
        }
        Ok(GeneralRollout { y_hat, h })
    }

    /// Accumulates `scale · ∇ weighted_mse` into `grad`; returns the loss.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        task: usize,
        ro: &GeneralRollout,
        s: &[[f64; INPUT_DIM]],
        y: &[[f64; OUTPUT_DIM]],
        mask: &LossMask,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let t_len = ro.y_hat.len();
        if y.len() != t_len || s.len() != t_len || mask.weights.len() != t_len || grad.len() != self.w.len() {
            return Err(Error::Shape("general rnn backward: inconsistent lengths".into()));
        }
        let l = self.layout();
        let n = l.n;
        let cfg = &self.cfg;
        let alpha = cfg.alpha;
        let norm = 2.0 * scale / (OUTPUT_DIM * t_len) as f64;
        let w_rec = &self.w[l.w_rec()];
        let w_out = &self.w[l.w_out()];
        let mut g_next = vec![0.0; n];
        let mut carry = vec![0.0; n];
        let mut a = vec![0.0; n];
        let mut e = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut r_prev = vec![0.0; n];
        for t in (0..t_len).rev() {
            for i in 0..n {
                r[i] = cfg.activation.apply(ro.h[t + 1][i]);
                r_prev[i] = cfg.activation.apply(ro.h[t][i]);
            }
            let dy: [f64; OUTPUT_DIM] = std::array::from_fn(|k| norm * mask.weights[t] * (ro.y_hat[t][k] - y[t][k]));
            ger(&mut grad[l.w_out()], &dy, &r, 1.0);
            axpy(1.0, &dy, &mut grad[l.b_out()]);
            a.copy_from_slice(&carry);
            gemv_t_acc(w_out, &dy, 1.0, &mut a);
            for i in 0..n {
                g_next[i] = cfg.activation.deriv(ro.h[t + 1][i]) * a[i] + (1.0 - alpha) * g_next[i];
                e[i] = alpha * g_next[i];
            }
            carry.fill(0.0);
            gemv_t_acc(w_rec, &e, 1.0, &mut carry);
            ger(&mut grad[l.w_rec()], &e, &r_prev, 1.0);
            ger(&mut grad[l.w_in()], &e, &s[t], 1.0);
            axpy(1.0, &e, &mut grad[l.b_in()]);
            for i in 0..n {
                grad[l.w_task()][i * l.n_tasks + task] += e[i];
            }
        }
        Ok(weighted_mse(&ro.y_hat, y, mask))
    }
}
