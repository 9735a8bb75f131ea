//! Forward simulation and backprop-through-time of the gated network.
//!
//! Step `t` (zero-based) reads `s_t` and the gating row `p_t`, moves the
//! hidden state from `h_t` to `h_{t+1}`, and reads out `ŷ_t` from `h_{t+1}`:
//!
//! ```text
//! h_{t+1} = (1−α) h_t + α [ Σ_z p_tz U_z V_zᵀ φ(h_t) + Σ_z p_tz (W_in_z s_t + b_in_z) + √(2/α) σ_r ξ_t ]
//! ŷ_t     = Σ_z p_tz (W_out_z φ(h_{t+1}) + b_out_z)
//! ```

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BankGrads, ContextBank, EffectiveWeights, RnnConfig};
use crate::linalg::{gemv_acc, gemv_t_acc, ger};
use crate::rng::Rng;
use crate::taskgen::{TaskSuite, Trial};
use crate::{Error, Gating, Result, INPUT_DIM, OUTPUT_DIM};

/// Per-step loss weight, shared by the three output channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMask {
    pub weights: Vec<f64>,
}

impl LossMask {
    pub const RESPONSE: f64 = 1.0;
    pub const OTHER: f64 = 0.2;

    /// 1.0 in response epochs, 0.2 elsewhere, from the trial's true epochs.
    pub fn for_trial(trial: &Trial, suite: &TaskSuite) -> Self {
        let weights = trial
            .z_true
            .iter()
            .map(|&z| if suite.is_response(z) { Self::RESPONSE } else { Self::OTHER })
            .collect();
        Self { weights }
    }

    pub fn uniform(t_len: usize, w: f64) -> Self {
        Self { weights: vec![w; t_len] }
    }
}

/// `mean_{i,t} m_t (y_it − ŷ_it)²`
pub fn weighted_mse(y_hat: &[[f64; OUTPUT_DIM]], y: &[[f64; OUTPUT_DIM]], mask: &LossMask) -> f64 {
    let mut s = 0.0;
    for ((a, b), m) in y_hat.iter().zip(y).zip(&mask.weights) {
        for k in 0..OUTPUT_DIM {
            s += m * (a[k] - b[k]) * (a[k] - b[k]);
        }
    }
    s / (OUTPUT_DIM * y.len()) as f64
}

/// One step with materialized weights. `noise` is `ξ_t`; pass zeros for a
/// deterministic step.
pub fn step_with_noise(h: &[f64], s: &[f64; INPUT_DIM], w: &EffectiveWeights, cfg: &RnnConfig, noise: &[f64]) -> Vec<f64> {
    let n = w.n;
    let r: Vec<f64> = h.iter().map(|&x| cfg.activation.apply(x)).collect();
    let mut pre = w.b_in.clone();
    gemv_acc(&w.w_rec, &r, 1.0, &mut pre);
    gemv_acc(&w.w_in, s, 1.0, &mut pre);
    let ns = cfg.noise_scale();
    (0..n).map(|i| (1.0 - cfg.alpha) * h[i] + cfg.alpha * (pre[i] + ns * noise[i])).collect()
}

/// One step with materialized weights, drawing `ξ_t` from `rng`.
pub fn step(h: &[f64], s: &[f64; INPUT_DIM], w: &EffectiveWeights, cfg: &RnnConfig, rng: &mut Rng) -> Vec<f64> {
    let noise: Vec<f64> = if cfg.sigma_r > 0.0 {
        (0..w.n).map(|_| rng.sample(StandardNormal)).collect()
    } else {
        vec![0.0; w.n]
    };
    step_with_noise(h, s, w, cfg, &noise)
}

/// Readout `W_out φ(h) + b_out` with materialized weights.
pub fn readout(h: &[f64], w: &EffectiveWeights, cfg: &RnnConfig) -> [f64; OUTPUT_DIM] {
    let r: Vec<f64> = h.iter().map(|&x| cfg.activation.apply(x)).collect();
    let mut y = [0.0; OUTPUT_DIM];
    y.copy_from_slice(&w.b_out);
    gemv_acc(&w.w_out, &r, 1.0, &mut y);
    y
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub y_hat: Vec<[f64; OUTPUT_DIM]>,
    /// `h_0 … h_T`, each of length `N`.
    pub h: Vec<Vec<f64>>,
    /// Gating after renormalization over allocated slots.
    pub gating: Gating,
}

fn active(row: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    row.iter().enumerate().filter(|(_, &p)| p != 0.0).map(|(z, &p)| (z, p))
}

/// Runs a trial from `h_0 = 0`. With `rng = None` or `σ_r = 0` the recurrent
/// noise is off.
pub fn forward_trial(bank: &ContextBank, gating: &Gating, s: &[[f64; INPUT_DIM]], rng: Option<&mut Rng>) -> Result<Rollout> {
    if gating.len() != s.len() {
        return Err(Error::Shape(format!("gating has {} steps, inputs have {}", gating.len(), s.len())));
    }
    let gating = bank.effective_gating(gating)?;
    let cfg = &bank.cfg;
    let l = bank.layout();
    let (n, rk) = (l.n, l.r);
    let ns = cfg.noise_scale();
    let mut rng = rng.filter(|_| ns > 0.0);
    let mut hs = Vec::with_capacity(s.len() + 1);
    hs.push(vec![0.0; n]);
    let mut y_hat = Vec::with_capacity(s.len());
    let mut r = vec![0.0; n];
    let mut pre = vec![0.0; n];
    let mut k = vec![0.0; rk];
    for (t, st) in s.iter().enumerate() {
        let h = &hs[t];
        for (ri, &hi) in r.iter_mut().zip(h) {
            *ri = cfg.activation.apply(hi);
        }
        pre.fill(0.0);
        for (z, p) in active(gating.row(t)) {
            let w = bank.slots[z].as_deref().expect("allocated");
            k.fill(0.0);
            gemv_t_acc(&w[l.v()], &r, 1.0, &mut k);
            gemv_acc(&w[l.u()], &k, p, &mut pre);
            gemv_acc(&w[l.w_in()], st, p, &mut pre);
            crate::linalg::axpy(p, &w[l.b_in()], &mut pre);
        }
        let mut hn = vec![0.0; n];
        for i in 0..n {
            let xi = match rng.as_deref_mut() {
                Some(g) => ns * g.sample::<f64, _>(StandardNormal),
                None => 0.0,
            };
            hn[i] = (1.0 - cfg.alpha) * h[i] + cfg.alpha * (pre[i] + xi);
        }
        if hn.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        for (ri, &hi) in r.iter_mut().zip(&hn) {
            *ri = cfg.activation.apply(hi);
        }
        let mut y = [0.0; OUTPUT_DIM];
        for (z, p) in active(gating.row(t)) {
            let w = bank.slots[z].as_deref().expect("allocated");
            gemv_acc(&w[l.w_out()], &r, p, &mut y);
            for (yk, b) in y.iter_mut().zip(&w[l.b_out()]) {
                *yk += p * b;
            }
        }
        y_hat.push(y);
        hs.push(hn);
    }
    Ok(Rollout { y_hat, h: hs, gating })
}

/// Gradient of `scale · weighted_mse` with respect to every gated context's
/// components, accumulated into `grads`. The gating is a constant. Returns the
/// unscaled loss.
pub fn backward_trial(
    bank: &ContextBank,
    ro: &Rollout,
    s: &[[f64; INPUT_DIM]],
    y: &[[f64; OUTPUT_DIM]],
    mask: &LossMask,
    scale: f64,
    grads: &mut BankGrads,
) -> Result<f64> {
    let t_len = ro.y_hat.len();
    if y.len() != t_len || s.len() != t_len || mask.weights.len() != t_len || ro.h.len() != t_len + 1 {
        return Err(Error::Shape("rollout, inputs, targets and mask disagree in length".into()));
    }
    if grads.slots.len() != bank.n_ctx() {
        *grads = BankGrads::new(bank.n_ctx());
    }
    let cfg = &bank.cfg;
    let l = bank.layout();
    let (n, rk, len) = (l.n, l.r, l.len());
    let alpha = cfg.alpha;
    let norm = 2.0 * scale / (OUTPUT_DIM * t_len) as f64;

    let mut g_next = vec![0.0; n];
    let mut carry = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut r_prev = vec![0.0; n];
    let mut k = vec![0.0; rk];
    let mut j = vec![0.0; rk];
    for t in (0..t_len).rev() {
        for i in 0..n {
            r[i] = cfg.activation.apply(ro.h[t + 1][i]);
            r_prev[i] = cfg.activation.apply(ro.h[t][i]);
        }
        let m = mask.weights[t];
        let dy: [f64; OUTPUT_DIM] = std::array::from_fn(|i| norm * m * (ro.y_hat[t][i] - y[t][i]));
        a.copy_from_slice(&carry);
        for (z, p) in active(ro.gating.row(t)) {
            let w = bank.slots[z].as_deref().expect("allocated");
            gemv_t_acc(&w[l.w_out()], &dy, p, &mut a);
            let gz = grads.slot_mut(z, len);
            ger(&mut gz[l.w_out()], &dy, &r, p);
            for (gb, d) in gz[l.b_out()].iter_mut().zip(&dy) {
                *gb += p * d;
            }
        }
        for i in 0..n {
            let g = cfg.activation.deriv(ro.h[t + 1][i]) * a[i] + (1.0 - alpha) * g_next[i];
            g_next[i] = g;
            e[i] = alpha * g;
        }
        carry.fill(0.0);
        for (z, p) in active(ro.gating.row(t)) {
            let w = bank.slots[z].as_deref().expect("allocated");
            k.fill(0.0);
            gemv_t_acc(&w[l.v()], &r_prev, 1.0, &mut k);
            j.fill(0.0);
            gemv_t_acc(&w[l.u()], &e, 1.0, &mut j);
            // α W_rec(t)ᵀ g_{t+1} feeds the step below
            gemv_acc(&w[l.v()], &j, p, &mut carry);
            let gz = grads.slot_mut(z, len);
            ger(&mut gz[l.u()], &e, &k, p);
            ger(&mut gz[l.v()], &r_prev, &j, p);
            ger(&mut gz[l.w_in()], &e, &s[t], p);
            crate::linalg::axpy(p, &e, &mut gz[l.b_in()]);
        }
    }
    Ok(weighted_mse(&ro.y_hat, y, mask))
}
