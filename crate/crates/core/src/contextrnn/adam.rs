use serde::{Deserialize, Serialize};

use super::{BankGrads, ContextBank};
use crate::{Error, Result};

/// Adam state and the per-context learning-rate protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    /// Multiplier applied to `η_z` of every context used by a finished task.
    pub lr_decay: f64,
    pub l2: f64,
    /// Mean gating mass above which a context counts as used by a task.
    pub active_thresh: f64,
    /// First and second moments per slot.
    pub m: Vec<Option<Vec<f64>>>,
    pub v: Vec<Option<Vec<f64>>>,
    /// Adam steps taken by each slot.
    pub steps: Vec<u64>,
}

impl TrainState {
    pub fn new(n_ctx: usize, base_lr: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
            lr_decay: 0.5,
            l2: 1e-5,
            active_thresh: 0.001,
            m: vec![None; n_ctx],
            v: vec![None; n_ctx],
            steps: vec![0; n_ctx],
        }
    }

    /// `η_z ← γ η_z` for every context whose mean gating mass during the task
    /// exceeded the activity threshold.
    pub fn decay_lr(&self, bank: &mut ContextBank, task_mass: &[f64]) {
        for (z, &p) in task_mass.iter().enumerate() {
            if p > self.active_thresh {
                bank.lr[z] *= self.lr_decay;
            }
        }
    }
}

/// One Adam step on every slot present in `grads`.
///
/// `l2_mask[z]` enables the coupled L2 term `l2 · w` for slot `z`; it is meant
/// to be on only for contexts the current task uses. Slots absent from
/// `grads` are not touched at all, moments included.
pub fn adam_step(bank: &mut ContextBank, st: &mut TrainState, grads: &BankGrads, l2_mask: &[bool]) -> Result<()> {
    if grads.slots.len() != bank.n_ctx() || l2_mask.len() != bank.n_ctx() {
        return Err(Error::Shape("gradient or l2 mask does not match the bank".into()));
    }
    for (z, g) in grads.slots.iter().enumerate() {
        let Some(g) = g else { continue };
        let w = bank.slots[z].as_mut().ok_or(Error::Shape(format!("gradient for unallocated context {z}")))?;
        let m = st.m[z].get_or_insert_with(|| vec![0.0; w.len()]);
        let v = st.v[z].get_or_insert_with(|| vec![0.0; w.len()]);
        st.steps[z] += 1;
        let t = st.steps[z] as i32;
        let bc1 = 1.0 - st.beta1.powi(t);
        let bc2 = 1.0 - st.beta2.powi(t);
        let lr = bank.lr[z];
        let l2 = if l2_mask[z] { st.l2 } else { 0.0 };
        for i in 0..w.len() {
            let gi = g[i] + l2 * w[i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            w[i] -= lr * mh / (vh.sqrt() + st.eps);
        }
    }
    Ok(())
}
