//! The "how" system: a recurrent network whose low-rank recurrent factors,
//! input and output weights are mixed per time step according to the inferred
//! context, trained with backprop-through-time and a per-context Adam protocol.

mod adam;
mod bank;
mod dynamics;
mod perf;

pub use adam::{adam_step, TrainState};
pub use bank::{Activation, BankGrads, ContextBank, EffectiveWeights, Layout, RnnConfig};
pub use dynamics::{
    backward_trial, forward_trial, readout, step, step_with_noise, weighted_mse, LossMask, Rollout,
};
pub use perf::{angle_diff, evaluate_perf, ANGLE_TOL, FIXATION_LIMIT};

use rayon::prelude::*;

use crate::rng;
use crate::{Gating, Result, INPUT_DIM, OUTPUT_DIM};

/// One training example as the network sees it.
#[derive(Debug, Clone)]
pub struct Sample {
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub targets: Vec<[f64; OUTPUT_DIM]>,
    pub mask: LossMask,
    pub gating: Gating,
    /// `(seed, stream, index)` of the recurrent-noise substream, `None` for no noise.
    pub noise: Option<(u64, u64, u64)>,
}

/// Trials per work unit in batched passes. Partial sums are formed per chunk
/// and reduced in chunk order, so results do not depend on the thread count.
const CHUNK: usize = 8;

/// Mean loss and mean gradient over a batch.
pub fn batch_gradient(bank: &ContextBank, batch: &[Sample]) -> Result<(f64, BankGrads)> {
    let scale = 1.0 / batch.len().max(1) as f64;
    let parts: Vec<Result<(f64, BankGrads)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = BankGrads::new(bank.n_ctx());
            let mut loss = 0.0;
            for s in chunk {
                let mut r = s.noise.map(|(a, b, c)| rng::substream(a, b, c));
                let ro = forward_trial(bank, &s.gating, &s.inputs, r.as_mut())?;
                loss += backward_trial(bank, &ro, &s.inputs, &s.targets, &s.mask, scale, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = BankGrads::new(bank.n_ctx());
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        total.add(&g);
    }
    Ok((loss * scale, total))
}

/// Forward passes only; returns the outputs of every sample in order.
pub fn batch_forward(bank: &ContextBank, batch: &[Sample]) -> Result<Vec<Vec<[f64; OUTPUT_DIM]>>> {
    batch
        .par_iter()
        .map(|s| {
            let mut r = s.noise.map(|(a, b, c)| rng::substream(a, b, c));
            Ok(forward_trial(bank, &s.gating, &s.inputs, r.as_mut())?.y_hat)
        })
        .collect()
}

#[cfg(test)]
mod tests;
