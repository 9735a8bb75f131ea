//! Elastic weight consolidation: a quadratic pull towards earlier solutions,
//! weighted by the diagonal of the empirical Fisher information.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GeneralRnn, GeneralSample};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcState {
    pub lambda: f64,
    /// Summed over finished tasks.
    pub fisher_diag: Vec<f64>,
    /// Parameters at the end of the most recent task.
    pub theta_star: Vec<f64>,
}

impl EwcState {
    pub fn new(n_params: usize, lambda: f64) -> Self {
        Self { lambda, fisher_diag: vec![0.0; n_params], theta_star: vec![0.0; n_params] }
    }

    /// Adds a task's Fisher estimate and re-anchors at `params`.
    pub fn consolidate(&mut self, params: &[f64], fisher: &[f64]) -> Result<()> {
        if params.len() != self.theta_star.len() || fisher.len() != self.fisher_diag.len() {
            return Err(Error::Shape("ewc state does not match the model".into()));
        }
        for (f, &g) in self.fisher_diag.iter_mut().zip(fisher) {
            *f += g;
        }
        self.theta_star.copy_from_slice(params);
        Ok(())
    }

    /// `λ/2 Σ F_i (θ_i − θ*_i)²`
    pub fn penalty(&self, params: &[f64]) -> f64 {
        0.5 * self.lambda
            * params
                .iter()
                .zip(&self.theta_star)
                .zip(&self.fisher_diag)
                .map(|((&p, &s), &f)| f * (p - s) * (p - s))
                .sum::<f64>()
    }
}

/// Adds `λ F_i (θ_i − θ*_i)` to every gradient entry.
pub fn ewc_loss_grad(params: &[f64], grads: &mut [f64], st: &EwcState) {
    for i in 0..grads.len() {
        grads[i] += st.lambda * st.fisher_diag[i] * (params[i] - st.theta_star[i]);
    }
}

/// Mean over trials of the squared per-trial loss gradient.
pub fn fisher_estimate(net: &GeneralRnn, samples: &[GeneralSample]) -> Result<Vec<f64>> {
    let n = net.n_params();
    if samples.is_empty() {
        return Ok(vec![0.0; n]);
    }
    let parts: Vec<Result<Vec<f64>>> = samples
        .par_chunks(super::CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            let mut g = vec![0.0; n];
            for s in chunk {
                g.fill(0.0);
                let mut r = s.noise.map(|(a, b, c)| rng::substream(a, b, c));
                let ro = net.forward(s.task, &s.inputs, r.as_mut())?;
                net.backward(s.task, &ro, &s.inputs, &s.targets, &s.mask, 1.0, &mut g)?;
                for (a, &gi) in acc.iter_mut().zip(&g) {
                    *a += gi * gi;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut fisher = vec![0.0; n];
    for p in parts {
        for (f, a) in fisher.iter_mut().zip(p?) {
            *f += a;
        }
    }
    let k = samples.len() as f64;
    fisher.iter_mut().for_each(|f| *f /= k);
    Ok(fisher)
}
