//! Generative model of the compositional task family.
//!
//! Ten epochs are shared by six tasks (plus the two "M′" variants used for the
//! compositional-generalization experiment). Each epoch has, for every trial
//! variable `x`, a fixed mean observation `q̄ = [s̄, ȳ]`; each task is a left-to-right
//! chain over a subset of the epochs.

mod io;
mod reference;
mod sample;
mod suite;

pub use io::{read_suite, write_suite, write_trial_dump};
pub use reference::{ground_truth_ll, ReferenceModel, ReferenceTask};
pub use sample::{sample_epoch_path, sample_trial, sample_trial_indexed, Trial};
pub use suite::{build_default_suite, make_mprime_tasks, DmCue, EpochDef, EpochLabel, ObsMean, TaskDef, TaskSuite};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Emission noise std on every channel of `q_t`.
    pub sigma: f64,
    pub n_x: usize,
    pub min_epoch_dur: usize,
    /// Per-step probability of staying in an epoch once its minimum duration is met.
    pub self_prob: f64,
    pub trial_len: usize,
    /// Extra noise on `s_t` when a trial is fed to a recurrent network.
    pub input_noise_std: f64,
    /// Whether the fixation cue is on or off during the decision-stimulus epoch.
    pub dm_cue: DmCue,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let alpha: f64 = 0.1;
        let sigma_in = 0.01;
        Self {
            sigma: 0.05,
            n_x: 8,
            min_epoch_dur: 5,
            self_prob: 0.9,
            trial_len: 50,
            input_noise_std: (2.0 / alpha).sqrt() * sigma_in,
            dm_cue: DmCue::default(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gen: {m}")));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and non-negative");
        }
        if self.n_x == 0 || self.n_x > 8 {
            return bad("n_x must lie in 1..=8");
        }
        if self.min_epoch_dur == 0 {
            return bad("min_epoch_dur must be at least 1");
        }
        if !(self.self_prob > 0.0 && self.self_prob < 1.0) {
            return bad("self_prob must lie strictly between 0 and 1");
        }
        if self.trial_len < self.min_epoch_dur {
            return bad("trial_len shorter than one epoch");
        }
        if !(self.input_noise_std >= 0.0 && self.input_noise_std.is_finite()) {
            return bad("input_noise_std must be finite and non-negative");
        }
        Ok(())
    }

    /// Expected length of a non-terminal epoch when the trial is long enough
    /// never to force an exit.
    pub fn expected_epoch_dur(&self) -> f64 {
        self.min_epoch_dur as f64 + self.self_prob / (1.0 - self.self_prob)
    }
}
