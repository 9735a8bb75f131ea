use std::ops::Range;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Gating, Result, INPUT_DIM, OUTPUT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    pub n_hidden: usize,
    pub rank: usize,
    pub alpha: f64,
    pub sigma_r: f64,
    pub activation: Activation,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self { n_hidden: 256, rank: 3, alpha: 0.1, sigma_r: 0.05, activation: Activation::Relu }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hidden == 0 || self.rank == 0 {
            return Err(Error::Config("rnn: n_hidden and rank must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config("rnn: alpha must lie in (0, 1]".into()));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::Config("rnn: sigma_r must be non-negative".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout { n: self.n_hidden, r: self.rank }
    }

    /// Std of the recurrent noise term inside the bracket, `√(2/α)·σ_r`.
    pub fn noise_scale(&self) -> f64 {
        (2.0 / self.alpha).sqrt() * self.sigma_r
    }
}

/// Offsets of the six components inside a context's flat parameter vector:
/// `U (N×r) | V (N×r) | W_in (N×5) | b_in (N) | W_out (3×N) | b_out (3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub r: usize,
}

impl Layout {
    pub fn u(&self) -> Range<usize> {
        0..self.n * self.r
    }
    pub fn v(&self) -> Range<usize> {
        let s = self.n * self.r;
        s..2 * s
    }
    pub fn w_in(&self) -> Range<usize> {
        let s = 2 * self.n * self.r;
        s..s + self.n * INPUT_DIM
    }
    pub fn b_in(&self) -> Range<usize> {
        let s = self.w_in().end;
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
}

/// Per-context components plus per-context learning rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBank {
    pub cfg: RnnConfig,
    /// Flat parameters of each slot, `None` until allocated.
    pub slots: Vec<Option<Vec<f64>>>,
    /// `η_z`
    pub lr: Vec<f64>,
}

/// Effective weights for one gating vector, fully materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveWeights {
    pub n: usize,
    /// `N×N`
    pub w_rec: Vec<f64>,
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl ContextBank {
    pub fn new(cfg: RnnConfig, n_ctx: usize, base_lr: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, slots: vec![None; n_ctx], lr: vec![base_lr; n_ctx] })
    }

    pub fn layout(&self) -> Layout {
        self.cfg.layout()
    }

    pub fn n_ctx(&self) -> usize {
        self.slots.len()
    }

    pub fn is_allocated(&self, z: usize) -> bool {
        self.slots.get(z).is_some_and(Option::is_some)
    }

    pub fn allocated(&self) -> Vec<usize> {
        (0..self.n_ctx()).filter(|&z| self.is_allocated(z)).collect()
    }

    /// Draws fresh components for slot `z`: `U`, `V` with std `1/√(N·r)`,
    /// `W_in` with std `1/√5`, `W_out` with std `1/√N`, zero biases.
    pub fn allocate(&mut self, z: usize, rng: &mut Rng) -> Result<()> {
        if z >= self.n_ctx() {
            return Err(Error::SlotExhausted { kind: "context", capacity: self.n_ctx() });
        }
        if self.is_allocated(z) {
            return Err(Error::AlreadyAllocated(z));
        }
        let l = self.layout();
        let mut w = vec![0.0; l.len()];
        let mut fill = |range: Range<usize>, std: f64| {
            for v in &mut w[range] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        let n = l.n as f64;
        let lr_std = 1.0 / (n * l.r as f64).sqrt();
        fill(l.u(), lr_std);
        fill(l.v(), lr_std);
        fill(l.w_in(), 1.0 / (INPUT_DIM as f64).sqrt());
        fill(l.w_out(), 1.0 / n.sqrt());
        self.slots[z] = Some(w);
        Ok(())
    }

    /// Allocates every listed slot that is still empty, in ascending order.
    pub fn ensure_allocated(&mut self, zs: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
        let mut zs = zs.to_vec();
        zs.sort_unstable();
        zs.dedup();
        let mut fresh = Vec::new();
        for z in zs {
            if !self.is_allocated(z) {
                self.allocate(z, rng)?;
                fresh.push(z);
            }
        }
        Ok(fresh)
    }

    pub fn params(&self, z: usize) -> Option<&[f64]> {
        self.slots.get(z).and_then(|s| s.as_deref())
    }

    /// Drops mass on unallocated slots and renormalizes every row.
    pub fn effective_gating(&self, g: &Gating) -> Result<Gating> {
        if g.n_ctx() != self.n_ctx() {
            return Err(Error::Shape(format!("gating has {} contexts, bank has {}", g.n_ctx(), self.n_ctx())));
        }
        let mut out = g.clone();
        for t in 0..out.len() {
            let row = out.row_mut(t);
            let mut mass = 0.0;
            for (z, p) in row.iter_mut().enumerate() {
                if !self.is_allocated(z) || *p < 0.0 {
                    *p = 0.0;
                }
                mass += *p;
            }
            if !(mass > 0.0) {
                return Err(Error::NoAllocatedMass { t });
            }
            row.iter_mut().for_each(|p| *p /= mass);
        }
        Ok(out)
    }

    /// `Σ_z p_z · component_z` for every component, with `W_rec = Σ p_z U_z V_zᵀ`.
    pub fn compose_weights(&self, p: &[f64]) -> Result<EffectiveWeights> {
        let g = self.effective_gating(&Gating::new(self.n_ctx(), p.to_vec()))?;
        let p = g.row(0);
        let l = self.layout();
        let n = l.n;
        let mut w = EffectiveWeights {
            n,
            w_rec: vec![0.0; n * n],
            w_in: vec![0.0; n * INPUT_DIM],
            b_in: vec![0.0; n],
            w_out: vec![0.0; OUTPUT_DIM * n],
            b_out: vec![0.0; OUTPUT_DIM],
        };
        for (z, &pz) in p.iter().enumerate() {
            if pz == 0.0 {
                continue;
            }
            let c = self.slots[z].as_ref().expect("gated slot is allocated");
            let (u, v) = (&c[l.u()], &c[l.v()]);
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..l.r {
                        s += u[i * l.r + k] * v[j * l.r + k];
                    }
                    w.w_rec[i * n + j] += pz * s;
                }
            }
            crate::linalg::axpy(pz, &c[l.w_in()], &mut w.w_in);
            crate::linalg::axpy(pz, &c[l.b_in()], &mut w.b_in);
            crate::linalg::axpy(pz, &c[l.w_out()], &mut w.w_out);
            crate::linalg::axpy(pz, &c[l.b_out()], &mut w.b_out);
        }
        Ok(w)
    }

    /// Order-sensitive digest of the parameters of the listed slots.
    pub fn checksum(&self, zs: &[usize]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &z in zs {
            h ^= z as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
            if let Some(w) = self.params(z) {
                for v in w {
                    h ^= v.to_bits();
                    h = h.wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn n_trainable(&self) -> usize {
        self.allocated().len() * self.layout().len()
    }
}

/// Gradients shaped like the bank; slots that received no signal stay `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BankGrads {
    pub slots: Vec<Option<Vec<f64>>>,
}

impl BankGrads {
    pub fn new(n_ctx: usize) -> Self {
        Self { slots: vec![None; n_ctx] }
    }

    pub fn slot_mut(&mut self, z: usize, len: usize) -> &mut Vec<f64> {
        self.slots[z].get_or_insert_with(|| vec![0.0; len])
    }

    /// `self += other`; slot presence is the union.
    pub fn add(&mut self, other: &BankGrads) {
        for (z, o) in other.slots.iter().enumerate() {
            if let Some(o) = o {
                let s = self.slot_mut(z, o.len());
                crate::linalg::axpy(1.0, o, s);
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in self.slots.iter_mut().flatten() {
            s.iter_mut().for_each(|v| *v *= a);
        }
    }

    pub fn touched(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&z| self.slots[z].is_some()).collect()
    }
}
