//! The hand-off format between the task model and the recurrent network: one
//! probability vector over context slots per time step of a trial.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gating {
    n_ctx: usize,
    probs: Vec<f64>,
}

impl Gating {
    pub fn new(n_ctx: usize, probs: Vec<f64>) -> Self {
        assert!(n_ctx > 0 && probs.len().is_multiple_of(n_ctx), "gating table is not T x n_ctx");
        Self { n_ctx, probs }
    }

    pub fn zeros(t_len: usize, n_ctx: usize) -> Self {
        Self::new(n_ctx, vec![0.0; t_len * n_ctx])
    }

    /// Puts all mass on `ctx` at every step.
    pub fn constant(t_len: usize, n_ctx: usize, ctx: usize) -> Self {
        let mut g = Self::zeros(t_len, n_ctx);
        for t in 0..t_len {
            g.row_mut(t)[ctx] = 1.0;
        }
        g
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_ctx = rows.first().map_or(1, Vec::len);
        Self::new(n_ctx, rows.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.n_ctx
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn n_ctx(&self) -> usize {
        self.n_ctx
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.n_ctx..(t + 1) * self.n_ctx]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.probs[t * self.n_ctx..(t + 1) * self.n_ctx]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.n_ctx)
    }

    /// Zeroes entries below `floor` and renormalizes each row. Rows whose
    /// entries all fall below the floor are left untouched.
    pub fn floor(&mut self, floor: f64) {
        for row in self.probs.chunks_mut(self.n_ctx) {
            let kept: f64 = row.iter().filter(|&&p| p >= floor).sum();
            if kept <= 0.0 {
                continue;
            }
            for p in row.iter_mut() {
                *p = if *p >= floor { *p / kept } else { 0.0 };
            }
        }
    }

    /// Time-averaged mass per context.
    pub fn mean_mass(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_ctx];
        for row in self.rows() {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        let t = self.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= t);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_renormalizes_rows() {
        let mut g = Gating::new(3, vec![0.5, 0.49999, 0.00001, 1.0, 0.0, 0.0]);
        g.floor(1e-4);
        assert_eq!(g.row(0)[2], 0.0);
        assert!((g.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g.row(1), &[1.0, 0.0, 0.0]);
    }
}
