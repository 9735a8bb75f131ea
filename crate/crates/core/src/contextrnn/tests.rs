use nalgebra::{DMatrix, Matrix3};
use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::rng::{self, Rng};
use crate::taskgen::{build_default_suite, sample_trial_indexed, GenConfig};
use crate::Error;

fn small_bank(n: usize, r: usize, n_ctx: usize, act: Activation, seed: u64) -> ContextBank {
    let cfg = RnnConfig { n_hidden: n, rank: r, alpha: 0.1, sigma_r: 0.0, activation: act };
    let mut b = ContextBank::new(cfg, n_ctx, 1e-3).unwrap();
    let mut g = rng::substream(seed, 0, 0);
    for z in 0..n_ctx {
        b.allocate(z, &mut g).unwrap();
    }
    // give the zero-initialized biases some signal so every term is exercised
    let l = b.layout();
    for z in 0..n_ctx {
        let w = b.slots[z].as_mut().unwrap();
        for range in [l.b_in(), l.b_out()] {
            for v in &mut w[range] {
                *v = g.random_range(-0.5..0.5);
            }
        }
        for v in &mut w[l.u().start..l.v().end] {
            *v *= 3.0;
        }
    }
    b
}

fn random_gating(t_len: usize, n_ctx: usize, g: &mut Rng) -> Gating {
    let mut out = Gating::zeros(t_len, n_ctx);
    for t in 0..t_len {
        let row = out.row_mut(t);
        for p in row.iter_mut() {
            *p = g.random_range(0.0..1.0);
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }
    out
}

fn random_io(t_len: usize, g: &mut Rng) -> (Vec<[f64; 5]>, Vec<[f64; 3]>) {
    let s = (0..t_len).map(|_| std::array::from_fn(|_| g.random_range(-1.0..1.0))).collect();
    let y = (0..t_len).map(|_| std::array::from_fn(|_| g.random_range(-1.0..1.0))).collect();
    (s, y)
}

#[test]
fn single_context_composition_is_its_own_factor_product() {
    let b = small_bank(6, 2, 3, Activation::Relu, 1);
    let w = b.compose_weights(&[0.0, 1.0, 0.0]).unwrap();
    let l = b.layout();
    let c = b.params(1).unwrap();
    let u = DMatrix::from_row_slice(6, 2, &c[l.u()]);
    let v = DMatrix::from_row_slice(6, 2, &c[l.v()]);
    let want = &u * v.transpose();
    for i in 0..6 {
        for j in 0..6 {
            assert!((w.w_rec[i * 6 + j] - want[(i, j)]).abs() < 1e-14);
        }
    }
    assert_eq!(w.w_in, c[l.w_in()]);
    assert_eq!(w.b_out, c[l.b_out()]);
}

#[test]
fn equal_mixture_is_the_mean() {
    let b = small_bank(5, 2, 2, Activation::Relu, 2);
    let w0 = b.compose_weights(&[1.0, 0.0]).unwrap();
    let w1 = b.compose_weights(&[0.0, 1.0]).unwrap();
    let wm = b.compose_weights(&[0.5, 0.5]).unwrap();
    for ((a, c), m) in w0.w_rec.iter().zip(&w1.w_rec).zip(&wm.w_rec) {
        assert!((0.5 * (a + c) - m).abs() < 1e-14);
    }
    for ((a, c), m) in w0.w_out.iter().zip(&w1.w_out).zip(&wm.w_out) {
        assert!((0.5 * (a + c) - m).abs() < 1e-14);
    }
}

#[test]
fn recurrent_rank_is_bounded_by_active_contexts() {
    let b = small_bank(16, 2, 4, Activation::Relu, 3);
    for (p, active) in [(vec![1.0, 0.0, 0.0, 0.0], 1), (vec![0.5, 0.5, 0.0, 0.0], 2), (vec![0.2, 0.3, 0.1, 0.4], 4)] {
        let w = b.compose_weights(&p).unwrap();
        let m = DMatrix::from_row_slice(16, 16, &w.w_rec);
        let sv = m.singular_values();
        let rank = sv.iter().filter(|&&s| s > 1e-10 * sv[0]).count();
        assert!(rank <= 2 * active, "rank {rank} with {active} contexts");
    }
}

#[test]
fn unallocated_slots_contribute_nothing() {
    let cfg = RnnConfig { n_hidden: 4, rank: 1, ..RnnConfig::default() };
    let mut b = ContextBank::new(cfg, 3, 1e-3).unwrap();
    b.allocate(0, &mut rng::substream(0, 0, 0)).unwrap();
    let a = b.compose_weights(&[1.0, 0.0, 0.0]).unwrap();
    // mass on an empty slot is dropped and the row renormalized
    let c = b.compose_weights(&[0.5, 0.0, 0.5]).unwrap();
    assert_eq!(a, c);
    assert!(matches!(b.compose_weights(&[0.0, 1.0, 0.0]), Err(Error::NoAllocatedMass { t: 0 })));
    assert!(matches!(b.allocate(0, &mut rng::substream(0, 0, 1)), Err(Error::AlreadyAllocated(0))));
}

#[test]
fn fresh_context_has_order_one_spectral_norm() {
    let cfg = RnnConfig::default();
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let mut b = ContextBank::new(cfg.clone(), 1, 1e-3).unwrap();
        b.allocate(0, &mut rng::substream(i, 1, 0)).unwrap();
        let l = b.layout();
        let c = b.params(0).unwrap();
        let u = DMatrix::from_row_slice(l.n, l.r, &c[l.u()]);
        let v = DMatrix::from_row_slice(l.n, l.r, &c[l.v()]);
        // nonzero singular values of U Vᵀ are the roots of eig((UᵀU)(VᵀV))
        let m: Matrix3<f64> = Matrix3::from_iterator((u.transpose() * &u * v.transpose() * &v).iter().copied());
        let ev = m.complex_eigenvalues();
        let top = ev.iter().map(|e| e.norm()).fold(0.0, f64::max).sqrt();
        worst = worst.max(top);
    }
    assert!(worst < 3.0, "spectral norm {worst}");
}

#[test]
fn zero_weights_decay_the_state() {
    let cfg = RnnConfig { n_hidden: 3, rank: 1, sigma_r: 0.0, ..RnnConfig::default() };
    let w = EffectiveWeights { n: 3, w_rec: vec![0.0; 9], w_in: vec![0.0; 15], b_in: vec![0.0; 3], w_out: vec![0.0; 9], b_out: vec![0.0; 3] };
    let h = vec![1.0, -2.0, 0.5];
    let hn = step(&h, &[0.0; 5], &w, &cfg, &mut rng::substream(0, 0, 0));
    for (a, b) in hn.iter().zip(&h) {
        assert!((a - 0.9 * b).abs() < 1e-15);
    }
}

#[test]
fn unit_alpha_is_the_pure_map() {
    let mut b = small_bank(4, 1, 1, Activation::Tanh, 4);
    b.cfg.alpha = 1.0;
    let w = b.compose_weights(&[1.0]).unwrap();
    let h = vec![0.3, -0.1, 0.7, 0.2];
    let s = [0.1, 0.2, -0.3, 0.4, 1.0];
    let hn = step(&h, &s, &w, &b.cfg, &mut rng::substream(0, 0, 0));
    let r: Vec<f64> = h.iter().map(|x| x.tanh()).collect();
    for i in 0..4 {
        let mut want = w.b_in[i];
        for j in 0..4 {
            want += w.w_rec[i * 4 + j] * r[j];
        }
        for k in 0..5 {
            want += w.w_in[i * 5 + k] * s[k];
        }
        assert!((hn[i] - want).abs() < 1e-14);
    }
}

#[test]
fn recurrent_noise_variance() {
    let cfg = RnnConfig { n_hidden: 4, rank: 1, sigma_r: 0.05, alpha: 0.1, ..RnnConfig::default() };
    let w = EffectiveWeights { n: 4, w_rec: vec![0.0; 16], w_in: vec![0.0; 20], b_in: vec![0.0; 4], w_out: vec![0.0; 12], b_out: vec![0.0; 3] };
    let mut g = rng::substream(5, 0, 0);
    let n = 100_000;
    let h = vec![0.0; 4];
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..n {
        let hn = step(&h, &[0.0; 5], &w, &cfg, &mut g);
        for i in 0..4 {
            sum[i] += hn[i];
            sq[i] += hn[i] * hn[i];
        }
    }
    let want = cfg.alpha * cfg.alpha * (2.0 / cfg.alpha) * cfg.sigma_r * cfg.sigma_r;
    for i in 0..4 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        assert!((var - want).abs() / want < 0.03, "unit {i}: {var} vs {want}");
    }
}

#[test]
fn forward_matches_stepping_with_composed_weights() {
    let b = small_bank(7, 2, 3, Activation::Relu, 6);
    let mut g = rng::substream(6, 1, 0);
    let gating = random_gating(9, 3, &mut g);
    let (s, _) = random_io(9, &mut g);
    let ro = forward_trial(&b, &gating, &s, None).unwrap();
    let mut h = vec![0.0; 7];
    for t in 0..9 {
        let w = b.compose_weights(gating.row(t)).unwrap();
        h = step_with_noise(&h, &s[t], &w, &b.cfg, &[0.0; 7]);
        let y = readout(&h, &w, &b.cfg);
        for k in 0..3 {
            assert!((y[k] - ro.y_hat[t][k]).abs() < 1e-12);
        }
    }
}

#[test]
fn output_depends_on_gating_order() {
    let b = small_bank(8, 2, 2, Activation::Relu, 7);
    let mut g = rng::substream(7, 1, 0);
    let gating = random_gating(6, 2, &mut g);
    let mut rev = Gating::zeros(6, 2);
    for t in 0..6 {
        rev.row_mut(t).copy_from_slice(gating.row(5 - t));
    }
    let (s, _) = random_io(6, &mut g);
    let a = forward_trial(&b, &gating, &s, None).unwrap();
    let c = forward_trial(&b, &rev, &s, None).unwrap();
    assert_ne!(a.y_hat, c.y_hat);
}

#[test]
fn weighted_mse_by_hand() {
    let y = vec![[0.0; 3], [1.0, 1.0, 1.0]];
    assert_eq!(weighted_mse(&y, &y, &LossMask::uniform(2, 1.0)), 0.0);
    let ones = vec![[1.0; 3], [2.0; 3]];
    assert!((weighted_mse(&ones, &y, &LossMask::uniform(2, 1.0)) - 1.0).abs() < 1e-15);
    // step 0 weighted 0.2 with error 2 on one channel, step 1 weighted 1.0 with error 1 on all
    let y_hat = vec![[2.0, 0.0, 0.0], [2.0, 2.0, 2.0]];
    let mask = LossMask { weights: vec![0.2, 1.0] };
    let want = (0.2 * 4.0 + 3.0) / 6.0;
    assert!((weighted_mse(&y_hat, &y, &mask) - want).abs() < 1e-15);
}

fn loss_of(b: &ContextBank, gating: &Gating, s: &[[f64; 5]], y: &[[f64; 3]], mask: &LossMask) -> f64 {
    let ro = forward_trial(b, gating, s, None).unwrap();
    weighted_mse(&ro.y_hat, y, mask)
}

#[test]
fn bptt_matches_central_differences() {
    for inst in 0..24u64 {
        let act = if inst % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let b = small_bank(8, 2, 3, act, 100 + inst);
        let mut g = rng::substream(inst, 9, 0);
        let gating = random_gating(5, 3, &mut g);
        let (s, y) = random_io(5, &mut g);
        let mask = LossMask { weights: (0..5).map(|t| if t >= 3 { 1.0 } else { 0.2 }).collect() };
        let ro = forward_trial(&b, &gating, &s, None).unwrap();
        let mut grads = BankGrads::new(3);
        backward_trial(&b, &ro, &s, &y, &mask, 1.0, &mut grads).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for z in 0..3 {
            let gz = grads.slots[z].as_ref().unwrap();
            for i in 0..gz.len() {
                let mut bp = b.clone();
                bp.slots[z].as_mut().unwrap()[i] += h;
                let mut bm = b.clone();
                bm.slots[z].as_mut().unwrap()[i] -= h;
                let fd = (loss_of(&bp, &gating, &s, &y, &mask) - loss_of(&bm, &gating, &s, &y, &mask)) / (2.0 * h);
                let rel = (gz[i] - fd).abs() / gz[i].abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "instance {inst}: relative error {worst}");
    }
}

#[test]
fn ungated_context_gets_no_gradient() {
    let b = small_bank(6, 2, 3, Activation::Relu, 8);
    let mut g = rng::substream(8, 1, 0);
    let mut gating = random_gating(5, 3, &mut g);
    for t in 0..5 {
        let row = gating.row_mut(t);
        row[1] = 0.0;
    }
    let (s, y) = random_io(5, &mut g);
    let ro = forward_trial(&b, &gating, &s, None).unwrap();
    let mut grads = BankGrads::new(3);
    backward_trial(&b, &ro, &s, &y, &LossMask::uniform(5, 1.0), 1.0, &mut grads).unwrap();
    assert!(grads.slots[1].is_none());
    assert_eq!(grads.touched(), vec![0, 2]);
}

#[test]
fn readout_bias_gradient_is_scaled_residual() {
    let b = small_bank(6, 2, 2, Activation::Relu, 9);
    let mut g = rng::substream(9, 1, 0);
    let gating = random_gating(4, 2, &mut g);
    let (s, y) = random_io(4, &mut g);
    let mask = LossMask { weights: vec![0.2, 0.2, 1.0, 1.0] };
    let ro = forward_trial(&b, &gating, &s, None).unwrap();
    let mut grads = BankGrads::new(2);
    backward_trial(&b, &ro, &s, &y, &mask, 1.0, &mut grads).unwrap();
    let l = b.layout();
    for z in 0..2 {
        for k in 0..3 {
            let want: f64 = (0..4)
                .map(|t| ro.gating.row(t)[z] * 2.0 * mask.weights[t] * (ro.y_hat[t][k] - y[t][k]) / 12.0)
                .sum();
            let got = grads.slots[z].as_ref().unwrap()[l.b_out()][k];
            assert!((got - want).abs() < 1e-14);
        }
    }
}

#[test]
fn adam_with_zero_gradient_is_a_no_op() {
    let mut b = small_bank(5, 1, 2, Activation::Relu, 10);
    let before = b.clone();
    let mut st = TrainState::new(2, 1e-3);
    let mut grads = BankGrads::new(2);
    grads.slot_mut(0, b.layout().len());
    adam_step(&mut b, &mut st, &grads, &[false, false]).unwrap();
    assert_eq!(b, before);
    assert_eq!(st.steps, vec![1, 0]);
}

#[test]
fn lr_decays_for_used_contexts_only() {
    let mut b = small_bank(4, 1, 3, Activation::Relu, 11);
    let st = TrainState::new(3, 1e-3);
    st.decay_lr(&mut b, &[0.5, 0.0005, 0.2]);
    assert_eq!(b.lr, vec![5e-4, 1e-3, 5e-4]);
}

#[test]
fn training_leaves_ungated_contexts_bit_identical() {
    let mut b = small_bank(8, 2, 3, Activation::Relu, 12);
    let frozen = b.checksum(&[1]);
    let mut st = TrainState::new(3, 1e-2);
    let mut g = rng::substream(12, 1, 0);
    for _ in 0..20 {
        let mut gating = random_gating(5, 3, &mut g);
        for t in 0..5 {
            gating.row_mut(t)[1] = 0.0;
        }
        let (s, y) = random_io(5, &mut g);
        let batch = vec![Sample { inputs: s, targets: y, mask: LossMask::uniform(5, 1.0), gating, noise: None }];
        let (_, grads) = batch_gradient(&b, &batch).unwrap();
        adam_step(&mut b, &mut st, &grads, &[true, false, true]).unwrap();
    }
    assert_eq!(b.checksum(&[1]), frozen);
    assert_ne!(b.checksum(&[0]), small_bank(8, 2, 3, Activation::Relu, 12).checksum(&[0]));
}

#[test]
fn batch_gradient_is_thread_count_independent() {
    let b = small_bank(8, 2, 2, Activation::Relu, 13);
    let mut g = rng::substream(13, 1, 0);
    let batch: Vec<Sample> = (0..21)
        .map(|i| {
            let (s, y) = random_io(6, &mut g);
            Sample { inputs: s, targets: y, mask: LossMask::uniform(6, 1.0), gating: random_gating(6, 2, &mut g), noise: Some((1, 5, i)) }
        })
        .collect();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| batch_gradient(&b, &batch).unwrap());
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| batch_gradient(&b, &batch).unwrap());
    assert_eq!(one.0.to_bits(), many.0.to_bits());
    assert_eq!(one.1, many.1);
}

#[test]
fn performance_rule() {
    let cfg = GenConfig::default();
    let suite = build_default_suite(&cfg);
    let tr = sample_trial_indexed(&suite, 0, &cfg, 1, 0, 3).unwrap();
    let perfect: Vec<[f64; 3]> = tr.z_true.iter().map(|&z| suite.mean(z, tr.x_true).y).collect();
    assert!(evaluate_perf(&perfect, &tr, &suite));

    let onset = tr.response_onset(&suite).unwrap();
    let target = suite.target_angle(tr.z_true[onset], tr.x_true);
    let mut off = perfect.clone();
    let rot = target + std::f64::consts::PI / 8.0;
    for y in off.iter_mut().skip(onset) {
        *y = [rot.cos(), rot.sin(), 1.0];
    }
    assert!(!evaluate_perf(&off, &tr, &suite));

    let mut broke = perfect.clone();
    let s_step = tr.z_true.iter().position(|&z| z == 1).unwrap();
    broke[s_step][2] = 0.6;
    assert!(!evaluate_perf(&broke, &tr, &suite));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn composition_is_linear_in_gating(seed in 0u64..1000, a in 0.0f64..1.0) {
        let b = small_bank(6, 2, 3, Activation::Relu, seed);
        let mut g = rng::substream(seed, 2, 0);
        let p = random_gating(1, 3, &mut g);
        let q = random_gating(1, 3, &mut g);
        let mix: Vec<f64> = p.row(0).iter().zip(q.row(0)).map(|(x, y)| a * x + (1.0 - a) * y).collect();
        let wm = b.compose_weights(&mix).unwrap();
        let wp = b.compose_weights(p.row(0)).unwrap();
        let wq = b.compose_weights(q.row(0)).unwrap();
        for i in 0..wm.w_rec.len() {
            prop_assert!((wm.w_rec[i] - (a * wp.w_rec[i] + (1.0 - a) * wq.w_rec[i])).abs() < 1e-9);
        }
        for i in 0..wm.w_in.len() {
            prop_assert!((wm.w_in[i] - (a * wp.w_in[i] + (1.0 - a) * wq.w_in[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_off_forward_is_pure(seed in 0u64..1000) {
        let b = small_bank(6, 2, 2, Activation::Relu, seed);
        let mut g = rng::substream(seed, 3, 0);
        let gating = random_gating(7, 2, &mut g);
        let (s, _) = random_io(7, &mut g);
        let a = forward_trial(&b, &gating, &s, None).unwrap();
        let c = forward_trial(&b, &gating, &s, Some(&mut rng::substream(seed, 4, 0))).unwrap();
        prop_assert_eq!(a.y_hat, c.y_hat);
    }
}
