//! Finite-difference checks shared by the gradient tests and the acceptance
//! target. Each returns the worst relative error seen, with magnitudes below
//! `FLOOR` compared on an absolute scale instead.

#![allow(dead_code)]

use drnet::gates::{GateBank, HardConcrete};
use drnet::network::{BinaryRows, DrNet};
use drnet::trainer::{batch_step, bce_grad, bce_loss, gate_sample_from_uniforms, reg_loss_with_grad, Phase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POINTS: usize = 20;
const FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn random_net(rng: &mut ChaCha8Rng, m: usize, d: usize) -> DrNet {
    let dist = HardConcrete::default();
    let w = (0..m * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let a1 = (0..m * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let a2 = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    DrNet::from_parts(m, d, w, GateBank::new(a1, dist), GateBank::new(a2, dist), 0.5).unwrap()
}

/// BCE w.r.t. logits.
pub fn bce_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0f64;
    for _ in 0..POINTS {
        let n = rng.random_range(1..20);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let grad = bce_grad(&logits, &labels);
        for k in 0..n {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (bce_loss(&plus, &labels).unwrap() - bce_loss(&minus, &labels).unwrap()) / (2.0 * h);
            worst = worst.max(rel_err(grad[k], fd));
        }
    }
    worst
}

/// λ·L_R w.r.t. both gate banks.
pub fn reg_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = 0f64;
    for _ in 0..POINTS {
        let lambda = 10f64.powf(rng.random_range(-5.0..0.0));
        let (m, d) = (rng.random_range(1..6), rng.random_range(1..6));
        let mut net = random_net(&mut rng, m, d);
        let (_, g1, g2) = reg_loss_with_grad(&net);
        for k in 0..net.rule_gates.len() {
            let a = net.rule_gates.log_alpha[k];
            net.rule_gates.log_alpha[k] = a + h;
            let up = lambda * reg_loss_with_grad(&net).0;
            net.rule_gates.log_alpha[k] = a - h;
            let down = lambda * reg_loss_with_grad(&net).0;
            net.rule_gates.log_alpha[k] = a;
            worst = worst.max(rel_err(lambda * g1[k], (up - down) / (2.0 * h)));
        }
        for j in 0..net.or_gates.len() {
            let a = net.or_gates.log_alpha[j];
            net.or_gates.log_alpha[j] = a + h;
            let up = lambda * reg_loss_with_grad(&net).0;
            net.or_gates.log_alpha[j] = a - h;
            let down = lambda * reg_loss_with_grad(&net).0;
            net.or_gates.log_alpha[j] = a;
            worst = worst.max(rel_err(lambda * g2[j], (up - down) / (2.0 * h)));
        }
    }
    worst
}

/// Uniform whose gate sample stays strictly inside (0, 1) with some margin,
/// so a small step in `log_alpha` never hits the clamp.
fn interior_uniform(rng: &mut ChaCha8Rng, dist: &HardConcrete, log_alpha: f64) -> f64 {
    loop {
        let u: f64 = rng.random_range(0.01..0.99);
        let z = dist.sample(log_alpha, u).0;
        if z > 0.02 && z < 0.98 {
            return u;
        }
    }
}

pub struct OrPathCheck {
    pub worst: f64,
    /// Gates whose gradient carried a BCE signal above 1e-3.
    pub nonzero: usize,
    /// Every Rules Layer gradient was exactly zero in the OR phase.
    pub rules_frozen: bool,
}

/// Total loss w.r.t. OR-layer `log_alpha`, with the Rules Layer held fixed
/// and the gate noise pinned.
pub fn or_path_check(seed: u64) -> OrPathCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut out = OrPathCheck { worst: 0.0, nonzero: 0, rules_frozen: true };
    for _ in 0..POINTS {
        let (m, d, n) = (rng.random_range(1..8), rng.random_range(2..7), rng.random_range(5..60));
        let mut net = random_net(&mut rng, m, d);
        let dense: Vec<Vec<u8>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0..2)).collect()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let rows = BinaryRows::from_dense(d, dense.iter().map(Vec::as_slice)).unwrap();
        let batch: Vec<usize> = (0..n).collect();
        let lambda = 1e-3;
        let u1: Vec<f64> = (0..m * d).map(|_| rng.random_range(0.01..0.99)).collect();
        let dist = net.or_gates.dist;
        let u2: Vec<f64> = net.or_gates.log_alpha.iter().map(|&a| interior_uniform(&mut rng, &dist, a)).collect();

        let loss = |net: &DrNet| {
            let gates = gate_sample_from_uniforms(net, &u1, &u2);
            batch_step(net, &rows, &labels, &batch, gates, Phase::Or, lambda).unwrap()
        };
        let base = loss(&net);
        out.rules_frozen &= base.grads.rule_weights.iter().all(|&g| g == 0.0);
        for j in 0..m {
            let a = net.or_gates.log_alpha[j];
            net.or_gates.log_alpha[j] = a + h;
            let up = loss(&net).total;
            net.or_gates.log_alpha[j] = a - h;
            let down = loss(&net).total;
            net.or_gates.log_alpha[j] = a;
            let g = base.grads.or_log_alpha[j];
            out.worst = out.worst.max(rel_err(g, (up - down) / (2.0 * h)));
            if g.abs() > 1e-3 {
                out.nonzero += 1;
            }
        }
    }
    out
}
