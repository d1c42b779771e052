//! Losses, Adam, and the alternating two-phase training loop.
//!
//! Training alternates between a Rules phase (OR Layer frozen, loss
//! `BCE + λ1·L_R`) and an OR phase (Rules Layer frozen, loss `BCE + λ2·L_R`),
//! switching every `phase_length` epochs and starting with the Rules phase.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature_codec::{BinarizedDataset, DEFAULT_THRESHOLDS};
use crate::gates::{logistic, open_uniform, HardConcrete};
use crate::network::{BinaryRows, DrNet, GateSample, Gradients, DEFAULT_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Rules Layer width.
    pub neurons: usize,
    pub lr: f64,
    pub epochs: usize,
    pub phase_length: usize,
    pub batch_size: usize,
    /// Regularization weight during the Rules phase.
    pub lambda1: f64,
    /// Regularization weight during the OR phase.
    pub lambda2: f64,
    pub seed: u64,
    /// Quantile thresholds per numerical column.
    pub thresholds: usize,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            neurons: 50,
            lr: 1e-2,
            epochs: 10_000,
            phase_length: 1_000,
            batch_size: 2_000,
            lambda1: 1e-3,
            lambda2: 1e-5,
            seed: 0,
            thresholds: DEFAULT_THRESHOLDS,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.neurons == 0 {
            return bad("neurons must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.phase_length == 0 {
            return bad("phase length must be at least 1".into());
        }
        if self.epochs % self.phase_length != 0 {
            return bad(format!("epochs ({}) must be a multiple of the phase length ({})", self.epochs, self.phase_length));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("regularization weights must be non-negative".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        Ok(())
    }

    /// Short SHA-256 digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Rules,
    Or,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Rules => "rules",
            Phase::Or => "or",
        }
    }
}

pub fn phase_of(epoch: usize, phase_length: usize) -> Result<Phase> {
    if phase_length == 0 {
        return Err(Error::Invalid("phase length must be at least 1".into()));
    }
    Ok(if (epoch / phase_length) % 2 == 0 { Phase::Rules } else { Phase::Or })
}

/// Complexity-shaped regularizer
/// `(1/m)(Σ_j π2_j + Σ_j π2_j Σ_i π1_{j,i})` with `pi1` neuron-major `m×d`.
pub fn reg_loss(pi1: &[f64], pi2: &[f64]) -> Result<f64> {
    let m = pi2.len();
    if m == 0 || pi1.len() % m != 0 {
        return Err(Error::Dimension { what: "rules penalties", expected: m, got: pi1.len() });
    }
    let d = pi1.len() / m;
    let mut total = 0.0;
    for (j, &p2) in pi2.iter().enumerate() {
        let row: f64 = pi1[j * d..(j + 1) * d].iter().sum();
        total += p2 + p2 * row;
    }
    Ok(total / m as f64)
}

/// `reg_loss` evaluated on the network's gates, with gradients w.r.t. the
/// rules and OR `log_alpha`.
pub fn reg_loss_with_grad(net: &DrNet) -> (f64, Vec<f64>, Vec<f64>) {
    let (m, d) = (net.m, net.d);
    let (pi1, dpi1) = net.rule_gates.penalty_with_grad();
    let (pi2, dpi2) = net.or_gates.penalty_with_grad();
    let scale = 1.0 / m as f64;
    let mut total = 0.0;
    let mut g1 = vec![0.0; m * d];
    let mut g2 = vec![0.0; m];
    for j in 0..m {
        let row: f64 = pi1[j * d..(j + 1) * d].iter().sum();
        total += pi2[j] + pi2[j] * row;
        for i in 0..d {
            g1[j * d + i] = scale * pi2[j] * dpi1[j * d + i];
        }
        g2[j] = scale * (1.0 + row) * dpi2[j];
    }
    (total * scale, g1, g2)
}

/// Stable binary cross-entropy for one logit.
#[inline]
pub fn bce_term(logit: f64, label: u8) -> f64 {
    logit.max(0.0) - logit * label as f64 + (-logit.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over the batch.
pub fn bce_loss(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Dimension { what: "labels", expected: logits.len(), got: labels.len() });
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    Ok(logits.iter().zip(labels).map(|(&l, &y)| bce_term(l, y)).sum::<f64>() / logits.len() as f64)
}

/// `d bce_loss / d logit_n`.
pub fn bce_grad(logits: &[f64], labels: &[u8]) -> Vec<f64> {
    let n = logits.len() as f64;
    logits.iter().zip(labels).map(|(&l, &y)| (logistic(l) - y as f64) / n).collect()
}

pub fn total_loss(bce: f64, reg: f64, lambda: f64) -> f64 {
    bce + lambda * reg
}

/// Adam with bias correction for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension { what: "Adam parameters", expected: self.m.len(), got: params.len() });
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Gate uniforms for one step, drawn from `rng`.
pub fn draw_gate_sample<R: rand::RngCore>(net: &DrNet, rng: &mut R) -> GateSample {
    let u1: Vec<f64> = (0..net.m * net.d).map(|_| open_uniform(rng)).collect();
    let u2: Vec<f64> = (0..net.m).map(|_| open_uniform(rng)).collect();
    gate_sample_from_uniforms(net, &u1, &u2)
}

pub fn gate_sample_from_uniforms(net: &DrNet, rules_u: &[f64], or_u: &[f64]) -> GateSample {
    let mut s = GateSample {
        rules_z: vec![0.0; rules_u.len()],
        rules_dz: vec![0.0; rules_u.len()],
        or_z: vec![0.0; or_u.len()],
        or_dz: vec![0.0; or_u.len()],
    };
    net.rule_gates.sample_with_grad(rules_u, &mut s.rules_z, &mut s.rules_dz);
    net.or_gates.sample_with_grad(or_u, &mut s.or_z, &mut s.or_dz);
    s
}

/// Loss terms and gradients for one mini-batch.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub bce: f64,
    pub reg: f64,
    pub total: f64,
    /// Training-mode predictions (`logit > 0`) that match the label.
    pub correct: usize,
    pub grads: Gradients,
}

/// Forward and backward for one batch with fixed gate samples. Only the
/// active phase's parameter group gets gradients.
pub fn batch_step(
    net: &DrNet,
    rows: &BinaryRows,
    labels: &[u8],
    batch: &[usize],
    gates: GateSample,
    phase: Phase,
    lambda: f64,
) -> Result<StepResult> {
    let trace = net.forward_train(rows, batch, gates)?;
    let batch_labels: Vec<u8> = batch.iter().map(|&n| labels[n]).collect();
    let bce = bce_loss(&trace.logits, &batch_labels)?;
    let dlogits = bce_grad(&trace.logits, &batch_labels);
    let correct = trace.logits.iter().zip(&batch_labels).filter(|(&l, &y)| (l > 0.0) as u8 == y).count();
    let mut grads = net.backward(rows, &trace, &dlogits, phase == Phase::Rules, phase == Phase::Or)?;
    let (reg, g1, g2) = reg_loss_with_grad(net);
    match phase {
        Phase::Rules => {
            for (g, r) in grads.rule_log_alpha.iter_mut().zip(&g1) {
                *g += lambda * r;
            }
        }
        Phase::Or => {
            for (g, r) in grads.or_log_alpha.iter_mut().zip(&g2) {
                *g += lambda * r;
            }
        }
    }
    Ok(StepResult { bce, reg, total: total_loss(bce, reg, lambda), correct, grads })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub bce: f64,
    pub reg: f64,
    pub total: f64,
    pub train_acc: f64,
    /// `m · L_R` after the epoch: expected rules plus predicates.
    pub expected_complexity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,bce,reg,total,train_acc\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.epoch, r.phase.name(), r.bce, r.reg, r.total, r.train_acc);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: DrNet,
    pub log: TrainLog,
}

/// Trains on a binarized dataset.
pub fn train(dataset: &BinarizedDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, config, |_| {})
}

/// Like [`train`], calling `observe` after every epoch.
pub fn train_with(
    dataset: &BinarizedDataset,
    config: &TrainConfig,
    observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let rows = BinaryRows::from_dataset(dataset);
    train_rows(&rows, dataset.labels(), config, observe)
}

pub fn train_rows(
    rows: &BinaryRows,
    labels: &[u8],
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    if labels.len() != rows.len() {
        return Err(Error::Dimension { what: "labels", expected: rows.len(), got: labels.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = DrNet::init(config.neurons, rows.d(), config.epsilon, HardConcrete::default(), &mut rng);
    let mut adam_w = Adam::new(net.rule_weights.len());
    let mut adam_a1 = Adam::new(net.rule_gates.len());
    let mut adam_a2 = Adam::new(net.or_gates.len());
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let phase = phase_of(epoch, config.phase_length)?;
        let lambda = match phase {
            Phase::Rules => config.lambda1,
            Phase::Or => config.lambda2,
        };
        order.shuffle(&mut rng);
        let (mut bce_sum, mut reg_sum, mut total_sum, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let gates = draw_gate_sample(&net, &mut rng);
            let step = batch_step(&net, rows, labels, batch, gates, phase, lambda)?;
            if !step.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("loss is {} (bce {}, reg {})", step.total, step.bce, step.reg),
                });
            }
            let w = batch.len() as f64;
            bce_sum += w * step.bce;
            reg_sum += w * step.reg;
            total_sum += w * step.total;
            correct += step.correct;
            match phase {
                Phase::Rules => {
                    adam_w.step(&mut net.rule_weights, &step.grads.rule_weights, config.lr)?;
                    adam_a1.step(&mut net.rule_gates.log_alpha, &step.grads.rule_log_alpha, config.lr)?;
                }
                Phase::Or => adam_a2.step(&mut net.or_gates.log_alpha, &step.grads.or_log_alpha, config.lr)?,
            }
            net.bump_revision();
            let params = net.rule_weights.iter().chain(&net.rule_gates.log_alpha).chain(&net.or_gates.log_alpha);
            if let Some(bad) = params.into_iter().find(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b, detail: format!("a parameter became {bad}") });
            }
        }
        let n = rows.len() as f64;
        let (reg_now, _, _) = reg_loss_with_grad(&net);
        let record = EpochRecord {
            epoch,
            phase,
            bce: bce_sum / n,
            reg: reg_sum / n,
            total: total_sum / n,
            train_acc: correct as f64 / n,
            expected_complexity: reg_now * net.m as f64,
        };
        observe(&record);
        log.epochs.push(record);
    }
    Ok(TrainOutcome { net, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reg_loss_examples() {
        // Row sums of pi1 are 4, 2 and 5.
        let pi1 = [1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 1.0, 1.0, 1.5, 1.5];
        assert_eq!(reg_loss(&pi1, &[1.0, 1.0, 0.0]).unwrap(), 8.0 / 3.0);
        assert_eq!(reg_loss(&pi1, &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(reg_loss(&[0.0, 0.0], &[1.0]).unwrap(), 1.0);
        assert!(reg_loss(&[0.0; 5], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn bce_examples() {
        let l = bce_loss(&[0.5], &[1]).unwrap();
        assert!((l - (1.0 + (-0.5f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.4741).abs() < 1e-4);
        assert!((bce_loss(&[0.0], &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((bce_loss(&[0.0], &[1]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(&[50.0], &[1]).unwrap() < 1e-20);
        assert!(bce_loss(&[-800.0], &[1]).unwrap().is_finite());
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let h = 1e-5;
        for &(l, y) in &[(0.3, 1u8), (-1.7, 0), (2.2, 0), (-0.4, 1)] {
            let g = bce_grad(&[l], &[y])[0];
            let fd = (bce_term(l + h, y) - bce_term(l - h, y)) / (2.0 * h);
            assert!(((g - fd) / fd).abs() < 1e-6, "{g} vs {fd}");
        }
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(0.5, 2.0, 0.1) - 0.7).abs() < 1e-15);
        assert_eq!(total_loss(0.5, 2.0, 0.0), 0.5);
    }

    #[test]
    fn phase_examples() {
        assert_eq!(phase_of(0, 1000).unwrap(), Phase::Rules);
        assert_eq!(phase_of(999, 1000).unwrap(), Phase::Rules);
        assert_eq!(phase_of(1000, 1000).unwrap(), Phase::Or);
        assert_eq!(phase_of(2500, 1000).unwrap(), Phase::Rules);
        assert!(phase_of(3, 0).is_err());
    }

    #[test]
    fn adam_examples() {
        let mut adam = Adam::new(1);
        let mut p = [1.0];
        adam.step(&mut p, &[0.2], 0.01).unwrap();
        assert!((p[0] - (1.0 - 0.01 * 0.2 / (0.2 + 1e-8))).abs() < 1e-15);

        let mut adam = Adam::new(3);
        let mut p = [0.1, -0.2, 0.3];
        for _ in 0..5 {
            adam.step(&mut p, &[0.0; 3], 0.01).unwrap();
        }
        assert_eq!(p, [0.1, -0.2, 0.3]);
        assert!(adam.step(&mut p, &[0.0; 2], 0.01).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { epochs: 1500, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { neurons: 0, ..Default::default() },
            TrainConfig { lambda1: -1.0, ..Default::default() },
            TrainConfig { epsilon: 1.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert_eq!(TrainConfig::default().hash(), TrainConfig::default().hash());
        assert_ne!(TrainConfig::default().hash(), TrainConfig { seed: 1, ..Default::default() }.hash());
    }
}
