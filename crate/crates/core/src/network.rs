//! The two-layer rules network.
//!
//! A Rules Layer neuron computes `y = Σ w_i x_i − Σ_{w_i>0} w_i + 1` over
//! binary inputs. The dynamic bias makes `y = 1` exactly when every positive
//! weight sees a 1 and every negative weight sees a 0, so the binary step
//! `y == 1` is a conjunction. The OR Layer sums the selected rule activations
//! with a negative bias `−ε`, which is positive iff some selected rule fires.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_codec::BinarizedDataset;
use crate::gates::{GateBank, HardConcrete};

/// Slack on the binary step: a neuron fires when `y >= 1 - ACTIVATION_TOLERANCE`.
pub const ACTIVATION_TOLERANCE: f64 = 1e-6;

/// Training-mode effective weights smaller than this in magnitude are exactly
/// zero.
pub const ZERO_WEIGHT: f64 = 1e-6;

/// Zero cutoff for evaluation-mode weights. Weights of features a rule has
/// dropped keep jittering around zero at about one optimizer step (the
/// default learning rate), with a sign that is noise; below this magnitude
/// they are read as excluded. Far above [`ACTIVATION_TOLERANCE`], so a
/// surviving mismatched weight always pulls `y` clear of the step.
pub const EVAL_ZERO_WEIGHT: f64 = 1e-2;

pub const DEFAULT_EPSILON: f64 = 0.5;

/// Binary rows stored as ascending lists of active feature indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRows {
    d: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl BinaryRows {
    pub fn from_dense<'a>(d: usize, rows: impl IntoIterator<Item = &'a [u8]>) -> Result<Self> {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        for row in rows {
            if row.len() != d {
                return Err(Error::Dimension { what: "input row", expected: d, got: row.len() });
            }
            indices.extend(row.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i as u32));
            offsets.push(indices.len());
        }
        Ok(BinaryRows { d, offsets, indices })
    }

    pub fn from_dataset(ds: &BinarizedDataset) -> Self {
        Self::from_dense(ds.d(), ds.rows()).expect("dataset rows have width d")
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn active(&self, row: usize) -> &[u32] {
        &self.indices[self.offsets[row]..self.offsets[row + 1]]
    }
}

/// `w = w̃ · z`, with tiny magnitudes snapped to exactly zero.
pub fn effective_weight(free: f64, gate: f64) -> f64 {
    snap(free * gate, ZERO_WEIGHT)
}

/// Evaluation-mode `w = w̃ · ẑ`, snapped at [`EVAL_ZERO_WEIGHT`].
pub fn eval_weight(free: f64, gate: f64) -> f64 {
    snap(free * gate, EVAL_ZERO_WEIGHT)
}

#[inline]
fn snap(w: f64, cutoff: f64) -> f64 {
    if w.abs() < cutoff {
        0.0
    } else {
        w
    }
}

/// Dynamic-bias pre-activation of one neuron on a dense binary input.
pub fn rule_preactivation(weights: &[f64], x: &[u8]) -> f64 {
    let mut y = 1.0 - weights.iter().filter(|&&w| w > 0.0).sum::<f64>();
    for (&w, &xi) in weights.iter().zip(x) {
        if xi != 0 {
            y += w;
        }
    }
    y
}

/// Binary step with tolerance.
#[inline]
pub fn step(y: f64) -> u8 {
    (y >= 1.0 - ACTIVATION_TOLERANCE) as u8
}

/// Clipped straight-through gradient: blocked below zero (ReLU-like), and
/// above one when descent would push `y` higher still.
#[inline]
pub fn ste_backward(y: f64, upstream: f64) -> f64 {
    if y < 0.0 || (y > 1.0 && upstream < 0.0) {
        0.0
    } else {
        upstream
    }
}

/// `∂y/∂w_i` for the dynamic-bias neuron. The sign indicator is the one seen
/// in the forward pass; at `w_i = 0` the negative side is taken.
#[inline]
pub fn preactivation_grad(weight: f64, x: u8) -> f64 {
    x as f64 - if weight > 0.0 { 1.0 } else { 0.0 }
}

/// OR-layer weight binarization: 1 for positive weights, else 0.
pub fn binarize_or_weights(weights: &[f64]) -> Vec<f64> {
    weights.iter().map(|&w| if w > 0.0 { 1.0 } else { 0.0 }).collect()
}

/// `Σ ŵ_j ŷ_j − ε`.
pub fn or_logit(selectors: &[f64], activations: &[u8], epsilon: f64) -> Result<f64> {
    if selectors.len() != activations.len() {
        return Err(Error::Dimension { what: "rule activations", expected: selectors.len(), got: activations.len() });
    }
    Ok(selectors.iter().zip(activations).map(|(&s, &a)| s * a as f64).sum::<f64>() - epsilon)
}

/// Rules Layer output for a batch, rows × neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct RulesOutput {
    pub m: usize,
    pub pre: Vec<f64>,
    pub act: Vec<u8>,
}

/// Transposes neuron-major `m×d` weights to feature-major and returns the
/// per-neuron positive sums.
fn feature_major(weights: &[f64], m: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut wt = vec![0.0; m * d];
    let mut pos = vec![0.0; m];
    for j in 0..m {
        for i in 0..d {
            let w = weights[j * d + i];
            wt[i * m + j] = w;
            if w > 0.0 {
                pos[j] += w;
            }
        }
    }
    (wt, pos)
}

#[inline]
fn accumulate_row(wt: &[f64], pos: &[f64], m: usize, active: &[u32], y: &mut [f64]) {
    for (y, p) in y.iter_mut().zip(pos) {
        *y = 1.0 - p;
    }
    for &i in active {
        let col = &wt[i as usize * m..(i as usize + 1) * m];
        for (y, w) in y.iter_mut().zip(col) {
            *y += w;
        }
    }
}

/// Rules Layer forward over the listed rows. `weights` are effective weights,
/// neuron-major `m×d`.
pub fn rules_forward(weights: &[f64], m: usize, rows: &BinaryRows, batch: &[usize]) -> Result<RulesOutput> {
    let d = rows.d();
    if weights.len() != m * d {
        return Err(Error::Dimension { what: "rules weights", expected: m * d, got: weights.len() });
    }
    let (wt, pos) = feature_major(weights, m, d);
    let mut pre = vec![0.0; batch.len() * m];
    for (b, &n) in batch.iter().enumerate() {
        accumulate_row(&wt, &pos, m, rows.active(n), &mut pre[b * m..(b + 1) * m]);
    }
    let act = pre.iter().map(|&y| step(y)).collect();
    Ok(RulesOutput { m, pre, act })
}

/// Network parameters. Rules weights and gates are neuron-major `m×d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrNet {
    pub m: usize,
    pub d: usize,
    pub rule_weights: Vec<f64>,
    pub rule_gates: GateBank,
    pub or_gates: GateBank,
    pub epsilon: f64,
    #[serde(skip)]
    revision: u64,
}

/// Gate values drawn for one training step, with `dz/dlog_alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSample {
    pub rules_z: Vec<f64>,
    pub rules_dz: Vec<f64>,
    pub or_z: Vec<f64>,
    pub or_dz: Vec<f64>,
}

/// Everything the backward pass needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    revision: u64,
    batch: Vec<usize>,
    /// Effective weights, neuron-major.
    pub weights: Vec<f64>,
    pub rules: RulesOutput,
    pub logits: Vec<f64>,
    pub gates: GateSample,
}

/// Gradients for the three parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub rule_weights: Vec<f64>,
    pub rule_log_alpha: Vec<f64>,
    pub or_log_alpha: Vec<f64>,
}

impl Gradients {
    pub fn zeros(net: &DrNet) -> Self {
        Gradients {
            rule_weights: vec![0.0; net.m * net.d],
            rule_log_alpha: vec![0.0; net.m * net.d],
            or_log_alpha: vec![0.0; net.m],
        }
    }
}

impl DrNet {
    /// Free rules weights `U(0, 1)`; gate `log_alpha ~ N(0, 0.01)`.
    pub fn init<R: Rng + ?Sized>(m: usize, d: usize, epsilon: f64, dist: HardConcrete, rng: &mut R) -> Self {
        let rule_weights = (0..m * d).map(|_| rng.random::<f64>()).collect();
        let rule_gates = GateBank::init(m * d, dist, rng);
        let or_gates = GateBank::init(m, dist, rng);
        DrNet { m, d, rule_weights, rule_gates, or_gates, epsilon, revision: 0 }
    }

    pub fn from_parts(
        m: usize,
        d: usize,
        rule_weights: Vec<f64>,
        rule_gates: GateBank,
        or_gates: GateBank,
        epsilon: f64,
    ) -> Result<Self> {
        if rule_weights.len() != m * d {
            return Err(Error::Dimension { what: "rules weights", expected: m * d, got: rule_weights.len() });
        }
        if rule_gates.len() != m * d {
            return Err(Error::Dimension { what: "rules gates", expected: m * d, got: rule_gates.len() });
        }
        if or_gates.len() != m {
            return Err(Error::Dimension { what: "OR gates", expected: m, got: or_gates.len() });
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        rule_gates.dist.validate()?;
        or_gates.dist.validate()?;
        Ok(DrNet { m, d, rule_weights, rule_gates, or_gates, epsilon, revision: 0 })
    }

    /// Marks parameters as changed; traces from earlier forwards go stale.
    pub fn bump_revision(&mut self) {
        self.revision += 1;
    }

    /// Evaluation-mode effective rules weights (deterministic gates, snapped).
    pub fn eval_rule_weights(&self) -> Vec<f64> {
        self.rule_weights
            .iter()
            .zip(&self.rule_gates.log_alpha)
            .map(|(&w, &a)| eval_weight(w, self.rule_gates.dist.deterministic(a)))
            .collect()
    }

    /// Evaluation-mode OR selectors: binarized deterministic gates.
    pub fn eval_or_selectors(&self) -> Vec<f64> {
        binarize_or_weights(&self.or_gates.deterministic())
    }

    pub fn evaluator(&self) -> Evaluator {
        let (wt, pos) = feature_major(&self.eval_rule_weights(), self.m, self.d);
        let selected = self.eval_or_selectors().iter().map(|&s| s > 0.0).collect();
        Evaluator { m: self.m, d: self.d, wt, pos, selected, epsilon: self.epsilon }
    }

    /// Evaluation-mode predictions for every row.
    pub fn predict(&self, rows: &BinaryRows) -> Result<Vec<u8>> {
        if rows.d() != self.d {
            return Err(Error::Dimension { what: "input width", expected: self.d, got: rows.d() });
        }
        let ev = self.evaluator();
        let mut y = vec![0.0; self.m];
        Ok((0..rows.len()).map(|n| ev.predict_active(rows.active(n), &mut y)).collect())
    }

    /// Training-mode forward with the given gate sample.
    pub fn forward_train(&self, rows: &BinaryRows, batch: &[usize], gates: GateSample) -> Result<ForwardTrace> {
        if rows.d() != self.d {
            return Err(Error::Dimension { what: "input width", expected: self.d, got: rows.d() });
        }
        if gates.rules_z.len() != self.m * self.d || gates.or_z.len() != self.m {
            return Err(Error::Dimension { what: "gate sample", expected: self.m * self.d, got: gates.rules_z.len() });
        }
        let weights: Vec<f64> =
            self.rule_weights.iter().zip(&gates.rules_z).map(|(&w, &z)| effective_weight(w, z)).collect();
        let rules = rules_forward(&weights, self.m, rows, batch)?;
        let logits = rules
            .act
            .chunks(self.m)
            .map(|act| or_logit(&gates.or_z, act, self.epsilon))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardTrace { revision: self.revision, batch: batch.to_vec(), weights, rules, logits, gates })
    }

    /// Backpropagates `dL/dlogit` through the OR Layer, the clipped STE and
    /// the dynamic-bias neurons to both parameter groups. Groups not asked for
    /// are left at zero.
    pub fn backward(
        &self,
        rows: &BinaryRows,
        trace: &ForwardTrace,
        dlogits: &[f64],
        rules_group: bool,
        or_group: bool,
    ) -> Result<Gradients> {
        if trace.revision != self.revision {
            return Err(Error::Invalid("stale forward trace: parameters changed since the forward pass".into()));
        }
        if dlogits.len() != trace.batch.len() {
            return Err(Error::Dimension { what: "logit gradients", expected: trace.batch.len(), got: dlogits.len() });
        }
        let (m, d) = (self.m, self.d);
        let mut grads = Gradients::zeros(self);

        if or_group {
            for (b, &dl) in dlogits.iter().enumerate() {
                let act = &trace.rules.act[b * m..(b + 1) * m];
                for (g, &a) in grads.or_log_alpha.iter_mut().zip(act) {
                    *g += dl * a as f64;
                }
            }
            for (g, &dz) in grads.or_log_alpha.iter_mut().zip(&trace.gates.or_dz) {
                *g *= dz;
            }
        }

        if rules_group {
            // Feature-major accumulation of Σ_n g_{n,j} x_{n,i}.
            let mut gx = vec![0.0; d * m];
            let mut gsum = vec![0.0; m];
            let mut gy = vec![0.0; m];
            for (b, (&n, &dl)) in trace.batch.iter().zip(dlogits).enumerate() {
                let pre = &trace.rules.pre[b * m..(b + 1) * m];
                let mut any = false;
                for j in 0..m {
                    gy[j] = ste_backward(pre[j], dl * trace.gates.or_z[j]);
                    any |= gy[j] != 0.0;
                }
                if !any {
                    continue;
                }
                for (s, g) in gsum.iter_mut().zip(&gy) {
                    *s += g;
                }
                for &i in rows.active(n) {
                    let col = &mut gx[i as usize * m..(i as usize + 1) * m];
                    for (c, g) in col.iter_mut().zip(&gy) {
                        *c += g;
                    }
                }
            }
            for j in 0..m {
                for i in 0..d {
                    let k = j * d + i;
                    let w = trace.weights[k];
                    let dw = gx[i * m + j] - if w > 0.0 { gsum[j] } else { 0.0 };
                    grads.rule_weights[k] = dw * trace.gates.rules_z[k];
                    grads.rule_log_alpha[k] = dw * self.rule_weights[k] * trace.gates.rules_dz[k];
                }
            }
        }
        Ok(grads)
    }
}

/// Precomputed evaluation-mode network for fast repeated prediction.
#[derive(Debug, Clone)]
pub struct Evaluator {
    m: usize,
    d: usize,
    wt: Vec<f64>,
    pos: Vec<f64>,
    selected: Vec<bool>,
    epsilon: f64,
}

impl Evaluator {
    fn predict_active(&self, active: &[u32], y: &mut [f64]) -> u8 {
        accumulate_row(&self.wt, &self.pos, self.m, active, y);
        let fired = y.iter().zip(&self.selected).filter(|(&y, &s)| s && step(y) == 1).count();
        (fired as f64 - self.epsilon > 0.0) as u8
    }

    /// Prediction for one dense binary input.
    pub fn predict(&self, x: &[u8]) -> Result<u8> {
        if x.len() != self.d {
            return Err(Error::Dimension { what: "input width", expected: self.d, got: x.len() });
        }
        let active: Vec<u32> = x.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i as u32).collect();
        let mut y = vec![0.0; self.m];
        Ok(self.predict_active(&active, &mut y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rules_forward_examples() {
        let w = [1.2, -0.7, 0.0];
        let rows = BinaryRows::from_dense(3, [&[1u8, 0, 1][..], &[1, 1, 1], &[0, 1, 0]]).unwrap();
        let out = rules_forward(&w, 1, &rows, &[0, 1]).unwrap();
        assert!((out.pre[0] - 1.0).abs() < 1e-12);
        assert!((out.pre[1] - 0.3).abs() < 1e-12);
        assert_eq!(out.act, [1, 0]);

        let zero = rules_forward(&[0.0; 3], 1, &rows, &[0, 1, 2]).unwrap();
        assert_eq!(zero.pre, [1.0, 1.0, 1.0]);
        assert_eq!(zero.act, [1, 1, 1]);

        assert!(rules_forward(&w, 2, &rows, &[0]).is_err());
    }

    #[test]
    fn ste_examples() {
        assert_eq!(ste_backward(-0.2, 0.5), 0.0);
        assert_eq!(ste_backward(1.4, -0.3), 0.0);
        assert_eq!(ste_backward(1.4, 0.3), 0.3);
        assert_eq!(ste_backward(0.5, 0.7), 0.7);
        assert_eq!(ste_backward(0.0, -0.7), -0.7);
        assert_eq!(ste_backward(1.0, -0.7), -0.7);
    }

    #[test]
    fn dynamic_bias_gradient_examples() {
        assert_eq!(preactivation_grad(0.5, 1), 0.0);
        assert_eq!(preactivation_grad(0.5, 0), -1.0);
        assert_eq!(preactivation_grad(-0.5, 1), 1.0);
        assert_eq!(preactivation_grad(0.0, 1), 1.0);
    }

    #[test]
    fn or_examples() {
        let z = [0.0, 1.0, 0.0];
        assert_eq!(or_logit(&z, &[1, 0, 1], 0.5).unwrap(), -0.5);
        assert_eq!(or_logit(&z, &[0, 1, 0], 0.5).unwrap(), 0.5);
        assert_eq!(binarize_or_weights(&[-0.3, 0.0, 0.7]), [0.0, 0.0, 1.0]);
        assert!(or_logit(&z, &[1], 0.5).is_err());
    }

    fn tiny_net(rule_weights: Vec<f64>, rule_log_alpha: Vec<f64>, or_log_alpha: Vec<f64>, d: usize) -> DrNet {
        let dist = HardConcrete::default();
        let m = or_log_alpha.len();
        DrNet::from_parts(
            m,
            d,
            rule_weights,
            GateBank::new(rule_log_alpha, dist),
            GateBank::new(or_log_alpha, dist),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn predict_examples() {
        let all: Vec<Vec<u8>> = (0..8u8).map(|k| (0..3).map(|i| (k >> i) & 1).collect()).collect();
        let rows = BinaryRows::from_dense(3, all.iter().map(Vec::as_slice)).unwrap();

        let off = tiny_net(vec![1.0; 6], vec![10.0; 6], vec![-10.0, -10.0], 3);
        assert_eq!(off.predict(&rows).unwrap(), [0; 8]);

        // Rule 0 has every weight gated off: the empty conjunction.
        let always = tiny_net(vec![1.0; 6], vec![-10.0, -10.0, -10.0, 10.0, 10.0, 10.0], vec![10.0, -10.0], 3);
        assert_eq!(always.predict(&rows).unwrap(), [1; 8]);
    }

    #[test]
    fn backward_rejects_stale_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = DrNet::init(2, 3, 0.5, HardConcrete::default(), &mut rng);
        let rows = BinaryRows::from_dense(3, [&[1u8, 0, 1][..]]).unwrap();
        let gates = GateSample {
            rules_z: vec![0.5; 6],
            rules_dz: vec![0.1; 6],
            or_z: vec![0.5; 2],
            or_dz: vec![0.1; 2],
        };
        let trace = net.forward_train(&rows, &[0], gates).unwrap();
        assert!(net.backward(&rows, &trace, &[0.3], true, true).is_ok());
        net.bump_revision();
        assert!(net.backward(&rows, &trace, &[0.3], true, true).is_err());
    }

    #[test]
    fn tiny_weights_are_exact_zero() {
        assert_eq!(effective_weight(1e-7, 1.0), 0.0);
        assert_eq!(effective_weight(2.0, 4e-7), 0.0);
        assert_eq!(effective_weight(-ZERO_WEIGHT, 1.0), -ZERO_WEIGHT);
        assert_eq!(eval_weight(0.009, 1.0), 0.0);
        assert_eq!(eval_weight(-0.019, 0.5), 0.0);
        assert_eq!(eval_weight(-0.5, 0.5), -0.25);
        assert_eq!(effective_weight(-0.5, 0.5), -0.25);
    }
}
