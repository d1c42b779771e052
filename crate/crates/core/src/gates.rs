//! Hard-concrete gates: a stretched, clamped logistic relaxation of Bernoulli
//! masks. A gate multiplies one weight; its deterministic test-time value can
//! be exactly zero, which is what removes a predicate or a rule.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temperature and stretch interval of the hard-concrete distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardConcrete {
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
}

impl Default for HardConcrete {
    fn default() -> Self {
        HardConcrete { beta: 2.0 / 3.0, gamma: -0.1, zeta: 1.1 }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform draw strictly inside (0, 1).
pub fn open_uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

impl HardConcrete {
    pub fn validate(&self) -> Result<()> {
        if self.beta > 0.0 && self.gamma < 0.0 && self.zeta > 1.0 {
            Ok(())
        } else {
            Err(Error::Invalid(format!("hard-concrete constants out of range: {self:?}")))
        }
    }

    /// Stochastic gate value and its derivative w.r.t. `log_alpha` for a
    /// given uniform `u`. The derivative is zero where the clamp is active.
    #[inline]
    pub fn sample(&self, log_alpha: f64, u: f64) -> (f64, f64) {
        let s = logistic(((u.ln() - (-u).ln_1p()) + log_alpha) / self.beta);
        self.stretch(s, s * (1.0 - s) / self.beta)
    }

    /// Test-time gate: the stretched, clamped mean of the logistic.
    #[inline]
    pub fn deterministic(&self, log_alpha: f64) -> f64 {
        let s = logistic(log_alpha);
        (s * (self.zeta - self.gamma) + self.gamma).clamp(0.0, 1.0)
    }

    /// Probability that the sampled gate is nonzero, with its derivative.
    #[inline]
    pub fn penalty(&self, log_alpha: f64) -> (f64, f64) {
        let p = logistic(log_alpha - self.beta * (-self.gamma / self.zeta).ln());
        (p, p * (1.0 - p))
    }

    #[inline]
    fn stretch(&self, s: f64, ds: f64) -> (f64, f64) {
        let span = self.zeta - self.gamma;
        let raw = s * span + self.gamma;
        if raw <= 0.0 {
            (0.0, 0.0)
        } else if raw >= 1.0 {
            (1.0, 0.0)
        } else {
            (raw, ds * span)
        }
    }
}

/// One trainable gate per gated weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateBank {
    pub log_alpha: Vec<f64>,
    pub dist: HardConcrete,
}

impl GateBank {
    pub fn new(log_alpha: Vec<f64>, dist: HardConcrete) -> Self {
        GateBank { log_alpha, dist }
    }

    /// `log_alpha ~ Normal(0, 0.01)`, i.e. keep-probability near one half.
    pub fn init<R: Rng + ?Sized>(len: usize, dist: HardConcrete, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        GateBank { log_alpha: (0..len).map(|_| normal.sample(rng)).collect(), dist }
    }

    pub fn len(&self) -> usize {
        self.log_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_alpha.is_empty()
    }

    /// Gate samples for the given uniforms, which must lie strictly in (0, 1).
    pub fn sample(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.len() {
            return Err(Error::Dimension { what: "gate uniforms", expected: self.len(), got: u.len() });
        }
        if let Some(bad) = u.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::Invalid(format!("gate uniform {bad} outside the open interval (0, 1)")));
        }
        Ok(self.log_alpha.iter().zip(u).map(|(&a, &v)| self.dist.sample(a, v).0).collect())
    }

    /// Samples into `z` and writes `dz/dlog_alpha` into `dz`.
    pub fn sample_with_grad(&self, u: &[f64], z: &mut [f64], dz: &mut [f64]) {
        for (((&a, &v), z), dz) in self.log_alpha.iter().zip(u).zip(z.iter_mut()).zip(dz.iter_mut()) {
            (*z, *dz) = self.dist.sample(a, v);
        }
    }

    pub fn deterministic(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|&a| self.dist.deterministic(a)).collect()
    }

    pub fn penalty(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|&a| self.dist.penalty(a).0).collect()
    }

    /// Penalties and their derivatives w.r.t. `log_alpha`.
    pub fn penalty_with_grad(&self) -> (Vec<f64>, Vec<f64>) {
        self.log_alpha.iter().map(|&a| self.dist.penalty(a)).unzip()
    }
}
