//! Adaptive-moment optimizer with decoupled weight decay (AdamW).
//!
//! The decay term is applied directly to the weights rather than folded
//! into the gradient, so regularization strength is independent of the
//! adaptive step size:
//!
//! ```text
//! m ← β₁ m + (1−β₁) g          v ← β₂ v + (1−β₂) g²
//! θ ← θ − lr·λ·θ − lr · m̂ / (√v̂ + ε)
//! ```
//!
//! with the usual bias corrections m̂ = m/(1−β₁ᵏ), v̂ = v/(1−β₂ᵏ).
//! Parameters whose gradient is absent (never touched by the loss, or
//! after `zero_grad`) are still decayed but receive no moment update.

use serde::{Deserialize, Serialize};

use crate::tensor::{AutodiffError, Tensor};

// ── Configuration ───────────────────────────────────────────────────────

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> AdamWConfig {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

impl AdamWConfig {
    /// Collect every invalid field (empty means valid).
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr.is_finite() && self.lr > 0.0) {
            errs.push(format!("optimizer.lr must be positive and finite, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("optimizer.{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            errs.push(format!("optimizer.eps must be positive and finite, got {}", self.eps));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            errs.push(format!("optimizer.weight_decay must be non-negative and finite, got {}", self.weight_decay));
        }
        errs
    }
}

// ── Optimizer state ─────────────────────────────────────────────────────

/// AdamW over a fixed parameter list. The list order defines the state
/// layout, so every `step` call must pass the same tensors in the same
/// order they were registered with.
#[derive(Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &[Tensor]) -> Result<AdamW, AutodiffError> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(AutodiffError::invalid("optimizer", errs.join("; ")));
        }
        Ok(AdamW {
            cfg,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    /// Number of `step` calls taken so far.
    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// Apply one update from the gradients currently stored on `params`,
    /// then leave the gradients untouched (call [`AdamW::zero_grad`]
    /// before the next backward pass).
    pub fn step(&mut self, params: &[Tensor]) -> Result<(), AutodiffError> {
        if params.len() != self.m.len() {
            return Err(AutodiffError::invalid(
                "optimizer",
                format!("step called with {} params, state has {}", params.len(), self.m.len()),
            ));
        }
        self.steps += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.steps as i32);
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.m[i].len() {
                return Err(AutodiffError::invalid(
                    "optimizer",
                    format!("param {i} has {} elements, state expects {}", p.numel(), self.m[i].len()),
                ));
            }
            let mut data: Vec<f64> = p.data().to_vec();
            // Decoupled decay applies even when the gradient is absent.
            for x in data.iter_mut() {
                *x -= self.cfg.lr * self.cfg.weight_decay * *x;
            }
            if let Some(grad) = p.grad() {
                for j in 0..data.len() {
                    let g = grad[j];
                    self.m[i][j] = self.cfg.beta1 * self.m[i][j] + (1.0 - self.cfg.beta1) * g;
                    self.v[i][j] = self.cfg.beta2 * self.v[i][j] + (1.0 - self.cfg.beta2) * g * g;
                    let m_hat = self.m[i][j] / bc1;
                    let v_hat = self.v[i][j] / bc2;
                    data[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                }
            }
            p.set_data(&data);
        }
        Ok(())
    }

    /// Clear the gradients of every parameter.
    pub fn zero_grad(&self, params: &[Tensor]) {
        for p in params {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn config_validation_collects_every_error() {
        let bad = AdamWConfig { lr: -1.0, beta1: 1.5, beta2: -0.1, eps: 0.0, weight_decay: -2.0 };
        let errs = bad.validate();
        assert_eq!(errs.len(), 5, "all five fields reported together: {errs:?}");
        assert!(AdamWConfig::default().validate().is_empty());
        assert!(AdamW::new(bad, &[]).is_err());
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // Single parameter θ=2, gradient g=0.5, defaults minus decay.
        // m=0.05, v=0.00025, m̂=0.5, v̂=0.25, Δ=lr·0.5/(0.5+1e-8)≈lr.
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let p = Tensor::param(vec![2.0], &[1, 1]).unwrap();
        p.accumulate_grad(&[0.5]);
        let mut opt = AdamW::new(cfg, std::slice::from_ref(&p)).unwrap();
        opt.step(std::slice::from_ref(&p)).unwrap();
        let expected = 2.0 - 1e-3 * 0.5 / (0.25_f64.sqrt() + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15, "got {}, want {expected}", p.data()[0]);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn weight_decay_is_decoupled_from_the_gradient() {
        // Zero gradient: the update must be exactly θ ← θ(1 − lr·λ).
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..AdamWConfig::default() };
        let p = Tensor::param(vec![4.0, -2.0], &[1, 2]).unwrap();
        p.accumulate_grad(&[0.0, 0.0]);
        let mut opt = AdamW::new(cfg, std::slice::from_ref(&p)).unwrap();
        opt.step(std::slice::from_ref(&p)).unwrap();
        assert_eq!(p.data()[0], 4.0 * (1.0 - 0.05));
        assert_eq!(p.data()[1], -2.0 * (1.0 - 0.05));
    }

    #[test]
    fn optimizer_descends_a_quadratic() {
        // Minimize (θ − 3)² from θ = 0; 500 steps at lr 0.05 should land
        // close to the optimum and never diverge.
        let p = Tensor::param(vec![0.0], &[1, 1]).unwrap();
        let cfg = AdamWConfig { lr: 0.05, weight_decay: 0.0, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, std::slice::from_ref(&p)).unwrap();
        for _ in 0..500 {
            opt.zero_grad(std::slice::from_ref(&p));
            let tape = Tape::new();
            let shifted = tape.add_scalar(&p, -3.0);
            let loss = tape.mul(&shifted, &shifted).unwrap();
            tape.backward(&loss).unwrap();
            opt.step(std::slice::from_ref(&p)).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-2, "converged to {}", p.data()[0]);
    }

    #[test]
    fn step_rejects_mismatched_parameter_lists() {
        let p = Tensor::param(vec![0.0], &[1, 1]).unwrap();
        let q = Tensor::param(vec![0.0], &[1, 1]).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), std::slice::from_ref(&p)).unwrap();
        assert!(opt.step(&[p.clone(), q]).is_err());
        let r = Tensor::param(vec![0.0; 4], &[2, 2]).unwrap();
        assert!(opt.step(std::slice::from_ref(&r)).is_err(), "shape drift must be caught");
    }

    #[test]
    fn missing_gradients_skip_the_moment_update_but_still_decay() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.1, ..AdamWConfig::default() };
        let p = Tensor::param(vec![1.0], &[1, 1]).unwrap();
        let mut opt = AdamW::new(cfg, std::slice::from_ref(&p)).unwrap();
        opt.step(std::slice::from_ref(&p)).unwrap();
        assert_eq!(p.data()[0], 1.0 - 0.01, "pure decay when no gradient is stored");
    }
}
