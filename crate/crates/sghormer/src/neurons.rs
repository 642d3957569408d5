//! Discrete-time spiking neurons: IF, LIF, and PLIF with hard reset.
//!
//! A neuron layer is stepped once per time step with an input current of
//! arbitrary shape; each element keeps its own membrane potential. The
//! LIF update is
//!
//! ```text
//! v ← v + β·(current − (v − v_reset))      (leaky integration)
//! S  = [v ≥ v_th]                          (fire, boundary included)
//! v ← v·(1 − S) + v_reset·S                (hard reset)
//! ```
//!
//! IF drops the leak (`v ← v + current`); PLIF makes `β = logistic(w)` a
//! learnable scalar. The reset multiplication stays on the tape (no
//! detach), so surrogate gradients flow through both the spike and the
//! reset path. Membrane state never persists across forward passes:
//! every run starts from `v = v_reset`.

use serde::{Deserialize, Serialize};

use crate::tape::Tape;
use crate::tensor::{AutodiffError, Tensor};

// ── Configuration ───────────────────────────────────────────────────────

/// Which membrane update a [`Neuron`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    /// Pure integrator: `v ← v + current`.
    If,
    /// Leaky integrate-and-fire with fixed decay β.
    Lif,
    /// Parametric LIF: β = logistic(w) with learnable w.
    Plif,
}

impl std::fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NeuronKind::If => write!(f, "if"),
            NeuronKind::Lif => write!(f, "lif"),
            NeuronKind::Plif => write!(f, "plif"),
        }
    }
}

/// Hyperparameters shared by every neuron layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    pub kind: NeuronKind,
    /// Membrane decay in (0, 1]; for PLIF this is only the initial value.
    pub beta: f64,
    /// Firing threshold; `v ≥ v_th` fires.
    pub v_th: f64,
    /// Post-spike membrane value, also the initial membrane value.
    pub v_reset: f64,
    /// Width α of the arctangent surrogate used in the spike backward.
    pub surrogate_width: f64,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig { kind: NeuronKind::Lif, beta: 0.5, v_th: 1.0, v_reset: 0.0, surrogate_width: 2.0 }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(AutodiffError::invalid("neuron_config", format!("beta must be in (0, 1], got {}", self.beta)));
        }
        if !(self.v_th > self.v_reset) {
            return Err(AutodiffError::invalid(
                "neuron_config",
                format!("v_th ({}) must exceed v_reset ({})", self.v_th, self.v_reset),
            ));
        }
        if !(self.surrogate_width > 0.0) {
            return Err(AutodiffError::invalid(
                "neuron_config",
                format!("surrogate_width must be positive, got {}", self.surrogate_width),
            ));
        }
        Ok(())
    }
}

// ── Spike trains ────────────────────────────────────────────────────────

/// A length-T sequence of same-shaped, exactly-binary spike tensors.
#[derive(Debug, Clone)]
pub struct SpikeTrain {
    steps: Vec<Tensor>,
}

impl SpikeTrain {
    /// Wrap per-step spike tensors, checking shape agreement and binarity.
    pub fn new(steps: Vec<Tensor>) -> Result<SpikeTrain, AutodiffError> {
        if steps.is_empty() {
            return Err(AutodiffError::invalid("spike_train", "empty step sequence"));
        }
        let shape = steps[0].shape();
        for (t, s) in steps.iter().enumerate() {
            if s.shape() != shape {
                return Err(AutodiffError::ShapeMismatch { op: "spike_train", lhs: shape, rhs: s.shape() });
            }
            if !s.is_binary() {
                return Err(AutodiffError::invalid("spike_train", format!("step {t} contains non-binary values")));
            }
        }
        Ok(SpikeTrain { steps })
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.steps[0].shape()
    }

    pub fn steps(&self) -> &[Tensor] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &Tensor {
        &self.steps[t]
    }

    /// Fraction of ones pooled over all steps and elements.
    pub fn fire_rate(&self) -> f64 {
        let total: f64 = self.steps.iter().map(|s| s.ones_fraction()).sum();
        total / self.steps.len() as f64
    }

    /// Total number of spikes across the train.
    pub fn spike_count(&self) -> usize {
        self.steps.iter().map(|s| s.data().iter().filter(|&&v| v == 1.0).count()).sum()
    }
}

// ── Neuron layer ────────────────────────────────────────────────────────

/// Membrane state of one neuron layer; confined to a single forward pass.
#[derive(Debug, Clone, Default)]
pub struct NeuronState {
    v: Option<Tensor>,
}

impl NeuronState {
    /// State with every membrane at `v_reset`.
    pub fn fresh(shape: &[usize], v_reset: f64) -> NeuronState {
        NeuronState { v: Some(Tensor::full(shape, v_reset)) }
    }

    pub fn membrane(&self) -> Option<&Tensor> {
        self.v.as_ref()
    }
}

/// A spiking neuron layer: config, optional learnable PLIF weight, state.
#[derive(Debug)]
pub struct Neuron {
    cfg: NeuronConfig,
    /// Raw PLIF weight w; effective β = logistic(w). `None` unless PLIF.
    plif_raw: Option<Tensor>,
    state: NeuronState,
}

impl Neuron {
    pub fn new(cfg: NeuronConfig) -> Result<Neuron, AutodiffError> {
        cfg.validate()?;
        let plif_raw = match cfg.kind {
            NeuronKind::Plif => {
                // logit(β) so the effective decay starts at cfg.beta.
                let w = (cfg.beta / (1.0 - cfg.beta)).ln();
                if !w.is_finite() {
                    return Err(AutodiffError::invalid("neuron_config", "PLIF requires beta strictly inside (0, 1)"));
                }
                Some(Tensor::param(vec![w], &[1])?)
            }
            _ => None,
        };
        Ok(Neuron { cfg, plif_raw, state: NeuronState::default() })
    }

    pub fn config(&self) -> &NeuronConfig {
        &self.cfg
    }

    /// Learnable tensors owned by this layer (the PLIF weight, if any).
    pub fn parameters(&self) -> Vec<Tensor> {
        self.plif_raw.iter().cloned().collect()
    }

    /// Raw PLIF weight, exposed for checkpointing.
    pub fn plif_raw(&self) -> Option<&Tensor> {
        self.plif_raw.as_ref()
    }

    /// Current effective decay β (fixed for IF/LIF, logistic(w) for PLIF).
    pub fn effective_beta(&self) -> f64 {
        match &self.plif_raw {
            Some(w) => 1.0 / (1.0 + (-w.data()[0]).exp()),
            None => self.cfg.beta,
        }
    }

    /// Reset every membrane to `v_reset` for the given input shape.
    pub fn reset_state(&mut self, shape: &[usize]) {
        self.state = NeuronState::fresh(shape, self.cfg.v_reset);
    }

    /// Drop state entirely; the next step re-initializes from `v_reset`.
    pub fn clear_state(&mut self) {
        self.state = NeuronState::default();
    }

    pub fn state(&self) -> &NeuronState {
        &self.state
    }

    /// Advance one time step: integrate `current`, fire, hard-reset.
    /// Returns the binary spike tensor; the membrane stays in `self`.
    pub fn step(&mut self, tape: &Tape, current: &Tensor) -> Result<Tensor, AutodiffError> {
        let shape = current.shape();
        let v = match self.state.v.take() {
            Some(v) => {
                if v.shape() != shape {
                    return Err(AutodiffError::ShapeMismatch { op: "neuron_step", lhs: v.shape(), rhs: shape });
                }
                v
            }
            None => Tensor::full(&shape, self.cfg.v_reset),
        };

        let v_new = match self.cfg.kind {
            NeuronKind::If => tape.add(&v, current)?,
            NeuronKind::Lif => {
                let leak = tape.add_scalar(&v, -self.cfg.v_reset);
                let delta = tape.sub(current, &leak)?;
                let scaled = tape.mul_scalar(&delta, self.cfg.beta);
                tape.add(&v, &scaled)?
            }
            NeuronKind::Plif => {
                let beta = tape.sigmoid(self.plif_raw.as_ref().expect("PLIF neuron has a weight"));
                let leak = tape.add_scalar(&v, -self.cfg.v_reset);
                let delta = tape.sub(current, &leak)?;
                let scaled = tape.mul(&delta, &beta)?;
                tape.add(&v, &scaled)?
            }
        };

        let spikes = tape.spike_threshold(&v_new, self.cfg.v_th, self.cfg.surrogate_width);

        // Hard reset through the surrogate path: v ← v·(1−S) + v_reset·S.
        let ones = Tensor::full(&shape, 1.0);
        let keep = tape.sub(&ones, &spikes)?;
        let held = tape.mul(&v_new, &keep)?;
        let reset = tape.mul_scalar(&spikes, self.cfg.v_reset);
        self.state.v = Some(tape.add(&held, &reset)?);

        Ok(spikes)
    }

    /// Fold [`Neuron::step`] over a T-step current sequence from a fresh
    /// state (`v₀ = v_reset`), returning the full binary spike train.
    pub fn run(&mut self, tape: &Tape, currents: &[Tensor]) -> Result<SpikeTrain, AutodiffError> {
        if currents.is_empty() {
            return Err(AutodiffError::invalid("neuron_run", "empty current sequence"));
        }
        self.reset_state(&currents[0].shape());
        let mut steps = Vec::with_capacity(currents.len());
        for c in currents {
            steps.push(self.step(tape, c)?);
        }
        SpikeTrain::new(steps)
    }
}
