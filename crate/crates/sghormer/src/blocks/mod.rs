//! Model building blocks.
//!
//! This module holds the layers the spiking graph transformer is wired
//! from: plain [`Linear`] and [`BatchNorm`] layers, the rate
//! [`RateEncoder`] that turns real node features into spike trains, the
//! [`Smlp`] spiking MLP, and the submodules
//!
//! - [`srb`] — the spiking rectify block,
//! - [`attention`] — binarized popcount graph self-attention,
//! - [`mpnn`] — a plain message-passing layer.
//!
//! Every spike train crossing a block boundary is validated binary by
//! [`crate::neurons::SpikeTrain`]. Normalization statistics are pooled
//! over nodes *and* time steps within one forward pass; evaluation uses
//! running averages so rows stay independent across graphs.

pub mod attention;
pub mod mpnn;
pub mod srb;

use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::neurons::{Neuron, NeuronConfig, SpikeTrain};
use crate::tape::Tape;
use crate::tensor::{AutodiffError, Tensor};

/// Momentum of the running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

// ── Linear ──────────────────────────────────────────────────────────────

/// Dense layer `x·W + b` with uniform ±√(1/in) weight initialization.
#[derive(Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Linear {
        let bound = (1.0 / in_dim as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Linear {
            weight: Tensor::param(w, &[in_dim, out_dim]).expect("sized to shape"),
            bias: Tensor::param(vec![0.0; out_dim], &[out_dim]).expect("sized to shape"),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, AutodiffError> {
        tape.linear(x, &self.weight, &self.bias)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

// ── Batch normalization ─────────────────────────────────────────────────

/// Per-feature batch normalization with learnable scale/shift and
/// running statistics for evaluation. Training mode normalizes by batch
/// statistics and folds them into the running averages; eval mode uses
/// the running averages only, so each row is normalized independently.
#[derive(Debug)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    running_mean: RefCell<Vec<f64>>,
    running_var: RefCell<Vec<f64>>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> BatchNorm {
        BatchNorm {
            gamma: Tensor::param(vec![1.0; dim], &[dim]).expect("sized to shape"),
            beta: Tensor::param(vec![0.0; dim], &[dim]).expect("sized to shape"),
            running_mean: RefCell::new(vec![0.0; dim]),
            running_var: RefCell::new(vec![1.0; dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, training: bool) -> Result<Tensor, AutodiffError> {
        if training {
            let (y, mean, var) = tape.batch_norm_train(x, &self.gamma, &self.beta)?;
            let mut rm = self.running_mean.borrow_mut();
            let mut rv = self.running_var.borrow_mut();
            for j in 0..rm.len() {
                rm[j] = (1.0 - BN_MOMENTUM) * rm[j] + BN_MOMENTUM * mean[j];
                rv[j] = (1.0 - BN_MOMENTUM) * rv[j] + BN_MOMENTUM * var[j];
            }
            Ok(y)
        } else {
            tape.batch_norm_eval(x, &self.gamma, &self.beta, &self.running_mean.borrow(), &self.running_var.borrow())
        }
    }

    /// Normalize a T-step sequence with statistics pooled over all steps:
    /// steps are stacked row-wise, normalized once, and sliced back.
    pub fn forward_seq(&self, tape: &Tape, xs: &[Tensor], training: bool) -> Result<Vec<Tensor>, AutodiffError> {
        if xs.len() == 1 {
            return Ok(vec![self.forward(tape, &xs[0], training)?]);
        }
        let stacked = tape.concat_rows(xs)?;
        let normed = self.forward(tape, &stacked, training)?;
        let mut out = Vec::with_capacity(xs.len());
        let mut row = 0;
        for x in xs {
            out.push(tape.slice_rows(&normed, row, x.rows())?);
            row += x.rows();
        }
        Ok(out)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    pub fn running_stats(&self) -> (Vec<f64>, Vec<f64>) {
        (self.running_mean.borrow().clone(), self.running_var.borrow().clone())
    }

    pub fn set_running_stats(&self, mean: Vec<f64>, var: Vec<f64>) {
        assert_eq!(mean.len(), self.dim());
        assert_eq!(var.len(), self.dim());
        *self.running_mean.borrow_mut() = mean;
        *self.running_var.borrow_mut() = var;
    }
}

// ── Rate encoder ────────────────────────────────────────────────────────

/// Rate coder: concatenate node features with positional/structural
/// encodings, project through one shared linear layer, and drive a
/// single shared spiking neuron with the identical current T times
/// (membrane persists across the repeats, fresh at call start). Inputs
/// with higher pre-activation fire more often — a rate code.
#[derive(Debug)]
pub struct RateEncoder {
    pub linear: Linear,
    neuron: Neuron,
}

impl RateEncoder {
    pub fn new(feat_dim: usize, enc_dim: usize, d: usize, neuron_cfg: NeuronConfig, rng: &mut ChaCha8Rng) -> Result<RateEncoder, AutodiffError> {
        Ok(RateEncoder { linear: Linear::new(feat_dim + enc_dim, d, rng), neuron: Neuron::new(neuron_cfg)? })
    }

    pub fn forward(
        &mut self,
        tape: &Tape,
        x_feat: &Tensor,
        x_enc: &Tensor,
        t_steps: usize,
    ) -> Result<SpikeTrain, AutodiffError> {
        if t_steps == 0 {
            return Err(AutodiffError::invalid("rate_encode", "T must be ≥ 1"));
        }
        let width = x_feat.cols() + x_enc.cols();
        if width != self.linear.in_dim() {
            return Err(AutodiffError::invalid(
                "rate_encode",
                format!("input width {width} does not match encoder width {}", self.linear.in_dim()),
            ));
        }
        let x = tape.concat_cols(&[x_feat.clone(), x_enc.clone()])?;
        let current = self.linear.forward(tape, &x)?;
        let currents = vec![current; t_steps];
        self.neuron.run(tape, &currents)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.linear.parameters();
        p.extend(self.neuron.parameters());
        p
    }
}

// ── Spiking MLP ─────────────────────────────────────────────────────────

/// Per-step Linear → Norm → spiking-neuron stack mapping a sequence of
/// real embeddings back into spikes (the layer output of the model).
/// Depth 2 stacks the stage twice. The neuron membrane persists across
/// the T steps of one forward.
#[derive(Debug)]
pub struct Smlp {
    stages: Vec<SmlpStage>,
}

#[derive(Debug)]
struct SmlpStage {
    linear: Linear,
    norm: BatchNorm,
    neuron: Neuron,
}

impl Smlp {
    pub fn new(d: usize, depth: usize, neuron_cfg: NeuronConfig, rng: &mut ChaCha8Rng) -> Result<Smlp, AutodiffError> {
        if !(1..=2).contains(&depth) {
            return Err(AutodiffError::invalid("smlp", format!("depth must be 1 or 2, got {depth}")));
        }
        let stages = (0..depth)
            .map(|_| {
                Ok(SmlpStage { linear: Linear::new(d, d, rng), norm: BatchNorm::new(d), neuron: Neuron::new(neuron_cfg)? })
            })
            .collect::<Result<Vec<_>, AutodiffError>>()?;
        Ok(Smlp { stages })
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn forward(&mut self, tape: &Tape, inputs: &[Tensor], training: bool) -> Result<SpikeTrain, AutodiffError> {
        if inputs.is_empty() {
            return Err(AutodiffError::invalid("smlp", "empty input sequence"));
        }
        let mut seq: Vec<Tensor> = inputs.to_vec();
        let mut train = None;
        for stage in &mut self.stages {
            let lin: Vec<Tensor> = seq.iter().map(|x| stage.linear.forward(tape, x)).collect::<Result<_, _>>()?;
            let normed = stage.norm.forward_seq(tape, &lin, training)?;
            let spikes = stage.neuron.run(tape, &normed)?;
            seq = spikes.steps().to_vec();
            train = Some(spikes);
        }
        Ok(train.expect("depth ≥ 1"))
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = Vec::new();
        for s in &self.stages {
            p.extend(s.linear.parameters());
            p.extend(s.norm.parameters());
            p.extend(s.neuron.parameters());
        }
        p
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        self.stages.iter().map(|s| &s.norm).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn linear_forward_matches_manual_product() {
        let mut r = rng(1);
        let lin = Linear::new(3, 2, &mut r);
        lin.bias.set_data(&[0.5, -0.5]);
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[1, 3]).unwrap();
        let tape = Tape::no_grad();
        let y = lin.forward(&tape, &x).unwrap();
        let w = lin.weight.to_vec();
        for j in 0..2 {
            let manual: f64 = (0..3).map(|i| x.to_vec()[i] * w[i * 2 + j]).sum::<f64>() + lin.bias.to_vec()[j];
            assert!((y.to_vec()[j] - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_updates_running_stats_with_momentum() {
        let bn = BatchNorm::new(2);
        let x = Tensor::from_vec(vec![1.0, 10.0, 3.0, 30.0], &[2, 2]).unwrap();
        let tape = Tape::no_grad();
        bn.forward(&tape, &x, true).unwrap();
        let (rm, rv) = bn.running_stats();
        // batch mean (2, 20), biased var (1, 100); momentum 0.1 from (0, 1).
        assert!((rm[0] - 0.2).abs() < 1e-12 && (rm[1] - 2.0).abs() < 1e-12);
        assert!((rv[0] - (0.9 + 0.1)).abs() < 1e-12 && (rv[1] - (0.9 + 10.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_is_row_independent_and_deterministic() {
        let bn = BatchNorm::new(1);
        bn.set_running_stats(vec![1.0], vec![4.0]);
        let tape = Tape::no_grad();
        let a = bn.forward(&tape, &Tensor::from_vec(vec![3.0, 7.0], &[2, 1]).unwrap(), false).unwrap();
        let b = bn.forward(&tape, &Tensor::from_vec(vec![3.0, 100.0], &[2, 1]).unwrap(), false).unwrap();
        // Row 0 is identical regardless of what else is in the batch.
        assert_eq!(a.to_vec()[0], b.to_vec()[0]);
        let again = bn.forward(&tape, &Tensor::from_vec(vec![3.0, 7.0], &[2, 1]).unwrap(), false).unwrap();
        assert_eq!(a.to_vec(), again.to_vec());
    }

    #[test]
    fn batch_norm_seq_pools_statistics_over_steps() {
        let bn = BatchNorm::new(1);
        let s1 = Tensor::from_vec(vec![0.0, 2.0], &[2, 1]).unwrap();
        let s2 = Tensor::from_vec(vec![4.0, 6.0], &[2, 1]).unwrap();
        let tape = Tape::no_grad();
        let out = bn.forward_seq(&tape, &[s1.clone(), s2.clone()], true).unwrap();
        // Pooled over 4 rows: mean 3, var 5 — not the per-step statistics.
        let manual = bn.forward(&tape, &tape.concat_rows(&[s1, s2]).unwrap(), true).unwrap();
        assert_eq!(out[0].to_vec(), manual.to_vec()[..2].to_vec());
        assert_eq!(out[1].to_vec(), manual.to_vec()[2..].to_vec());
    }

    #[test]
    fn rate_encoder_quiescent_and_saturated_cases() {
        let mut r = rng(3);
        let mut enc = RateEncoder::new(2, 1, 4, NeuronConfig::default(), &mut r).unwrap();
        // Zero weights and bias → zero pre-activation → all-zero train.
        enc.linear.weight.set_data(&vec![0.0; 3 * 4]);
        let feat = Tensor::from_vec(vec![0.3, -0.7, 0.2, 0.9], &[2, 2]).unwrap();
        let pe = Tensor::from_vec(vec![0.1, -0.4], &[2, 1]).unwrap();
        let tape = Tape::no_grad();
        let train = enc.forward(&tape, &feat, &pe, 5).unwrap();
        assert_eq!(train.spike_count(), 0);
        // Bias 2.0 → pre-activation 2.0 everywhere → all-ones train.
        enc.linear.bias.set_data(&[2.0; 4]);
        let train = enc.forward(&tape, &feat, &pe, 5).unwrap();
        assert_eq!(train.fire_rate(), 1.0);
    }

    #[test]
    fn rate_encoder_rate_is_monotone_in_preactivation() {
        let mut r = rng(5);
        let mut enc = RateEncoder::new(1, 0, 1, NeuronConfig::default(), &mut r).unwrap();
        // Identity projection: pre-activation equals the input value.
        enc.linear.weight.set_data(&[1.0]);
        enc.linear.bias.set_data(&[0.0]);
        let values: Vec<f64> = (0..32).map(|i| -0.5 + i as f64 * 0.1).collect();
        let feat = Tensor::from_vec(values.clone(), &[32, 1]).unwrap();
        let pe = Tensor::from_vec(vec![], &[32, 0]).unwrap();
        let tape = Tape::no_grad();
        let train = enc.forward(&tape, &feat, &pe, 64).unwrap();
        let mut rates = vec![0.0; 32];
        for t in 0..64 {
            for (i, rate) in rates.iter_mut().enumerate() {
                *rate += train.step(t).to_vec()[i] / 64.0;
            }
        }
        for w in rates.windows(2) {
            assert!(w[0] <= w[1] + 1e-12, "rate must be non-decreasing in drive: {rates:?}");
        }
    }

    #[test]
    fn rate_encoder_rejects_width_mismatch_and_zero_steps() {
        let mut r = rng(7);
        let mut enc = RateEncoder::new(2, 1, 4, NeuronConfig::default(), &mut r).unwrap();
        let tape = Tape::no_grad();
        let feat = Tensor::zeros(&[2, 3]);
        let pe = Tensor::zeros(&[2, 1]);
        assert!(enc.forward(&tape, &feat, &pe, 3).is_err());
        let feat = Tensor::zeros(&[2, 2]);
        assert!(enc.forward(&tape, &feat, &pe, 0).is_err());
    }

    #[test]
    fn smlp_zero_input_with_zero_bias_is_silent() {
        let mut r = rng(11);
        let mut smlp = Smlp::new(3, 1, NeuronConfig::default(), &mut r).unwrap();
        let tape = Tape::no_grad();
        let zeros = vec![Tensor::zeros(&[4, 3]), Tensor::zeros(&[4, 3])];
        let train = smlp.forward(&tape, &zeros, true).unwrap();
        assert_eq!(train.spike_count(), 0);
    }

    #[test]
    fn smlp_outputs_are_binary_and_large_drive_fires_step_one() {
        let mut r = rng(13);
        let mut smlp = Smlp::new(3, 1, NeuronConfig::default(), &mut r).unwrap();
        let tape = Tape::no_grad();
        let xs: Vec<Tensor> = (0..3)
            .map(|i| Tensor::from_vec((0..12).map(|j| ((i * 12 + j) as f64 * 0.37).sin()).collect(), &[4, 3]).unwrap())
            .collect();
        let train = smlp.forward(&tape, &xs, true).unwrap();
        for s in train.steps() {
            assert!(s.is_binary());
        }
        // Pin the post-norm pre-activation at exactly 2.0 (γ = 0 kills
        // the data term): the LIF membrane reaches β·2.0 = v_th in one
        // step, so every unit fires immediately.
        smlp.stages[0].norm.gamma.set_data(&[0.0; 3]);
        smlp.stages[0].norm.beta.set_data(&[2.0; 3]);
        let train = smlp.forward(&tape, &xs, true).unwrap();
        assert!(train.step(0).data().iter().all(|&v| v == 1.0), "step 1 must be all-ones");
    }

    #[test]
    fn smlp_depth_two_stacks_stages() {
        let mut r = rng(17);
        let smlp = Smlp::new(4, 2, NeuronConfig::default(), &mut r).unwrap();
        assert_eq!(smlp.depth(), 2);
        assert!(Smlp::new(4, 3, NeuronConfig::default(), &mut r).is_err());
        assert!(Smlp::new(4, 0, NeuronConfig::default(), &mut r).is_err());
    }
}
