//! Spiking rectify block.
//!
//! Spike trains quantize harshly: a unit firing at rate μ carries its
//! value only on average, and the per-step binary signal has variance
//! σ = μ(1−μ). The rectify block injects a learnably-weighted noise
//! surrogate of that quantization error before the linear/norm stage,
//! which smooths training without touching the spike pathway itself:
//!
//! ```text
//! X̂^t = S^t − W ⊙ U^t,   U^t ~ N(μ̂, max(1−σ̂, ε))  (training)
//!                         U^t = μ̂                   (evaluation)
//! X̃^t = Norm(Linear(X̂^t))
//! ```
//!
//! μ̂ and σ̂ are per-element estimates over the T incoming steps; they
//! parameterize the sampler only and are treated as constants by the
//! backward pass (gradients flow through S^t, W, and the linear/norm
//! parameters). Inputs are accepted as arbitrary real sequences — the
//! attention pipelines feed real projections through the same block.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tape::Tape;
use crate::tensor::{AutodiffError, Tensor};

use super::{BatchNorm, Linear};

/// Floor on the sampling variance `1 − σ̂` to keep √ well-defined.
pub const NOISE_VAR_EPS: f64 = 1e-6;

/// Per-element mean and variance of a step sequence, taken over time.
/// For binary inputs this is the fire rate and its Bernoulli variance
/// μ̂(1−μ̂).
pub fn statistics(xs: &[Tensor]) -> (Vec<f64>, Vec<f64>) {
    assert!(!xs.is_empty(), "statistics of an empty sequence");
    let n = xs[0].numel();
    let t = xs.len() as f64;
    let mut mu = vec![0.0; n];
    for x in xs {
        for (m, v) in mu.iter_mut().zip(x.data().iter()) {
            *m += v / t;
        }
    }
    let mut var = vec![0.0; n];
    for x in xs {
        for ((s, v), m) in var.iter_mut().zip(x.data().iter()).zip(mu.iter()) {
            *s += (v - m) * (v - m) / t;
        }
    }
    (mu, var)
}

/// Spiking rectify block: noise-compensated Linear → Norm over a step
/// sequence, normalization statistics pooled over all T steps.
#[derive(Debug)]
pub struct Srb {
    /// Element-wise noise gate W, initialized U(−0.1, 0.1).
    pub noise_weight: Tensor,
    pub linear: Linear,
    pub norm: BatchNorm,
}

impl Srb {
    pub fn new(d: usize, rng: &mut ChaCha8Rng) -> Srb {
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.1..0.1)).collect();
        Srb {
            noise_weight: Tensor::param(w, &[d]).expect("sized to shape"),
            linear: Linear::new(d, d, rng),
            norm: BatchNorm::new(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.noise_weight.numel()
    }

    pub fn forward(
        &self,
        tape: &Tape,
        xs: &[Tensor],
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Tensor>, AutodiffError> {
        if xs.is_empty() {
            return Err(AutodiffError::invalid("srb", "empty input sequence"));
        }
        let shape = xs[0].shape().to_vec();
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(AutodiffError::invalid(
                "srb",
                format!("expected [N, {}] steps, got {:?}", self.dim(), shape),
            ));
        }
        let (mu, var) = statistics(xs);
        let mut rectified = Vec::with_capacity(xs.len());
        for x in xs {
            // The sampler is driven by the detached statistics; each
            // step draws fresh noise in training, eval pins U = μ̂.
            let u = if training {
                let data: Vec<f64> = mu
                    .iter()
                    .zip(var.iter())
                    .map(|(&m, &s)| {
                        let std = (1.0 - s).max(NOISE_VAR_EPS).sqrt();
                        let z: f64 = rng.sample(StandardNormal);
                        m + std * z
                    })
                    .collect();
                Tensor::from_vec(data, &shape)?
            } else {
                Tensor::from_vec(mu.clone(), &shape)?
            };
            let gated = tape.mul(&u, &self.noise_weight)?;
            let xhat = tape.sub(x, &gated)?;
            rectified.push(self.linear.forward(tape, &xhat)?);
        }
        self.norm.forward_seq(tape, &rectified, training)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = vec![self.noise_weight.clone()];
        p.extend(self.linear.parameters());
        p.extend(self.norm.parameters());
        p
    }
}
