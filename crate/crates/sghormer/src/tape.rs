//! Reverse-mode autodiff over a dynamic (define-by-run) tape.
//!
//! Every differentiable operation is a method on [`Tape`]. The tape records
//! the executed ops in order; [`Tape::backward`] replays them in exact
//! reverse order, accumulating gradients into every `requires_grad` tensor
//! reachable from the loss, then clears itself. Repeated forward/backward
//! cycles without zeroing keep accumulating into parameter gradients.
//!
//! The only non-differentiable forward is the spike threshold; its backward
//! uses the arctangent surrogate derivative (see [`arctan_surrogate_deriv`]).
//!
//! Tapes and tensors are single-threaded per training context; independent
//! contexts may run in parallel with no shared state.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::rc::Rc;

use crate::tensor::{AutodiffError, Tensor};

/// Epsilon inside the normalization denominator `1/sqrt(var + eps)`.
pub const BN_EPS: f64 = 1e-5;

/// Half-open `(start, end)` row/col ranges partitioning a batch by graph.
pub type Blocks = Rc<Vec<(usize, usize)>>;

/// Directed `(src, dst)` edge list shared between ops.
pub type EdgeList = Rc<Vec<(usize, usize)>>;

// ── Surrogate gradient ──────────────────────────────────────────────────

/// Smoothed step `S̃(x) = 1/π · arctan(π·α·x/2) + 1/2`. This is the
/// sigmoid-like relaxation whose exact derivative is used as the spike
/// backward rule.
pub fn arctan_surrogate(x: f64, alpha: f64) -> f64 {
    (PI * alpha * x / 2.0).atan() / PI + 0.5
}

/// Closed-form derivative of the smoothed step:
/// `S̃'(x) = α/2 · 1/(1 + (π·α·x/2)²)`. Maximum slope `α/2` at `x = 0`.
pub fn arctan_surrogate_deriv(x: f64, alpha: f64) -> f64 {
    let u = PI * alpha * x / 2.0;
    alpha / 2.0 / (1.0 + u * u)
}

// ── Dense kernels ───────────────────────────────────────────────────────
// Row-major triple loops ordered for contiguous inner access. The `!= 0.0`
// skip makes products with binary (spike) operands cheap.

/// `x[m×n] · y[n×p]`.
fn matmul_raw(x: &[f64], y: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let xv = x[i * n + k];
            if xv != 0.0 {
                let yrow = &y[k * p..(k + 1) * p];
                for j in 0..p {
                    orow[j] += xv * yrow[j];
                }
            }
        }
    }
    out
}

/// `x[m×n] · yᵀ` with `y[k×n]`, giving `[m×k]`.
fn matmul_bt(x: &[f64], y: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let xrow = &x[i * n..(i + 1) * n];
        for p in 0..k {
            let yrow = &y[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += xrow[j] * yrow[j];
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// `xᵀ · y` with `x[m×k]`, `y[m×n]`, giving `[k×n]`.
fn matmul_ta(x: &[f64], y: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let yrow = &y[i * n..(i + 1) * n];
        for p in 0..k {
            let xv = x[i * k + p];
            if xv != 0.0 {
                let orow = &mut out[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += xv * yrow[j];
                }
            }
        }
    }
    out
}

// ── Broadcasting ────────────────────────────────────────────────────────

/// Elementwise ops accept equal shapes, a scalar operand, or an operand
/// whose shape is a suffix of the other's (broadcast along leading axes).
/// `out[i] = f(a[i % a_numel], b[i % b_numel])` is exact for both cases.
struct Broadcast {
    out_shape: Vec<usize>,
    a_numel: usize,
    b_numel: usize,
}

fn broadcast_pair(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast, AutodiffError> {
    let (sa, sb) = (a.shape(), b.shape());
    let (na, nb) = (a.numel(), b.numel());
    let mismatch = || AutodiffError::ShapeMismatch { op, lhs: sa.clone(), rhs: sb.clone() };
    let out_shape = if sa == sb {
        sa.clone()
    } else if nb <= na && (nb == 1 || sa.ends_with(&sb)) {
        sa.clone()
    } else if na <= nb && (na == 1 || sb.ends_with(&sa)) {
        sb.clone()
    } else {
        return Err(mismatch());
    };
    Ok(Broadcast { out_shape, a_numel: na, b_numel: nb })
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(AutodiffError::invalid(op, format!("expected a 2-D tensor, got shape {s:?}")));
    }
    Ok((s[0], s[1]))
}

fn validate_partition(op: &'static str, blocks: &[(usize, usize)], n: usize) -> Result<(), AutodiffError> {
    let mut cursor = 0usize;
    for &(s, e) in blocks {
        if s != cursor || e <= s {
            return Err(AutodiffError::invalid(
                op,
                format!("blocks {blocks:?} do not partition 0..{n} into contiguous non-empty ranges"),
            ));
        }
        cursor = e;
    }
    if cursor != n {
        return Err(AutodiffError::invalid(
            op,
            format!("blocks cover 0..{cursor} but the tensor has {n} rows"),
        ));
    }
    Ok(())
}

// ── Recorded operations ─────────────────────────────────────────────────

enum Op {
    Matmul { a: Tensor, b: Tensor, out: Tensor },
    Transpose { a: Tensor, out: Tensor },
    Add { a: Tensor, b: Tensor, out: Tensor },
    Sub { a: Tensor, b: Tensor, out: Tensor },
    Mul { a: Tensor, b: Tensor, out: Tensor },
    AddScalar { a: Tensor, out: Tensor },
    MulScalar { a: Tensor, c: f64, out: Tensor },
    Sigmoid { a: Tensor, out: Tensor },
    Relu { a: Tensor, out: Tensor },
    Spike { v: Tensor, v_th: f64, alpha: f64, out: Tensor },
    Sum { a: Tensor, out: Tensor },
    ConcatRows { parts: Vec<Tensor>, out: Tensor },
    SliceRows { a: Tensor, start: usize, out: Tensor },
    ConcatCols { parts: Vec<Tensor>, out: Tensor },
    SliceCols { a: Tensor, start: usize, out: Tensor },
    BatchNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        out: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        /// Train mode couples every row through the batch statistics.
        batch_stats: bool,
    },
    SoftmaxBlocks { x: Tensor, blocks: Blocks, out: Tensor },
    SegmentMean { x: Tensor, blocks: Blocks, out: Tensor },
    EdgeScatterAdd {
        x: Tensor,
        msg: Tensor,
        eproj: Option<Tensor>,
        edges: EdgeList,
        out: Tensor,
    },
    BinaryMatmul { a: Tensor, b: Tensor, blocks: Option<Blocks>, out: Tensor },
    CrossEntropy { logits: Tensor, targets: Rc<Vec<usize>>, probs: Vec<f64>, out: Tensor },
    L1Loss { pred: Tensor, target: Tensor, out: Tensor },
}

// ── Tape ────────────────────────────────────────────────────────────────

/// Ordered record of executed operations. Construct with [`Tape::new`] for
/// training or [`Tape::no_grad`] for pure inference (nothing recorded).
pub struct Tape {
    ops: RefCell<Vec<Op>>,
    enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { ops: RefCell::new(Vec::new()), enabled: true }
    }

    /// Tape that records nothing; outputs never require grad.
    pub fn no_grad() -> Tape {
        Tape { ops: RefCell::new(Vec::new()), enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.ops.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.borrow().is_empty()
    }

    pub fn clear(&self) {
        self.ops.borrow_mut().clear();
    }

    /// Mark `out` differentiable and record `op` when gradients are needed.
    fn finish(&self, rg: bool, out: &Tensor, op: impl FnOnce() -> Op) {
        if rg {
            out.set_requires_grad(true);
            self.ops.borrow_mut().push(op());
        }
    }

    fn wants_grad(&self, inputs: &[&Tensor]) -> bool {
        self.enabled && inputs.iter().any(|t| t.requires_grad())
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        let (m, k) = require_2d("matmul", a)?;
        let (k2, n) = require_2d("matmul", b)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch { op: "matmul", lhs: a.shape(), rhs: b.shape() });
        }
        let out_data = matmul_raw(&a.data(), &b.data(), m, k, n);
        let out = Tensor::from_vec(out_data, &[m, n])?;
        self.finish(self.wants_grad(&[a, b]), &out, || Op::Matmul {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        let (m, n) = require_2d("transpose", a)?;
        let ad = a.data();
        let mut out_data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out_data[j * m + i] = ad[i * n + j];
            }
        }
        drop(ad);
        let out = Tensor::from_vec(out_data, &[n, m])?;
        self.finish(self.wants_grad(&[a]), &out, || Op::Transpose { a: a.clone(), out: out.clone() });
        Ok(out)
    }

    /// `x·w + bias` with the bias broadcast over rows.
    pub fn linear(&self, x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor, AutodiffError> {
        let y = self.matmul(x, w)?;
        self.add(&y, bias)
    }

    // ── Elementwise ─────────────────────────────────────────────────────

    fn elementwise(
        &self,
        op_name: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(Tensor, Tensor, Tensor) -> Op,
    ) -> Result<Tensor, AutodiffError> {
        let bc = broadcast_pair(op_name, a, b)?;
        let (ad, bd) = (a.data(), b.data());
        let out_numel: usize = bc.out_shape.iter().product();
        let mut out_data = Vec::with_capacity(out_numel);
        for i in 0..out_numel {
            out_data.push(f(ad[i % bc.a_numel], bd[i % bc.b_numel]));
        }
        drop(ad);
        drop(bd);
        let out = Tensor::from_vec(out_data, &bc.out_shape)?;
        self.finish(self.wants_grad(&[a, b]), &out, || make(a.clone(), b.clone(), out.clone()));
        Ok(out)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.elementwise("add", a, b, |x, y| x + y, |a, b, out| Op::Add { a, b, out })
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.elementwise("sub", a, b, |x, y| x - y, |a, b, out| Op::Sub { a, b, out })
    }

    /// Hadamard product (with the same broadcasting as add/sub).
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.elementwise("mul", a, b, |x, y| x * y, |a, b, out| Op::Mul { a, b, out })
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Tensor {
        let out_data: Vec<f64> = a.data().iter().map(|&x| x + c).collect();
        let out = Tensor::from_vec(out_data, &a.shape()).expect("same shape");
        self.finish(self.wants_grad(&[a]), &out, || Op::AddScalar { a: a.clone(), out: out.clone() });
        out
    }

    pub fn mul_scalar(&self, a: &Tensor, c: f64) -> Tensor {
        let out_data: Vec<f64> = a.data().iter().map(|&x| x * c).collect();
        let out = Tensor::from_vec(out_data, &a.shape()).expect("same shape");
        self.finish(self.wants_grad(&[a]), &out, || Op::MulScalar { a: a.clone(), c, out: out.clone() });
        out
    }

    pub fn sigmoid(&self, a: &Tensor) -> Tensor {
        let out_data: Vec<f64> = a.data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let out = Tensor::from_vec(out_data, &a.shape()).expect("same shape");
        self.finish(self.wants_grad(&[a]), &out, || Op::Sigmoid { a: a.clone(), out: out.clone() });
        out
    }

    pub fn relu(&self, a: &Tensor) -> Tensor {
        let out_data: Vec<f64> = a.data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::from_vec(out_data, &a.shape()).expect("same shape");
        self.finish(self.wants_grad(&[a]), &out, || Op::Relu { a: a.clone(), out: out.clone() });
        out
    }

    // ── Spiking ─────────────────────────────────────────────────────────

    /// Heaviside forward (`v ≥ v_th` fires, boundary included), arctangent
    /// surrogate backward evaluated at `v − v_th`. Output is exactly binary.
    pub fn spike_threshold(&self, v: &Tensor, v_th: f64, surrogate_width: f64) -> Tensor {
        assert!(surrogate_width > 0.0, "surrogate width must be positive");
        let out_data: Vec<f64> = v.data().iter().map(|&x| if x >= v_th { 1.0 } else { 0.0 }).collect();
        let out = Tensor::from_vec(out_data, &v.shape()).expect("same shape");
        self.finish(self.wants_grad(&[v]), &out, || Op::Spike {
            v: v.clone(),
            v_th,
            alpha: surrogate_width,
            out: out.clone(),
        });
        out
    }

    /// Surrogate-smoothed spike: forward is `S̃(v − v_th)` itself, backward
    /// the same surrogate derivative as [`Tape::spike_threshold`]. This is
    /// the function a finite-difference oracle can differentiate.
    pub fn spike_smoothed(&self, v: &Tensor, v_th: f64, surrogate_width: f64) -> Tensor {
        assert!(surrogate_width > 0.0, "surrogate width must be positive");
        let out_data: Vec<f64> = v
            .data()
            .iter()
            .map(|&x| arctan_surrogate(x - v_th, surrogate_width))
            .collect();
        let out = Tensor::from_vec(out_data, &v.shape()).expect("same shape");
        self.finish(self.wants_grad(&[v]), &out, || Op::Spike {
            v: v.clone(),
            v_th,
            alpha: surrogate_width,
            out: out.clone(),
        });
        out
    }

    // ── Reductions / reshaping ──────────────────────────────────────────

    pub fn sum(&self, a: &Tensor) -> Tensor {
        let total: f64 = a.data().iter().sum();
        let out = Tensor::scalar(total);
        self.finish(self.wants_grad(&[a]), &out, || Op::Sum { a: a.clone(), out: out.clone() });
        out
    }

    pub fn concat_rows(&self, parts: &[Tensor]) -> Result<Tensor, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::invalid("concat_rows", "empty part list"));
        }
        let (_, cols) = require_2d("concat_rows", &parts[0])?;
        let mut out_data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = require_2d("concat_rows", p)?;
            if c != cols {
                return Err(AutodiffError::ShapeMismatch { op: "concat_rows", lhs: parts[0].shape(), rhs: p.shape() });
            }
            out_data.extend_from_slice(&p.data());
            rows += r;
        }
        let out = Tensor::from_vec(out_data, &[rows, cols])?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        self.finish(self.wants_grad(&refs), &out, || Op::ConcatRows {
            parts: parts.to_vec(),
            out: out.clone(),
        });
        Ok(out)
    }

    pub fn slice_rows(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor, AutodiffError> {
        let (rows, cols) = require_2d("slice_rows", a)?;
        if start + len > rows {
            return Err(AutodiffError::invalid(
                "slice_rows",
                format!("rows {start}..{} out of bounds for {rows} rows", start + len),
            ));
        }
        let out_data = a.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(out_data, &[len, cols])?;
        self.finish(self.wants_grad(&[a]), &out, || Op::SliceRows { a: a.clone(), start, out: out.clone() });
        Ok(out)
    }

    pub fn concat_cols(&self, parts: &[Tensor]) -> Result<Tensor, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::invalid("concat_cols", "empty part list"));
        }
        let (rows, _) = require_2d("concat_cols", &parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for p in parts {
            let (r, c) = require_2d("concat_cols", p)?;
            if r != rows {
                return Err(AutodiffError::ShapeMismatch { op: "concat_cols", lhs: parts[0].shape(), rhs: p.shape() });
            }
            widths.push(c);
            total += c;
        }
        let mut out_data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let pd = p.data();
            for i in 0..rows {
                out_data[i * total + offset..i * total + offset + w].copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor::from_vec(out_data, &[rows, total])?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        self.finish(self.wants_grad(&refs), &out, || Op::ConcatCols {
            parts: parts.to_vec(),
            out: out.clone(),
        });
        Ok(out)
    }

    pub fn slice_cols(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor, AutodiffError> {
        let (rows, cols) = require_2d("slice_cols", a)?;
        if start + len > cols {
            return Err(AutodiffError::invalid(
                "slice_cols",
                format!("cols {start}..{} out of bounds for {cols} cols", start + len),
            ));
        }
        let ad = a.data();
        let mut out_data = vec![0.0; rows * len];
        for i in 0..rows {
            out_data[i * len..(i + 1) * len].copy_from_slice(&ad[i * cols + start..i * cols + start + len]);
        }
        drop(ad);
        let out = Tensor::from_vec(out_data, &[rows, len])?;
        self.finish(self.wants_grad(&[a]), &out, || Op::SliceCols { a: a.clone(), start, out: out.clone() });
        Ok(out)
    }

    // ── Normalization ───────────────────────────────────────────────────

    /// Batch normalization over rows using batch statistics (training mode).
    /// Returns `(out, batch_mean, batch_var)` so the caller can maintain
    /// running averages; variance is the biased (1/n) estimator.
    pub fn batch_norm_train(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>), AutodiffError> {
        let (n, d) = require_2d("batch_norm", x)?;
        if gamma.numel() != d || beta.numel() != d {
            return Err(AutodiffError::ShapeMismatch { op: "batch_norm", lhs: x.shape(), rhs: gamma.shape() });
        }
        let xd = x.data();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += xd[i * d + j];
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                let c = xd[i * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        for v in var.iter_mut() {
            *v /= n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gd, bd) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; n * d];
        let mut out_data = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let h = (xd[i * d + j] - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out_data[i * d + j] = gd[j] * h + bd[j];
            }
        }
        drop(xd);
        drop(gd);
        drop(bd);
        let out = Tensor::from_vec(out_data, &[n, d])?;
        self.finish(self.wants_grad(&[x, gamma, beta]), &out, || Op::BatchNorm {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            out: out.clone(),
            xhat,
            inv_std,
            batch_stats: true,
        });
        Ok((out, mean, var))
    }

    /// Batch normalization using fixed running statistics (eval mode). The
    /// statistics are constants, so rows stay independent.
    pub fn batch_norm_eval(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Tensor, AutodiffError> {
        let (n, d) = require_2d("batch_norm", x)?;
        if gamma.numel() != d || beta.numel() != d || running_mean.len() != d || running_var.len() != d {
            return Err(AutodiffError::ShapeMismatch { op: "batch_norm", lhs: x.shape(), rhs: gamma.shape() });
        }
        let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xd = x.data();
        let (gd, bd) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; n * d];
        let mut out_data = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let h = (xd[i * d + j] - running_mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out_data[i * d + j] = gd[j] * h + bd[j];
            }
        }
        drop(xd);
        drop(gd);
        drop(bd);
        let out = Tensor::from_vec(out_data, &[n, d])?;
        self.finish(self.wants_grad(&[x, gamma, beta]), &out, || Op::BatchNorm {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            out: out.clone(),
            xhat,
            inv_std,
            batch_stats: false,
        });
        Ok(out)
    }

    // ── Graph-structured ops ────────────────────────────────────────────

    /// Row-wise softmax restricted to the diagonal blocks of a square
    /// score matrix; entries outside their block are exactly zero.
    pub fn softmax_blocks(&self, x: &Tensor, blocks: &Blocks) -> Result<Tensor, AutodiffError> {
        let (n, m) = require_2d("softmax_blocks", x)?;
        if n != m {
            return Err(AutodiffError::invalid("softmax_blocks", format!("expected square scores, got {n}×{m}")));
        }
        validate_partition("softmax_blocks", blocks, n)?;
        let xd = x.data();
        let mut out_data = vec![0.0; n * n];
        for &(s, e) in blocks.iter() {
            for i in s..e {
                let row = &xd[i * n..(i + 1) * n];
                let mx = row[s..e].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in s..e {
                    let v = (row[j] - mx).exp();
                    out_data[i * n + j] = v;
                    z += v;
                }
                for j in s..e {
                    out_data[i * n + j] /= z;
                }
            }
        }
        drop(xd);
        let out = Tensor::from_vec(out_data, &[n, n])?;
        self.finish(self.wants_grad(&[x]), &out, || Op::SoftmaxBlocks {
            x: x.clone(),
            blocks: blocks.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Mean-pool rows per block: `[n, d] → [num_blocks, d]`.
    pub fn segment_mean(&self, x: &Tensor, blocks: &Blocks) -> Result<Tensor, AutodiffError> {
        let (n, d) = require_2d("segment_mean", x)?;
        validate_partition("segment_mean", blocks, n)?;
        let xd = x.data();
        let g = blocks.len();
        let mut out_data = vec![0.0; g * d];
        for (bi, &(s, e)) in blocks.iter().enumerate() {
            let len = (e - s) as f64;
            for i in s..e {
                for j in 0..d {
                    out_data[bi * d + j] += xd[i * d + j];
                }
            }
            for j in 0..d {
                out_data[bi * d + j] /= len;
            }
        }
        drop(xd);
        let out = Tensor::from_vec(out_data, &[g, d])?;
        self.finish(self.wants_grad(&[x]), &out, || Op::SegmentMean {
            x: x.clone(),
            blocks: blocks.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Message-passing aggregation: `out[i] = x[i] + Σ_{(j→i)} (msg[j] + eproj[edge])`.
    /// Summation runs over in-edges of the directed edge list.
    pub fn edge_scatter_add(
        &self,
        x: &Tensor,
        msg: &Tensor,
        eproj: Option<&Tensor>,
        edges: &EdgeList,
    ) -> Result<Tensor, AutodiffError> {
        let (n, d) = require_2d("edge_scatter_add", x)?;
        let (nm, dm) = require_2d("edge_scatter_add", msg)?;
        if nm != n || dm != d {
            return Err(AutodiffError::ShapeMismatch { op: "edge_scatter_add", lhs: x.shape(), rhs: msg.shape() });
        }
        if let Some(e) = eproj {
            let (ne, de) = require_2d("edge_scatter_add", e)?;
            if ne != edges.len() || de != d {
                return Err(AutodiffError::ShapeMismatch { op: "edge_scatter_add", lhs: vec![edges.len(), d], rhs: e.shape() });
            }
        }
        for &(s, t) in edges.iter() {
            if s >= n || t >= n {
                return Err(AutodiffError::invalid(
                    "edge_scatter_add",
                    format!("edge ({s},{t}) out of bounds for {n} nodes"),
                ));
            }
        }
        let mut out_data = x.to_vec();
        {
            let md = msg.data();
            let ed = eproj.map(|e| e.to_vec());
            for (idx, &(src, dst)) in edges.iter().enumerate() {
                for j in 0..d {
                    out_data[dst * d + j] += md[src * d + j];
                    if let Some(e) = &ed {
                        out_data[dst * d + j] += e[idx * d + j];
                    }
                }
            }
        }
        let out = Tensor::from_vec(out_data, &[n, d])?;
        let mut inputs: Vec<&Tensor> = vec![x, msg];
        if let Some(e) = eproj {
            inputs.push(e);
        }
        self.finish(self.wants_grad(&inputs), &out, || Op::EdgeScatterAdd {
            x: x.clone(),
            msg: msg.clone(),
            eproj: eproj.cloned(),
            edges: edges.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Binary matrix product via packed-word popcount:
    /// `c[i][j] = popcount(row_i(a) AND col_j(b))` when `(i, j)` fall in the
    /// same block, else exactly 0. With `blocks = None` all pairs count.
    /// Inputs must be exactly {0,1}-valued; backward treats the product as a
    /// (block-masked) real matmul so surrogate gradients flow to both sides.
    pub fn binary_matmul(
        &self,
        a: &Tensor,
        b: &Tensor,
        blocks: Option<&Blocks>,
    ) -> Result<Tensor, AutodiffError> {
        let (p, q) = require_2d("binary_matmul", a)?;
        let (q2, r) = require_2d("binary_matmul", b)?;
        if q != q2 {
            return Err(AutodiffError::ShapeMismatch { op: "binary_matmul", lhs: a.shape(), rhs: b.shape() });
        }
        debug_assert!(a.is_binary() && b.is_binary(), "binary_matmul inputs must be exactly {{0,1}}");
        if let Some(bl) = blocks {
            if p != r {
                return Err(AutodiffError::invalid(
                    "binary_matmul",
                    format!("block mask needs a square output, got {p}×{r}"),
                ));
            }
            validate_partition("binary_matmul", bl, p)?;
        }
        let words = q.div_ceil(64);
        let (ad, bd) = (a.data(), b.data());
        // Pack rows of `a` and columns of `b` into u64 words.
        let mut a_bits = vec![0u64; p * words];
        for i in 0..p {
            for k in 0..q {
                if ad[i * q + k] == 1.0 {
                    a_bits[i * words + k / 64] |= 1u64 << (k % 64);
                }
            }
        }
        let mut b_bits = vec![0u64; r * words];
        for k in 0..q {
            let row = &bd[k * r..(k + 1) * r];
            for j in 0..r {
                if row[j] == 1.0 {
                    b_bits[j * words + k / 64] |= 1u64 << (k % 64);
                }
            }
        }
        drop(ad);
        drop(bd);
        let mut out_data = vec![0.0; p * r];
        let mut popcnt_block = |rs: usize, re: usize| {
            for i in rs..re {
                let arow = &a_bits[i * words..(i + 1) * words];
                for j in rs..re {
                    let bcol = &b_bits[j * words..(j + 1) * words];
                    let mut acc = 0u32;
                    for w in 0..words {
                        acc += (arow[w] & bcol[w]).count_ones();
                    }
                    out_data[i * r + j] = acc as f64;
                }
            }
        };
        match blocks {
            Some(bl) => {
                for &(s, e) in bl.iter() {
                    popcnt_block(s, e);
                }
            }
            None => {
                // Single implicit block over all pairs, possibly non-square.
                for i in 0..p {
                    let arow = &a_bits[i * words..(i + 1) * words];
                    for j in 0..r {
                        let bcol = &b_bits[j * words..(j + 1) * words];
                        let mut acc = 0u32;
                        for w in 0..words {
                            acc += (arow[w] & bcol[w]).count_ones();
                        }
                        out_data[i * r + j] = acc as f64;
                    }
                }
            }
        }
        let out = Tensor::from_vec(out_data, &[p, r])?;
        self.finish(self.wants_grad(&[a, b]), &out, || Op::BinaryMatmul {
            a: a.clone(),
            b: b.clone(),
            blocks: blocks.cloned(),
            out: out.clone(),
        });
        Ok(out)
    }

    // ── Losses ──────────────────────────────────────────────────────────

    /// Mean cross-entropy of row logits against integer class targets.
    pub fn cross_entropy(&self, logits: &Tensor, targets: &Rc<Vec<usize>>) -> Result<Tensor, AutodiffError> {
        let (n, c) = require_2d("cross_entropy", logits)?;
        if targets.len() != n {
            return Err(AutodiffError::invalid(
                "cross_entropy",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(AutodiffError::invalid("cross_entropy", format!("target {bad} out of range for {c} classes")));
        }
        let ld = logits.data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &ld[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let v = (row[j] - mx).exp();
                probs[i * c + j] = v;
                z += v;
            }
            for j in 0..c {
                probs[i * c + j] /= z;
            }
            loss -= probs[i * c + targets[i]].max(1e-300).ln();
        }
        drop(ld);
        loss /= n as f64;
        let out = Tensor::scalar(loss);
        self.finish(self.wants_grad(&[logits]), &out, || Op::CrossEntropy {
            logits: logits.clone(),
            targets: targets.clone(),
            probs,
            out: out.clone(),
        });
        Ok(out)
    }

    /// Mean absolute error over all elements; subgradient 0 at exact ties.
    pub fn l1_loss(&self, pred: &Tensor, target: &Tensor) -> Result<Tensor, AutodiffError> {
        if pred.shape() != target.shape() {
            return Err(AutodiffError::ShapeMismatch { op: "l1_loss", lhs: pred.shape(), rhs: target.shape() });
        }
        let (pd, td) = (pred.data(), target.data());
        let n = pd.len();
        let loss = pd.iter().zip(td.iter()).map(|(&p, &t)| (p - t).abs()).sum::<f64>() / n as f64;
        drop(pd);
        drop(td);
        let out = Tensor::scalar(loss);
        self.finish(self.wants_grad(&[pred, target]), &out, || Op::L1Loss {
            pred: pred.clone(),
            target: target.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse-replay the tape from a scalar loss, accumulating gradients
    /// into every `requires_grad` tensor reachable from it, then clear the
    /// tape. Gradients stack across forward/backward cycles until zeroed.
    pub fn backward(&self, loss: &Tensor) -> Result<(), AutodiffError> {
        if !loss.is_scalar() {
            return Err(AutodiffError::NonScalarLoss { shape: loss.shape() });
        }
        if self.ops.borrow().is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        loss.accumulate_grad(&[1.0]);
        let ops = std::mem::take(&mut *self.ops.borrow_mut());
        for op in ops.iter().rev() {
            step_backward(op);
        }
        // `ops` drops here, releasing every intermediate tensor handle.
        Ok(())
    }
}

// ── Per-op gradient rules ───────────────────────────────────────────────

fn accumulate_reduced(t: &Tensor, full: &[f64]) {
    // Sum the full-size gradient down to the operand's (broadcast) size.
    let n = t.numel();
    if n == full.len() {
        t.accumulate_grad(full);
    } else {
        let mut red = vec![0.0; n];
        for (i, &g) in full.iter().enumerate() {
            red[i % n] += g;
        }
        t.accumulate_grad(&red);
    }
}

fn step_backward(op: &Op) {
    match op {
        Op::Matmul { a, b, out } => {
            let Some(g) = out.grad() else { return };
            let (m, k) = (a.rows(), a.cols());
            let n = b.cols();
            if a.requires_grad() {
                a.accumulate_grad(&matmul_bt(&g, &b.data(), m, n, k));
            }
            if b.requires_grad() {
                b.accumulate_grad(&matmul_ta(&a.data(), &g, m, k, n));
            }
        }
        Op::Transpose { a, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                let (m, n) = (a.rows(), a.cols());
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = g[j * m + i];
                    }
                }
                a.accumulate_grad(&ga);
            }
        }
        Op::Add { a, b, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                accumulate_reduced(a, &g);
            }
            if b.requires_grad() {
                accumulate_reduced(b, &g);
            }
        }
        Op::Sub { a, b, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                accumulate_reduced(a, &g);
            }
            if b.requires_grad() {
                let neg: Vec<f64> = g.iter().map(|&x| -x).collect();
                accumulate_reduced(b, &neg);
            }
        }
        Op::Mul { a, b, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                let bd = b.data();
                let bn = bd.len();
                let term: Vec<f64> = g.iter().enumerate().map(|(i, &gv)| gv * bd[i % bn]).collect();
                drop(bd);
                accumulate_reduced(a, &term);
            }
            if b.requires_grad() {
                let ad = a.data();
                let an = ad.len();
                let term: Vec<f64> = g.iter().enumerate().map(|(i, &gv)| gv * ad[i % an]).collect();
                drop(ad);
                accumulate_reduced(b, &term);
            }
        }
        Op::AddScalar { a, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                a.accumulate_grad(&g);
            }
        }
        Op::MulScalar { a, c, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                let ga: Vec<f64> = g.iter().map(|&x| x * c).collect();
                a.accumulate_grad(&ga);
            }
        }
        Op::Sigmoid { a, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                let od = out.data();
                let ga: Vec<f64> = g.iter().zip(od.iter()).map(|(&gv, &y)| gv * y * (1.0 - y)).collect();
                drop(od);
                a.accumulate_grad(&ga);
            }
        }
        Op::Relu { a, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                let ad = a.data();
                let ga: Vec<f64> = g.iter().zip(ad.iter()).map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 }).collect();
                drop(ad);
                a.accumulate_grad(&ga);
            }
        }
        Op::Spike { v, v_th, alpha, out } => {
            let Some(g) = out.grad() else { return };
            if v.requires_grad() {
                let vd = v.data();
                let gv: Vec<f64> = g
                    .iter()
                    .zip(vd.iter())
                    .map(|(&gv, &x)| gv * arctan_surrogate_deriv(x - v_th, *alpha))
                    .collect();
                drop(vd);
                v.accumulate_grad(&gv);
            }
        }
        Op::Sum { a, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                a.accumulate_grad(&vec![g[0]; a.numel()]);
            }
        }
        Op::ConcatRows { parts, out } => {
            let Some(g) = out.grad() else { return };
            let cols = out.cols();
            let mut row = 0;
            for p in parts {
                let r = p.rows();
                if p.requires_grad() {
                    p.accumulate_grad(&g[row * cols..(row + r) * cols]);
                }
                row += r;
            }
        }
        Op::SliceRows { a, start, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                let cols = a.cols();
                let mut ga = vec![0.0; a.numel()];
                ga[start * cols..start * cols + g.len()].copy_from_slice(&g);
                a.accumulate_grad(&ga);
            }
        }
        Op::ConcatCols { parts, out } => {
            let Some(g) = out.grad() else { return };
            let rows = out.rows();
            let total = out.cols();
            let mut offset = 0;
            for p in parts {
                let w = p.cols();
                if p.requires_grad() {
                    let mut gp = vec![0.0; rows * w];
                    for i in 0..rows {
                        gp[i * w..(i + 1) * w].copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    p.accumulate_grad(&gp);
                }
                offset += w;
            }
        }
        Op::SliceCols { a, start, out } => {
            let Some(g) = out.grad() else { return };
            if a.requires_grad() {
                let (rows, cols) = (a.rows(), a.cols());
                let w = out.cols();
                let mut ga = vec![0.0; rows * cols];
                for i in 0..rows {
                    ga[i * cols + start..i * cols + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                a.accumulate_grad(&ga);
            }
        }
        Op::BatchNorm { x, gamma, beta, out, xhat, inv_std, batch_stats } => {
            let Some(g) = out.grad() else { return };
            let (n, d) = (x.rows(), x.cols());
            let mut sum_g = vec![0.0; d];
            let mut sum_gx = vec![0.0; d];
            for i in 0..n {
                for j in 0..d {
                    sum_g[j] += g[i * d + j];
                    sum_gx[j] += g[i * d + j] * xhat[i * d + j];
                }
            }
            if gamma.requires_grad() {
                gamma.accumulate_grad(&sum_gx);
            }
            if beta.requires_grad() {
                beta.accumulate_grad(&sum_g);
            }
            if x.requires_grad() {
                let gd = gamma.data();
                let nf = n as f64;
                let mut gx = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        let scale = gd[j] * inv_std[j];
                        gx[i * d + j] = if *batch_stats {
                            scale * (g[i * d + j] - sum_g[j] / nf - xhat[i * d + j] * sum_gx[j] / nf)
                        } else {
                            scale * g[i * d + j]
                        };
                    }
                }
                drop(gd);
                x.accumulate_grad(&gx);
            }
        }
        Op::SoftmaxBlocks { x, blocks, out } => {
            let Some(g) = out.grad() else { return };
            if x.requires_grad() {
                let od = out.data();
                let n = x.rows();
                let mut gx = vec![0.0; n * n];
                for &(s, e) in blocks.iter() {
                    for i in s..e {
                        let mut dot = 0.0;
                        for j in s..e {
                            dot += g[i * n + j] * od[i * n + j];
                        }
                        for j in s..e {
                            gx[i * n + j] = od[i * n + j] * (g[i * n + j] - dot);
                        }
                    }
                }
                drop(od);
                x.accumulate_grad(&gx);
            }
        }
        Op::SegmentMean { x, blocks, out } => {
            let Some(g) = out.grad() else { return };
            if x.requires_grad() {
                let d = x.cols();
                let mut gx = vec![0.0; x.numel()];
                for (bi, &(s, e)) in blocks.iter().enumerate() {
                    let len = (e - s) as f64;
                    for i in s..e {
                        for j in 0..d {
                            gx[i * d + j] = g[bi * d + j] / len;
                        }
                    }
                }
                let _ = out;
                x.accumulate_grad(&gx);
            }
        }
        Op::EdgeScatterAdd { x, msg, eproj, edges, out } => {
            let Some(g) = out.grad() else { return };
            let d = x.cols();
            if x.requires_grad() {
                x.accumulate_grad(&g);
            }
            if msg.requires_grad() {
                let mut gm = vec![0.0; msg.numel()];
                for &(src, dst) in edges.iter() {
                    for j in 0..d {
                        gm[src * d + j] += g[dst * d + j];
                    }
                }
                msg.accumulate_grad(&gm);
            }
            if let Some(e) = eproj {
                if e.requires_grad() {
                    let mut ge = vec![0.0; e.numel()];
                    for (idx, &(_, dst)) in edges.iter().enumerate() {
                        for j in 0..d {
                            ge[idx * d + j] += g[dst * d + j];
                        }
                    }
                    e.accumulate_grad(&ge);
                }
            }
        }
        Op::BinaryMatmul { a, b, blocks, out } => {
            let Some(mut g) = out.grad() else { return };
            let (p, q) = (a.rows(), a.cols());
            let r = b.cols();
            if let Some(bl) = blocks {
                // Entries outside the diagonal blocks are structural zeros;
                // mask their incoming gradient before the dense backward.
                let mut mask = vec![false; p * r];
                for &(s, e) in bl.iter() {
                    for i in s..e {
                        for j in s..e {
                            mask[i * r + j] = true;
                        }
                    }
                }
                for (gv, &m) in g.iter_mut().zip(&mask) {
                    if !m {
                        *gv = 0.0;
                    }
                }
            }
            if a.requires_grad() {
                a.accumulate_grad(&matmul_bt(&g, &b.data(), p, r, q));
            }
            if b.requires_grad() {
                b.accumulate_grad(&matmul_ta(&a.data(), &g, p, q, r));
            }
        }
        Op::CrossEntropy { logits, targets, probs, out } => {
            let Some(g) = out.grad() else { return };
            if logits.requires_grad() {
                let (n, c) = (logits.rows(), logits.cols());
                let nf = n as f64;
                let mut gl = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..c {
                        let ind = if targets[i] == j { 1.0 } else { 0.0 };
                        gl[i * c + j] = g[0] * (probs[i * c + j] - ind) / nf;
                    }
                }
                logits.accumulate_grad(&gl);
            }
        }
        Op::L1Loss { pred, target, out } => {
            let Some(g) = out.grad() else { return };
            if pred.requires_grad() {
                let (pd, td) = (pred.data(), target.data());
                let nf = pd.len() as f64;
                let gp: Vec<f64> = pd
                    .iter()
                    .zip(td.iter())
                    .map(|(&p, &t)| g[0] * (p - t).signum() * if p == t { 0.0 } else { 1.0 } / nf)
                    .collect();
                drop(pd);
                drop(td);
                pred.accumulate_grad(&gp);
            }
        }
    }
}

// ── Gradient checking ───────────────────────────────────────────────────

/// Compare analytic gradients of `f` at `x` against central finite
/// differences. Returns the max over elements of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e−8)`.
///
/// `f` must produce a scalar. For spike ops, pass a function built on
/// [`Tape::spike_smoothed`]: the oracle then differentiates the
/// surrogate-smoothed forward rather than the Heaviside.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor, AutodiffError>,
{
    assert!(eps > 0.0, "grad_check eps must be positive");
    let was_rg = x.requires_grad();
    let saved_grad = x.grad();
    x.set_requires_grad(true);
    x.zero_grad();

    // Analytic pass.
    let tape = Tape::new();
    let loss = f(&tape, x)?;
    if !loss.is_scalar() {
        x.set_requires_grad(was_rg);
        return Err(AutodiffError::NonScalarLoss { shape: loss.shape() });
    }
    let analytic = if tape.is_empty() {
        vec![0.0; x.numel()] // constant function: nothing recorded
    } else {
        tape.backward(&loss)?;
        x.grad().unwrap_or_else(|| vec![0.0; x.numel()])
    };

    // Numeric pass (never recorded).
    let ng = Tape::no_grad();
    let base = x.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..base.len() {
        let mut probe = base.clone();
        probe[i] = base[i] + eps;
        x.set_data(&probe);
        let lp = f(&ng, x)?.item()?;
        probe[i] = base[i] - eps;
        x.set_data(&probe);
        let lm = f(&ng, x)?.item()?;
        let numeric = (lp - lm) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    x.set_data(&base);
    x.zero_grad();
    if let Some(g) = saved_grad {
        x.accumulate_grad(&g);
    }
    x.set_requires_grad(was_rg);
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
    }

    // ── matmul ──────────────────────────────────────────────────────────

    #[test]
    fn matmul_identity_cases() {
        let tape = Tape::no_grad();
        let m = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let i2 = Tensor::eye(2);
        let left = tape.matmul(&i2, &m).unwrap();
        assert_eq!(left.to_vec(), m.to_vec());
        let right = tape.matmul(&m, &i2).unwrap();
        assert_eq!(right.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_and_elementwise_match_loop_oracles_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..120 {
            let m = rng.gen_range(1..6);
            let k = rng.gen_range(1..6);
            let n = rng.gen_range(1..6);
            let a = Tensor::from_vec(randn_vec(&mut rng, m * k), &[m, k]).unwrap();
            let b = Tensor::from_vec(randn_vec(&mut rng, k * n), &[k, n]).unwrap();
            let tape = Tape::no_grad();
            let c = tape.matmul(&a, &b).unwrap();
            // Scalar triple-loop oracle.
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a.at(i, p) * b.at(p, j);
                    }
                    assert_close(c.at(i, j), acc, 1e-12, &format!("case {case} ({i},{j})"));
                }
            }
            // Elementwise ops against loop oracles on matching shapes.
            let d = Tensor::from_vec(randn_vec(&mut rng, m * k), &[m, k]).unwrap();
            let sum = tape.add(&a, &d).unwrap();
            let dif = tape.sub(&a, &d).unwrap();
            let had = tape.mul(&a, &d).unwrap();
            for i in 0..m * k {
                assert_close(sum.to_vec()[i], a.to_vec()[i] + d.to_vec()[i], 1e-15, "add");
                assert_close(dif.to_vec()[i], a.to_vec()[i] - d.to_vec()[i], 1e-15, "sub");
                assert_close(had.to_vec()[i], a.to_vec()[i] * d.to_vec()[i], 1e-15, "mul");
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let tape = Tape::no_grad();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = tape.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "error should name shapes: {err}");
    }

    // ── elementwise / broadcasting ──────────────────────────────────────

    #[test]
    fn elementwise_identities() {
        let tape = Tape::no_grad();
        let a = Tensor::from_vec(vec![1.5, -2.0, 0.25], &[3]).unwrap();
        let ones = Tensor::full(&[3], 1.0);
        assert_eq!(tape.mul(&a, &ones).unwrap().to_vec(), a.to_vec());
        assert_eq!(tape.sub(&a, &a).unwrap().to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn broadcast_row_vector_add_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::from_vec(randn_vec(&mut rng, 4 * 3), &[4, 3]).unwrap();
        let row = Tensor::from_vec(randn_vec(&mut rng, 3), &[3]).unwrap();
        let tape = Tape::no_grad();
        let y = tape.add(&x, &row).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_close(y.at(i, j), x.at(i, j) + row.to_vec()[j], 1e-15, "broadcast add");
            }
        }
        // Also with the broadcast operand on the left.
        let y2 = tape.add(&row, &x).unwrap();
        assert_eq!(y2.to_vec(), y.to_vec());
        // Non-broadcastable shapes error.
        let bad = Tensor::zeros(&[2]);
        assert!(tape.add(&x, &bad).is_err());
    }

    // ── spike threshold ─────────────────────────────────────────────────

    #[test]
    fn spike_boundary_fires_and_matches_cases() {
        let tape = Tape::no_grad();
        let v = Tensor::from_vec(vec![1.0], &[1]).unwrap();
        assert_eq!(tape.spike_threshold(&v, 1.0, 2.0).to_vec(), vec![1.0]);
        let v = Tensor::from_vec(vec![0.2, 1.5], &[2]).unwrap();
        assert_eq!(tape.spike_threshold(&v, 1.0, 2.0).to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn spike_outputs_exactly_binary_on_random_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::no_grad();
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let v = Tensor::from_vec((0..n).map(|_| rng.gen_range(-5.0..5.0)).collect(), &[n]).unwrap();
            let s = tape.spike_threshold(&v, rng.gen_range(-1.0..2.0), 2.0);
            assert!(s.is_binary());
        }
    }

    #[test]
    fn spike_backward_is_surrogate_derivative() {
        // At v − v_th = 0 the backward equals the maximum slope α/2.
        let alpha = 2.0;
        let v = Tensor::param(vec![1.0, 0.3, 1.9], &[3]).unwrap();
        let tape = Tape::new();
        let s = tape.spike_threshold(&v, 1.0, alpha);
        let loss = tape.sum(&s);
        tape.backward(&loss).unwrap();
        let g = v.grad().unwrap();
        assert_close(g[0], alpha / 2.0, 1e-15, "max slope at boundary");
        for (i, &x) in [1.0f64, 0.3, 1.9].iter().enumerate() {
            let expect = arctan_surrogate_deriv(x - 1.0, alpha);
            assert_close(g[i], expect, 1e-15, "closed-form surrogate derivative");
        }
    }

    #[test]
    fn spike_backward_finite_for_extreme_inputs() {
        let v = Tensor::param(vec![-100.0, -5.0, 0.0, 5.0, 100.0], &[5]).unwrap();
        let tape = Tape::new();
        let s = tape.spike_threshold(&v, 1.0, 2.0);
        let loss = tape.sum(&s);
        tape.backward(&loss).unwrap();
        assert!(v.grad().unwrap().iter().all(|g| g.is_finite()));
    }

    // ── backward contract ───────────────────────────────────────────────

    #[test]
    fn backward_linear_case_grad_equals_x() {
        let w = Tensor::param(vec![0.5, -1.0, 2.0], &[3]).unwrap();
        let x = Tensor::from_vec(vec![3.0, 4.0, 5.0], &[3]).unwrap();
        let tape = Tape::new();
        let loss = tape.sum(&tape.mul(&w, &x).unwrap());
        tape.backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), x.to_vec());
        assert!(tape.is_empty(), "tape is cleared after backward");
    }

    #[test]
    fn backward_matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Tensor::param(randn_vec(&mut rng, 6), &[2, 3]).unwrap();
        let x = Tensor::from_vec(randn_vec(&mut rng, 12), &[3, 4]).unwrap();
        let err = grad_check(|t, w| Ok(t.sum(&t.matmul(w, &x)?)), &w, 1e-4).unwrap();
        assert!(err < 1e-4, "matmul finite-difference rel err {err}");
    }

    #[test]
    fn two_forward_backward_cycles_double_the_gradient() {
        let w = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let x = Tensor::from_vec(vec![3.0, 4.0], &[2]).unwrap();
        for _ in 0..2 {
            let tape = Tape::new();
            let loss = tape.sum(&tape.mul(&w, &x).unwrap());
            tape.backward(&loss).unwrap();
        }
        assert_eq!(w.grad().unwrap(), vec![6.0, 8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty_tape() {
        let tape = Tape::new();
        let w = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = tape.mul_scalar(&w, 2.0);
        assert!(matches!(tape.backward(&y), Err(AutodiffError::NonScalarLoss { .. })));
        let empty = Tape::new();
        let s = Tensor::scalar(1.0);
        assert!(matches!(empty.backward(&s), Err(AutodiffError::EmptyTape)));
    }

    // ── grad_check across every non-spiking op ──────────────────────────

    /// Weighted-sum head so every element's gradient is generically O(1).
    fn wsum(t: &Tape, y: &Tensor, w: &Tensor) -> Result<Tensor, AutodiffError> {
        Ok(t.sum(&t.mul(y, w)?))
    }

    #[test]
    fn grad_check_covers_all_non_spiking_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..10 {
            let x = Tensor::from_vec(randn_vec(&mut rng, 12), &[4, 3]).unwrap();
            let m = Tensor::from_vec(randn_vec(&mut rng, 6), &[3, 2]).unwrap();
            let w42 = Tensor::from_vec(randn_vec(&mut rng, 8), &[4, 2]).unwrap();
            let w43 = Tensor::from_vec(randn_vec(&mut rng, 12), &[4, 3]).unwrap();
            let w34 = Tensor::from_vec(randn_vec(&mut rng, 12), &[3, 4]).unwrap();
            let row = Tensor::from_vec(randn_vec(&mut rng, 3), &[3]).unwrap();
            let tol = 1e-4;
            let cases: Vec<(&str, f64)> = vec![
                ("matmul_lhs", grad_check(|t, x| wsum(t, &t.matmul(x, &m)?, &w42), &x, 1e-5).unwrap()),
                ("matmul_rhs", {
                    let m2 = m.clone();
                    grad_check(|t, v| wsum(t, &t.matmul(&x, v)?, &w42), &m2, 1e-5).unwrap()
                }),
                ("transpose", grad_check(|t, x| wsum(t, &t.transpose(x)?, &w34), &x, 1e-5).unwrap()),
                ("add", grad_check(|t, x| wsum(t, &t.add(x, &w43)?, &w43), &x, 1e-5).unwrap()),
                ("sub", grad_check(|t, x| wsum(t, &t.sub(&w43, x)?, &w43), &x, 1e-5).unwrap()),
                ("mul", grad_check(|t, x| wsum(t, &t.mul(x, &w43)?, &w43), &x, 1e-5).unwrap()),
                ("add_bcast_small", grad_check(|t, r| wsum(t, &t.add(&x, r)?, &w43), &row, 1e-5).unwrap()),
                ("mul_bcast_small", grad_check(|t, r| wsum(t, &t.mul(&x, r)?, &w43), &row, 1e-5).unwrap()),
                ("add_scalar", grad_check(|t, x| wsum(t, &t.add_scalar(x, 1.7), &w43), &x, 1e-5).unwrap()),
                ("mul_scalar", grad_check(|t, x| wsum(t, &t.mul_scalar(x, -0.6), &w43), &x, 1e-5).unwrap()),
                ("sigmoid", grad_check(|t, x| wsum(t, &t.sigmoid(x), &w43), &x, 1e-5).unwrap()),
                ("sum", grad_check(|t, x| Ok(t.sum(x)), &x, 1e-5).unwrap()),
                ("linear", grad_check(|t, x| wsum(t, &t.linear(x, &m, &Tensor::from_vec(vec![0.3, -0.4], &[2]).unwrap())?, &w42), &x, 1e-5).unwrap()),
            ];
            for (name, err) in cases {
                assert!(err < tol, "trial {trial} op {name}: rel err {err}");
            }
        }
    }

    #[test]
    fn grad_check_relu_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let data: Vec<f64> = (0..9)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.1..1.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let x = Tensor::from_vec(data, &[3, 3]).unwrap();
            let w = Tensor::from_vec(randn_vec(&mut rng, 9), &[3, 3]).unwrap();
            let err = grad_check(|t, x| wsum(t, &t.relu(x), &w), &x, 1e-5).unwrap();
            assert!(err < 1e-4, "relu rel err {err}");
        }
    }

    #[test]
    fn grad_check_structured_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let blocks: Blocks = Rc::new(vec![(0, 2), (2, 5)]);
        let edges: EdgeList = Rc::new(vec![(0, 1), (1, 0), (2, 3), (3, 4), (4, 2)]);
        for trial in 0..10 {
            let x = Tensor::from_vec(randn_vec(&mut rng, 5 * 3), &[5, 3]).unwrap();
            let w53 = Tensor::from_vec(randn_vec(&mut rng, 15), &[5, 3]).unwrap();
            let w23 = Tensor::from_vec(randn_vec(&mut rng, 6), &[2, 3]).unwrap();
            let sq = Tensor::from_vec(randn_vec(&mut rng, 25), &[5, 5]).unwrap();
            let wsq = Tensor::from_vec(randn_vec(&mut rng, 25), &[5, 5]).unwrap();
            let gamma = Tensor::from_vec(randn_vec(&mut rng, 3), &[3]).unwrap();
            let beta = Tensor::from_vec(randn_vec(&mut rng, 3), &[3]).unwrap();
            let msg = Tensor::from_vec(randn_vec(&mut rng, 15), &[5, 3]).unwrap();
            let ep = Tensor::from_vec(randn_vec(&mut rng, 15), &[5, 3]).unwrap();
            let rm = randn_vec(&mut rng, 3);
            let rv: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
            let targets = Rc::new(vec![0usize, 2, 1, 0, 2]);
            let l1_target = Tensor::from_vec(randn_vec(&mut rng, 15), &[5, 3]).unwrap();

            let cases: Vec<(&str, f64)> = vec![
                ("concat_rows", grad_check(|t, x| wsum(t, &t.concat_rows(&[x.clone(), w53.clone()])?, &t.concat_rows(&[w53.clone(), w53.clone()])?), &x, 1e-5).unwrap()),
                ("slice_rows", grad_check(|t, x| wsum(t, &t.slice_rows(x, 1, 3)?, &Tensor::from_vec(w53.to_vec()[..9].to_vec(), &[3, 3])?), &x, 1e-5).unwrap()),
                ("concat_cols", grad_check(|t, x| wsum(t, &t.concat_cols(&[x.clone(), w53.clone()])?, &t.concat_cols(&[w53.clone(), w53.clone()])?), &x, 1e-5).unwrap()),
                ("slice_cols", grad_check(|t, x| wsum(t, &t.slice_cols(x, 1, 2)?, &Tensor::from_vec(randn_vec(&mut ChaCha8Rng::seed_from_u64(1), 10), &[5, 2])?), &x, 1e-5).unwrap()),
                ("bn_train_x", grad_check(|t, x| wsum(t, &t.batch_norm_train(x, &gamma, &beta)?.0, &w53), &x, 1e-5).unwrap()),
                ("bn_train_gamma", grad_check(|t, gm| wsum(t, &t.batch_norm_train(&x, gm, &beta)?.0, &w53), &gamma, 1e-5).unwrap()),
                ("bn_eval_x", grad_check(|t, x| wsum(t, &t.batch_norm_eval(x, &gamma, &beta, &rm, &rv)?, &w53), &x, 1e-5).unwrap()),
                ("softmax_blocks", grad_check(|t, s| wsum(t, &t.softmax_blocks(s, &blocks)?, &wsq), &sq, 1e-5).unwrap()),
                ("segment_mean", grad_check(|t, x| wsum(t, &t.segment_mean(x, &blocks)?, &w23), &x, 1e-5).unwrap()),
                ("edge_scatter_x", grad_check(|t, x| wsum(t, &t.edge_scatter_add(x, &msg, Some(&ep), &edges)?, &w53), &x, 1e-5).unwrap()),
                ("edge_scatter_msg", grad_check(|t, m| wsum(t, &t.edge_scatter_add(&x, m, Some(&ep), &edges)?, &w53), &msg, 1e-5).unwrap()),
                ("edge_scatter_eproj", grad_check(|t, e| wsum(t, &t.edge_scatter_add(&x, &msg, Some(e), &edges)?, &w53), &ep, 1e-5).unwrap()),
                ("cross_entropy", grad_check(|t, l| t.cross_entropy(l, &targets), &x, 1e-5).unwrap()),
                ("l1_loss", grad_check(|t, p| t.l1_loss(p, &l1_target), &x, 1e-5).unwrap()),
            ];
            for (name, err) in cases {
                assert!(err < 1e-4, "trial {trial} op {name}: rel err {err}");
            }
        }
    }

    #[test]
    fn grad_check_smoothed_spike_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let v = Tensor::from_vec(randn_vec(&mut rng, 10), &[10]).unwrap();
        let w = Tensor::from_vec(randn_vec(&mut rng, 10), &[10]).unwrap();
        let err = grad_check(|t, v| wsum(t, &t.spike_smoothed(v, 0.4, 2.0), &w), &v, 1e-5).unwrap();
        assert!(err < 1e-3, "smoothed spike rel err {err}");
        // Constant function: analytic and numeric both zero.
        let err = grad_check(|_, _| Ok(Tensor::scalar(4.2)), &v, 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn linear_layer_grad_check_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let w = Tensor::from_vec(randn_vec(&mut rng, 12), &[4, 3]).unwrap();
        let x = Tensor::from_vec(randn_vec(&mut rng, 8), &[2, 4]).unwrap();
        let b = Tensor::from_vec(randn_vec(&mut rng, 3), &[3]).unwrap();
        let err = grad_check(|t, w| Ok(t.sum(&t.linear(&x, w, &b)?)), &w, 1e-5).unwrap();
        assert!(err < 1e-6, "linear layer rel err {err}");
    }

    // ── binary matmul ───────────────────────────────────────────────────

    fn random_binary(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Tensor {
        let data: Vec<f64> = (0..rows * cols).map(|_| if rng.gen_bool(p) { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(data, &[rows, cols]).unwrap()
    }

    #[test]
    fn binary_matmul_identity_gives_identity() {
        let tape = Tape::no_grad();
        let i4 = Tensor::eye(4);
        let out = tape.binary_matmul(&i4, &i4, None).unwrap();
        assert_eq!(out.to_vec(), Tensor::eye(4).to_vec());
    }

    #[test]
    fn binary_matmul_matches_dense_integer_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let tape = Tape::no_grad();
        for _ in 0..30 {
            let p = rng.gen_range(1..20);
            let q = rng.gen_range(1..130);
            let r = rng.gen_range(1..20);
            let a = random_binary(&mut rng, p, q, 0.4);
            let b = random_binary(&mut rng, q, r, 0.4);
            let fast = tape.binary_matmul(&a, &b, None).unwrap();
            let dense = tape.matmul(&a, &b).unwrap();
            assert_eq!(fast.to_vec(), dense.to_vec(), "popcount kernel vs dense integer matmul");
        }
    }

    #[test]
    fn binary_matmul_blocks_zero_cross_graph_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let tape = Tape::no_grad();
        let blocks: Blocks = Rc::new(vec![(0, 3), (3, 7)]);
        let a = random_binary(&mut rng, 7, 16, 0.5);
        let b = random_binary(&mut rng, 16, 7, 0.5);
        let out = tape.binary_matmul(&a, &b, Some(&blocks)).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let same_block = (i < 3) == (j < 3);
                if !same_block {
                    assert_eq!(out.at(i, j), 0.0, "cross-block entry ({i},{j}) must be 0");
                }
            }
        }
    }

    #[test]
    fn binary_matmul_backward_equals_masked_dense_backward() {
        // The finite-difference oracle cannot perturb binary inputs, so the
        // gradient oracle is the dense matmul op on the same {0,1} data.
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let blocks: Blocks = Rc::new(vec![(0, 2), (2, 5)]);
        let a = random_binary(&mut rng, 5, 8, 0.5);
        let b = random_binary(&mut rng, 8, 5, 0.5);
        let w = Tensor::from_vec(randn_vec(&mut rng, 25), &[5, 5]).unwrap();
        // Mask w to in-block entries so both paths see identical upstream grads.
        let mut wm = w.to_vec();
        for i in 0..5 {
            for j in 0..5 {
                let same = (i < 2) == (j < 2);
                if !same {
                    wm[i * 5 + j] = 0.0;
                }
            }
        }
        let w = Tensor::from_vec(wm, &[5, 5]).unwrap();

        a.set_requires_grad(true);
        b.set_requires_grad(true);
        let tape = Tape::new();
        let out = tape.binary_matmul(&a, &b, Some(&blocks)).unwrap();
        let loss = tape.sum(&tape.mul(&out, &w).unwrap());
        tape.backward(&loss).unwrap();
        let (ga_fast, gb_fast) = (a.grad().unwrap(), b.grad().unwrap());
        a.zero_grad();
        b.zero_grad();

        let tape = Tape::new();
        let out = tape.matmul(&a, &b).unwrap();
        let loss = tape.sum(&tape.mul(&out, &w).unwrap());
        tape.backward(&loss).unwrap();
        for (f, d) in ga_fast.iter().zip(a.grad().unwrap()) {
            assert_close(*f, d, 1e-12, "dL/da");
        }
        for (f, d) in gb_fast.iter().zip(b.grad().unwrap()) {
            assert_close(*f, d, 1e-12, "dL/db");
        }
    }

    #[test]
    fn binary_matmul_counts_are_small_integers() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let tape = Tape::no_grad();
        let a = random_binary(&mut rng, 6, 40, 0.5);
        let b = random_binary(&mut rng, 40, 6, 0.5);
        let out = tape.binary_matmul(&a, &b, None).unwrap();
        for &v in out.data().iter() {
            assert_eq!(v, v.round());
            assert!((0.0..=40.0).contains(&v));
        }
    }

    // ── normalization / structured op forwards ──────────────────────────

    #[test]
    fn batch_norm_train_normalizes_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let x = Tensor::from_vec((0..40).map(|_| rng.gen_range(-3.0..5.0)).collect(), &[10, 4]).unwrap();
        let gamma = Tensor::full(&[4], 1.0);
        let beta = Tensor::zeros(&[4]);
        let tape = Tape::no_grad();
        let (y, mean, var) = tape.batch_norm_train(&x, &gamma, &beta).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..10).map(|i| y.at(i, j)).collect();
            let m: f64 = col.iter().sum::<f64>() / 10.0;
            let v: f64 = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 10.0;
            assert_close(m, 0.0, 1e-12, "bn column mean");
            assert_close(v, 1.0, 1e-3, "bn column var (up to eps)");
            assert!(var[j] > 0.0 && mean[j].is_finite());
        }
    }

    #[test]
    fn softmax_blocks_rows_sum_to_one_and_uniform_on_ties() {
        let blocks: Blocks = Rc::new(vec![(0, 2), (2, 5)]);
        let x = Tensor::zeros(&[5, 5]);
        let tape = Tape::no_grad();
        let y = tape.softmax_blocks(&x, &blocks).unwrap();
        for &(s, e) in blocks.iter() {
            for i in s..e {
                let row_sum: f64 = (s..e).map(|j| y.at(i, j)).sum();
                assert_close(row_sum, 1.0, 1e-12, "softmax row sum");
                for j in s..e {
                    assert_close(y.at(i, j), 1.0 / (e - s) as f64, 1e-12, "uniform on equal logits");
                }
                for j in 0..5 {
                    if !(s..e).contains(&j) {
                        assert_eq!(y.at(i, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn segment_mean_and_edge_scatter_hand_cases() {
        let tape = Tape::no_grad();
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]).unwrap();
        let blocks: Blocks = Rc::new(vec![(0, 2), (2, 3)]);
        let pooled = tape.segment_mean(&x, &blocks).unwrap();
        assert_eq!(pooled.to_vec(), vec![2.0, 3.0, 5.0, 6.0]);

        // Path 0→1→2: node 1 receives msg[0]+e[0], node 2 receives msg[1]+e[1].
        let msg = Tensor::from_vec(vec![10.0, 10.0, 20.0, 20.0, 30.0, 30.0], &[3, 2]).unwrap();
        let ep = Tensor::from_vec(vec![0.1, 0.1, 0.2, 0.2], &[2, 2]).unwrap();
        let edges: EdgeList = Rc::new(vec![(0, 1), (1, 2)]);
        let out = tape.edge_scatter_add(&x, &msg, Some(&ep), &edges).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 2.0, 3.0 + 10.1, 4.0 + 10.1, 5.0 + 20.2, 6.0 + 20.2]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_c() {
        let tape = Tape::no_grad();
        let logits = Tensor::zeros(&[2, 4]);
        let targets = Rc::new(vec![1usize, 3]);
        let loss = tape.cross_entropy(&logits, &targets).unwrap().item().unwrap();
        assert_close(loss, (4.0f64).ln(), 1e-12, "uniform CE");
    }

    #[test]
    fn l1_loss_hand_case() {
        let tape = Tape::no_grad();
        let p = Tensor::from_vec(vec![1.0, -2.0], &[2]).unwrap();
        let t = Tensor::from_vec(vec![0.0, 2.0], &[2]).unwrap();
        let loss = tape.l1_loss(&p, &t).unwrap().item().unwrap();
        assert_close(loss, (1.0 + 4.0) / 2.0, 1e-15, "l1");
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::no_grad();
        let w = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = tape.mul_scalar(&w, 3.0);
        assert!(tape.is_empty());
        assert!(!y.requires_grad());
    }
}
