//! A small dense-tensor engine with reverse-mode differentiation.
//!
//! The primitive set is exactly what the dual-axis model needs: linear maps,
//! batched matmul, axis transposes, GELU, layer norm, masked softmax, the
//! FSU embedding/decoding kernels, masked-mean pooling, and the two losses.
//! Operations record onto a [`Tape`]; [`Tape::backward`] walks the tape in
//! reverse and accumulates exact analytic gradients.
//!
//! The engine is generic over [`Real`] so the same code runs in f32 for
//! training and in f64 shadow mode for finite-difference gradient checks,
//! which are unreliable in single precision.
//!
//! Shape mismatches are programming errors and panic with context. Numerical
//! failures (NaN/Inf) are runtime conditions: with strict mode on (the
//! default), the first non-finite forward value is recorded and surfaces via
//! [`Tape::assert_finite`].

use std::sync::Arc;

use thiserror::Error;

mod attention;
mod kernels;
mod optim;

pub use attention::{multihead_attention, AttnParams, KeyMask};
pub use optim::{AdamW, AdamWConfig};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("non-finite value detected in {0}")]
    NonFiniteDetected(&'static str),
    #[error("backward target must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// Element type of a tape: f32 for training, f64 for shadow-mode checks.
pub trait Real:
    Copy
    + Send
    + Sync
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Cell layout for the FSU embedding kernel.
#[derive(Debug, Clone)]
pub struct EmbedSpec {
    pub batch: usize,
    pub t: usize,
    pub n: usize,
    pub dim: usize,
    /// FSU column -> embedder row; all zeros in shared-embedding mode.
    pub index_map: Arc<Vec<usize>>,
    /// `[batch*t*n]`, true where the input is hidden from the encoder.
    pub input_mask: Arc<Vec<bool>>,
}

/// Row-level key mask for masked softmax: `allowed` holds entry rows of the
/// key dimension; score row `r` uses entry `r / rows_per_entry`. A row with
/// no allowed key softmaxes to the zero vector.
#[derive(Debug, Clone)]
pub struct SoftmaxMask {
    pub allowed: Arc<Vec<bool>>,
    pub rows_per_entry: usize,
}

enum Op<E: Real> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, E),
    Sum(Var),
    WeightedSum(Var, Vec<E>),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatmul {
        a: Var,
        b: Var,
        g: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose12 {
        x: Var,
        dims: [usize; 4],
    },
    Reshape(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    Softmax {
        x: Var,
    },
    MeanPool {
        x: Var,
        valid: Arc<Vec<bool>>,
        dims: [usize; 4],
    },
    Embed {
        x: Var,
        w: Var,
        b: Var,
        mask_token: Var,
        fsu_pos: Var,
        time_pos: Var,
        spec: EmbedSpec,
    },
    DecodeHeads {
        h: Var,
        w: Var,
        c: Var,
    },
    MseMasked {
        pred: Var,
        target: Arc<Vec<E>>,
        mask: Arc<Vec<bool>>,
        count: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Arc<Vec<usize>>,
    },
}

struct Node<E: Real> {
    value: Vec<E>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<E>>,
    op: Op<E>,
}

/// Reverse-mode tape: an append-only list of operations in topological
/// order. One tape per training step; tapes are not shared across threads.
pub struct Tape<E: Real> {
    nodes: Vec<Node<E>>,
    strict: bool,
    nonfinite: Option<&'static str>,
}

impl<E: Real> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Real> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            strict: true,
            nonfinite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[E] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> E {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if one reached it.
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// First non-finite forward value seen, if strict mode is on.
    pub fn assert_finite(&self) -> Result<(), AutodiffError> {
        match self.nonfinite {
            Some(op) => Err(AutodiffError::NonFiniteDetected(op)),
            None => Ok(()),
        }
    }

    pub fn leaf(&mut self, data: Vec<E>, shape: &[usize], requires_grad: bool) -> Var {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(data, shape.to_vec(), requires_grad, Op::Leaf)
    }

    fn push(&mut self, value: Vec<E>, shape: Vec<usize>, requires_grad: bool, op: Op<E>) -> Var {
        if self.strict && self.nonfinite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.nonfinite = Some(op_name(&op));
        }
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // -- elementwise --------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = kernels::zip(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        self.push(value, shape, rg, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = kernels::zip(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        self.push(value, shape, rg, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = E::from_f64(c);
        let value: Vec<E> = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a]);
        self.push(value, shape, rg, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value: Vec<E> = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(value, shape, rg, Op::Gelu(x))
    }

    // -- reductions ----------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = E::ZERO;
        for &v in self.value(x) {
            acc = acc + v;
        }
        let rg = self.needs_grad(&[x]);
        self.push(vec![acc], vec![1], rg, Op::Sum(x))
    }

    /// Scalar `sum_i x_i * w_i` against constant weights; the objective used
    /// by gradient checks so every output coordinate matters.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<E>) -> Var {
        assert_eq!(self.value(x).len(), weights.len(), "weighted_sum length");
        let mut acc = E::ZERO;
        for (&v, &w) in self.value(x).iter().zip(&weights) {
            acc = acc + v * w;
        }
        let rg = self.needs_grad(&[x]);
        self.push(vec![acc], vec![1], rg, Op::WeightedSum(x, weights))
    }

    // -- linear algebra ------------------------------------------------------

    /// `x` viewed as `[m, k]` over its leading dims, times `w: [k, n]`, plus
    /// an optional bias `[n]`. Output keeps `x`'s leading dims.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(ws.len(), 2, "linear: weight must be 2-D");
        let k = *xs.last().expect("linear: x has no dims");
        assert_eq!(ws[0], k, "linear: inner dims {k} vs {}", ws[0]);
        let n = ws[1];
        let m = self.value(x).len() / k;
        if let Some(b) = b {
            assert_eq!(self.shape(b), &[n], "linear: bias shape");
        }
        let value = kernels::matmul(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            m,
            k,
            n,
        );
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut vars = vec![x, w];
        if let Some(b) = b {
            vars.push(b);
        }
        let rg = self.needs_grad(&vars);
        self.push(value, shape, rg, Op::Linear { x, w, b, m, k, n })
    }

    /// `[g, m, k] @ [g, k, n] -> [g, m, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert_eq!(sa.len(), 3, "batch_matmul: lhs must be 3-D");
        assert_eq!(sb.len(), 3, "batch_matmul: rhs must be 3-D");
        assert_eq!(sa[0], sb[0], "batch_matmul: group dims differ");
        assert_eq!(sa[2], sb[1], "batch_matmul: inner dims differ");
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let value = kernels::batch_matmul(self.value(a), self.value(b), g, m, k, n);
        let rg = self.needs_grad(&[a, b]);
        self.push(value, vec![g, m, n], rg, Op::BatchMatmul { a, b, g, m, k, n })
    }

    /// Swaps dims 1 and 2 of a 4-D tensor.
    pub fn transpose12(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        assert_eq!(s.len(), 4, "transpose12: need 4-D, got {s:?}");
        let dims = [s[0], s[1], s[2], s[3]];
        let value = kernels::transpose12(self.value(x), dims);
        let shape = vec![dims[0], dims[2], dims[1], dims[3]];
        let rg = self.needs_grad(&[x]);
        self.push(value, shape, rg, Op::Transpose12 { x, dims })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(
            self.value(x).len(),
            shape.iter().product::<usize>(),
            "reshape: element count mismatch"
        );
        let value = self.value(x).to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(value, shape.to_vec(), rg, Op::Reshape(x))
    }

    // -- normalization and attention pieces ------------------------------------

    /// Layer norm over the last dim with learned gain/bias of that dim.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let s = self.shape(x);
        let d = *s.last().expect("layer_norm: scalar input");
        assert_eq!(self.shape(gain), &[d], "layer_norm: gain shape");
        assert_eq!(self.shape(bias), &[d], "layer_norm: bias shape");
        let value = kernels::layer_norm(self.value(x), self.value(gain), self.value(bias), d, eps);
        let shape = s.to_vec();
        let rg = self.needs_grad(&[x, gain, bias]);
        self.push(value, shape, rg, Op::LayerNorm { x, gain, bias, eps })
    }

    /// Softmax over the last dim. Rows whose keys are all disallowed by the
    /// mask produce the zero vector rather than NaN.
    pub fn softmax_lastdim(&mut self, x: Var, mask: Option<&SoftmaxMask>) -> Var {
        let s = self.shape(x);
        let dim = *s.last().expect("softmax: scalar input");
        let rows = self.value(x).len() / dim;
        if let Some(m) = mask {
            assert!(
                m.rows_per_entry > 0 && rows % m.rows_per_entry == 0,
                "softmax mask coverage"
            );
            assert_eq!(
                m.allowed.len(),
                rows / m.rows_per_entry * dim,
                "softmax mask length"
            );
        }
        let value = kernels::softmax(self.value(x), dim, mask);
        let shape = s.to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(value, shape, rg, Op::Softmax { x })
    }

    /// Mean over all FSU positions of valid packets: `[b, t, n, d]` with a
    /// `[b*t]` validity mask pools to `[b, d]`.
    pub fn mean_pool(&mut self, x: Var, valid: Arc<Vec<bool>>) -> Var {
        let s = self.shape(x);
        assert_eq!(s.len(), 4, "mean_pool: need 4-D, got {s:?}");
        let dims = [s[0], s[1], s[2], s[3]];
        assert_eq!(valid.len(), dims[0] * dims[1], "mean_pool: valid length");
        let value = kernels::mean_pool(self.value(x), &valid, dims);
        let rg = self.needs_grad(&[x]);
        self.push(value, vec![dims[0], dims[3]], rg, Op::MeanPool { x, valid, dims })
    }

    // -- FSU-table kernels ------------------------------------------------------

    /// FSU embedding: value embedding (or the mask token at hidden cells)
    /// plus FSU and time positional encodings. `x: [b, t, n]`, `w, b: [k, d]`,
    /// `mask_token: [d]`, `fsu_pos: [n, d]`, `time_pos: [t, d]`.
    #[allow(clippy::too_many_arguments)]
    pub fn embed(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        mask_token: Var,
        fsu_pos: Var,
        time_pos: Var,
        spec: EmbedSpec,
    ) -> Var {
        let (bb, t, n, d) = (spec.batch, spec.t, spec.n, spec.dim);
        assert_eq!(self.shape(x), &[bb, t, n], "embed: x shape");
        let k = self.shape(w)[0];
        assert_eq!(self.shape(w), &[k, d], "embed: w shape");
        assert_eq!(self.shape(b), &[k, d], "embed: b shape");
        assert_eq!(self.shape(mask_token), &[d], "embed: mask token shape");
        assert_eq!(self.shape(fsu_pos), &[n, d], "embed: fsu positions");
        assert_eq!(self.shape(time_pos), &[t, d], "embed: time positions");
        assert_eq!(spec.index_map.len(), n, "embed: index map");
        assert_eq!(spec.input_mask.len(), bb * t * n, "embed: input mask");
        assert!(spec.index_map.iter().all(|&i| i < k), "embed: map out of range");

        let value = kernels::embed(
            self.value(x),
            self.value(w),
            self.value(b),
            self.value(mask_token),
            self.value(fsu_pos),
            self.value(time_pos),
            &spec,
        );
        let rg = self.needs_grad(&[x, w, b, mask_token, fsu_pos, time_pos]);
        self.push(
            value,
            vec![bb, t, n, d],
            rg,
            Op::Embed {
                x,
                w,
                b,
                mask_token,
                fsu_pos,
                time_pos,
                spec,
            },
        )
    }

    /// Per-FSU reconstruction heads: `[b, t, n, d]` with weights `[n, d]`
    /// and bias `[n]` gives `[b, t, n]` via per-column dot products.
    pub fn decode_heads(&mut self, h: Var, w: Var, c: Var) -> Var {
        let s = self.shape(h);
        assert_eq!(s.len(), 4, "decode_heads: need 4-D");
        let (bb, t, n, d) = (s[0], s[1], s[2], s[3]);
        assert_eq!(self.shape(w), &[n, d], "decode_heads: weight shape");
        assert_eq!(self.shape(c), &[n], "decode_heads: bias shape");
        let value =
            kernels::decode_heads(self.value(h), self.value(w), self.value(c), [bb, t, n, d]);
        let rg = self.needs_grad(&[h, w, c]);
        self.push(value, vec![bb, t, n], rg, Op::DecodeHeads { h, w, c })
    }

    // -- losses -------------------------------------------------------------------

    /// Mean squared error over masked cells only; cells outside the mask
    /// contribute neither value nor gradient. Panics on an empty mask:
    /// callers guarantee at least one target.
    pub fn mse_masked(&mut self, pred: Var, target: Arc<Vec<E>>, mask: Arc<Vec<bool>>) -> Var {
        assert_eq!(self.value(pred).len(), target.len(), "mse: target length");
        assert_eq!(target.len(), mask.len(), "mse: mask length");
        let count = mask.iter().filter(|&&m| m).count();
        assert!(count > 0, "mse_masked: empty mask set");
        let mut acc = E::ZERO;
        for ((&p, &t), &m) in self.value(pred).iter().zip(target.iter()).zip(mask.iter()) {
            if m {
                let e = p - t;
                acc = acc + e * e;
            }
        }
        let value = vec![acc / E::from_f64(count as f64)];
        let rg = self.needs_grad(&[pred]);
        self.push(
            value,
            vec![1],
            rg,
            Op::MseMasked {
                pred,
                target,
                mask,
                count,
            },
        )
    }

    /// Mean cross-entropy of `[b, c]` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Var {
        let s = self.shape(logits);
        assert_eq!(s.len(), 2, "cross_entropy: logits must be [b, c]");
        let (b, c) = (s[0], s[1]);
        assert_eq!(labels.len(), b, "cross_entropy: label count");
        assert!(labels.iter().all(|&l| l < c), "cross_entropy: label range");
        let value = vec![kernels::cross_entropy(self.value(logits), &labels, b, c)];
        let rg = self.needs_grad(&[logits]);
        self.push(value, vec![1], rg, Op::CrossEntropy { logits, labels })
    }

    // -- backward -------------------------------------------------------------------

    /// Reverse pass from a scalar loss. Visits each recorded operation once,
    /// in reverse order, accumulating gradients into every node on a
    /// `requires_grad` path.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.assert_finite()?;
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![E::ONE]);

        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            self.step_backward(idx);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<E>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.nodes[v.0].value.len());
        match &mut self.nodes[v.0].grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + di;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn step_backward(&mut self, idx: usize) {
        let dy = self.nodes[idx].grad.clone().expect("gradient present");
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(a, dy.clone());
                self.accumulate(b, dy);
            }
            &Op::Mul(a, b) => {
                let da = kernels::zip(&dy, self.value(b), |g, v| g * v);
                let db = kernels::zip(&dy, self.value(a), |g, v| g * v);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::Scale(a, c) => {
                let da: Vec<E> = dy.iter().map(|&g| g * c).collect();
                self.accumulate(a, da);
            }
            &Op::Sum(x) => {
                let dx = vec![dy[0]; self.value(x).len()];
                self.accumulate(x, dx);
            }
            Op::WeightedSum(x, w) => {
                let x = *x;
                let g = dy[0];
                let dx: Vec<E> = w.iter().map(|&wi| wi * g).collect();
                self.accumulate(x, dx);
            }
            &Op::Linear { x, w, b, m, k, n } => {
                let (dx, dw, db) = kernels::linear_backward(
                    &dy,
                    self.value(x),
                    self.value(w),
                    m,
                    k,
                    n,
                    b.is_some(),
                );
                self.accumulate(x, dx);
                self.accumulate(w, dw);
                if let (Some(bias), Some(db)) = (b, db) {
                    self.accumulate(bias, db);
                }
            }
            &Op::BatchMatmul { a, b, g, m, k, n } => {
                let (da, db) =
                    kernels::batch_matmul_backward(&dy, self.value(a), self.value(b), g, m, k, n);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::Transpose12 { x, dims } => {
                // The inverse permutation is the same swap on the output dims.
                let out_dims = [dims[0], dims[2], dims[1], dims[3]];
                let dx = kernels::transpose12(&dy, out_dims);
                self.accumulate(x, dx);
            }
            &Op::Reshape(x) => {
                self.accumulate(x, dy);
            }
            &Op::Gelu(x) => {
                let dx = kernels::zip(&dy, self.value(x), |g, v| g * kernels::gelu_grad(v));
                self.accumulate(x, dx);
            }
            &Op::LayerNorm { x, gain, bias, eps } => {
                let d = *self.nodes[x.0].shape.last().unwrap();
                let (dx, dgain, dbias) =
                    kernels::layer_norm_backward(&dy, self.value(x), self.value(gain), d, eps);
                self.accumulate(x, dx);
                self.accumulate(gain, dgain);
                self.accumulate(bias, dbias);
            }
            &Op::Softmax { x } => {
                let dim = *self.nodes[idx].shape.last().unwrap();
                let dx = kernels::softmax_backward(&dy, &self.nodes[idx].value, dim);
                self.accumulate(x, dx);
            }
            Op::MeanPool { x, valid, dims } => {
                let (x, valid, dims) = (*x, valid.clone(), *dims);
                let dx = kernels::mean_pool_backward(&dy, &valid, dims);
                self.accumulate(x, dx);
            }
            Op::Embed {
                x,
                w,
                b,
                mask_token,
                fsu_pos,
                time_pos,
                spec,
            } => {
                let (x, w, b, mask_token, fsu_pos, time_pos) =
                    (*x, *w, *b, *mask_token, *fsu_pos, *time_pos);
                let spec = spec.clone();
                let k = self.nodes[w.0].shape[0];
                let grads = kernels::embed_backward(&dy, self.value(x), self.value(w), k, &spec);
                self.accumulate(x, grads.dx);
                self.accumulate(w, grads.dw);
                self.accumulate(b, grads.db);
                self.accumulate(mask_token, grads.dmask);
                self.accumulate(fsu_pos, grads.dfsu);
                self.accumulate(time_pos, grads.dtime);
            }
            &Op::DecodeHeads { h, w, c } => {
                let s = &self.nodes[h.0].shape;
                let dims = [s[0], s[1], s[2], s[3]];
                let (dh, dw, dc) =
                    kernels::decode_heads_backward(&dy, self.value(h), self.value(w), dims);
                self.accumulate(h, dh);
                self.accumulate(w, dw);
                self.accumulate(c, dc);
            }
            Op::MseMasked {
                pred,
                target,
                mask,
                count,
            } => {
                let (pred, target, mask, count) = (*pred, target.clone(), mask.clone(), *count);
                let scale = E::from_f64(2.0 / count as f64) * dy[0];
                let dpred: Vec<E> = self
                    .value(pred)
                    .iter()
                    .zip(target.iter())
                    .zip(mask.iter())
                    .map(|((&p, &t), &m)| if m { scale * (p - t) } else { E::ZERO })
                    .collect();
                self.accumulate(pred, dpred);
            }
            Op::CrossEntropy { logits, labels } => {
                let (logits, labels) = (*logits, labels.clone());
                let s = self.nodes[logits.0].shape.clone();
                let dlogits =
                    kernels::cross_entropy_backward(&dy, self.value(logits), &labels, s[0], s[1]);
                self.accumulate(logits, dlogits);
            }
        }
    }
}

fn op_name<E: Real>(op: &Op<E>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Sum(..) => "sum",
        Op::WeightedSum(..) => "weighted_sum",
        Op::Linear { .. } => "linear",
        Op::BatchMatmul { .. } => "batch_matmul",
        Op::Transpose12 { .. } => "transpose12",
        Op::Reshape(..) => "reshape",
        Op::Gelu(..) => "gelu",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Softmax { .. } => "softmax",
        Op::MeanPool { .. } => "mean_pool",
        Op::Embed { .. } => "embed",
        Op::DecodeHeads { .. } => "decode_heads",
        Op::MseMasked { .. } => "mse_masked",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}
