//! Dense `f64` tensors and a reverse-mode differentiation tape.
//!
//! The model layer builds computation graphs by pushing operations onto a
//! [`Tape`]; [`Tape::backward`] then walks the tape in reverse and
//! accumulates gradients. Design constraints, chosen for reproducibility
//! over raw speed:
//!
//! * all arithmetic is `f64`; no mixed precision anywhere,
//! * shapes are explicit 1-D or 2-D; the only broadcast is bias-vector
//!   addition ([`Tape::add_bias`]),
//! * node evaluation and gradient accumulation happen in a fixed sequential
//!   order, so identical graphs produce bit-identical results,
//! * a tape lives on one thread; parallelism happens across tapes, never
//!   inside one.
//!
//! Gradients accumulate: calling `backward` twice without clearing doubles
//! the gradient of every leaf, which is what a caller summing multiple
//! roots wants. Training code builds a fresh tape per batch instead.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initialization scheme for [`Tensor::param`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// All entries zero. Used for biases.
    Zeros,
    /// All entries one. Used for normalization gains.
    Ones,
    /// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    ///
    /// For a `[rows, cols]` matrix applied as `W x`, the fans are
    /// `(cols, rows)`; for a vector of length `n` the fans are `(n, 1)`.
    XavierUniform,
    /// Xavier bound shrunk by [`RESIDUAL_SCALE`]. Used for projections that
    /// write into a residual stream, so each block starts near the identity
    /// instead of swamping its input.
    ResidualXavier,
}

/// Shrink factor for [`Init::ResidualXavier`].
pub const RESIDUAL_SCALE: f64 = 0.05;

/// A dense tensor: a shape and a flat row-major `f64` buffer.
///
/// This is the plain value type used for parameters, checkpoints, and
/// frozen inference; differentiable computation happens on a [`Tape`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn validate_shape(op: &'static str, shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "only 1-D and 2-D tensors are supported".into(),
        });
    }
    let mut numel = 1usize;
    for &dim in shape {
        if dim == 0 {
            return Err(Error::InvalidShape {
                op,
                shape: shape.to_vec(),
                reason: "dimension sizes must be positive".into(),
            });
        }
        numel = numel.checked_mul(dim).ok_or_else(|| Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "element count overflows".into(),
        })?;
    }
    Ok(numel)
}

impl Tensor {
    /// Builds a tensor from a shape and matching flat data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel = validate_shape("Tensor::new", &shape)?;
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                shape,
                reason: format!("shape wants {} elements, got {}", numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel = validate_shape("Tensor::zeros", shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        })
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D tensor over the given values.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    /// Freshly initialized parameter tensor, deterministic in `seed`.
    pub fn param(shape: &[usize], init: Init, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::param_with_rng(shape, init, &mut rng)
    }

    /// Parameter tensor drawing from a caller-owned stream.
    ///
    /// Lets a model initialize many tensors from one seed: the draw order is
    /// the registration order, so the whole parameter set is reproducible.
    pub fn param_with_rng(shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<Self> {
        let numel = validate_shape("Tensor::param", shape)?;
        let data = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Ones => vec![1.0; numel],
            Init::XavierUniform | Init::ResidualXavier => {
                let (fan_in, fan_out) = match shape {
                    [n] => (*n, 1),
                    [rows, cols] => (*cols, *rows),
                    _ => unreachable!("validated above"),
                };
                let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                if init == Init::ResidualXavier {
                    bound *= RESIDUAL_SCALE;
                }
                (0..numel)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect()
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// The shape.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Flat row-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat data (shape is fixed after construction).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of elements.
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows for a 2-D tensor, 1 for a 1-D tensor.
    pub fn rows(&self) -> usize {
        match self.shape.as_slice() {
            [_] => 1,
            [r, _] => *r,
            _ => unreachable!(),
        }
    }

    /// Columns for a 2-D tensor, the length for a 1-D tensor.
    pub fn cols(&self) -> usize {
        match self.shape.as_slice() {
            [n] => *n,
            [_, c] => *c,
            _ => unreachable!(),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Recorded operation; holds the input handles needed for the backward pass.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul {
        a: Var,
        b: Var,
    },
    /// `[r,c] x [c] -> [r]`; also used for `[m,att] x [att] -> [m]`.
    MatVec {
        m: Var,
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    /// `[r,c] + [c]` broadcast over rows; the only broadcast on the tape.
    AddBias {
        a: Var,
        bias: Var,
    },
    AddScalar {
        x: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Relu {
        x: Var,
    },
    /// Softmax over unmasked entries of a 1-D tensor; masked entries are 0.
    MaskedSoftmax {
        x: Var,
        mask: Vec<bool>,
    },
    /// Row-wise masked softmax on `[r,c]`; the mask selects columns.
    MaskedSoftmaxRows {
        x: Var,
        mask: Vec<bool>,
    },
    /// 1-D concatenation.
    Concat {
        parts: Vec<Var>,
        offsets: Vec<usize>,
    },
    /// Vertical stack; 1-D parts count as a single row.
    ConcatRows {
        parts: Vec<Var>,
        offsets: Vec<usize>,
    },
    /// Horizontal stack of 2-D parts with equal row counts.
    ConcatCols {
        parts: Vec<Var>,
        offsets: Vec<usize>,
    },
    SliceCols {
        x: Var,
        from: usize,
        to: usize,
    },
    Row {
        x: Var,
        index: usize,
    },
    Transpose {
        x: Var,
    },
    /// `[c] . [c] -> [1]`
    Dot {
        a: Var,
        b: Var,
    },
    /// `[m] weights over the rows of [m,d] -> [d]`
    WeightedSum {
        weights: Var,
        matrix: Var,
    },
    /// Row gather from `[n,d]`; backward scatter-adds into the table.
    EmbeddingLookup {
        table: Var,
        indices: Vec<usize>,
    },
    /// Row-wise layer normalization with learned gain and bias.
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    /// Sum of all entries `-> [1]`.
    Sum {
        x: Var,
    },
}

impl Op {
    #[cfg_attr(not(test), allow(dead_code))]
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::MatVec { .. } => "matvec",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AddBias { .. } => "add_bias",
            Op::AddScalar { .. } => "add_scalar",
            Op::Scale { .. } => "scale",
            Op::Relu { .. } => "relu",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::MaskedSoftmaxRows { .. } => "masked_softmax_rows",
            Op::Concat { .. } => "concat",
            Op::ConcatRows { .. } => "concat_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::Row { .. } => "row",
            Op::Transpose { .. } => "transpose",
            Op::Dot { .. } => "dot",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::EmbeddingLookup { .. } => "embedding_lookup",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sum { .. } => "sum",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only computation tape.
///
/// Operations validate shapes eagerly and return [`Var`] handles. Inputs of
/// every node strictly precede it, so the insertion order is already a
/// topological order and [`Tape::backward`] is a single reverse sweep.
///
/// Gradients live in a buffer parallel to the nodes; `None` means "never
/// touched", which the backward sweep uses to skip nodes that are not on
/// any path from the root.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    /// Empty tape.
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Whether the tape holds no nodes.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf (an input or parameter) and returns its handle.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// The value of a scalar node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.numel(), 1);
        self.nodes[v.0].value.data[0]
    }

    /// Accumulated gradient of a node; `None` if the node was never reached
    /// by a backward sweep.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Op-kind name and value of every node, for diagnostics and tests.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn nodes_debug(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        self.nodes.iter().map(|n| (n.op.kind(), &n.value))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        let (m, k) = match ta.shape() {
            [m, k] => (*m, *k),
            _ => {
                return Err(Error::InvalidShape {
                    op: "matmul",
                    shape: ta.shape().to_vec(),
                    reason: "left operand must be 2-D".into(),
                })
            }
        };
        let (k2, n) = match tb.shape() {
            [k2, n] => (*k2, *n),
            _ => {
                return Err(Error::InvalidShape {
                    op: "matmul",
                    shape: tb.shape().to_vec(),
                    reason: "right operand must be 2-D".into(),
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        let (da, db) = (&ta.data, &tb.data);
        for i in 0..m {
            for kk in 0..k {
                let av = da[i * k + kk];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }))
    }

    /// Matrix-vector product `[r,c] x [c] -> [r]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (tm, tx) = (self.tensor(m), self.tensor(x));
        let (r, c) = match tm.shape() {
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::InvalidShape {
                    op: "matvec",
                    shape: tm.shape().to_vec(),
                    reason: "left operand must be 2-D".into(),
                })
            }
        };
        if tx.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: tm.shape().to_vec(),
                rhs: tx.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &tm.data[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] * tx.data[j];
            }
            out[i] = acc;
        }
        Ok(self.push(Tensor::new(vec![r], out)?, Op::MatVec { m, x }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add { a, b }))
    }

    /// Elementwise difference of two same-shape tensors.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Sub { a, b }))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }))
    }

    /// Adds a bias vector to every row of a 2-D tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.tensor(a), self.tensor(bias));
        let (r, c) = match ta.shape() {
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::InvalidShape {
                    op: "add_bias",
                    shape: ta.shape().to_vec(),
                    reason: "left operand must be 2-D".into(),
                })
            }
        };
        if tb.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = ta.data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += tb.data[j];
            }
        }
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::AddBias { a, bias }))
    }

    /// Adds a constant to every entry.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let tx = self.tensor(x);
        let data = tx.data.iter().map(|v| v + c).collect();
        let shape = tx.shape.clone();
        self.push(Tensor { shape, data }, Op::AddScalar { x })
    }

    /// Multiplies every entry by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.tensor(x);
        let data = tx.data.iter().map(|v| v * factor).collect();
        let shape = tx.shape.clone();
        self.push(Tensor { shape, data }, Op::Scale { x, factor })
    }

    /// Elementwise `max(0, x)`. The subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.tensor(x);
        let data = tx.data.iter().map(|v| v.max(0.0)).collect();
        let shape = tx.shape.clone();
        self.push(Tensor { shape, data }, Op::Relu { x })
    }

    fn softmax_into(data: &[f64], mask: &[bool], out: &mut [f64]) {
        let mut max = f64::NEG_INFINITY;
        for (v, &keep) in data.iter().zip(mask) {
            if keep && *v > max {
                max = *v;
            }
        }
        let mut total = 0.0;
        for ((o, v), &keep) in out.iter_mut().zip(data).zip(mask) {
            if keep {
                *o = (*v - max).exp();
                total += *o;
            } else {
                *o = 0.0;
            }
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    /// Softmax over the unmasked entries of a 1-D tensor.
    ///
    /// Masked entries are exactly `0.0` in the output and receive no
    /// gradient. Numerically stabilized by subtracting the unmasked max, so
    /// arbitrarily large masked logits cannot overflow. Errors when every
    /// entry is masked.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.tensor(x);
        let n = match tx.shape() {
            [n] => *n,
            _ => {
                return Err(Error::InvalidShape {
                    op: "masked_softmax",
                    shape: tx.shape().to_vec(),
                    reason: "input must be 1-D".into(),
                })
            }
        };
        if mask.len() != n {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                lhs: tx.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&keep| keep) {
            return Err(Error::Invalid(
                "masked_softmax: every position is masked".into(),
            ));
        }
        let mut out = vec![0.0; n];
        Self::softmax_into(&tx.data, mask, &mut out);
        Ok(self.push(
            Tensor::new(vec![n], out)?,
            Op::MaskedSoftmax {
                x,
                mask: mask.to_vec(),
            },
        ))
    }

    /// Row-wise masked softmax on a 2-D tensor; the mask selects columns.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.tensor(x);
        let (r, c) = match tx.shape() {
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::InvalidShape {
                    op: "masked_softmax_rows",
                    shape: tx.shape().to_vec(),
                    reason: "input must be 2-D".into(),
                })
            }
        };
        if mask.len() != c {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax_rows",
                lhs: tx.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&keep| keep) {
            return Err(Error::Invalid(
                "masked_softmax_rows: every column is masked".into(),
            ));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            Self::softmax_into(
                &tx.data[i * c..(i + 1) * c],
                mask,
                &mut out[i * c..(i + 1) * c],
            );
        }
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::MaskedSoftmaxRows {
                x,
                mask: mask.to_vec(),
            },
        ))
    }

    /// Concatenates 1-D tensors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat: no parts".into()));
        }
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut data = Vec::new();
        offsets.push(0);
        for &p in parts {
            let tp = self.tensor(p);
            if tp.shape().len() != 1 {
                return Err(Error::InvalidShape {
                    op: "concat",
                    shape: tp.shape().to_vec(),
                    reason: "parts must be 1-D".into(),
                });
            }
            data.extend_from_slice(&tp.data);
            offsets.push(data.len());
        }
        Ok(self.push(
            Tensor::from_vec(data)?,
            Op::Concat {
                parts: parts.to_vec(),
                offsets,
            },
        ))
    }

    /// Stacks parts vertically into a 2-D tensor.
    ///
    /// A 1-D part of length `c` contributes one row; a 2-D part `[r,c]`
    /// contributes `r` rows. All parts must agree on `c`.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat_rows: no parts".into()));
        }
        let c = self.tensor(parts[0]).cols();
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut data = Vec::new();
        let mut rows = 0usize;
        offsets.push(0);
        for &p in parts {
            let tp = self.tensor(p);
            if tp.cols() != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, c],
                    rhs: tp.shape().to_vec(),
                });
            }
            rows += tp.rows();
            data.extend_from_slice(&tp.data);
            offsets.push(data.len());
        }
        Ok(self.push(
            Tensor::new(vec![rows, c], data)?,
            Op::ConcatRows {
                parts: parts.to_vec(),
                offsets,
            },
        ))
    }

    /// Stacks 2-D parts horizontally; all parts must agree on rows.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat_cols: no parts".into()));
        }
        let r = match self.tensor(parts[0]).shape() {
            [r, _] => *r,
            other => {
                return Err(Error::InvalidShape {
                    op: "concat_cols",
                    shape: other.to_vec(),
                    reason: "parts must be 2-D".into(),
                })
            }
        };
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let tp = self.tensor(p);
            match tp.shape() {
                [pr, pc] if *pr == r => {
                    widths.push(*pc);
                    total += *pc;
                }
                other => {
                    return Err(Error::ShapeMismatch {
                        op: "concat_cols",
                        lhs: vec![r, total],
                        rhs: other.to_vec(),
                    })
                }
            }
        }
        let mut data = vec![0.0; r * total];
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut at = 0usize;
        offsets.push(0);
        for (&p, &w) in parts.iter().zip(&widths) {
            let tp = &self.nodes[p.0].value;
            for i in 0..r {
                data[i * total + at..i * total + at + w]
                    .copy_from_slice(&tp.data[i * w..(i + 1) * w]);
            }
            at += w;
            offsets.push(at);
        }
        Ok(self.push(
            Tensor::new(vec![r, total], data)?,
            Op::ConcatCols {
                parts: parts.to_vec(),
                offsets,
            },
        ))
    }

    /// Column range `[from, to)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, from: usize, to: usize) -> Result<Var> {
        let tx = self.tensor(x);
        let (r, c) = match tx.shape() {
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::InvalidShape {
                    op: "slice_cols",
                    shape: tx.shape().to_vec(),
                    reason: "input must be 2-D".into(),
                })
            }
        };
        if from >= to || to > c {
            return Err(Error::InvalidShape {
                op: "slice_cols",
                shape: tx.shape().to_vec(),
                reason: format!("invalid column range {}..{}", from, to),
            });
        }
        let w = to - from;
        let mut data = vec![0.0; r * w];
        for i in 0..r {
            data[i * w..(i + 1) * w].copy_from_slice(&tx.data[i * c + from..i * c + to]);
        }
        Ok(self.push(
            Tensor::new(vec![r, w], data)?,
            Op::SliceCols { x, from, to },
        ))
    }

    /// A single row of a 2-D tensor as a 1-D tensor.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let tx = self.tensor(x);
        let (r, c) = match tx.shape() {
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::InvalidShape {
                    op: "row",
                    shape: tx.shape().to_vec(),
                    reason: "input must be 2-D".into(),
                })
            }
        };
        if index >= r {
            return Err(Error::InvalidShape {
                op: "row",
                shape: tx.shape().to_vec(),
                reason: format!("row {} out of range", index),
            });
        }
        let data = tx.data[index * c..(index + 1) * c].to_vec();
        Ok(self.push(Tensor::new(vec![c], data)?, Op::Row { x, index }))
    }

    /// Matrix transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.tensor(x);
        let (r, c) = match tx.shape() {
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::InvalidShape {
                    op: "transpose",
                    shape: tx.shape().to_vec(),
                    reason: "input must be 2-D".into(),
                })
            }
        };
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = tx.data[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose { x }))
    }

    /// Dot product of two 1-D tensors, as a `[1]` tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        if ta.shape().len() != 1 || ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut acc = 0.0;
        for (x, y) in ta.data.iter().zip(&tb.data) {
            acc += x * y;
        }
        Ok(self.push(Tensor::scalar(acc), Op::Dot { a, b }))
    }

    /// Weighted sum of matrix rows: `[m]` weights over `[m,d] -> [d]`.
    pub fn weighted_sum(&mut self, weights: Var, matrix: Var) -> Result<Var> {
        let (tw, tm) = (self.tensor(weights), self.tensor(matrix));
        let m = match tw.shape() {
            [m] => *m,
            _ => {
                return Err(Error::InvalidShape {
                    op: "weighted_sum",
                    shape: tw.shape().to_vec(),
                    reason: "weights must be 1-D".into(),
                })
            }
        };
        let d = match tm.shape() {
            [rows, d] if *rows == m => *d,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "weighted_sum",
                    lhs: tw.shape().to_vec(),
                    rhs: tm.shape().to_vec(),
                })
            }
        };
        let mut out = vec![0.0; d];
        for i in 0..m {
            let w = tw.data[i];
            if w == 0.0 {
                continue;
            }
            let row = &tm.data[i * d..(i + 1) * d];
            for j in 0..d {
                out[j] += w * row[j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![d], out)?,
            Op::WeightedSum { weights, matrix },
        ))
    }

    /// Gathers rows of an embedding table: `[n,d]` + indices `-> [len,d]`.
    ///
    /// Indices may repeat. The backward pass scatter-adds row gradients back
    /// into the table, so only looked-up rows receive gradient.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tt = self.tensor(table);
        let (n, d) = match tt.shape() {
            [n, d] => (*n, *d),
            _ => {
                return Err(Error::InvalidShape {
                    op: "embedding_lookup",
                    shape: tt.shape().to_vec(),
                    reason: "table must be 2-D".into(),
                })
            }
        };
        if indices.is_empty() {
            return Err(Error::Invalid("embedding_lookup: no indices".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &idx in indices {
            if idx >= n {
                return Err(Error::InvalidShape {
                    op: "embedding_lookup",
                    shape: tt.shape().to_vec(),
                    reason: format!("index {} out of range for {} rows", idx, n),
                });
            }
            data.extend_from_slice(&tt.data[idx * d..(idx + 1) * d]);
        }
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], data)?,
            Op::EmbeddingLookup {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Row-wise layer normalization with learned gain and bias.
    ///
    /// Each row is standardized to zero mean and unit variance (population
    /// variance, stabilized by `eps`), then scaled and shifted.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.tensor(x), self.tensor(gain), self.tensor(bias));
        let (r, c) = match tx.shape() {
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::InvalidShape {
                    op: "layer_norm",
                    shape: tx.shape().to_vec(),
                    reason: "input must be 2-D".into(),
                })
            }
        };
        if tg.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        if tb.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.data[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                data[i * c + j] = (row[j] - mean) * inv * tg.data[j] + tb.data[j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![r, c], data)?,
            Op::LayerNorm { x, gain, bias, eps },
        ))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let acc = self.tensor(x).data.iter().sum();
        self.push(Tensor::scalar(acc), Op::Sum { x })
    }

    /// Reverse sweep from a scalar root, accumulating gradients.
    ///
    /// Seeds the root with gradient 1 and propagates to every node the root
    /// depends on. Repeated calls accumulate: a second sweep from the same
    /// root doubles every gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                shape: self.nodes[root.0].value.shape().to_vec(),
                reason: "root must be a scalar".into(),
            });
        }
        // Each call propagates through fresh work buffers and folds the
        // result into the persistent gradients at the end, so a second call
        // from the same root adds exactly one more d(root)/d(node) to every
        // node instead of re-propagating already-accumulated totals.
        let nodes = &self.nodes;
        let mut work: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        work[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            if work[idx].is_none() {
                continue; // not on any path from the root
            }
            // Taking the gradient out lets input slots (always < idx) be
            // borrowed mutably below; it is restored afterwards.
            let g = work[idx].take().expect("checked above");
            let node = &nodes[idx];
            macro_rules! val {
                ($v:expr) => {
                    &nodes[$v.0].value
                };
            }
            macro_rules! grad_of {
                ($v:expr) => {{
                    let numel = nodes[$v.0].value.numel();
                    work[$v.0].get_or_insert_with(|| vec![0.0; numel])
                }};
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (ta, tb) = (val!(a), val!(b));
                    let (m, k) = (ta.rows(), ta.cols());
                    let n = tb.cols();
                    {
                        let ga = grad_of!(a);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for kk in 0..k {
                                let brow = &tb.data[kk * n..(kk + 1) * n];
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += grow[j] * brow[j];
                                }
                                ga[i * k + kk] += acc;
                            }
                        }
                    }
                    let gb = grad_of!(b);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let av = ta.data[i * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            let gbrow = &mut gb[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                gbrow[j] += av * grow[j];
                            }
                        }
                    }
                }
                Op::MatVec { m, x } => {
                    let (tm, tx) = (val!(m), val!(x));
                    let (r, c) = (tm.rows(), tm.cols());
                    {
                        let gm = grad_of!(m);
                        for i in 0..r {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let grow = &mut gm[i * c..(i + 1) * c];
                            for j in 0..c {
                                grow[j] += gi * tx.data[j];
                            }
                        }
                    }
                    let gx = grad_of!(x);
                    for i in 0..r {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &tm.data[i * c..(i + 1) * c];
                        for j in 0..c {
                            gx[j] += gi * row[j];
                        }
                    }
                }
                Op::Add { a, b } => {
                    {
                        let ga = grad_of!(a);
                        for (dst, &gv) in ga.iter_mut().zip(&g) {
                            *dst += gv;
                        }
                    }
                    let gb = grad_of!(b);
                    for (dst, &gv) in gb.iter_mut().zip(&g) {
                        *dst += gv;
                    }
                }
                Op::Sub { a, b } => {
                    {
                        let ga = grad_of!(a);
                        for (dst, &gv) in ga.iter_mut().zip(&g) {
                            *dst += gv;
                        }
                    }
                    let gb = grad_of!(b);
                    for (dst, &gv) in gb.iter_mut().zip(&g) {
                        *dst -= gv;
                    }
                }
                Op::Mul { a, b } => {
                    // Sequential accumulation keeps a == b correct: each
                    // factor contributes its own term.
                    {
                        let tb = val!(b);
                        let ga = grad_of!(a);
                        for i in 0..g.len() {
                            ga[i] += g[i] * tb.data[i];
                        }
                    }
                    let ta = val!(a);
                    let gb = grad_of!(b);
                    for i in 0..g.len() {
                        gb[i] += g[i] * ta.data[i];
                    }
                }
                Op::AddBias { a, bias } => {
                    let c = val!(bias).numel();
                    {
                        let ga = grad_of!(a);
                        for (dst, &gv) in ga.iter_mut().zip(&g) {
                            *dst += gv;
                        }
                    }
                    let gb = grad_of!(bias);
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % c] += gv;
                    }
                }
                Op::AddScalar { x } => {
                    let gx = grad_of!(x);
                    for (dst, &gv) in gx.iter_mut().zip(&g) {
                        *dst += gv;
                    }
                }
                Op::Scale { x, factor } => {
                    let factor = *factor;
                    let gx = grad_of!(x);
                    for (dst, &gv) in gx.iter_mut().zip(&g) {
                        *dst += gv * factor;
                    }
                }
                Op::Relu { x } => {
                    let tx = val!(x);
                    let gx = grad_of!(x);
                    for i in 0..g.len() {
                        if tx.data[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::MaskedSoftmax { x, mask } => {
                    let p = &node.value.data;
                    let mut inner = 0.0;
                    for i in 0..p.len() {
                        inner += g[i] * p[i];
                    }
                    let gx = grad_of!(x);
                    for i in 0..p.len() {
                        if mask[i] {
                            gx[i] += p[i] * (g[i] - inner);
                        }
                    }
                }
                Op::MaskedSoftmaxRows { x, mask } => {
                    let p = &node.value.data;
                    let c = mask.len();
                    let r = p.len() / c;
                    let gx = grad_of!(x);
                    for i in 0..r {
                        let prow = &p[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let mut inner = 0.0;
                        for j in 0..c {
                            inner += grow[j] * prow[j];
                        }
                        let gxrow = &mut gx[i * c..(i + 1) * c];
                        for j in 0..c {
                            if mask[j] {
                                gxrow[j] += prow[j] * (grow[j] - inner);
                            }
                        }
                    }
                }
                Op::Concat { parts, offsets } | Op::ConcatRows { parts, offsets } => {
                    for (pi, &p) in parts.iter().enumerate() {
                        let (from, to) = (offsets[pi], offsets[pi + 1]);
                        let gp = grad_of!(p);
                        for (dst, &gv) in gp.iter_mut().zip(&g[from..to]) {
                            *dst += gv;
                        }
                    }
                }
                Op::ConcatCols { parts, offsets } => {
                    let total = node.value.cols();
                    let r = node.value.rows();
                    for (pi, &p) in parts.iter().enumerate() {
                        let (from, to) = (offsets[pi], offsets[pi + 1]);
                        let w = to - from;
                        let gp = grad_of!(p);
                        for i in 0..r {
                            for j in 0..w {
                                gp[i * w + j] += g[i * total + from + j];
                            }
                        }
                    }
                }
                Op::SliceCols { x, from, to } => {
                    let c = val!(x).cols();
                    let w = to - from;
                    let r = node.value.rows();
                    let from = *from;
                    let gx = grad_of!(x);
                    for i in 0..r {
                        for j in 0..w {
                            gx[i * c + from + j] += g[i * w + j];
                        }
                    }
                }
                Op::Row { x, index } => {
                    let c = node.value.numel();
                    let start = index * c;
                    let gx = grad_of!(x);
                    for j in 0..c {
                        gx[start + j] += g[j];
                    }
                }
                Op::Transpose { x } => {
                    let (c, r) = (node.value.rows(), node.value.cols());
                    // node is [c,r], input was [r,c]
                    let gx = grad_of!(x);
                    for i in 0..c {
                        for j in 0..r {
                            gx[j * c + i] += g[i * r + j];
                        }
                    }
                }
                Op::Dot { a, b } => {
                    let gv = g[0];
                    {
                        let tb = val!(b);
                        let ga = grad_of!(a);
                        for i in 0..tb.data.len() {
                            ga[i] += gv * tb.data[i];
                        }
                    }
                    let ta = val!(a);
                    let gb = grad_of!(b);
                    for i in 0..ta.data.len() {
                        gb[i] += gv * ta.data[i];
                    }
                }
                Op::WeightedSum { weights, matrix } => {
                    let (tw, tm) = (val!(weights), val!(matrix));
                    let m = tw.numel();
                    let d = tm.cols();
                    {
                        let gw = grad_of!(weights);
                        for i in 0..m {
                            let row = &tm.data[i * d..(i + 1) * d];
                            let mut acc = 0.0;
                            for j in 0..d {
                                acc += g[j] * row[j];
                            }
                            gw[i] += acc;
                        }
                    }
                    let gm = grad_of!(matrix);
                    for i in 0..m {
                        let w = tw.data[i];
                        if w == 0.0 {
                            continue;
                        }
                        let grow = &mut gm[i * d..(i + 1) * d];
                        for j in 0..d {
                            grow[j] += w * g[j];
                        }
                    }
                }
                Op::EmbeddingLookup { table, indices } => {
                    let d = node.value.cols();
                    let gt = grad_of!(table);
                    for (r, &idx) in indices.iter().enumerate() {
                        let src = &g[r * d..(r + 1) * d];
                        let dst = &mut gt[idx * d..(idx + 1) * d];
                        for j in 0..d {
                            dst[j] += src[j];
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (tx, tg) = (val!(x), val!(gain));
                    let (r, c) = (tx.rows(), tx.cols());
                    let cf = c as f64;
                    // Recompute per-row statistics; cheaper than storing them.
                    let mut xhat = vec![0.0; r * c];
                    let mut invs = vec![0.0; r];
                    for i in 0..r {
                        let row = &tx.data[i * c..(i + 1) * c];
                        let mean = row.iter().sum::<f64>() / cf;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cf;
                        let inv = 1.0 / (var + eps).sqrt();
                        invs[i] = inv;
                        for j in 0..c {
                            xhat[i * c + j] = (row[j] - mean) * inv;
                        }
                    }
                    let gaindata = &tg.data;
                    {
                        let ggain = grad_of!(gain);
                        for i in 0..r {
                            for j in 0..c {
                                ggain[j] += g[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    {
                        let gbias = grad_of!(bias);
                        for i in 0..r {
                            for j in 0..c {
                                gbias[j] += g[i * c + j];
                            }
                        }
                    }
                    let gx = grad_of!(x);
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        let xrow = &xhat[i * c..(i + 1) * c];
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..c {
                            let dxhat = grow[j] * gaindata[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xrow[j];
                        }
                        mean_dxhat /= cf;
                        mean_dxhat_xhat /= cf;
                        let gxrow = &mut gx[i * c..(i + 1) * c];
                        for j in 0..c {
                            let dxhat = grow[j] * gaindata[j];
                            gxrow[j] += invs[i] * (dxhat - mean_dxhat - xrow[j] * mean_dxhat_xhat);
                        }
                    }
                }
                Op::Sum { x } => {
                    let gv = g[0];
                    let gx = grad_of!(x);
                    for dst in gx.iter_mut() {
                        *dst += gv;
                    }
                }
            }
            work[idx] = Some(g);
        }
        for (slot, fresh) in self.grads.iter_mut().zip(work) {
            if let Some(fresh) = fresh {
                let acc = slot.get_or_insert_with(|| vec![0.0; fresh.len()]);
                for (dst, src) in acc.iter_mut().zip(fresh) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn leaf(tape: &mut Tape, shape: &[usize], data: &[f64]) -> Var {
        tape.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn zeros_have_shape_and_zero_data() {
        let t = Tensor::zeros(&[2, 3]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(Tensor::zeros(&[0]).is_err());
        assert!(Tensor::zeros(&[3, 0]).is_err());
        assert!(Tensor::param(&[0, 4], Init::XavierUniform, 1).is_err());
    }

    #[test]
    fn param_is_deterministic_in_seed() {
        let a = Tensor::param(&[4, 8], Init::XavierUniform, 99).unwrap();
        let b = Tensor::param(&[4, 8], Init::XavierUniform, 99).unwrap();
        assert_eq!(a, b, "same seed must give bitwise-identical tensors");
        let c = Tensor::param(&[4, 8], Init::XavierUniform, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_bound_holds_over_many_draws() {
        // [4,8] gives fan_in + fan_out = 12, bound sqrt(6/12).
        let bound = (6.0f64 / 12.0).sqrt();
        let mut seen_max = 0.0f64;
        let mut n = 0usize;
        for seed in 0..3200 {
            let t = Tensor::param(&[4, 8], Init::XavierUniform, seed).unwrap();
            for &v in t.data() {
                assert!(v.abs() < bound, "draw {} outside ±{}", v, bound);
                seen_max = seen_max.max(v.abs());
                n += 1;
            }
        }
        assert!(n >= 100_000);
        // The bound should be tight: draws approach it.
        assert!(
            seen_max > 0.99 * bound,
            "max |draw| {} far from bound",
            seen_max
        );
    }

    #[test]
    fn matmul_identity_returns_input() {
        let mut tape = Tape::new();
        let eye = leaf(
            &mut tape,
            &[3, 3],
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let x = leaf(&mut tape, &[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn matmul_2x3_3x2_hand_checked() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = leaf(&mut tape, &[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2]);
        assert_eq!(tape.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_dimension_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], &[0.0; 6]);
        let b = leaf(&mut tape, &[2, 2], &[0.0; 4]);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[2, 3]") && msg.contains("[2, 2]"),
            "got: {}",
            msg
        );
    }

    #[test]
    fn relu_mixed_signs() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[4], &[-1.0, 0.0, 2.0, -0.5]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn relu_gradient_uses_zero_subgradient_at_zero() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[-1.0, 0.0, 2.0]);
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn masked_softmax_uniform_when_logits_equal() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[0.0, 0.0, 0.0]);
        let y = tape.masked_softmax(x, &[true, true, true]).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_softmax_excludes_huge_masked_logit() {
        // The third logit is masked and absurdly large; it must neither
        // overflow nor leak probability mass.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[0.0, 9.0, 1e9]);
        let y = tape.masked_softmax(x, &[true, true, false]).unwrap();
        let out = tape.value(y).data();
        let denom = 1.0 + 9.0f64.exp();
        assert!((out[0] - 1.0 / denom).abs() < 1e-15);
        assert!((out[1] - 9.0f64.exp() / denom).abs() < 1e-12);
        assert_eq!(out[2], 0.0);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn masked_softmax_rejects_all_masked() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], &[1.0, 2.0]);
        assert!(tape.masked_softmax(x, &[false, false]).is_err());
    }

    proptest! {
        #[test]
        fn masked_softmax_properties(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..12),
            mask_bits in proptest::collection::vec(proptest::bool::ANY, 1..12),
            shift in -40.0f64..40.0,
        ) {
            let n = logits.len().min(mask_bits.len());
            let logits = &logits[..n];
            let mut mask = mask_bits[..n].to_vec();
            if !mask.iter().any(|&b| b) {
                mask[0] = true;
            }
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(logits.to_vec()).unwrap());
            let y = tape.masked_softmax(x, &mask).unwrap();
            let out = tape.value(y).data().to_vec();

            // Nonnegative, masked entries exactly zero, unmasked sum to 1.
            for (i, &v) in out.iter().enumerate() {
                prop_assert!(v >= 0.0);
                if !mask[i] {
                    prop_assert_eq!(v, 0.0);
                }
            }
            let total: f64 = out.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);

            // Shift invariance on unmasked logits.
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let xs = tape.leaf(Tensor::from_vec(shifted).unwrap());
            let ys = tape.masked_softmax(xs, &mask).unwrap();
            let out_s = tape.value(ys).data();
            for i in 0..n {
                prop_assert!((out[i] - out_s[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_on_sum_gives_unit_gradients() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[4], &[1.0, -2.0, 3.0, 0.5]);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_diamond_accumulates_both_paths() {
        // y = x + x must give dy/dx = 2.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1], &[3.0]);
        let y = tape.add(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_twice_accumulates() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], &[1.0, 2.0]);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], &[1.0, 2.0]);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn mul_with_itself_squares_gradient() {
        // d(x*x)/dx = 2x.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1], &[3.0]);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn embedding_lookup_gathers_rows() {
        let mut tape = Tape::new();
        let table = leaf(&mut tape, &[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = tape.embedding_lookup(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(rows).shape(), &[3, 2]);
        assert_eq!(tape.value(rows).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn embedding_backward_touches_only_looked_up_rows() {
        let mut tape = Tape::new();
        let table = leaf(&mut tape, &[4, 2], &[0.0; 8]);
        let rows = tape.embedding_lookup(table, &[1, 1]).unwrap();
        let s = tape.sum(rows);
        tape.backward(s).unwrap();
        let g = tape.grad(table).unwrap();
        // Row 1 gathered twice: gradient 2 per entry; all other rows zero.
        assert_eq!(g, &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn embedding_rejects_out_of_range_index() {
        let mut tape = Tape::new();
        let table = leaf(&mut tape, &[2, 2], &[0.0; 4]);
        assert!(tape.embedding_lookup(table, &[2]).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let xt = tape.transpose(x).unwrap();
        assert_eq!(tape.value(xt).shape(), &[3, 2]);
        assert_eq!(tape.value(xt).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let xtt = tape.transpose(xt).unwrap();
        assert_eq!(tape.value(xtt).data(), tape.value(x).data());
    }

    #[test]
    fn weighted_sum_matches_hand_computation() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, &[2], &[0.25, 0.75]);
        let m = leaf(&mut tape, &[2, 2], &[4.0, 0.0, 0.0, 4.0]);
        let y = tape.weighted_sum(w, m).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 3.0]);
    }

    #[test]
    fn concat_and_row_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2], &[1.0, 2.0]);
        let b = leaf(&mut tape, &[3], &[3.0, 4.0, 5.0]);
        let cat = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);

        let m = tape.concat_rows(&[a, a]).unwrap();
        assert_eq!(tape.value(m).shape(), &[2, 2]);
        let r1 = tape.row(m, 1).unwrap();
        assert_eq!(tape.value(r1).data(), &[1.0, 2.0]);
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let gain = leaf(&mut tape, &[4], &[1.0; 4]);
        let bias = leaf(&mut tape, &[4], &[0.0; 4]);
        let y = tape.layer_norm(x, gain, bias, 0.0).unwrap();
        let out = tape.value(y).data();
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tape_values_are_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::param(&[5, 5], Init::XavierUniform, 7).unwrap());
            let b = tape.leaf(Tensor::param(&[5, 5], Init::XavierUniform, 8).unwrap());
            let c = tape.matmul(a, b).unwrap();
            let r = tape.relu(c);
            let s = tape.sum(r);
            tape.backward(s).unwrap();
            (
                tape.value(s).data().to_vec(),
                tape.grad(a).unwrap().to_vec(),
            )
        };
        let (s1, g1) = run();
        let (s2, g2) = run();
        assert_eq!(s1, s2);
        assert_eq!(g1, g2);
    }
}
