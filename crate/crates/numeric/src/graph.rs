//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive op applied to tensors held in an
//! arena. [`Graph::backward`] replays the tape in reverse, accumulating
//! vector-Jacobian products into per-leaf gradients. Accumulation order
//! is fixed, so gradients are bit-identical across runs.

use std::sync::Arc;

use rayon::prelude::*;

use crate::element::Element;
use crate::error::TensorError;
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// Conv1d boundary handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the output length equals the input length (odd kernels only).
    Same,
    /// No padding; output length is `len - kernel + 1`.
    Valid,
}

enum Op<T: Element> {
    Leaf,
    MatMul {
        a: TensorId,
        b: TensorId,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Sub {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        x: TensorId,
        c: T,
    },
    AddRow {
        x: TensorId,
        bias: TensorId,
    },
    Log {
        x: TensorId,
    },
    Relu {
        x: TensorId,
    },
    Gelu {
        x: TensorId,
    },
    Softmax {
        x: TensorId,
    },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    },
    Conv1d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        padding: Padding,
    },
    Embedding {
        table: TensorId,
        ids: Arc<Vec<usize>>,
    },
    Concat {
        parts: Vec<TensorId>,
        axis: usize,
    },
    Slice {
        x: TensorId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Sum {
        x: TensorId,
    },
    Mean {
        x: TensorId,
    },
    Reshape {
        x: TensorId,
    },
    TransposeLast2 {
        x: TensorId,
    },
    SplitHeads {
        x: TensorId,
        batch: usize,
        seq: usize,
        heads: usize,
        head_dim: usize,
    },
    MergeHeads {
        x: TensorId,
        batch: usize,
        seq: usize,
        heads: usize,
        head_dim: usize,
    },
    RepeatRows {
        x: TensorId,
        times: usize,
    },
    Attention {
        q: TensorId,
        k: TensorId,
        v: TensorId,
        mask: Arc<Vec<bool>>,
        /// Softmax weights saved at forward time, `[batch, q_len, k_len]`.
        weights: Vec<T>,
    },
}

struct Node<T: Element> {
    op: Op<T>,
    out: Tensor<T>,
}

/// Gradients per registered parameter, in registration order.
#[derive(Debug)]
pub struct Gradients<T: Element> {
    names: Vec<String>,
    grads: Vec<Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn by_index(&self, i: usize) -> &Tensor<T> {
        &self.grads[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.grads[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.grads.iter())
    }
}

/// The recording tape. Confined to one worker; build, run backward, drop.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    leaves: Vec<(String, TensorId)>,
    check_finite: bool,
    masked_attention_rows: u64,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaves: Vec::new(),
            check_finite: true,
            masked_attention_rows: 0,
        }
    }

    /// Disable the per-op finite scan (gradcheck perturbs values heavily).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Queries whose keys were all masked in some attention op so far.
    pub fn masked_attention_rows(&self) -> u64 {
        self.masked_attention_rows
    }

    /// Register a trainable leaf; its gradient is reported by [`Graph::backward`].
    pub fn parameter(&mut self, name: impl Into<String>, t: Tensor<T>) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            out: t,
        });
        self.leaves.push((name.into(), id));
        id
    }

    /// Register a constant input (no gradient reported).
    pub fn input(&mut self, t: Tensor<T>) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            out: t,
        });
        id
    }

    pub fn value(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0].out
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].out.shape()
    }

    fn push(&mut self, op: Op<T>, out: Tensor<T>, name: &'static str) -> Result<TensorId, TensorError> {
        if self.check_finite && !out.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { op, out });
        Ok(id)
    }

    // ── Forward ops ─────────────────────────────────────────────────

    /// 2-D matrix product `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        self.push(Op::MatMul { a, b }, out, "matmul")
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn zip_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(op, out, name)
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, x: TensorId, c: T) -> Result<TensorId, TensorError> {
        let data: Vec<T> = self.value(x).data().iter().map(|&v| v * c).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(Op::Scale { x, c }, out, "scale")
    }

    /// Broadcast-add a `[d]` bias over the rows of an `[.., d]` tensor.
    pub fn add_row(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId, TensorError> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        let d = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != d {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: sx,
                rhs: sb,
            });
        }
        let bdata = self.value(bias).data().to_vec();
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(&bdata).map(|(&v, &b)| v + b))
            .collect();
        let out = Tensor::new(sx, data)?;
        self.push(Op::AddRow { x, bias }, out, "add_row")
    }

    pub fn log(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let data: Vec<T> = self.value(x).data().iter().map(|v| v.ln()).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(Op::Log { x }, out, "log")
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let data: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(Op::Relu { x }, out, "relu")
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let data: Vec<T> = self.value(x).data().iter().map(|&v| kernels::gelu(v)).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(Op::Gelu { x }, out, "gelu")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| TensorError::InvalidShape {
            op: "softmax",
            shape: shape.clone(),
            reason: "rank must be >= 1".into(),
        })?;
        let mut data = self.value(x).data().to_vec();
        kernels::softmax_rows(&mut data, cols);
        let out = Tensor::new(shape, data)?;
        self.push(Op::Softmax { x }, out, "softmax")
    }

    /// Layer normalization over the last axis, then `gamma * xhat + beta`.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| TensorError::InvalidShape {
            op: "layer_norm",
            shape: shape.clone(),
            reason: "rank must be >= 1".into(),
        })?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let epsilon = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let mut data = Vec::with_capacity(self.value(x).numel());
        for row in self.value(x).data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                / dn;
            let inv_std = T::one() / (var + epsilon).sqrt();
            for j in 0..d {
                data.push((row[j] - mean) * inv_std * g[j] + b[j]);
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
            out,
            "layer_norm",
        )
    }

    /// 1-D convolution: `x [n, c_in, len]`, `w [c_out, c_in, kw]`, `b [c_out]`.
    pub fn conv1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        padding: Padding,
    ) -> Result<TensorId, TensorError> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (n, c_in, len) = (sx[0], sx[1], sx[2]);
        let (c_out, kw) = (sw[0], sw[2]);
        if self.shape(b) != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: sw,
                rhs: self.shape(b).to_vec(),
            });
        }
        if padding == Padding::Same && kw % 2 == 0 {
            return Err(TensorError::InvalidShape {
                op: "conv1d",
                shape: sw,
                reason: "same padding requires an odd kernel width".into(),
            });
        }
        let (pad, out_len) = match padding {
            Padding::Same => ((kw - 1) / 2, len),
            Padding::Valid => {
                if len < kw {
                    return Err(TensorError::InvalidShape {
                        op: "conv1d",
                        shape: sx,
                        reason: format!("input length {len} shorter than kernel {kw}"),
                    });
                }
                (0, len - kw + 1)
            }
        };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut data = vec![T::zero(); n * c_out * out_len];
        for ni in 0..n {
            for co in 0..c_out {
                let orow = &mut data[(ni * c_out + co) * out_len..(ni * c_out + co + 1) * out_len];
                for l in 0..out_len {
                    let mut acc = bv[co];
                    for ci in 0..c_in {
                        let xrow = &xv[(ni * c_in + ci) * len..(ni * c_in + ci + 1) * len];
                        let wrow = &wv[(co * c_in + ci) * kw..(co * c_in + ci + 1) * kw];
                        for t in 0..kw {
                            let src = l + t;
                            if src >= pad && src - pad < len {
                                acc += wrow[t] * xrow[src - pad];
                            }
                        }
                    }
                    orow[l] = acc;
                }
            }
        }
        let out = Tensor::new(vec![n, c_out, out_len], data)?;
        self.push(Op::Conv1d { x, w, b, padding }, out, "conv1d")
    }

    /// Row lookup: `table [v, d]`, `ids` -> `[ids.len(), d]`.
    pub fn embedding(
        &mut self,
        table: TensorId,
        ids: Arc<Vec<usize>>,
    ) -> Result<TensorId, TensorError> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "embedding",
                shape: st,
                reason: "table must be 2-D".into(),
            });
        }
        let (v, d) = (st[0], st[1]);
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids.iter() {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    size: v,
                });
            }
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        self.push(Op::Embedding { table, ids }, out, "embedding")
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat",
            shape: vec![],
            reason: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: base,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let mut data = vec![T::zero(); outer * axis_total * inner];
        let mut offset = 0usize;
        for &p in parts {
            let alen = self.shape(p)[axis];
            let pv = self.value(p).data();
            for o in 0..outer {
                let dst = (o * axis_total + offset) * inner;
                let src = o * alen * inner;
                data[dst..dst + alen * inner].copy_from_slice(&pv[src..src + alen * inner]);
            }
            offset += alen;
        }
        let out = Tensor::new(out_shape, data)?;
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            out,
            "concat",
        )
    }

    /// Take `[start, start+len)` along `axis`.
    pub fn slice(
        &mut self,
        x: TensorId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::InvalidShape {
                op: "slice",
                shape,
                reason: format!("range {start}..{} on axis {axis}", start + len),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let alen = shape[axis];
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src = (o * alen + start) * inner;
            let dst = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&xv[src..src + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        self.push(
            Op::Slice {
                x,
                axis,
                start,
                len,
            },
            out,
            "slice",
        )
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Op::Sum { x }, Tensor::scalar(s), "sum")
    }

    /// Arithmetic mean of all elements.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TensorError::InvalidShape {
                op: "mean",
                shape: self.shape(x).to_vec(),
                reason: "empty tensor".into(),
            });
        }
        let s: T = self.value(x).data().iter().copied().sum();
        let out = Tensor::scalar(s / T::from_f64(n as f64));
        self.push(Op::Mean { x }, out, "mean")
    }

    /// Same data, new shape (element counts must match).
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        let out = self.value(x).reshaped(shape)?;
        self.push(Op::Reshape { x }, out, "reshape")
    }

    /// Swap the last two axes of a rank >= 2 tensor.
    pub fn transpose_last2(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose_last2",
                shape,
                reason: "rank must be >= 2".into(),
            });
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch: usize = shape[..shape.len() - 2].iter().product();
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); xv.len()];
        for bi in 0..batch {
            let src = &xv[bi * r * c..(bi + 1) * r * c];
            let dst = &mut data[bi * r * c..(bi + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut out_shape = shape;
        let n = out_shape.len();
        out_shape.swap(n - 2, n - 1);
        let out = Tensor::new(out_shape, data)?;
        self.push(Op::TransposeLast2 { x }, out, "transpose_last2")
    }

    /// `[batch*seq, heads*head_dim] -> [batch*heads, seq, head_dim]`.
    pub fn split_heads(
        &mut self,
        x: TensorId,
        batch: usize,
        seq: usize,
        heads: usize,
        head_dim: usize,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape != [batch * seq, heads * head_dim] {
            return Err(TensorError::InvalidShape {
                op: "split_heads",
                shape,
                reason: format!("expected [{}x{}, {}x{}]", batch, seq, heads, head_dim),
            });
        }
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); xv.len()];
        for bi in 0..batch {
            for si in 0..seq {
                for h in 0..heads {
                    let src = (bi * seq + si) * heads * head_dim + h * head_dim;
                    let dst = ((bi * heads + h) * seq + si) * head_dim;
                    data[dst..dst + head_dim].copy_from_slice(&xv[src..src + head_dim]);
                }
            }
        }
        let out = Tensor::new(vec![batch * heads, seq, head_dim], data)?;
        self.push(
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
                head_dim,
            },
            out,
            "split_heads",
        )
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(
        &mut self,
        x: TensorId,
        batch: usize,
        seq: usize,
        heads: usize,
        head_dim: usize,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape != [batch * heads, seq, head_dim] {
            return Err(TensorError::InvalidShape {
                op: "merge_heads",
                shape,
                reason: format!("expected [{}x{}, {}, {}]", batch, heads, seq, head_dim),
            });
        }
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); xv.len()];
        for bi in 0..batch {
            for si in 0..seq {
                for h in 0..heads {
                    let src = ((bi * heads + h) * seq + si) * head_dim;
                    let dst = (bi * seq + si) * heads * head_dim + h * head_dim;
                    data[dst..dst + head_dim].copy_from_slice(&xv[src..src + head_dim]);
                }
            }
        }
        let out = Tensor::new(vec![batch * seq, heads * head_dim], data)?;
        self.push(
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
                head_dim,
            },
            out,
            "merge_heads",
        )
    }

    /// `[b, d] -> [b*times, d]`, each row repeated `times` consecutive times.
    pub fn repeat_rows(&mut self, x: TensorId, times: usize) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || times == 0 {
            return Err(TensorError::InvalidShape {
                op: "repeat_rows",
                shape,
                reason: "needs a 2-D input and times >= 1".into(),
            });
        }
        let (b, d) = (shape[0], shape[1]);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(b * times * d);
        for bi in 0..b {
            for _ in 0..times {
                data.extend_from_slice(&xv[bi * d..(bi + 1) * d]);
            }
        }
        let out = Tensor::new(vec![b * times, d], data)?;
        self.push(Op::RepeatRows { x, times }, out, "repeat_rows")
    }

    /// Scaled dot-product attention over batched sequences.
    ///
    /// `q [b, lq, dk]`, `k [b, lk, dk]`, `v [b, lk, dv]`; `mask` has
    /// `b * lk` entries, `false` marking keys excluded from every query
    /// (their logits become -inf before the softmax). A query whose keys
    /// are all masked yields a zero context row and is counted in
    /// [`Graph::masked_attention_rows`].
    pub fn attention(
        &mut self,
        q: TensorId,
        k: TensorId,
        v: TensorId,
        mask: Arc<Vec<bool>>,
    ) -> Result<TensorId, TensorError> {
        let (sq, sk, sv) = (
            self.shape(q).to_vec(),
            self.shape(k).to_vec(),
            self.shape(v).to_vec(),
        );
        if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "attention",
                shape: sq,
                reason: "q, k, v must be 3-D".into(),
            });
        }
        if sq[0] != sk[0] || sq[0] != sv[0] || sq[2] != sk[2] || sk[1] != sv[1] {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: sq,
                rhs: sk,
            });
        }
        let (b, lq, dk) = (sq[0], sq[1], sq[2]);
        let (lk, dv) = (sk[1], sv[2]);
        if mask.len() != b * lk {
            return Err(TensorError::InvalidShape {
                op: "attention",
                shape: vec![mask.len()],
                reason: format!("mask needs {} entries", b * lk),
            });
        }
        let scale = T::from_f64(1.0 / (dk as f64).sqrt());
        let qv = self.value(q).data();
        let kv = self.value(k).data();
        let vv = self.value(v).data();

        let mut weights = vec![T::zero(); b * lq * lk];
        let mut data = vec![T::zero(); b * lq * dv];
        let masked_rows: u64 = weights
            .par_chunks_mut(lq * lk)
            .zip(data.par_chunks_mut(lq * dv))
            .enumerate()
            .map(|(bi, (wslice, oslice))| {
                let qb = &qv[bi * lq * dk..(bi + 1) * lq * dk];
                let kb = &kv[bi * lk * dk..(bi + 1) * lk * dk];
                let vb = &vv[bi * lk * dv..(bi + 1) * lk * dv];
                let mb = &mask[bi * lk..(bi + 1) * lk];
                for i in 0..lq {
                    let qrow = &qb[i * dk..(i + 1) * dk];
                    let wrow = &mut wslice[i * lk..(i + 1) * lk];
                    for j in 0..lk {
                        wrow[j] = if mb[j] {
                            kernels::dot(qrow, &kb[j * dk..(j + 1) * dk]) * scale
                        } else {
                            T::neg_infinity()
                        };
                    }
                }
                let degenerate = kernels::softmax_rows(wslice, lk);
                for i in 0..lq {
                    let wrow = &wslice[i * lk..(i + 1) * lk];
                    let orow = &mut oslice[i * dv..(i + 1) * dv];
                    for j in 0..lk {
                        let w = wrow[j];
                        if w != T::zero() {
                            let vrow = &vb[j * dv..(j + 1) * dv];
                            for dd in 0..dv {
                                orow[dd] += w * vrow[dd];
                            }
                        }
                    }
                }
                degenerate
            })
            .sum();
        self.masked_attention_rows += masked_rows;
        let out = Tensor::new(vec![b, lq, dv], data)?;
        self.push(
            Op::Attention {
                q,
                k,
                v,
                mask,
                weights,
            },
            out,
            "attention",
        )
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Leaves never reached by the
    /// sweep report zero gradients.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients<T>, TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_op(idx, &g, &mut grads);
            // Leaf gradients must survive until collection.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        let mut names = Vec::with_capacity(self.leaves.len());
        let mut out = Vec::with_capacity(self.leaves.len());
        for (name, id) in &self.leaves {
            names.push(name.clone());
            let shape = self.shape(*id).to_vec();
            let data = grads[id.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); self.value(*id).numel()]);
            out.push(Tensor::new(shape, data)?);
        }
        Ok(Gradients { names, grads: out })
    }

    fn accumulate(grads: &mut [Option<Vec<T>>], id: TensorId, delta: &[T]) {
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e += *d;
                }
            }
            None => grads[id.0] = Some(delta.to_vec()),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn backward_op(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}

            Op::MatMul { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // da = g @ b^T ; packed rhs is b itself.
                let da = kernels::matmul_packed(g, self.value(*b).data(), m, n, k);
                // db = a^T @ g ; pack both transposes.
                let at = kernels::transpose(self.value(*a).data(), m, k);
                let gt = kernels::transpose(g, m, n);
                let db = kernels::matmul_packed(&at, &gt, k, m, n);
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *b, &db);
            }

            Op::Add { a, b } => {
                Self::accumulate(grads, *a, g);
                Self::accumulate(grads, *b, g);
            }

            Op::Sub { a, b } => {
                Self::accumulate(grads, *a, g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                Self::accumulate(grads, *b, &neg);
            }

            Op::Mul { a, b } => {
                let da: Vec<T> = g
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                let db: Vec<T> = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *b, &db);
            }

            Op::Scale { x, c } => {
                let dx: Vec<T> = g.iter().map(|&v| v * *c).collect();
                Self::accumulate(grads, *x, &dx);
            }

            Op::AddRow { x, bias } => {
                Self::accumulate(grads, *x, g);
                let d = self.value(*bias).numel();
                let mut db = vec![T::zero(); d];
                for row in g.chunks(d) {
                    for j in 0..d {
                        db[j] += row[j];
                    }
                }
                Self::accumulate(grads, *bias, &db);
            }

            Op::Log { x } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| gv / xv)
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }

            Op::Relu { x } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }

            Op::Gelu { x } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| gv * kernels::gelu_grad(xv))
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }

            Op::Softmax { x } => {
                let s = self.nodes[idx].out.data();
                let cols = *self.shape(*x).last().unwrap();
                let mut dx = vec![T::zero(); s.len()];
                for ((srow, grow), drow) in s
                    .chunks(cols)
                    .zip(g.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                {
                    let dot: T = srow.iter().zip(grow).map(|(&sv, &gv)| sv * gv).sum();
                    for j in 0..cols {
                        drow[j] = srow[j] * (grow[j] - dot);
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }

            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let d = *self.shape(*x).last().unwrap();
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let epsilon = T::from_f64(*eps);
                let dn = T::from_f64(d as f64);
                let mut dx = vec![T::zero(); xv.len()];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for (ri, (row, grow)) in xv.chunks(d).zip(g.chunks(d)).enumerate() {
                    let mean = row.iter().copied().sum::<T>() / dn;
                    let var = row
                        .iter()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<T>()
                        / dn;
                    let inv_std = T::one() / (var + epsilon).sqrt();
                    let mut sum_dxhat = T::zero();
                    let mut sum_dxhat_xhat = T::zero();
                    let mut xhat = vec![T::zero(); d];
                    let mut dxhat = vec![T::zero(); d];
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * inv_std;
                        dxhat[j] = grow[j] * gv[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        sum_dxhat += dxhat[j];
                        sum_dxhat_xhat += dxhat[j] * xhat[j];
                    }
                    let drow = &mut dx[ri * d..(ri + 1) * d];
                    for j in 0..d {
                        drow[j] = inv_std / dn
                            * (dn * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                Self::accumulate(grads, *x, &dx);
                Self::accumulate(grads, *gamma, &dgamma);
                Self::accumulate(grads, *beta, &dbeta);
            }

            Op::Conv1d { x, w, b, padding } => {
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let (n, c_in, len) = (sx[0], sx[1], sx[2]);
                let (c_out, kw) = (sw[0], sw[2]);
                let pad = match padding {
                    Padding::Same => (kw - 1) / 2,
                    Padding::Valid => 0,
                };
                let out_len = self.shape(TensorId(idx))[2];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dx = vec![T::zero(); xv.len()];
                let mut dw = vec![T::zero(); wv.len()];
                let mut db = vec![T::zero(); c_out];
                for ni in 0..n {
                    for co in 0..c_out {
                        let grow = &g[(ni * c_out + co) * out_len..(ni * c_out + co + 1) * out_len];
                        for l in 0..out_len {
                            let gv = grow[l];
                            db[co] += gv;
                            for ci in 0..c_in {
                                for t in 0..kw {
                                    let src = l + t;
                                    if src >= pad && src - pad < len {
                                        let xi = (ni * c_in + ci) * len + (src - pad);
                                        let wi = (co * c_in + ci) * kw + t;
                                        dx[xi] += gv * wv[wi];
                                        dw[wi] += gv * xv[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                Self::accumulate(grads, *x, &dx);
                Self::accumulate(grads, *w, &dw);
                Self::accumulate(grads, *b, &db);
            }

            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let mut dt = vec![T::zero(); self.value(*table).numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[r * d + j];
                    }
                }
                Self::accumulate(grads, *table, &dt);
            }

            Op::Concat { parts, axis } => {
                let out_shape = self.shape(TensorId(idx)).to_vec();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0usize;
                for &p in parts {
                    let alen = self.shape(p)[*axis];
                    let mut dp = vec![T::zero(); self.value(p).numel()];
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * alen * inner;
                        dp[dst..dst + alen * inner]
                            .copy_from_slice(&g[src..src + alen * inner]);
                    }
                    Self::accumulate(grads, p, &dp);
                    offset += alen;
                }
            }

            Op::Slice {
                x,
                axis,
                start,
                len,
            } => {
                let shape = self.shape(*x).to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let alen = shape[*axis];
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for o in 0..outer {
                    let dst = (o * alen + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                Self::accumulate(grads, *x, &dx);
            }

            Op::Sum { x } => {
                let dx = vec![g[0]; self.value(*x).numel()];
                Self::accumulate(grads, *x, &dx);
            }

            Op::Mean { x } => {
                let n = self.value(*x).numel();
                let dx = vec![g[0] / T::from_f64(n as f64); n];
                Self::accumulate(grads, *x, &dx);
            }

            Op::Reshape { x } => {
                Self::accumulate(grads, *x, g);
            }

            Op::TransposeLast2 { x } => {
                let shape = self.shape(TensorId(idx)).to_vec();
                let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let batch: usize = shape[..shape.len() - 2].iter().product();
                let mut dx = vec![T::zero(); g.len()];
                for bi in 0..batch {
                    let src = &g[bi * r * c..(bi + 1) * r * c];
                    let dst = &mut dx[bi * r * c..(bi + 1) * r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dst[j * r + i] = src[i * c + j];
                        }
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }

            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
                head_dim,
            } => {
                let mut dx = vec![T::zero(); g.len()];
                for bi in 0..*batch {
                    for si in 0..*seq {
                        for h in 0..*heads {
                            let dst = (bi * seq + si) * heads * head_dim + h * head_dim;
                            let src = ((bi * heads + h) * seq + si) * head_dim;
                            dx[dst..dst + head_dim].copy_from_slice(&g[src..src + head_dim]);
                        }
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }

            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
                head_dim,
            } => {
                let mut dx = vec![T::zero(); g.len()];
                for bi in 0..*batch {
                    for si in 0..*seq {
                        for h in 0..*heads {
                            let dst = ((bi * heads + h) * seq + si) * head_dim;
                            let src = (bi * seq + si) * heads * head_dim + h * head_dim;
                            dx[dst..dst + head_dim].copy_from_slice(&g[src..src + head_dim]);
                        }
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }

            Op::RepeatRows { x, times } => {
                let d = self.shape(*x)[1];
                let b = self.shape(*x)[0];
                let mut dx = vec![T::zero(); b * d];
                for bi in 0..b {
                    for rep in 0..*times {
                        let src = &g[(bi * times + rep) * d..(bi * times + rep + 1) * d];
                        let dst = &mut dx[bi * d..(bi + 1) * d];
                        for j in 0..d {
                            dst[j] += src[j];
                        }
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }

            Op::Attention {
                q,
                k,
                v,
                mask,
                weights,
            } => {
                debug_assert_eq!(mask.len(), self.shape(*k)[0] * self.shape(*k)[1]);
                let sq = self.shape(*q);
                let sv = self.shape(*v);
                let (_b, lq, dk) = (sq[0], sq[1], sq[2]);
                let (lk, dv) = (self.shape(*k)[1], sv[2]);
                let scale = T::from_f64(1.0 / (dk as f64).sqrt());
                let qv = self.value(*q).data();
                let kv = self.value(*k).data();
                let vv = self.value(*v).data();
                let mut dq = vec![T::zero(); qv.len()];
                let mut dkk = vec![T::zero(); kv.len()];
                let mut dvv = vec![T::zero(); vv.len()];
                dq.par_chunks_mut(lq * dk)
                    .zip(dkk.par_chunks_mut(lk * dk))
                    .zip(dvv.par_chunks_mut(lk * dv))
                    .enumerate()
                    .for_each(|(bi, ((dqb, dkb), dvb))| {
                        let qb = &qv[bi * lq * dk..(bi + 1) * lq * dk];
                        let kb = &kv[bi * lk * dk..(bi + 1) * lk * dk];
                        let vb = &vv[bi * lk * dv..(bi + 1) * lk * dv];
                        let wb = &weights[bi * lq * lk..(bi + 1) * lq * lk];
                        let gb = &g[bi * lq * dv..(bi + 1) * lq * dv];
                        for i in 0..lq {
                            let grow = &gb[i * dv..(i + 1) * dv];
                            let wrow = &wb[i * lk..(i + 1) * lk];
                            // dW then softmax backward to dS (row-wise).
                            let mut dw = vec![T::zero(); lk];
                            for j in 0..lk {
                                if wrow[j] != T::zero() {
                                    dw[j] = kernels::dot(grow, &vb[j * dv..(j + 1) * dv]);
                                }
                            }
                            let dot: T =
                                dw.iter().zip(wrow).map(|(&dwj, &wj)| dwj * wj).sum();
                            for j in 0..lk {
                                let ds = wrow[j] * (dw[j] - dot) * scale;
                                if ds != T::zero() {
                                    let qrow = &qb[i * dk..(i + 1) * dk];
                                    let krow = &kb[j * dk..(j + 1) * dk];
                                    let dqi = &mut dqb[i * dk..(i + 1) * dk];
                                    for dd in 0..dk {
                                        dqi[dd] += ds * krow[dd];
                                    }
                                    let dkij = &mut dkb[j * dk..(j + 1) * dk];
                                    for dd in 0..dk {
                                        dkij[dd] += ds * qrow[dd];
                                    }
                                }
                                if wrow[j] != T::zero() {
                                    let dvj = &mut dvb[j * dv..(j + 1) * dv];
                                    for dd in 0..dv {
                                        dvj[dd] += wrow[j] * grow[dd];
                                    }
                                }
                            }
                        }
                    });
                Self::accumulate(grads, *q, &dq);
                Self::accumulate(grads, *k, &dkk);
                Self::accumulate(grads, *v, &dvv);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_preserves_input() {
        let mut g = Graph::<f64>::new();
        let eye = g.input(
            Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
        );
        let a_data: Vec<f64> = (0..9).map(|i| i as f64 * 0.7 - 2.0).collect();
        let a = g.input(Tensor::new(vec![3, 3], a_data.clone()).unwrap());
        let c = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(c).data(), &a_data[..]);
    }

    #[test]
    fn softmax_uniform_logits() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![0.0; 4]));
        let s = g.softmax(x).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_gradient() {
        // loss = sum(w .* w), w = [1, -2] -> grad [2, -4]
        let mut g = Graph::<f64>::new();
        let w = g.parameter("w", Tensor::from_vec(vec![1.0, -2.0]));
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn softmax_cross_entropy_uniform_logits_has_zero_mean_grad() {
        // loss = -log(softmax(x)[0]) at uniform logits; grad = p - onehot,
        // which sums to zero.
        let mut g = Graph::<f64>::new();
        let x = g.parameter("x", Tensor::from_vec(vec![0.3; 5]));
        let p = g.softmax(x).unwrap();
        let logp = g.log(p).unwrap();
        let onehot = g.input(Tensor::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0]));
        let picked = g.mul(logp, onehot).unwrap();
        let s = g.sum(picked).unwrap();
        let loss = g.scale(s, -1.0).unwrap();
        let grads = g.backward(loss).unwrap();
        let gx = grads.get("x").unwrap();
        let mean: f64 = gx.data().iter().sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12);
        assert!((gx.data()[0] - (0.2 - 1.0)).abs() < 1e-12);
        assert!((gx.data()[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn conv1d_averaging_kernel_constant_interior() {
        // A constant signal convolved with an averaging kernel stays
        // constant away from the zero-padded edges; hand-evaluating the
        // convolution sum gives 5 * (1/3) = 5/3 at the edges.
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(vec![1, 1, 5], vec![5.0; 5]).unwrap());
        let w = g.input(Tensor::new(vec![1, 1, 3], vec![1.0 / 3.0; 3]).unwrap());
        let b = g.input(Tensor::from_vec(vec![0.0]));
        let y = g.conv1d(x, w, b, Padding::Same).unwrap();
        let out = g.value(y).data();
        for &v in &out[1..4] {
            assert!((v - 5.0).abs() < 1e-12);
        }
        assert!((out[0] - 5.0 * 2.0 / 3.0).abs() < 1e-12);
        assert!((out[4] - 5.0 * 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_error_names_op_and_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros(vec![2, 3]));
        let b = g.input(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let g = {
            let mut g = Graph::<f32>::new();
            g.input(Tensor::zeros(vec![2]));
            g
        };
        let err = g.backward(TensorId(0)).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let w = g.parameter("w", Tensor::from_vec(vec![1.0, 2.0]));
        let u = g.parameter("unused", Tensor::from_vec(vec![3.0]));
        let _ = u;
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0]);
    }

    #[test]
    fn attention_single_unmasked_key_returns_its_value_row() {
        let mut g = Graph::<f64>::new();
        let q = g.input(Tensor::new(vec![1, 1, 2], vec![0.3, -0.7]).unwrap());
        let k = g.input(Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, -1.0, 0.5, 9.0, 9.0]).unwrap());
        let v = g.input(Tensor::new(vec![1, 3, 2], vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]).unwrap());
        let mask = Arc::new(vec![false, true, false]);
        let out = g.attention(q, k, v, mask).unwrap();
        assert_eq!(g.value(out).data(), &[30.0, 40.0]);
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let mut g = Graph::<f64>::new();
        let q = g.input(Tensor::new(vec![1, 1, 2], vec![5.0, -3.0]).unwrap());
        let k = g.input(Tensor::new(vec![1, 2, 2], vec![0.4, 0.6, 0.4, 0.6]).unwrap());
        let v = g.input(Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let mask = Arc::new(vec![true, true]);
        let out = g.attention(q, k, v, mask).unwrap();
        let d = g.value(out).data();
        assert!((d[0] - 3.0).abs() < 1e-12);
        assert!((d[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn attention_all_masked_row_is_zero_and_counted() {
        let mut g = Graph::<f64>::new();
        let q = g.input(Tensor::new(vec![1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let k = g.input(Tensor::new(vec![1, 2, 2], vec![1.0; 4]).unwrap());
        let v = g.input(Tensor::new(vec![1, 2, 2], vec![1.0; 4]).unwrap());
        let mask = Arc::new(vec![false, false]);
        let out = g.attention(q, k, v, mask).unwrap();
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
        assert_eq!(g.masked_attention_rows(), 2);
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let data: Vec<f32> = (0..24).map(|i| (i as f32 * 0.37).sin()).collect();
            let w = g.parameter("w", Tensor::new(vec![4, 6], data).unwrap());
            let x = g.input(Tensor::new(vec![6, 3], vec![0.5; 18]).unwrap());
            let y = g.matmul(w, x).unwrap();
            let act = g.gelu(y).unwrap();
            let loss = g.mean(act).unwrap();
            let grads = g.backward(loss).unwrap();
            grads.get("w").unwrap().data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn nan_output_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![-1.0]));
        let err = g.log(x).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "log" }));
    }

    #[test]
    fn embedding_out_of_range_id() {
        let mut g = Graph::<f32>::new();
        let t = g.input(Tensor::zeros(vec![4, 2]));
        let err = g.embedding(t, Arc::new(vec![5])).unwrap_err();
        assert!(err.to_string().contains("index 5"));
    }
}
