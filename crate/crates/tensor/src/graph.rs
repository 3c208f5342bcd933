//! The autodiff tape. Operations execute eagerly, record their inputs, and
//! `backward` replays the records in reverse creation order, which is always
//! a valid topological order because ops can only reference earlier nodes.

use std::rc::Rc;

use crate::error::TensorError;
use crate::param::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{check_finite, layer_norm_stats, Tensor};

/// Handle to a value recorded on a [`Graph`]. Only meaningful for the graph
/// that issued it.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Constant,
    Param(ParamId),
    /// 2-D product `a[m,k] . b[k,n]`.
    Matmul { a: usize, b: usize },
    /// Batched `a[bt,p,k] . b[bt,q,k]^T -> [bt,p,q]`.
    BmmNt { a: usize, b: usize },
    /// Batched `a[bt,p,q] . b[bt,q,k] -> [bt,p,k]`.
    BmmNn { a: usize, b: usize },
    Add { a: usize, b: usize },
    /// `v` is a vector broadcast over the rows of `a`.
    AddVec { a: usize, v: usize },
    Mul { a: usize, b: usize },
    MulVec { a: usize, v: usize },
    Relu { a: usize },
    Sigmoid { a: usize },
    /// Multiply by a compile-time-known constant, e.g. `1/sqrt(d_head)`.
    Scale { a: usize, c: f64 },
    /// Row softmax over the last axis. The mask only shapes the forward
    /// value: masked outputs are exactly zero, so the row Jacobian needs no
    /// record of which positions were dropped.
    SoftmaxRows { a: usize },
    /// Row-wise `(x - mean) / sqrt(var + LN_EPS)`.
    NormalizeRows { a: usize },
    Gather { table: usize, idx: Rc<Vec<usize>> },
    ConcatLast { parts: Vec<usize> },
    Reshape { a: usize },
    SliceCols { a: usize, start: usize, width: usize },
    SumLast { a: usize },
    SumAll { a: usize },
    /// Mean over elements of the numerically stable binary cross entropy
    /// `max(z,0) - z*y + ln(1 + exp(-|z|))`.
    BceLogits { logits: usize, labels: usize },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node. Panics if `id` came from a different graph
    /// and is out of range; use `backward` for a checked entry point.
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>, TensorError> {
        self.nodes.get(id.0).ok_or(TensorError::UnknownNode { id: id.0 })
    }

    fn emit(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op,
        needs_grad: bool,
    ) -> Result<NodeId, TensorError> {
        check_finite(op_name, &data)?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            needs_grad,
        });
        Ok(id)
    }

    /// Records a value that participates in the computation but receives no
    /// gradient (inputs, labels, masks baked into values).
    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: t,
            op: Op::Constant,
            needs_grad: false,
        });
        id
    }

    /// Leases a parameter's current value onto the tape. `backward`
    /// accumulates the leaf's gradient back into the store, so the same
    /// parameter may be leased any number of times per graph.
    pub fn param(&mut self, store: &ParamStore<T>, p: ParamId) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: store.value(p).clone(),
            op: Op::Param(p),
            needs_grad: true,
        });
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (an, bn) = (self.node(a)?, self.node(b)?);
        let (ash, bsh) = (an.value.shape(), bn.value.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ash.to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut out = vec![T::zero(); m * n];
        mm_nn(an.value.data(), bn.value.data(), m, k, n, &mut out);
        let needs = an.needs_grad || bn.needs_grad;
        self.emit("matmul", vec![m, n], out, Op::Matmul { a: a.0, b: b.0 }, needs)
    }

    pub fn bmm_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (an, bn) = (self.node(a)?, self.node(b)?);
        let (ash, bsh) = (an.value.shape(), bn.value.shape());
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] || ash[2] != bsh[2] {
            return Err(TensorError::ShapeMismatch {
                op: "bmm_nt",
                lhs: ash.to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let (bt, p, k, q) = (ash[0], ash[1], ash[2], bsh[1]);
        let mut out = vec![T::zero(); bt * p * q];
        for i in 0..bt {
            mm_nt(
                &an.value.data()[i * p * k..(i + 1) * p * k],
                &bn.value.data()[i * q * k..(i + 1) * q * k],
                p,
                k,
                q,
                &mut out[i * p * q..(i + 1) * p * q],
            );
        }
        let needs = an.needs_grad || bn.needs_grad;
        self.emit("bmm_nt", vec![bt, p, q], out, Op::BmmNt { a: a.0, b: b.0 }, needs)
    }

    pub fn bmm_nn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (an, bn) = (self.node(a)?, self.node(b)?);
        let (ash, bsh) = (an.value.shape(), bn.value.shape());
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] || ash[2] != bsh[1] {
            return Err(TensorError::ShapeMismatch {
                op: "bmm_nn",
                lhs: ash.to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let (bt, p, q, k) = (ash[0], ash[1], ash[2], bsh[2]);
        let mut out = vec![T::zero(); bt * p * k];
        for i in 0..bt {
            mm_nn(
                &an.value.data()[i * p * q..(i + 1) * p * q],
                &bn.value.data()[i * q * k..(i + 1) * q * k],
                p,
                q,
                k,
                &mut out[i * p * k..(i + 1) * p * k],
            );
        }
        let needs = an.needs_grad || bn.needs_grad;
        self.emit("bmm_nn", vec![bt, p, k], out, Op::BmmNn { a: a.0, b: b.0 }, needs)
    }

    /// Elementwise sum. Also accepts a rank-1 `b` matching `a`'s trailing
    /// dimension, broadcast over rows; this is the only broadcast form.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (an, bn) = (self.node(a)?, self.node(b)?);
        let needs = an.needs_grad || bn.needs_grad;
        if an.value.shape() == bn.value.shape() {
            let out: Vec<T> = an
                .value
                .data()
                .iter()
                .zip(bn.value.data())
                .map(|(&x, &y)| x + y)
                .collect();
            let shape = an.value.shape().to_vec();
            return self.emit("add", shape, out, Op::Add { a: a.0, b: b.0 }, needs);
        }
        if bn.value.rank() == 1 && bn.value.numel() == an.value.last_dim() {
            let d = an.value.last_dim();
            let v = bn.value.data();
            let out: Vec<T> = an
                .value
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + v[i % d])
                .collect();
            let shape = an.value.shape().to_vec();
            return self.emit("add", shape, out, Op::AddVec { a: a.0, v: b.0 }, needs);
        }
        Err(TensorError::ShapeMismatch {
            op: "add",
            lhs: an.value.shape().to_vec(),
            rhs: bn.value.shape().to_vec(),
        })
    }

    /// Elementwise product, with the same trailing-vector broadcast as `add`.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (an, bn) = (self.node(a)?, self.node(b)?);
        let needs = an.needs_grad || bn.needs_grad;
        if an.value.shape() == bn.value.shape() {
            let out: Vec<T> = an
                .value
                .data()
                .iter()
                .zip(bn.value.data())
                .map(|(&x, &y)| x * y)
                .collect();
            let shape = an.value.shape().to_vec();
            return self.emit("mul", shape, out, Op::Mul { a: a.0, b: b.0 }, needs);
        }
        if bn.value.rank() == 1 && bn.value.numel() == an.value.last_dim() {
            let d = an.value.last_dim();
            let v = bn.value.data();
            let out: Vec<T> = an
                .value
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x * v[i % d])
                .collect();
            let shape = an.value.shape().to_vec();
            return self.emit("mul", shape, out, Op::MulVec { a: a.0, v: b.0 }, needs);
        }
        Err(TensorError::ShapeMismatch {
            op: "mul",
            lhs: an.value.shape().to_vec(),
            rhs: bn.value.shape().to_vec(),
        })
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        let out: Vec<T> = an
            .value
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let shape = an.value.shape().to_vec();
        let needs = an.needs_grad;
        self.emit("relu", shape, out, Op::Relu { a: a.0 }, needs)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        let out: Vec<T> = an.value.data().iter().map(|&x| sigmoid_scalar(x)).collect();
        let shape = an.value.shape().to_vec();
        let needs = an.needs_grad;
        self.emit("sigmoid", shape, out, Op::Sigmoid { a: a.0 }, needs)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        let cv = T::of(c);
        let out: Vec<T> = an.value.data().iter().map(|&x| x * cv).collect();
        let shape = an.value.shape().to_vec();
        let needs = an.needs_grad;
        self.emit("scale", shape, out, Op::Scale { a: a.0, c }, needs)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.softmax_impl(a, None)
    }

    /// Softmax over the last axis where only positions with `mask == true`
    /// participate; masked outputs are exactly zero. A row with no unmasked
    /// entry is an error that names the row.
    pub fn softmax_masked(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        if mask.len() != an.value.numel() {
            return Err(TensorError::BadShape {
                op: "softmax_masked",
                detail: format!(
                    "mask length {} does not match {} values",
                    mask.len(),
                    an.value.numel()
                ),
            });
        }
        self.softmax_impl(a, Some(mask))
    }

    fn softmax_impl(&mut self, a: NodeId, mask: Option<&[bool]>) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        let d = an.value.last_dim();
        let rows = an.value.rows();
        let x = an.value.data();
        let mut out = vec![T::zero(); x.len()];
        for r in 0..rows {
            let base = r * d;
            let kept = |j: usize| mask.map_or(true, |m| m[base + j]);
            let mut mx: Option<T> = None;
            for j in 0..d {
                if kept(j) {
                    mx = Some(match mx {
                        Some(cur) if cur >= x[base + j] => cur,
                        _ => x[base + j],
                    });
                }
            }
            let Some(mx) = mx else {
                return Err(TensorError::DegenerateRow {
                    op: "softmax_masked",
                    row: r,
                });
            };
            let mut sum = T::zero();
            for j in 0..d {
                if kept(j) {
                    let e = (x[base + j] - mx).exp();
                    out[base + j] = e;
                    sum = sum + e;
                }
            }
            for j in 0..d {
                if kept(j) {
                    out[base + j] = out[base + j] / sum;
                }
            }
        }
        let shape = an.value.shape().to_vec();
        let needs = an.needs_grad;
        self.emit("softmax_masked", shape, out, Op::SoftmaxRows { a: a.0 }, needs)
    }

    /// Row-wise standardization `(x - mu) / sigma` with the shared epsilon.
    /// Affine layer-norm terms are applied by callers via `mul`/`add`.
    pub fn normalize_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        let d = an.value.last_dim();
        let rows = an.value.rows();
        let (mu, sigma) = layer_norm_stats(&an.value);
        let x = an.value.data();
        let mut out = vec![T::zero(); x.len()];
        for r in 0..rows {
            for j in 0..d {
                out[r * d + j] = (x[r * d + j] - mu[r]) / sigma[r];
            }
        }
        let shape = an.value.shape().to_vec();
        let needs = an.needs_grad;
        self.emit("normalize_rows", shape, out, Op::NormalizeRows { a: a.0 }, needs)
    }

    /// Row lookup: `out[r] = table[idx[r]]`. Backward scatter-adds into the
    /// table, so repeated indices accumulate.
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId, TensorError> {
        let tn = self.node(table)?;
        if tn.value.rank() != 2 {
            return Err(TensorError::BadShape {
                op: "gather_rows",
                detail: format!("table must be rank 2, got {:?}", tn.value.shape()),
            });
        }
        let (k, d) = (tn.value.shape()[0], tn.value.shape()[1]);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= k {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: k,
                });
            }
            out.extend_from_slice(&tn.value.data()[i * d..(i + 1) * d]);
        }
        let needs = tn.needs_grad;
        self.emit(
            "gather_rows",
            vec![idx.len(), d],
            out,
            Op::Gather {
                table: table.0,
                idx: Rc::new(idx.to_vec()),
            },
            needs,
        )
    }

    /// Concatenation along the last axis. All parts must agree on rank and
    /// leading dimensions.
    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::BadShape {
                op: "concat_last",
                detail: "no parts given".into(),
            });
        }
        let first = self.node(parts[0])?;
        let lead = first.value.shape()[..first.value.rank() - 1].to_vec();
        let rows = first.value.rows();
        let mut widths = Vec::with_capacity(parts.len());
        let mut needs = false;
        for &p in parts {
            let pn = self.node(p)?;
            if pn.value.shape()[..pn.value.rank() - 1] != lead[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    lhs: first.value.shape().to_vec(),
                    rhs: pn.value.shape().to_vec(),
                });
            }
            widths.push(pn.value.last_dim());
            needs |= pn.needs_grad;
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let pd = self.nodes[p.0].value.data();
                out.extend_from_slice(&pd[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.emit(
            "concat_last",
            shape,
            out,
            Op::ConcatLast {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            needs,
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel != an.value.numel() {
            return Err(TensorError::BadShape {
                op: "reshape",
                detail: format!(
                    "cannot view {:?} as {:?}",
                    an.value.shape(),
                    shape
                ),
            });
        }
        let data = an.value.data().to_vec();
        let needs = an.needs_grad;
        self.emit("reshape", shape.to_vec(), data, Op::Reshape { a: a.0 }, needs)
    }

    /// Columns `[start, start+width)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        if an.value.rank() != 2 {
            return Err(TensorError::BadShape {
                op: "slice_cols",
                detail: format!("input must be rank 2, got {:?}", an.value.shape()),
            });
        }
        let (r, c) = (an.value.shape()[0], an.value.shape()[1]);
        if width == 0 || start + width > c {
            return Err(TensorError::BadShape {
                op: "slice_cols",
                detail: format!("columns [{start}, {}) exceed width {c}", start + width),
            });
        }
        let x = an.value.data();
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + start + width]);
        }
        let needs = an.needs_grad;
        self.emit(
            "slice_cols",
            vec![r, width],
            out,
            Op::SliceCols { a: a.0, start, width },
            needs,
        )
    }

    /// Sum over the last axis; requires rank >= 2.
    pub fn sum_last(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        if an.value.rank() < 2 {
            return Err(TensorError::BadShape {
                op: "sum_last",
                detail: format!("input must be rank >= 2, got {:?}", an.value.shape()),
            });
        }
        let d = an.value.last_dim();
        let rows = an.value.rows();
        let x = an.value.data();
        let out: Vec<T> = (0..rows)
            .map(|r| x[r * d..(r + 1) * d].iter().copied().sum())
            .collect();
        let shape = an.value.shape()[..an.value.rank() - 1].to_vec();
        let needs = an.needs_grad;
        self.emit("sum_last", shape, out, Op::SumLast { a: a.0 }, needs)
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let an = self.node(a)?;
        let s: T = an.value.data().iter().copied().sum();
        let needs = an.needs_grad;
        self.emit("sum_all", vec![1], vec![s], Op::SumAll { a: a.0 }, needs)
    }

    /// Mean binary cross entropy from logits, computed in the stable form.
    /// `labels` must match `logits` in shape; values are expected in [0, 1].
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: NodeId) -> Result<NodeId, TensorError> {
        let (zn, yn) = (self.node(logits)?, self.node(labels)?);
        if zn.value.shape() != yn.value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: zn.value.shape().to_vec(),
                rhs: yn.value.shape().to_vec(),
            });
        }
        let n = T::of(zn.value.numel() as f64);
        let total: T = zn
            .value
            .data()
            .iter()
            .zip(yn.value.data())
            .map(|(&z, &y)| {
                let pos = if z > T::zero() { z } else { T::zero() };
                pos - z * y + (-z.abs()).exp().ln_1p()
            })
            .sum();
        let needs = zn.needs_grad || yn.needs_grad;
        self.emit(
            "bce_with_logits",
            vec![1],
            vec![total / n],
            Op::BceLogits {
                logits: logits.0,
                labels: labels.0,
            },
            needs,
        )
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate (`+=`) into
    /// every parameter reachable from the loss; forward values are left
    /// untouched, so the same graph remains readable afterwards.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        let ln = self.node(loss)?;
        if ln.value.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: ln.value.shape().to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(p) => store.accumulate(*p, &g),
                Op::Matmul { a, b } => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k, nn) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if self.nodes[*a].needs_grad {
                        let mut da = vec![T::zero(); m * k];
                        mm_nt(&g, bv.data(), m, nn, k, &mut da);
                        deposit(&self.nodes, &mut grads, *a, da);
                    }
                    if self.nodes[*b].needs_grad {
                        let mut db = vec![T::zero(); k * nn];
                        mm_tn(av.data(), &g, m, k, nn, &mut db);
                        deposit(&self.nodes, &mut grads, *b, db);
                    }
                }
                Op::BmmNt { a, b } => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (bt, p, k, q) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[1]);
                    if self.nodes[*a].needs_grad {
                        let mut da = vec![T::zero(); bt * p * k];
                        for i2 in 0..bt {
                            mm_nn(
                                &g[i2 * p * q..(i2 + 1) * p * q],
                                &bv.data()[i2 * q * k..(i2 + 1) * q * k],
                                p,
                                q,
                                k,
                                &mut da[i2 * p * k..(i2 + 1) * p * k],
                            );
                        }
                        deposit(&self.nodes, &mut grads, *a, da);
                    }
                    if self.nodes[*b].needs_grad {
                        let mut db = vec![T::zero(); bt * q * k];
                        for i2 in 0..bt {
                            mm_tn(
                                &g[i2 * p * q..(i2 + 1) * p * q],
                                &av.data()[i2 * p * k..(i2 + 1) * p * k],
                                p,
                                q,
                                k,
                                &mut db[i2 * q * k..(i2 + 1) * q * k],
                            );
                        }
                        deposit(&self.nodes, &mut grads, *b, db);
                    }
                }
                Op::BmmNn { a, b } => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (bt, p, q, k) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                    if self.nodes[*a].needs_grad {
                        let mut da = vec![T::zero(); bt * p * q];
                        for i2 in 0..bt {
                            mm_nt(
                                &g[i2 * p * k..(i2 + 1) * p * k],
                                &bv.data()[i2 * q * k..(i2 + 1) * q * k],
                                p,
                                k,
                                q,
                                &mut da[i2 * p * q..(i2 + 1) * p * q],
                            );
                        }
                        deposit(&self.nodes, &mut grads, *a, da);
                    }
                    if self.nodes[*b].needs_grad {
                        let mut db = vec![T::zero(); bt * q * k];
                        for i2 in 0..bt {
                            mm_tn(
                                &av.data()[i2 * p * q..(i2 + 1) * p * q],
                                &g[i2 * p * k..(i2 + 1) * p * k],
                                p,
                                q,
                                k,
                                &mut db[i2 * q * k..(i2 + 1) * q * k],
                            );
                        }
                        deposit(&self.nodes, &mut grads, *b, db);
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    deposit(&self.nodes, &mut grads, a, g.clone());
                    deposit(&self.nodes, &mut grads, b, g);
                }
                Op::AddVec { a, v } => {
                    let (a, v) = (*a, *v);
                    let d = self.nodes[v].value.numel();
                    if self.nodes[v].needs_grad {
                        let mut dv = vec![T::zero(); d];
                        for (i2, &gi) in g.iter().enumerate() {
                            dv[i2 % d] = dv[i2 % d] + gi;
                        }
                        deposit(&self.nodes, &mut grads, v, dv);
                    }
                    deposit(&self.nodes, &mut grads, a, g);
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        let da: Vec<T> = g
                            .iter()
                            .zip(self.nodes[b].value.data())
                            .map(|(&gi, &bi)| gi * bi)
                            .collect();
                        deposit(&self.nodes, &mut grads, a, da);
                    }
                    if self.nodes[b].needs_grad {
                        let db: Vec<T> = g
                            .iter()
                            .zip(self.nodes[a].value.data())
                            .map(|(&gi, &ai)| gi * ai)
                            .collect();
                        deposit(&self.nodes, &mut grads, b, db);
                    }
                }
                Op::MulVec { a, v } => {
                    let (a, v) = (*a, *v);
                    let d = self.nodes[v].value.numel();
                    if self.nodes[v].needs_grad {
                        let av = self.nodes[a].value.data();
                        let mut dv = vec![T::zero(); d];
                        for (i2, &gi) in g.iter().enumerate() {
                            dv[i2 % d] = dv[i2 % d] + gi * av[i2];
                        }
                        deposit(&self.nodes, &mut grads, v, dv);
                    }
                    if self.nodes[a].needs_grad {
                        let vv = self.nodes[v].value.data();
                        let da: Vec<T> = g
                            .iter()
                            .enumerate()
                            .map(|(i2, &gi)| gi * vv[i2 % d])
                            .collect();
                        deposit(&self.nodes, &mut grads, a, da);
                    }
                }
                Op::Relu { a } => {
                    let a = *a;
                    let da: Vec<T> = g
                        .iter()
                        .zip(self.nodes[a].value.data())
                        .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect();
                    deposit(&self.nodes, &mut grads, a, da);
                }
                Op::Sigmoid { a } => {
                    let a = *a;
                    let y = self.nodes[i].value.data();
                    let da: Vec<T> = g
                        .iter()
                        .zip(y)
                        .map(|(&gi, &yi)| gi * yi * (T::one() - yi))
                        .collect();
                    deposit(&self.nodes, &mut grads, a, da);
                }
                Op::Scale { a, c } => {
                    let (a, cv) = (*a, T::of(*c));
                    let da: Vec<T> = g.iter().map(|&gi| gi * cv).collect();
                    deposit(&self.nodes, &mut grads, a, da);
                }
                Op::SoftmaxRows { a } => {
                    // Masked outputs are exactly zero, so the standard row
                    // Jacobian y * (g - <g, y>) already sends them zero grad.
                    let a = *a;
                    let y = self.nodes[i].value.data();
                    let d = self.nodes[i].value.last_dim();
                    let rows = self.nodes[i].value.rows();
                    let mut da = vec![T::zero(); y.len()];
                    for r in 0..rows {
                        let base = r * d;
                        let mut dot = T::zero();
                        for j in 0..d {
                            dot = dot + g[base + j] * y[base + j];
                        }
                        for j in 0..d {
                            da[base + j] = y[base + j] * (g[base + j] - dot);
                        }
                    }
                    deposit(&self.nodes, &mut grads, a, da);
                }
                Op::NormalizeRows { a } => {
                    let a = *a;
                    let xv = &self.nodes[a].value;
                    let y = self.nodes[i].value.data();
                    let d = xv.last_dim();
                    let rows = xv.rows();
                    let dn = T::of(d as f64);
                    let (_, sigma) = layer_norm_stats(xv);
                    let mut da = vec![T::zero(); y.len()];
                    for r in 0..rows {
                        let base = r * d;
                        let mut mg = T::zero();
                        let mut mgy = T::zero();
                        for j in 0..d {
                            mg = mg + g[base + j];
                            mgy = mgy + g[base + j] * y[base + j];
                        }
                        mg = mg / dn;
                        mgy = mgy / dn;
                        for j in 0..d {
                            da[base + j] = (g[base + j] - mg - y[base + j] * mgy) / sigma[r];
                        }
                    }
                    deposit(&self.nodes, &mut grads, a, da);
                }
                Op::Gather { table, idx } => {
                    let table = *table;
                    let tv = &self.nodes[table].value;
                    let (k, d) = (tv.shape()[0], tv.shape()[1]);
                    let mut dt = vec![T::zero(); k * d];
                    for (r, &ti) in idx.iter().enumerate() {
                        for j in 0..d {
                            dt[ti * d + j] = dt[ti * d + j] + g[r * d + j];
                        }
                    }
                    deposit(&self.nodes, &mut grads, table, dt);
                }
                Op::ConcatLast { parts } => {
                    let parts = parts.clone();
                    let widths: Vec<usize> =
                        parts.iter().map(|&p| self.nodes[p].value.last_dim()).collect();
                    let total: usize = widths.iter().sum();
                    let rows = self.nodes[i].value.rows();
                    let mut offset = 0usize;
                    for (&p, &w) in parts.iter().zip(&widths) {
                        if self.nodes[p].needs_grad {
                            let mut dp = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                            }
                            deposit(&self.nodes, &mut grads, p, dp);
                        }
                        offset += w;
                    }
                }
                Op::Reshape { a } => {
                    let a = *a;
                    deposit(&self.nodes, &mut grads, a, g);
                }
                Op::SliceCols { a, start, width } => {
                    let (a, start, width) = (*a, *start, *width);
                    let (r, c) = (self.nodes[a].value.shape()[0], self.nodes[a].value.shape()[1]);
                    let mut da = vec![T::zero(); r * c];
                    for i2 in 0..r {
                        da[i2 * c + start..i2 * c + start + width]
                            .copy_from_slice(&g[i2 * width..(i2 + 1) * width]);
                    }
                    deposit(&self.nodes, &mut grads, a, da);
                }
                Op::SumLast { a } => {
                    let a = *a;
                    let d = self.nodes[a].value.last_dim();
                    let mut da = Vec::with_capacity(g.len() * d);
                    for &gi in &g {
                        da.extend(std::iter::repeat(gi).take(d));
                    }
                    deposit(&self.nodes, &mut grads, a, da);
                }
                Op::SumAll { a } => {
                    let a = *a;
                    let da = vec![g[0]; self.nodes[a].value.numel()];
                    deposit(&self.nodes, &mut grads, a, da);
                }
                Op::BceLogits { logits, labels } => {
                    let (logits, labels) = (*logits, *labels);
                    let z = self.nodes[logits].value.data();
                    let y = self.nodes[labels].value.data();
                    let n = T::of(z.len() as f64);
                    if self.nodes[logits].needs_grad {
                        let dz: Vec<T> = z
                            .iter()
                            .zip(y)
                            .map(|(&zi, &yi)| (sigmoid_scalar(zi) - yi) * g[0] / n)
                            .collect();
                        deposit(&self.nodes, &mut grads, logits, dz);
                    }
                    if self.nodes[labels].needs_grad {
                        let dy: Vec<T> = z.iter().map(|&zi| -zi * g[0] / n).collect();
                        deposit(&self.nodes, &mut grads, labels, dy);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Adds `contrib` into the gradient slot for node `j` unless the node opted
/// out of gradients (constants and their pure descendants).
fn deposit<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    j: usize,
    contrib: Vec<T>,
) {
    if !nodes[j].needs_grad {
        return;
    }
    match &mut grads[j] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(&contrib) {
                *a = *a + *c;
            }
        }
        None => grads[j] = Some(contrib),
    }
}

/// `out += a(m x k) . b(k x n)`.
fn mm_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            let bo = l * n;
            let oo = i * n;
            for j in 0..n {
                out[oo + j] = out[oo + j] + av * b[bo + j];
            }
        }
    }
}

/// `out += a(m x k) . b(n x k)^T`.
fn mm_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let ao = i * k;
        for j in 0..n {
            let bo = j * k;
            let mut s = T::zero();
            for l in 0..k {
                s = s + a[ao + l] * b[bo + l];
            }
            out[i * n + j] = out[i * n + j] + s;
        }
    }
}

/// `out += a(m x k)^T . b(m x n)`, producing `k x n`.
fn mm_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let ao = i * k;
        let bo = i * n;
        for l in 0..k {
            let av = a[ao + l];
            let oo = l * n;
            for j in 0..n {
                out[oo + j] = out[oo + j] + av * b[bo + j];
            }
        }
    }
}

fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
