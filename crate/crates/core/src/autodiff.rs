//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation eagerly as it is executed. Leaves either
//! borrow their values from long-lived parameter tensors or own constant
//! inputs. [`Tape::backward`] walks the record in reverse and returns the
//! gradients of every `requires_grad` leaf.
//!
//! Only the operations the disaggregation networks need are provided. Every
//! op validates shapes up front and rejects NaN/Inf results.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{config_err, usage_err, NilmError, Result};
use crate::gemm::{gemm, View};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { input: usize, kernel: usize, bias: usize },
    Dense { input: usize, weight: usize, bias: usize },
    Relu(usize),
    Sigmoid(usize),
    Mul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    OneMinus(usize),
    ScaleBy { x: usize, scalar: usize },
    Scale { x: usize, factor: f64 },
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    SquaredErrorMean { pred: usize, target: usize },
    BceWithLogitsSum { logits: usize, labels: usize },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    id: u64,
    nodes: Vec<Node<'p>>,
    backward_done: bool,
}

/// Gradients of the leaves of one tape, produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf that borrows `tensor`'s values. It takes part in
    /// backward iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &'p Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            Cow::Borrowed(tensor.data()),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Records an owned leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, Cow::Owned(tensor.into_data()), Op::Leaf, false)
    }

    /// Records an owned leaf that receives a gradient.
    pub fn variable(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, Cow::Owned(tensor.into_data()), Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> Result<&[f64]> {
        Ok(&self.node(var)?.value)
    }

    pub fn shape(&self, var: Var) -> Result<&[usize]> {
        Ok(&self.node(var)?.shape)
    }

    pub fn to_tensor(&self, var: Var) -> Result<Tensor> {
        let node = self.node(var)?;
        Tensor::new(&node.shape, node.value.to_vec())
    }

    /// Scalar value of a single-element var.
    pub fn item(&self, var: Var) -> Result<f64> {
        let v = self.value(var)?;
        if v.len() != 1 {
            return Err(usage_err!("item() on a var with {} elements", v.len()));
        }
        Ok(v[0])
    }

    /// Valid (unpadded), stride-1 1-D convolution.
    ///
    /// `input` is `[batch, length, in_ch]`, `kernel` is `[k, in_ch, out_ch]`,
    /// `bias` is `[out_ch]`; the result is `[batch, length - k + 1, out_ch]`.
    pub fn conv1d_valid(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (is, ks, bs) = (self.shape(input)?, self.shape(kernel)?, self.shape(bias)?);
        if is.len() != 3 || ks.len() != 3 || bs.len() != 1 {
            return Err(config_err!(
                "conv1d expects input [b,l,c], kernel [k,c,o], bias [o]; got {is:?}, {ks:?}, {bs:?}"
            ));
        }
        let (batch, length, in_ch) = (is[0], is[1], is[2]);
        let (k, k_in, out_ch) = (ks[0], ks[1], ks[2]);
        if k_in != in_ch || bs[0] != out_ch {
            return Err(config_err!(
                "conv1d channel mismatch: input {is:?}, kernel {ks:?}, bias {bs:?}"
            ));
        }
        if length < k {
            return Err(config_err!("conv1d input length {length} is shorter than kernel {k}"));
        }
        let out_len = length - k + 1;
        let x = &self.nodes[input.index].value;
        let w = &self.nodes[kernel.index].value;
        let b = &self.nodes[bias.index].value;
        let mut out = vec![0.0; batch * out_len * out_ch];
        for bi in 0..batch {
            let rows = &mut out[bi * out_len * out_ch..(bi + 1) * out_len * out_ch];
            for row in rows.chunks_exact_mut(out_ch) {
                row.copy_from_slice(b);
            }
            let patches = View {
                data: x,
                offset: bi * length * in_ch,
                rs: in_ch,
                cs: 1,
            };
            gemm(
                out_len,
                k * in_ch,
                out_ch,
                1.0,
                patches,
                View::row_major(w, out_ch),
                1.0,
                &mut out,
                bi * out_len * out_ch,
                out_ch,
            );
        }
        let rg = self.any_grad(&[input, kernel, bias]);
        self.push_checked(
            vec![batch, out_len, out_ch],
            out,
            Op::Conv1d {
                input: input.index,
                kernel: kernel.index,
                bias: bias.index,
            },
            rg,
            "conv1d",
        )
    }

    /// Affine map `input[batch, n_in] * weight[n_in, n_out] + bias[n_out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (is, ws, bs) = (self.shape(input)?, self.shape(weight)?, self.shape(bias)?);
        if is.len() != 2 || ws.len() != 2 || bs.len() != 1 || is[1] != ws[0] || ws[1] != bs[0] {
            return Err(config_err!(
                "dense expects input [b,n], weight [n,m], bias [m]; got {is:?}, {ws:?}, {bs:?}"
            ));
        }
        let (batch, n_in, n_out) = (is[0], ws[0], ws[1]);
        let x = &self.nodes[input.index].value;
        let w = &self.nodes[weight.index].value;
        let b = &self.nodes[bias.index].value;
        let mut out = vec![0.0; batch * n_out];
        for row in out.chunks_exact_mut(n_out) {
            row.copy_from_slice(b);
        }
        gemm(
            batch,
            n_in,
            n_out,
            1.0,
            View::row_major(x, n_in),
            View::row_major(w, n_out),
            1.0,
            &mut out,
            0,
            n_out,
        );
        let rg = self.any_grad(&[input, weight, bias]);
        self.push_checked(
            vec![batch, n_out],
            out,
            Op::Dense {
                input: input.index,
                weight: weight.index,
                bias: bias.index,
            },
            rg,
            "dense",
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        let out = node.value.iter().map(|&v| v.max(0.0)).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        self.push_checked(shape, out, Op::Relu(x.index), rg, "relu")
    }

    /// Logistic sigmoid, clamped so every output is strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        let out = node.value.iter().map(|&v| sigmoid(v)).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        self.push_checked(shape, out, Op::Sigmoid(x.index), rg, "sigmoid")
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a.index, b.index), "mul", |x, y| x * y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a.index, b.index), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a.index, b.index), "sub", |x, y| x - y)
    }

    /// Elementwise `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        let out = node.value.iter().map(|&v| 1.0 - v).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        self.push_checked(shape, out, Op::OneMinus(x.index), rg, "one_minus")
    }

    /// Multiplies every element of `x` by the single element of `scalar`.
    pub fn scale_by(&mut self, x: Var, scalar: Var) -> Result<Var> {
        let s = self.value(scalar)?;
        if s.len() != 1 {
            return Err(config_err!("scale_by needs a one-element scalar, got {} elements", s.len()));
        }
        let s = s[0];
        let node = self.node(x)?;
        let out = node.value.iter().map(|&v| v * s).collect();
        let shape = node.shape.clone();
        let rg = self.any_grad(&[x, scalar]);
        self.push_checked(
            shape,
            out,
            Op::ScaleBy {
                x: x.index,
                scalar: scalar.index,
            },
            rg,
            "scale_by",
        )
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let node = self.node(x)?;
        let out = node.value.iter().map(|&v| v * factor).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        self.push_checked(shape, out, Op::Scale { x: x.index, factor }, rg, "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        let total = node.value.iter().sum();
        let rg = node.requires_grad;
        self.push_checked(vec![1], vec![total], Op::Sum(x.index), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        let total: f64 = node.value.iter().sum();
        let mean = total / node.value.len() as f64;
        let rg = node.requires_grad;
        self.push_checked(vec![1], vec![mean], Op::Mean(x.index), rg, "mean")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let node = self.node(x)?;
        let numel: usize = shape.iter().product();
        if numel != node.value.len() || shape.contains(&0) {
            return Err(config_err!(
                "cannot reshape {:?} into {shape:?}",
                node.shape
            ));
        }
        let out = node.value.to_vec();
        let rg = node.requires_grad;
        self.push_checked(shape.to_vec(), out, Op::Reshape(x.index), rg, "reshape")
    }

    /// `mean((target - pred)^2)` over all elements.
    pub fn squared_error_mean(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.node(pred)?, self.node(target)?);
        if p.shape != t.shape {
            return Err(config_err!(
                "squared error shape mismatch: {:?} vs {:?}",
                p.shape,
                t.shape
            ));
        }
        let total: f64 = p
            .value
            .iter()
            .zip(t.value.iter())
            .map(|(&a, &b)| (b - a) * (b - a))
            .sum();
        let mean = total / p.value.len() as f64;
        let rg = self.any_grad(&[pred, target]);
        self.push_checked(
            vec![1],
            vec![mean],
            Op::SquaredErrorMean {
                pred: pred.index,
                target: target.index,
            },
            rg,
            "squared_error_mean",
        )
    }

    /// Sigmoid cross entropy summed over all elements, computed from logits
    /// in the overflow-free form `max(z,0) - z*o + ln(1 + exp(-|z|))`.
    /// Labels are treated as constants.
    pub fn bce_with_logits_sum(&mut self, logits: Var, labels: Var) -> Result<Var> {
        let (z, o) = (self.node(logits)?, self.node(labels)?);
        if z.shape != o.shape {
            return Err(config_err!(
                "cross entropy shape mismatch: {:?} vs {:?}",
                z.shape,
                o.shape
            ));
        }
        let total: f64 = z
            .value
            .iter()
            .zip(o.value.iter())
            .map(|(&z, &o)| bce_with_logit(z, o))
            .sum();
        let rg = z.requires_grad;
        self.push_checked(
            vec![1],
            vec![total],
            Op::BceWithLogitsSum {
                logits: logits.index,
                labels: labels.index,
            },
            rg,
            "bce_with_logits_sum",
        )
    }

    /// Allows [`Tape::backward`] to run again on this tape.
    pub fn reset_backward(&mut self) {
        self.backward_done = false;
    }

    /// Back-propagates from a scalar `loss`. Every `requires_grad` leaf
    /// recorded before `loss` gets a gradient (zeros when unreachable).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.backward_with_pool(loss, &mut BufferPool::new())
    }

    /// [`Tape::backward`] drawing gradient buffers from `pool` and returning
    /// intermediate ones to it.
    pub fn backward_with_pool(&mut self, loss: Var, pool: &mut BufferPool) -> Result<Gradients> {
        let loss_node = self.node(loss)?;
        if loss_node.value.len() != 1 {
            return Err(usage_err!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.shape
            ));
        }
        if self.backward_done {
            return Err(usage_err!("backward already ran on this tape; reset it first"));
        }
        self.backward_done = true;

        let n = loss.index + 1;
        let mut store = GradStore {
            grads: (0..self.nodes.len()).map(|_| None).collect(),
            pool,
        };
        if self.nodes[loss.index].requires_grad {
            store.grads[loss.index] = Some(vec![1.0]);
        }

        for i in (0..n).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = store.grads[i].take() else { continue };
            self.backward_node(i, &g, &mut store)?;
            store.pool.recycle(g);
        }
        let mut grads = store.grads;

        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
                continue;
            }
            if node.requires_grad && i < n {
                let g = grads[i].get_or_insert_with(|| vec![0.0; node.value.len()]);
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NilmError::NonFinite(format!(
                        "gradient of leaf #{i} (shape {:?})",
                        node.shape
                    )));
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut GradStore<'_>) -> Result<()> {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                kernel,
                bias,
            } => {
                let is = &self.nodes[input].shape;
                let (batch, length, in_ch) = (is[0], is[1], is[2]);
                let ks = &self.nodes[kernel].shape;
                let (k, out_ch) = (ks[0], ks[2]);
                let out_len = length - k + 1;
                let x = &self.nodes[input].value;
                let w = &self.nodes[kernel].value;
                if self.nodes[bias].requires_grad {
                    let gb = acc(grads, bias, out_ch);
                    for row in g.chunks_exact(out_ch) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if self.nodes[kernel].requires_grad {
                    let gw = acc(grads, kernel, w.len());
                    for bi in 0..batch {
                        // dW[(j,c), o] += sum_t x[b, t+j, c] * g[b, t, o]
                        let patches_t = View {
                            data: x,
                            offset: bi * length * in_ch,
                            rs: 1,
                            cs: in_ch,
                        };
                        let gout = View {
                            data: g,
                            offset: bi * out_len * out_ch,
                            rs: out_ch,
                            cs: 1,
                        };
                        gemm(k * in_ch, out_len, out_ch, 1.0, patches_t, gout, 1.0, gw, 0, out_ch);
                    }
                }
                if self.nodes[input].requires_grad {
                    let gx = acc(grads, input, x.len());
                    for bi in 0..batch {
                        let gout = View {
                            data: g,
                            offset: bi * out_len * out_ch,
                            rs: out_ch,
                            cs: 1,
                        };
                        for j in 0..k {
                            // dX[b, t+j, c] += sum_o g[b, t, o] * W[j, c, o]
                            let wt = View {
                                data: w,
                                offset: j * in_ch * out_ch,
                                rs: 1,
                                cs: out_ch,
                            };
                            gemm(
                                out_len,
                                out_ch,
                                in_ch,
                                1.0,
                                gout,
                                wt,
                                1.0,
                                gx,
                                (bi * length + j) * in_ch,
                                in_ch,
                            );
                        }
                    }
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let is = &self.nodes[input].shape;
                let (batch, n_in) = (is[0], is[1]);
                let n_out = self.nodes[weight].shape[1];
                let x = &self.nodes[input].value;
                let w = &self.nodes[weight].value;
                if self.nodes[bias].requires_grad {
                    let gb = acc(grads, bias, n_out);
                    for row in g.chunks_exact(n_out) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if self.nodes[weight].requires_grad {
                    let (gw, fresh) = slot(grads, weight, w.len());
                    let beta = if fresh { 0.0 } else { 1.0 };
                    let xt = View {
                        data: x,
                        offset: 0,
                        rs: 1,
                        cs: n_in,
                    };
                    gemm(n_in, batch, n_out, 1.0, xt, View::row_major(g, n_out), beta, gw, 0, n_out);
                }
                if self.nodes[input].requires_grad {
                    let gx = acc(grads, input, x.len());
                    let wt = View {
                        data: w,
                        offset: 0,
                        rs: 1,
                        cs: n_out,
                    };
                    gemm(batch, n_out, n_in, 1.0, View::row_major(g, n_out), wt, 1.0, gx, 0, n_in);
                }
            }
            Op::Relu(x) => {
                if self.nodes[x].requires_grad {
                    let xv = &self.nodes[x].value;
                    let gx = acc(grads, x, xv.len());
                    for ((a, &gi), &xi) in gx.iter_mut().zip(g).zip(xv.iter()) {
                        if xi > 0.0 {
                            *a += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.nodes[x].requires_grad {
                    let y = &node.value;
                    let gx = acc(grads, x, y.len());
                    for ((a, &gi), &yi) in gx.iter_mut().zip(g).zip(y.iter()) {
                        *a += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.nodes[a].requires_grad {
                    let ga = acc(grads, a, av.len());
                    for ((d, &gi), &bi) in ga.iter_mut().zip(g).zip(bv.iter()) {
                        *d += gi * bi;
                    }
                }
                if self.nodes[b].requires_grad {
                    let gb = acc(grads, b, bv.len());
                    for ((d, &gi), &ai) in gb.iter_mut().zip(g).zip(av.iter()) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.nodes[a].requires_grad {
                    let ga = acc(grads, a, g.len());
                    ga.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
                if self.nodes[b].requires_grad {
                    let gb = acc(grads, b, g.len());
                    gb.iter_mut().zip(g).for_each(|(d, &gi)| *d += sign * gi);
                }
            }
            Op::OneMinus(x) => {
                if self.nodes[x].requires_grad {
                    let gx = acc(grads, x, g.len());
                    gx.iter_mut().zip(g).for_each(|(d, &gi)| *d -= gi);
                }
            }
            Op::ScaleBy { x, scalar } => {
                let xv = &self.nodes[x].value;
                let s = self.nodes[scalar].value[0];
                if self.nodes[x].requires_grad {
                    let gx = acc(grads, x, xv.len());
                    gx.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * s);
                }
                if self.nodes[scalar].requires_grad {
                    let dot: f64 = g.iter().zip(xv.iter()).map(|(&gi, &xi)| gi * xi).sum();
                    acc(grads, scalar, 1)[0] += dot;
                }
            }
            Op::Scale { x, factor } => {
                if self.nodes[x].requires_grad {
                    let gx = acc(grads, x, g.len());
                    gx.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * factor);
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                if self.nodes[x].requires_grad {
                    let len = self.nodes[x].value.len();
                    let scale = if matches!(node.op, Op::Mean(_)) {
                        g[0] / len as f64
                    } else {
                        g[0]
                    };
                    acc(grads, x, len).iter_mut().for_each(|d| *d += scale);
                }
            }
            Op::Reshape(x) => {
                if self.nodes[x].requires_grad {
                    let gx = acc(grads, x, g.len());
                    gx.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
            }
            Op::SquaredErrorMean { pred, target } => {
                let (p, t) = (&self.nodes[pred].value, &self.nodes[target].value);
                let scale = 2.0 * g[0] / p.len() as f64;
                if self.nodes[pred].requires_grad {
                    let gp = acc(grads, pred, p.len());
                    for ((d, &pi), &ti) in gp.iter_mut().zip(p.iter()).zip(t.iter()) {
                        *d -= scale * (ti - pi);
                    }
                }
                if self.nodes[target].requires_grad {
                    let gt = acc(grads, target, t.len());
                    for ((d, &pi), &ti) in gt.iter_mut().zip(p.iter()).zip(t.iter()) {
                        *d += scale * (ti - pi);
                    }
                }
            }
            Op::BceWithLogitsSum { logits, labels } => {
                if self.nodes[logits].requires_grad {
                    let z = &self.nodes[logits].value;
                    let o = &self.nodes[labels].value;
                    let gz = acc(grads, logits, z.len());
                    for ((d, &zi), &oi) in gz.iter_mut().zip(z.iter()).zip(o.iter()) {
                        *d += g[0] * (sigmoid_unclamped(zi) - oi);
                    }
                }
            }
        }
        Ok(())
    }

    fn node(&self, var: Var) -> Result<&Node<'p>> {
        if var.tape != self.id {
            return Err(usage_err!("var belongs to a different tape"));
        }
        self.nodes
            .get(var.index)
            .ok_or_else(|| usage_err!("var index {} out of range", var.index))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.shape != nb.shape {
            return Err(config_err!(
                "{name} shape mismatch: {:?} vs {:?}",
                na.shape,
                nb.shape
            ));
        }
        let out = na
            .value
            .iter()
            .zip(nb.value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = na.shape.clone();
        let rg = na.requires_grad || nb.requires_grad;
        self.push_checked(shape, out, op, rg, name)
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push_checked(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        requires_grad: bool,
        name: &str,
    ) -> Result<Var> {
        if let Some(pos) = value.iter().position(|v| !v.is_finite()) {
            return Err(NilmError::NonFinite(format!(
                "{name} produced {} at flat index {pos}",
                value[pos]
            )));
        }
        Ok(self.push(shape, Cow::Owned(value), op, requires_grad))
    }
}

/// Reusable gradient buffers. Large buffers are recycled between backward
/// passes instead of being returned to the allocator, which avoids paying
/// page faults on every training step.
#[derive(Debug, Default)]
pub struct BufferPool {
    free: Vec<Vec<f64>>,
}

impl BufferPool {
    /// Buffers smaller than this are left to the allocator.
    const MIN_LEN: usize = 1 << 16;
    const MAX_HELD: usize = 64;

    pub fn new() -> Self {
        Self::default()
    }

    /// A buffer of `len` elements with unspecified contents.
    fn take_uninit(&mut self, len: usize) -> Vec<f64> {
        match self.free.iter().position(|b| b.len() == len) {
            Some(pos) => self.free.swap_remove(pos),
            None => vec![0.0; len],
        }
    }

    fn take_zeroed(&mut self, len: usize) -> Vec<f64> {
        match self.free.iter().position(|b| b.len() == len) {
            Some(pos) => {
                let mut b = self.free.swap_remove(pos);
                b.fill(0.0);
                b
            }
            None => vec![0.0; len],
        }
    }

    pub fn recycle(&mut self, buf: Vec<f64>) {
        if buf.len() >= Self::MIN_LEN && self.free.len() < Self::MAX_HELD {
            self.free.push(buf);
        }
    }

    pub fn held(&self) -> usize {
        self.free.len()
    }
}

struct GradStore<'a> {
    grads: Vec<Option<Vec<f64>>>,
    pool: &'a mut BufferPool,
}

fn acc<'g>(store: &'g mut GradStore<'_>, index: usize, len: usize) -> &'g mut Vec<f64> {
    let pool = &mut *store.pool;
    store.grads[index].get_or_insert_with(|| pool.take_zeroed(len))
}

/// Gradient slot of `index`; `true` when it was just created, in which
/// case its contents are unspecified and must be overwritten.
fn slot<'g>(store: &'g mut GradStore<'_>, index: usize, len: usize) -> (&'g mut Vec<f64>, bool) {
    let fresh = store.grads[index].is_none();
    if fresh {
        store.grads[index] = Some(store.pool.take_uninit(len));
    }
    (store.grads[index].as_mut().expect("just filled"), fresh)
}

/// Largest double below one; sigmoid outputs are clamped to stay under it.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

fn sigmoid_unclamped(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable logistic function with outputs strictly in (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    sigmoid_unclamped(x).clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// `-(o ln s(z) + (1-o) ln(1 - s(z)))` in overflow-free form.
pub fn bce_with_logit(z: f64, o: f64) -> f64 {
    z.max(0.0) - z * o + (-z.abs()).exp().ln_1p()
}
