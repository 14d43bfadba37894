//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value. Nodes are appended in evaluation order, so the tape is already
//! topologically sorted and [`Tape::backward`] is a single reverse sweep. The
//! graph is rebuilt for every step; a tape is never reused across steps.
//!
//! ```
//! use tsmamba_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap());
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry, LayerNormCache};
use crate::scan::{self, ScanAlgo, ScanDims, ScanTrace};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Neg(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: LayerNormCache,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Upsample2x(Var),
    Concat(Var, Var),
    NchwToRows(Var),
    RowsToNchw(Var),
    PermuteRows {
        x: Var,
        batch: usize,
        perm: Vec<usize>,
    },
    Scan {
        inputs: [Var; 6],
        dims: ScanDims,
        trace: ScanTrace,
        algo: ScanAlgo,
    },
    GlobalAvgPool(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Mse {
        x: Var,
        target: Tensor,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records one forward pass. Confined to a single thread.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
///
/// Every leaf created with [`Tape::leaf`] that the loss depends on has an
/// entry; leaves the loss does not reach have none.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Moves a gradient out, leaving `None`.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that gradients are tracked for.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value treated as a constant by [`Tape::backward`].
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    /// `[M,N] + [N]`, broadcasting the vector over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let v = ops::add_row(self.value(x), self.value(row))?;
        Ok(self.push(v, Op::AddRow(x, row), &[x, row]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `x · w + bias` for `x: [M,K]`, `w: [K,N]`, `bias: [N]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, ops::silu_scalar, Op::Silu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, ops::sigmoid_scalar, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, ops::softplus_scalar, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, libm::exp, Op::Exp(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn softmax_lastaxis(&mut self, x: Var) -> Result<Var> {
        let v = ops::softmax_lastaxis(self.value(x))?;
        Ok(self.push(v, Op::Softmax(x), &[x]))
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (v, cache) =
            ops::layernorm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeometry::new(self.value(x), self.value(w), stride, padding)?;
        let v = ops::conv2d(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut parents = vec![x, w];
        parents.extend(bias);
        Ok(self.push(v, Op::Conv2d { x, w, bias, geom }, &parents))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let v = ops::upsample_nearest2x(self.value(x))?;
        Ok(self.push(v, Op::Upsample2x(x), &[x]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Concat(a, b), &[a, b]))
    }

    pub fn nchw_to_rows(&mut self, x: Var) -> Result<Var> {
        let v = ops::nchw_to_rows(self.value(x))?;
        Ok(self.push(v, Op::NchwToRows(x), &[x]))
    }

    pub fn rows_to_nchw(&mut self, x: Var, b: usize, h: usize, w: usize) -> Result<Var> {
        let v = ops::rows_to_nchw(self.value(x), b, h, w)?;
        Ok(self.push(v, Op::RowsToNchw(x), &[x]))
    }

    /// See [`ops::permute_rows`]. `perm` must be a permutation.
    pub fn permute_rows(&mut self, x: Var, batch: usize, perm: &[usize]) -> Result<Var> {
        let v = ops::permute_rows(self.value(x), batch, perm)?;
        let op = Op::PermuteRows {
            x,
            batch,
            perm: perm.to_vec(),
        };
        Ok(self.push(v, op, &[x]))
    }

    /// Batched selective scan over `batch` sequences stacked along the rows.
    ///
    /// Shapes: `u, delta: [batch·L, D]`, `a: [D,N]`, `b, c: [batch·L, N]`,
    /// `d_skip: [D]`. See [`scan`] for the recurrence.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d_skip: Var,
        batch: usize,
        algo: ScanAlgo,
    ) -> Result<Var> {
        let inputs = [u, delta, a, b, c, d_skip];
        let dims = ScanDims::infer(
            self.value(u),
            self.value(delta),
            self.value(a),
            self.value(b),
            self.value(c),
            self.value(d_skip),
            batch,
        )?;
        let inp = scan::ScanInputs {
            u: self.value(u).data(),
            delta: self.value(delta).data(),
            a: self.value(a).data(),
            b: self.value(b).data(),
            c: self.value(c).data(),
            d_skip: self.value(d_skip).data(),
        };
        // Nothing upstream needs a gradient: skip keeping the state history.
        let (y, trace) = if inputs.iter().any(|&v| self.tracked(v)) {
            scan::scan_forward(&dims, &inp, algo)?
        } else {
            (scan::scan_output(&dims, &inp, algo)?, ScanTrace::default())
        };
        let v = Tensor::new([dims.rows(), dims.d_model], y)?;
        let op = Op::Scan {
            inputs,
            dims,
            trace,
            algo,
        };
        Ok(self.push(v, op, &inputs))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let v = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(v, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(v, Op::Mean(x), &[x])
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let v = Tensor::scalar(ops::mse(self.value(x), target)?);
        let op = Op::Mse {
            x,
            target: target.clone(),
        };
        Ok(self.push(v, op, &[x]))
    }

    /// Mean cross-entropy of `[B,K]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, k) = lv.dims2()?;
        ops::check_labels(labels, rows, k)?;
        let probs = ops::softmax_lastaxis(lv)?.into_data();
        let loss = ops::cross_entropy(lv, labels)?;
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Propagates `d loss / d node` back to every leaf the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match (&node.op, g) {
                    (Op::Leaf, Some(g)) if node.requires_grad => {
                        Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(g, y)| g * y).collect());
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, g.iter().zip(av).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.iter().map(|v| v * f).collect()),
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.tracked(*row) {
                    let n = self.nodes[row.0].value.numel();
                    let mut dr = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        for (d, v) in dr.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *row, dr);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("matmul lhs");
                let n = node.value.shape()[1];
                if self.tracked(*a) {
                    let mut da = vec![0.0; m * k];
                    ops::gemm_nt(g, val(*b), &mut da, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.tracked(*b) {
                    let mut db = vec![0.0; k * n];
                    ops::gemm_tn(val(*a), g, &mut db, k, m, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(val(*x))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Silu(x) => {
                let d = g
                    .iter()
                    .zip(val(*x))
                    .map(|(g, &x)| {
                        let s = ops::sigmoid_scalar(x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Softplus(x) => {
                let d = g
                    .iter()
                    .zip(val(*x))
                    .map(|(g, &x)| g * ops::sigmoid_scalar(x))
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = g.iter().zip(out).map(|(g, e)| g * e).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Neg(x) => self.accumulate(grads, *x, g.iter().map(|v| -v).collect()),
            Op::Softmax(x) => {
                let d = *node.value.shape().last().expect("softmax rank");
                let mut dx = vec![0.0; g.len()];
                for ((dxr, gr), sr) in dx.chunks_mut(d).zip(g.chunks(d)).zip(out.chunks(d)) {
                    let dot: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
                    for ((o, gv), sv) in dxr.iter_mut().zip(gr).zip(sr) {
                        *o = sv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (dx, dgamma, dbeta) = ops::layernorm_backward(cache, val(*gamma), g);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Conv2d { x, w, bias, geom } => {
                let (dx, dw, db) = ops::conv2d_backward(geom, val(*x), val(*w), g);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                if let Some(b) = bias {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Upsample2x(x) => {
                let (b, c, h, w) = self.nodes[x.0].value.dims4().expect("upsample rank");
                let dx = ops::upsample_nearest2x_backward(g, b * c, h, w);
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = self.nodes[a.0].value.dims4().expect("concat lhs");
                let cb = self.nodes[b.0].value.shape()[1];
                let (la, lb) = (ca * h * w, cb * h * w);
                let mut da = Vec::with_capacity(n * la);
                let mut db = Vec::with_capacity(n * lb);
                for chunk in g.chunks(la + lb) {
                    da.extend_from_slice(&chunk[..la]);
                    db.extend_from_slice(&chunk[la..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::NchwToRows(x) => {
                let (b, _, h, w) = self.nodes[x.0].value.dims4().expect("rows source");
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("grad");
                let dx = ops::rows_to_nchw(&gt, b, h, w).expect("rows grad");
                self.accumulate(grads, *x, dx.into_data());
            }
            Op::RowsToNchw(x) => {
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("grad");
                let dx = ops::nchw_to_rows(&gt).expect("nchw grad");
                self.accumulate(grads, *x, dx.into_data());
            }
            Op::PermuteRows { x, batch, perm } => {
                let c = node.value.shape()[1];
                let len = perm.len();
                let mut dx = vec![0.0; g.len()];
                for n in 0..*batch {
                    for (i, &src) in perm.iter().enumerate() {
                        let s = (n * len + src) * c;
                        let d = (n * len + i) * c;
                        for j in 0..c {
                            dx[s + j] += g[d + j];
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Scan {
                inputs,
                dims,
                trace,
                algo,
            } => {
                let [u, delta, a, b, c, d_skip] = *inputs;
                let sg = scan::scan_backward(
                    dims,
                    &scan::ScanInputs {
                        u: val(u),
                        delta: val(delta),
                        a: val(a),
                        b: val(b),
                        c: val(c),
                        d_skip: val(d_skip),
                    },
                    trace,
                    g,
                    *algo,
                );
                self.accumulate(grads, u, sg.du);
                self.accumulate(grads, delta, sg.ddelta);
                self.accumulate(grads, a, sg.da);
                self.accumulate(grads, b, sg.db);
                self.accumulate(grads, c, sg.dc);
                self.accumulate(grads, d_skip, sg.dd);
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.nodes[x.0].value.dims4().expect("pool rank");
                let hw = h * w;
                let mut dx = Vec::with_capacity(g.len() * hw);
                for &gv in g {
                    dx.extend(core::iter::repeat_n(gv / hw as f64, hw));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Mse { x, target } => {
                let n = target.numel() as f64;
                let d = val(*x)
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| g[0] * 2.0 * (a - b) / n)
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.nodes[logits.0].value.shape()[1];
                let rows = labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| g[0] * p / rows).collect();
                for (r, &label) in labels.iter().enumerate() {
                    d[r * k + label] -= g[0] / rows;
                }
                self.accumulate(grads, *logits, d);
            }
        }
    }
}
