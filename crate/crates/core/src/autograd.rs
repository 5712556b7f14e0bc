//! Tape-based reverse-mode differentiation over dense f64 tensors.
//!
//! A [`Graph`] records every operation of a forward pass in order; each node
//! stores its value and enough context to run its backward rule. Calling
//! [`Graph::backward`] walks the tape in exact reverse recording order and
//! accumulates gradients into the recorded nodes. A tape can be walked
//! backward once; re-running a forward pass means recording a new tape.
//!
//! The op set is exactly what the model needs: matrix products (also in the
//! joint-mixing and channel-mixing layouts used by the spatial graph
//! convolution), temporal convolution along the frame axis, elementwise
//! add/mul/scale/relu, per-channel normalization, global average pooling,
//! row stacking, summation, and softmax cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwiseKind {
    Add,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf {
        tag: Option<usize>,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    /// Per (channel, frame) row-vector times an `N x N` joint matrix.
    JointMix {
        x: Var,
        m: Var,
    },
    /// 1x1 convolution over channels: `W[C_out,C_in] . X + b`.
    ChannelMix {
        x: Var,
        w: Var,
        b: Var,
    },
    /// Dense map of a vector: `W[K,C] . x + b`.
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    ConvTemporal {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        s: f64,
    },
    Relu {
        a: Var,
    },
    ChannelNorm {
        x: Var,
        eps: f64,
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    GlobalAvgPool {
        x: Var,
    },
    StackRows {
        rows: Vec<Var>,
    },
    SumAll {
        a: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.numel() != 1 {
            return Err(Error::Dimension {
                op: "scalar",
                msg: format!("expected a scalar, got shape {:?}", t.shape()),
            });
        }
        Ok(t.data()[0])
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Records a constant or input. Gradient tracking follows
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, needs, Op::Leaf { tag: None })
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf { tag: None })
    }

    /// Records a parameter leaf tagged with the caller's parameter index so
    /// gradients can be routed back to a parameter store after backward.
    pub fn param_leaf(&mut self, t: &Tensor, tag: usize) -> Var {
        let mut copy = t.clone();
        copy.zero_grad();
        self.push(copy, true, Op::Leaf { tag: Some(tag) })
    }

    /// Tagged leaf gradients, in recording order.
    pub fn param_grads(&self) -> Vec<(usize, &[f64])> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { tag: Some(tag) } = node.op {
                if let Some(g) = self.grads[i].as_deref() {
                    out.push((tag, g));
                }
            }
        }
        out
    }

    // ---- operations ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, needs, Op::Matmul { a, b }))
    }

    pub fn joint_mix(&mut self, x: Var, m: Var) -> Result<Var> {
        let (sx, sm) = (self.shape(x).to_vec(), self.shape(m).to_vec());
        if sx.len() != 3 || sm.len() != 2 || sm[0] != sm[1] || sx[2] != sm[0] {
            return Err(Error::ShapeMismatch {
                op: "joint_mix",
                lhs: sx,
                rhs: sm,
            });
        }
        let (c, t, n) = (sx[0], sx[1], sx[2]);
        let mut out = vec![0.0; c * t * n];
        mm_acc(self.value(x).data(), self.value(m).data(), c * t, n, n, &mut out);
        let needs = self.needs(x) || self.needs(m);
        Ok(self.push(
            Tensor::new(vec![c, t, n], out)?,
            needs,
            Op::JointMix { x, m },
        ))
    }

    pub fn channel_mix(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 3 || sw.len() != 2 || sw[1] != sx[0] {
            return Err(Error::ShapeMismatch {
                op: "channel_mix",
                lhs: sx,
                rhs: sw,
            });
        }
        if sb != vec![sw[0]] {
            return Err(Error::ShapeMismatch {
                op: "channel_mix",
                lhs: sw,
                rhs: sb,
            });
        }
        let (c_in, t, n) = (sx[0], sx[1], sx[2]);
        let c_out = sw[0];
        let tn = t * n;
        let mut out = vec![0.0; c_out * tn];
        for (co, row) in out.chunks_exact_mut(tn).enumerate() {
            let bias = self.value(b).data()[co];
            row.iter_mut().for_each(|v| *v = bias);
        }
        mm_acc(self.value(w).data(), self.value(x).data(), c_out, c_in, tn, &mut out);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![c_out, t, n], out)?,
            needs,
            Op::ChannelMix { x, w, b },
        ))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 1 || sw.len() != 2 || sw[1] != sx[0] || sb != vec![sw[0]] {
            return Err(Error::ShapeMismatch {
                op: "affine",
                lhs: sw,
                rhs: sx,
            });
        }
        let (k, c) = (sw[0], sw[1]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let out: Vec<f64> = (0..k)
            .map(|r| {
                let row = &wv[r * c..(r + 1) * c];
                bv[r] + dot(row, xv)
            })
            .collect();
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(vec![k], out)?, needs, Op::Affine { x, w, b }))
    }

    pub fn conv_temporal(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[0] {
            return Err(Error::ShapeMismatch {
                op: "conv_temporal",
                lhs: sx,
                rhs: sw,
            });
        }
        if sb != vec![sw[0]] {
            return Err(Error::ShapeMismatch {
                op: "conv_temporal",
                lhs: sw,
                rhs: sb,
            });
        }
        if stride == 0 {
            return Err(Error::Dimension {
                op: "conv_temporal",
                msg: "stride must be positive".into(),
            });
        }
        let (c_in, t_in, n) = (sx[0], sx[1], sx[2]);
        let (c_out, kt) = (sw[0], sw[2]);
        if t_in + 2 * pad < kt {
            return Err(Error::Dimension {
                op: "conv_temporal",
                msg: format!(
                    "temporal kernel {kt} exceeds padded length {} (T={t_in}, pad={pad})",
                    t_in + 2 * pad
                ),
            });
        }
        let t_out = (t_in + 2 * pad - kt) / stride + 1;
        let mut out = vec![0.0; c_out * t_out * n];
        conv_fwd(
            self.value(x).data(),
            c_in,
            t_in,
            n,
            self.value(w).data(),
            c_out,
            kt,
            self.value(b).data(),
            stride,
            pad,
            t_out,
            &mut out,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![c_out, t_out, n], out)?,
            needs,
            Op::ConvTemporal { x, w, b, stride, pad },
        ))
    }

    pub fn ewise(&mut self, a: Var, b: Var, kind: EwiseKind) -> Result<Var> {
        match kind {
            EwiseKind::Add => self.add(a, b),
            EwiseKind::Mul => self.mul(a, b),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(sa, out)?, needs, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: sa,
                rhs: sb,
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(sa, out)?, needs, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| s * x).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, needs, Op::Scale { a, s }))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, needs, Op::Relu { a }))
    }

    /// Per-channel standardization over the `T x N` slice using the
    /// population standard deviation. The denominator is floored at `eps`
    /// so constant channels map to zero instead of dividing by zero.
    pub fn channel_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::Dimension {
                op: "channel_norm",
                msg: format!("expected C x T x N input, got {sx:?}"),
            });
        }
        let (c, t, n) = (sx[0], sx[1], sx[2]);
        let m = t * n;
        let xv = self.value(x).data();
        let mut out = vec![0.0; c * m];
        let mut means = vec![0.0; c];
        let mut stds = vec![0.0; c];
        for ch in 0..c {
            let xs = &xv[ch * m..(ch + 1) * m];
            let mean = xs.iter().sum::<f64>() / m as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let std = var.sqrt();
            means[ch] = mean;
            stds[ch] = std;
            let denom = std.max(eps);
            for (o, &v) in out[ch * m..(ch + 1) * m].iter_mut().zip(xs) {
                *o = (v - mean) / denom;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(sx, out)?,
            needs,
            Op::ChannelNorm {
                x,
                eps,
                mean: means,
                std: stds,
            },
        ))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::Dimension {
                op: "global_avg_pool",
                msg: format!("expected C x T x N input, got {sx:?}"),
            });
        }
        let (c, m) = (sx[0], sx[1] * sx[2]);
        let xv = self.value(x).data();
        let out: Vec<f64> = (0..c)
            .map(|ch| xv[ch * m..(ch + 1) * m].iter().sum::<f64>() / m as f64)
            .collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![c], out)?, needs, Op::GlobalAvgPool { x }))
    }

    /// Stacks equal-length vectors into a `B x K` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Dimension {
                op: "stack_rows",
                msg: "no rows to stack".into(),
            });
        }
        let k = {
            let s = self.shape(rows[0]);
            if s.len() != 1 {
                return Err(Error::Dimension {
                    op: "stack_rows",
                    msg: format!("rows must be vectors, got {s:?}"),
                });
            }
            s[0]
        };
        let mut out = Vec::with_capacity(rows.len() * k);
        let mut needs = false;
        for &r in rows {
            let s = self.shape(r);
            if s != [k] {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![k],
                    rhs: s.to_vec(),
                });
            }
            out.extend_from_slice(self.value(r).data());
            needs |= self.needs(r);
        }
        Ok(self.push(
            Tensor::new(vec![rows.len(), k], out)?,
            needs,
            Op::StackRows {
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(s), needs, Op::SumAll { a }))
    }

    /// Max-stabilized softmax + mean negative log-likelihood over the batch.
    /// Returns the scalar loss node and the probabilities as a plain tensor.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<(Var, Tensor)> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                msg: format!("expected B x K logits, got {sl:?}"),
            });
        }
        let (bsz, k) = (sl[0], sl[1]);
        if labels.len() != bsz {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                msg: format!("{} labels for batch of {bsz}", labels.len()),
            });
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(Error::Dimension {
                    op: "softmax_cross_entropy",
                    msg: format!("label {label} out of range for {k} classes (row {row})"),
                });
            }
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; bsz * k];
        let mut loss = 0.0;
        for row in 0..bsz {
            let xs = &lv[row * k..(row + 1) * k];
            let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ps = &mut probs[row * k..(row + 1) * k];
            let mut z = 0.0;
            for (p, &x) in ps.iter_mut().zip(xs) {
                *p = (x - max).exp();
                z += *p;
            }
            ps.iter_mut().for_each(|p| *p /= z);
            // -log p[label], computed from the stabilized form directly
            loss += z.ln() - (xs[labels[row]] - max);
        }
        loss /= bsz as f64;
        let probs_t = Tensor::new(vec![bsz, k], probs.clone())?;
        let needs = self.needs(logits);
        let var = self.push(
            Tensor::scalar(loss),
            needs,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        );
        Ok((var, probs_t))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar node. Errors if the tape has already been
    /// walked backward.
    pub fn backward(&mut self, from: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Numeric(
                "backward already called on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(from).numel() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                msg: format!("backward root must be scalar, got {:?}", self.shape(from)),
            });
        }
        self.backward_done = true;
        self.grads[from.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            // By reverse order, grads[i] is final once we reach i. Take it
            // out so input accumulation can borrow `self.grads` freely.
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            self.apply_backward(i, &gout)?;
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let g = self.grads[v.0]
            .get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    fn apply_backward(&mut self, i: usize, gout: &[f64]) -> Result<()> {
        // Ops read input values immutably and accumulate into input grads via
        // locally-built buffers, so aliased inputs (e.g. add(v, v)) compose.
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(a) {
                    let mut da = vec![0.0; m * k];
                    mm_nt_acc(gout, self.value(b).data(), m, n, k, &mut da);
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![0.0; k * n];
                    mm_tn_acc(self.value(a).data(), gout, m, k, n, &mut db);
                    self.accumulate(b, &db);
                }
            }
            Op::JointMix { x, m } => {
                let (x, m) = (*x, *m);
                let sx = self.shape(x).to_vec();
                let (rows, n) = (sx[0] * sx[1], sx[2]);
                if self.needs(x) {
                    let mut dx = vec![0.0; rows * n];
                    mm_nt_acc(gout, self.value(m).data(), rows, n, n, &mut dx);
                    self.accumulate(x, &dx);
                }
                if self.needs(m) {
                    let mut dm = vec![0.0; n * n];
                    mm_tn_acc(self.value(x).data(), gout, rows, n, n, &mut dm);
                    self.accumulate(m, &dm);
                }
            }
            Op::ChannelMix { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let sx = self.shape(x).to_vec();
                let (c_in, tn) = (sx[0], sx[1] * sx[2]);
                let c_out = self.shape(w)[0];
                if self.needs(w) {
                    let mut dw = vec![0.0; c_out * c_in];
                    mm_nt_acc(gout, self.value(x).data(), c_out, tn, c_in, &mut dw);
                    self.accumulate(w, &dw);
                }
                if self.needs(x) {
                    let mut dx = vec![0.0; c_in * tn];
                    mm_tn_acc(self.value(w).data(), gout, c_out, c_in, tn, &mut dx);
                    self.accumulate(x, &dx);
                }
                if self.needs(b) {
                    let db: Vec<f64> = gout.chunks_exact(tn).map(|r| r.iter().sum()).collect();
                    self.accumulate(b, &db);
                }
            }
            Op::Affine { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let c = self.shape(x)[0];
                let k = self.shape(w)[0];
                if self.needs(x) {
                    let mut dx = vec![0.0; c];
                    let wv = self.value(w).data();
                    for r in 0..k {
                        let gr = gout[r];
                        for (d, &wj) in dx.iter_mut().zip(&wv[r * c..(r + 1) * c]) {
                            *d += gr * wj;
                        }
                    }
                    self.accumulate(x, &dx);
                }
                if self.needs(w) {
                    let mut dw = vec![0.0; k * c];
                    let xv = self.value(x).data();
                    for r in 0..k {
                        let gr = gout[r];
                        for (d, &xj) in dw[r * c..(r + 1) * c].iter_mut().zip(xv) {
                            *d += gr * xj;
                        }
                    }
                    self.accumulate(w, &dw);
                }
                if self.needs(b) {
                    self.accumulate(b, gout);
                }
            }
            Op::ConvTemporal { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let sx = self.shape(x).to_vec();
                let sw = self.shape(w).to_vec();
                let (c_in, t_in, n) = (sx[0], sx[1], sx[2]);
                let (c_out, kt) = (sw[0], sw[2]);
                let t_out = self.shape(Var(i))[1];
                let want_x = self.needs(x);
                let want_w = self.needs(w);
                let mut dx = if want_x { vec![0.0; c_in * t_in * n] } else { Vec::new() };
                let mut dw = if want_w { vec![0.0; c_out * c_in * kt] } else { Vec::new() };
                conv_bwd(
                    gout,
                    self.value(x).data(),
                    self.value(w).data(),
                    c_in,
                    t_in,
                    n,
                    c_out,
                    kt,
                    stride,
                    pad,
                    t_out,
                    want_x.then_some(&mut dx),
                    want_w.then_some(&mut dw),
                );
                if want_x {
                    self.accumulate(x, &dx);
                }
                if want_w {
                    self.accumulate(w, &dw);
                }
                if self.needs(b) {
                    let db: Vec<f64> = gout
                        .chunks_exact(t_out * n)
                        .map(|r| r.iter().sum())
                        .collect();
                    self.accumulate(b, &db);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, gout);
                self.accumulate(b, gout);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let da: Vec<f64> = gout
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(g, v)| g * v)
                        .collect();
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let db: Vec<f64> = gout
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(g, v)| g * v)
                        .collect();
                    self.accumulate(b, &db);
                }
            }
            Op::Scale { a, s } => {
                let (a, s) = (*a, *s);
                let da: Vec<f64> = gout.iter().map(|g| g * s).collect();
                self.accumulate(a, &da);
            }
            Op::Relu { a } => {
                let a = *a;
                let da: Vec<f64> = gout
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::ChannelNorm { x, eps, mean, std } => {
                let xvar = *x;
                let eps = *eps;
                let sx = self.shape(xvar).to_vec();
                let m = sx[1] * sx[2];
                let mut dx = vec![0.0; sx[0] * m];
                let xv = self.value(xvar).data();
                for ch in 0..sx[0] {
                    let mu = mean[ch];
                    let sd = std[ch];
                    let denom = sd.max(eps);
                    let gs = &gout[ch * m..(ch + 1) * m];
                    let xs = &xv[ch * m..(ch + 1) * m];
                    let gbar = gs.iter().sum::<f64>() / m as f64;
                    // below the floor the denominator is locally constant,
                    // so the std term contributes nothing
                    let coef = if sd > eps {
                        let s_gc: f64 = gs.iter().zip(xs).map(|(g, &v)| g * (v - mu)).sum();
                        s_gc / (denom * denom * m as f64 * sd)
                    } else {
                        0.0
                    };
                    for ((d, &g), &v) in dx[ch * m..(ch + 1) * m].iter_mut().zip(gs).zip(xs) {
                        *d = (g - gbar) / denom - coef * (v - mu);
                    }
                }
                self.accumulate(xvar, &dx);
            }
            Op::GlobalAvgPool { x } => {
                let x = *x;
                let sx = self.shape(x).to_vec();
                let m = sx[1] * sx[2];
                let inv = 1.0 / m as f64;
                let mut dx = vec![0.0; sx[0] * m];
                for (ch, row) in dx.chunks_exact_mut(m).enumerate() {
                    let g = gout[ch] * inv;
                    row.iter_mut().for_each(|d| *d = g);
                }
                self.accumulate(x, &dx);
            }
            Op::StackRows { rows } => {
                let rows = rows.clone();
                let k = self.shape(rows[0])[0];
                for (r, &row) in rows.iter().enumerate() {
                    self.accumulate(row, &gout[r * k..(r + 1) * k]);
                }
            }
            Op::SumAll { a } => {
                let a = *a;
                let da = vec![gout[0]; self.value(a).numel()];
                self.accumulate(a, &da);
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let lv = *logits;
                let labels = labels.clone();
                let bsz = labels.len();
                let k = probs.len() / bsz;
                let g = gout[0] / bsz as f64;
                let mut dl = probs.iter().map(|p| p * g).collect::<Vec<f64>>();
                for (row, &label) in labels.iter().enumerate() {
                    dl[row * k + label] -= g;
                }
                self.accumulate(lv, &dl);
            }
        }
        Ok(())
    }
}

// ---- raw kernels ----------------------------------------------------------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[m,n] += a[m,k] . b[k,n]`
fn mm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += a[m,n] . b[k,n]^T`
fn mm_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            *o += dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out[k,n] += a[m,k]^T . b[m,n]`
fn mm_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_fwd(
    x: &[f64],
    c_in: usize,
    t_in: usize,
    n: usize,
    w: &[f64],
    c_out: usize,
    kt: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
    t_out: usize,
    out: &mut [f64],
) {
    for co in 0..c_out {
        for tp in 0..t_out {
            let orow = &mut out[(co * t_out + tp) * n..(co * t_out + tp + 1) * n];
            orow.iter_mut().for_each(|v| *v = bias[co]);
            let t0 = (tp * stride) as isize - pad as isize;
            for ci in 0..c_in {
                let wrow = &w[(co * c_in + ci) * kt..(co * c_in + ci + 1) * kt];
                for (k, &wv) in wrow.iter().enumerate() {
                    let t = t0 + k as isize;
                    if t < 0 || t >= t_in as isize {
                        continue;
                    }
                    let xrow = &x[(ci * t_in + t as usize) * n..(ci * t_in + t as usize + 1) * n];
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o += wv * xv;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_bwd(
    gout: &[f64],
    x: &[f64],
    w: &[f64],
    c_in: usize,
    t_in: usize,
    n: usize,
    c_out: usize,
    kt: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    mut dx: Option<&mut Vec<f64>>,
    mut dw: Option<&mut Vec<f64>>,
) {
    for co in 0..c_out {
        for tp in 0..t_out {
            let g = &gout[(co * t_out + tp) * n..(co * t_out + tp + 1) * n];
            let t0 = (tp * stride) as isize - pad as isize;
            for ci in 0..c_in {
                for k in 0..kt {
                    let t = t0 + k as isize;
                    if t < 0 || t >= t_in as isize {
                        continue;
                    }
                    let t = t as usize;
                    if let Some(dw) = dw.as_deref_mut() {
                        let xrow = &x[(ci * t_in + t) * n..(ci * t_in + t + 1) * n];
                        dw[(co * c_in + ci) * kt + k] += dot(g, xrow);
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[(co * c_in + ci) * kt + k];
                        let dxrow = &mut dx[(ci * t_in + t) * n..(ci * t_in + t + 1) * n];
                        for (d, &gv) in dxrow.iter_mut().zip(g) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
    }
}
