//! Reverse-mode autodiff: forward ops append nodes to a [`Tape`], `backward`
//! replays them in reverse accumulating gradients per node. No graph
//! optimization; one recorded op per executed op.

use super::kernels::{self, ActKind, BnCache, ConvGeom};
use super::param::ParamStore;
use super::{Elem, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

struct Node<E: Elem> {
    value: Tensor<E>,
    op: Op<E>,
}

enum Op<E: Elem> {
    Leaf { param: Option<usize> },
    Conv2d { x: ValueId, w: ValueId, b: Option<ValueId>, geom: ConvGeom },
    Linear { x: ValueId, w: ValueId, b: Option<ValueId> },
    BatchNorm { x: ValueId, gamma: ValueId, beta: ValueId, cache: BnCache<E> },
    Act { x: ValueId, kind: ActKind },
    MaxPool { x: ValueId, argmax: Vec<usize> },
    AvgPool { x: ValueId, k: usize, stride: usize, pad: usize },
    GlobalAvgPool { x: ValueId },
    ChannelShuffle { x: ValueId, groups: usize },
    Add { a: ValueId, b: ValueId },
    ConcatC { parts: Vec<(ValueId, usize)> },
    SliceC { x: ValueId, start: usize, len: usize },
    ScaleChannels { x: ValueId, s: ValueId },
    Reshape { x: ValueId },
    DotSum { a: ValueId, b: ValueId },
    SoftmaxCe { logits: ValueId, labels: Vec<usize>, probs: Tensor<E> },
}

pub struct Tape<E: Elem = f32> {
    nodes: Vec<Node<E>>,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, t: Tensor<E>) -> ValueId {
        self.push(t, Op::Leaf { param: None })
    }

    /// Bind a parameter slot's current value as a differentiable leaf.
    pub fn bind_param(&mut self, store: &ParamStore<E>, idx: usize) -> ValueId {
        self.push(store.slot(idx).value.clone(), Op::Leaf { param: Some(idx) })
    }

    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: Option<ValueId>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<ValueId> {
        let geom = kernels::conv_geom(
            self.value(x).shape(),
            self.value(w).shape(),
            stride,
            pad,
            groups,
        )?;
        if let Some(b) = b {
            if self.value(b).len() != geom.cout {
                return Err(Error::Dim(format!(
                    "bias has {} values for {} output channels",
                    self.value(b).len(),
                    geom.cout
                )));
            }
        }
        let y = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|id| self.value(id)),
            &geom,
        );
        Ok(self.push(y, Op::Conv2d { x, w, b, geom }))
    }

    pub fn linear(&mut self, x: ValueId, w: ValueId, b: Option<ValueId>) -> Result<ValueId> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::Dim(format!("linear shapes {xs:?} / {ws:?}")));
        }
        let y = kernels::linear_forward(self.value(x), self.value(w), b.map(|id| self.value(id)));
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    /// Batchnorm in train mode; updates the running statistics in place.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm_train(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &mut [E],
        running_var: &mut [E],
        momentum: f64,
        eps: f64,
    ) -> Result<ValueId> {
        let (y, cache, mean, var) = kernels::batchnorm_train_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        )?;
        let count = {
            let s = self.value(x).shape();
            s[0] * s[2] * s[3]
        };
        // Unbiased variance feeds the running estimate.
        let bessel = E::from_f64(count as f64 / (count as f64 - 1.0));
        let m = E::from_f64(momentum);
        let om = E::from_f64(1.0 - momentum);
        for c in 0..mean.len() {
            running_mean[c] = om * running_mean[c] + m * mean[c];
            running_var[c] = om * running_var[c] + m * var[c] * bessel;
        }
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, cache }))
    }

    pub fn batchnorm_eval(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &[E],
        running_var: &[E],
        eps: f64,
    ) -> Result<ValueId> {
        let (y, cache) = kernels::batchnorm_eval_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            running_var,
            eps,
        );
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, cache }))
    }

    pub fn activation(&mut self, x: ValueId, kind: ActKind) -> ValueId {
        let y = self.value(x).map(|v| kernels::act_forward(kind, v));
        self.push(y, Op::Act { x, kind })
    }

    pub fn maxpool(&mut self, x: ValueId, k: usize, stride: usize, pad: usize) -> Result<ValueId> {
        let out = kernels::maxpool_forward(self.value(x), k, stride, pad)?;
        Ok(self.push(out.y, Op::MaxPool { x, argmax: out.argmax.unwrap() }))
    }

    pub fn avgpool(&mut self, x: ValueId, k: usize, stride: usize, pad: usize) -> Result<ValueId> {
        let y = kernels::avgpool_forward(self.value(x), k, stride, pad)?;
        Ok(self.push(y, Op::AvgPool { x, k, stride, pad }))
    }

    pub fn global_avgpool(&mut self, x: ValueId) -> ValueId {
        let y = kernels::global_avgpool_forward(self.value(x));
        self.push(y, Op::GlobalAvgPool { x })
    }

    pub fn channel_shuffle(&mut self, x: ValueId, groups: usize) -> Result<ValueId> {
        let y = kernels::channel_shuffle_forward(self.value(x), groups)?;
        Ok(self.push(y, Op::ChannelShuffle { x, groups }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dim(format!(
                "add shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let y = Tensor::new(
            self.value(a).shape().to_vec(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&p, &q)| p + q)
                .collect(),
        )?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    /// Concatenate along the channel axis of [N,C,H,W] values.
    pub fn concat_channels(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::Dim("concat of zero parts".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut c_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::Dim(format!("concat shapes {first:?} vs {s:?}")));
            }
            c_total += s[1];
        }
        let mut out = vec![E::ZERO; n * c_total * h * w];
        let hw = h * w;
        let mut offset = 0;
        let mut spans = Vec::with_capacity(parts.len());
        for &p in parts {
            let c = self.value(p).dim(1);
            for ni in 0..n {
                let src = &self.value(p).data()[ni * c * hw..(ni + 1) * c * hw];
                out[(ni * c_total + offset) * hw..][..c * hw].copy_from_slice(src);
            }
            spans.push((p, c));
            offset += c;
        }
        let y = Tensor::new(vec![n, c_total, h, w], out)?;
        Ok(self.push(y, Op::ConcatC { parts: spans }))
    }

    /// Take channels [start, start+len) of a [N,C,H,W] value.
    pub fn slice_channels(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 || start + len > s[1] {
            return Err(Error::Dim(format!(
                "slice [{start}, {}) of {s:?}",
                start + len
            )));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;
        let mut out = vec![E::ZERO; n * len * hw];
        for ni in 0..n {
            out[ni * len * hw..][..len * hw]
                .copy_from_slice(&self.value(x).data()[(ni * c + start) * hw..][..len * hw]);
        }
        let y = Tensor::new(vec![n, len, h, w], out)?;
        Ok(self.push(y, Op::SliceC { x, start, len }))
    }

    /// y[n,c,h,w] = x[n,c,h,w] · s[n,c,1,1] (squeeze-excite gating).
    pub fn scale_channels(&mut self, x: ValueId, s: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let ss = self.value(s).shape().to_vec();
        if ss.len() != 4 || ss[0] != xs[0] || ss[1] != xs[1] || ss[2] != 1 || ss[3] != 1 {
            return Err(Error::Dim(format!("scale shapes {xs:?} vs {ss:?}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let hw = h * w;
        let mut out = vec![E::ZERO; n * c * hw];
        for ni in 0..n {
            for ci in 0..c {
                let sv = self.value(s).data()[ni * c + ci];
                let src = &self.value(x).data()[(ni * c + ci) * hw..][..hw];
                for (o, &v) in out[(ni * c + ci) * hw..][..hw].iter_mut().zip(src) {
                    *o = v * sv;
                }
            }
        }
        let y = Tensor::new(xs, out)?;
        Ok(self.push(y, Op::ScaleChannels { x, s }))
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let y = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    /// Flatten [N, …] to [N, rest].
    pub fn flatten(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.value(x).shape();
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    /// Scalar Σᵢ aᵢ·bᵢ over two same-length values.
    pub fn dot_sum(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::Dim(format!(
                "dot of {} vs {} elements",
                self.value(a).len(),
                self.value(b).len()
            )));
        }
        let mut acc = E::ZERO;
        for (&p, &q) in self.value(a).data().iter().zip(self.value(b).data()) {
            acc += p * q;
        }
        Ok(self.push(Tensor::scalar(acc), Op::DotSum { a, b }))
    }

    /// Mean softmax cross-entropy; returns the scalar loss node. Row
    /// probabilities are cached on the node, see [`Tape::probabilities`].
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let (loss, probs) = kernels::softmax_ce_forward(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe { logits, labels: labels.to_vec(), probs },
        ))
    }

    pub fn probabilities(&self, loss: ValueId) -> Result<&Tensor<E>> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxCe { probs, .. } => Ok(probs),
            _ => Err(Error::State("node is not a softmax cross-entropy loss".into())),
        }
    }

    /// Reverse pass from `root` (typically the loss). Returns per-node
    /// gradients; parameter gradients are extracted with
    /// [`Gradients::param_grads`].
    pub fn backward(&self, root: ValueId) -> Result<Gradients<E>> {
        if root.0 >= self.nodes.len() {
            return Err(Error::State("backward called before forward".into()));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), E::ONE));
        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf { .. } => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::Conv2d { x, w, b, geom } => {
                    let out = kernels::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        b.is_some(),
                        geom,
                        &dy,
                    );
                    accumulate(&mut grads, *x, out.dx);
                    accumulate(&mut grads, *w, out.dw);
                    if let (Some(b), Some(db)) = (b, out.db) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) =
                        kernels::linear_backward(self.value(*x), self.value(*w), b.is_some(), &dy);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::BatchNorm { x, gamma, beta, cache } => {
                    let (dx, dgamma, dbeta) = kernels::batchnorm_backward(
                        self.value(*x),
                        self.value(*gamma).data(),
                        cache,
                        &dy,
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::Act { x, kind } => {
                    let xv = self.value(*x);
                    let dx = Tensor::new(
                        xv.shape().to_vec(),
                        xv.data()
                            .iter()
                            .zip(dy.data())
                            .map(|(&v, &d)| kernels::act_backward(*kind, v) * d)
                            .collect(),
                    )?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let xv = self.value(*x);
                    let dx = kernels::maxpool_backward(xv.len(), xv.shape(), argmax, &dy);
                    accumulate(&mut grads, *x, dx);
                }
                Op::AvgPool { x, k, stride, pad } => {
                    let dx =
                        kernels::avgpool_backward(self.value(*x).shape(), *k, *stride, *pad, &dy);
                    accumulate(&mut grads, *x, dx);
                }
                Op::GlobalAvgPool { x } => {
                    let dx = kernels::global_avgpool_backward(self.value(*x).shape(), &dy);
                    accumulate(&mut grads, *x, dx);
                }
                Op::ChannelShuffle { x, groups } => {
                    let dx = kernels::channel_shuffle_backward(&dy, *groups);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::ConcatC { parts } => {
                    let s = self.nodes[i].value.shape();
                    let (n, c_total, hw) = (s[0], s[1], s[2] * s[3]);
                    let mut offset = 0;
                    for &(p, c) in parts {
                        let ps = self.value(p).shape().to_vec();
                        let mut dpart = vec![E::ZERO; n * c * hw];
                        for ni in 0..n {
                            dpart[ni * c * hw..][..c * hw].copy_from_slice(
                                &dy.data()[(ni * c_total + offset) * hw..][..c * hw],
                            );
                        }
                        accumulate(&mut grads, p, Tensor::new(ps, dpart)?);
                        offset += c;
                    }
                }
                Op::SliceC { x, start, len } => {
                    let xs = self.value(*x).shape().to_vec();
                    let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                    let mut dx = vec![E::ZERO; n * c * hw];
                    for ni in 0..n {
                        dx[(ni * c + start) * hw..][..len * hw]
                            .copy_from_slice(&dy.data()[ni * len * hw..][..len * hw]);
                    }
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?);
                }
                Op::ScaleChannels { x, s } => {
                    let xs = self.value(*x).shape().to_vec();
                    let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                    let mut dx = vec![E::ZERO; n * c * hw];
                    let mut ds = vec![E::ZERO; n * c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let sv = self.value(*s).data()[ni * c + ci];
                            let xrow = &self.value(*x).data()[(ni * c + ci) * hw..][..hw];
                            let dyrow = &dy.data()[(ni * c + ci) * hw..][..hw];
                            let dxrow = &mut dx[(ni * c + ci) * hw..][..hw];
                            let mut acc = E::ZERO;
                            for ((dv, &d), &xv) in dxrow.iter_mut().zip(dyrow).zip(xrow) {
                                *dv = d * sv;
                                acc += d * xv;
                            }
                            ds[ni * c + ci] = acc;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?);
                    accumulate(&mut grads, *s, Tensor::new(vec![n, c, 1, 1], ds)?);
                }
                Op::Reshape { x } => {
                    let dx = dy.clone().reshaped(self.value(*x).shape().to_vec())?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::DotSum { a, b } => {
                    let d = dy.item();
                    let da = self.value(*b).map(|v| v * d).reshaped(self.value(*a).shape().to_vec())?;
                    let db = self.value(*a).map(|v| v * d).reshaped(self.value(*b).shape().to_vec())?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    let dl = kernels::softmax_ce_backward(probs, labels, dy.item());
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Parameter indices bound on this tape, in binding order.
    pub fn bound_params(&self) -> Vec<(usize, ValueId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((p, ValueId(i))),
                _ => None,
            })
            .collect()
    }
}

fn accumulate<E: Elem>(grads: &mut [Option<Tensor<E>>], id: ValueId, g: Tensor<E>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

pub struct Gradients<E: Elem> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Elem> Gradients<E> {
    pub fn get(&self, id: ValueId) -> Option<&Tensor<E>> {
        self.grads[id.0].as_ref()
    }

    /// Collect gradients for every parameter leaf bound on the tape,
    /// summing if a parameter was bound more than once.
    pub fn param_grads(&self, tape: &Tape<E>) -> Vec<(usize, Tensor<E>)> {
        let mut out: Vec<(usize, Tensor<E>)> = Vec::new();
        for (p, id) in tape.bound_params() {
            if let Some(g) = self.get(id) {
                if let Some(entry) = out.iter_mut().find(|(q, _)| *q == p) {
                    for (a, &b) in entry.1.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                } else {
                    out.push((p, g.clone()));
                }
            }
        }
        out
    }
}
