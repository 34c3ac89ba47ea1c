use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, Patch};
use super::lstm::{self, DirCache, LstmParams, SeqDims};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::segments::segment_bounds;
use crate::spectro::StftEngine;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
/// Probability clamp applied inside binary cross entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Kernel, stride, dilation and zero padding of a 2-D convolution, each as
/// (time, frequency).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeom {
    /// Stride 1 with the padding that keeps the spatial size (odd kernels).
    pub fn same(kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        Self {
            kernel,
            stride: (1, 1),
            dilation,
            padding: (dilation.0 * (kernel.0 - 1) / 2, dilation.1 * (kernel.1 - 1) / 2),
        }
    }

    /// Undilated kernel with the given stride and half-kernel padding.
    pub fn strided(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            dilation: (1, 1),
            padding: ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2),
        }
    }

    pub fn out_len(&self, len: usize, axis: usize) -> usize {
        let (k, s, d, p) = if axis == 0 {
            (self.kernel.0, self.stride.0, self.dilation.0, self.padding.0)
        } else {
            (self.kernel.1, self.stride.1, self.dilation.1, self.padding.1)
        };
        let span = d * (k - 1) + 1;
        if len + 2 * p < span {
            0
        } else {
            (len + 2 * p - span) / s + 1
        }
    }

    fn patch(&self, channels: usize, img: (usize, usize), out: (usize, usize)) -> Patch {
        Patch {
            channels,
            img_h: img.0,
            img_w: img.1,
            out_h: out.0,
            out_w: out.1,
            kernel: self.kernel,
            stride: self.stride,
            dilation: self.dilation,
            padding: self.padding,
        }
    }
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self`, for gradient accumulation across graphs.
    pub fn accumulate(&mut self, other: Gradients) {
        for (id, g) in other.grads {
            match self.grads.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.grads.insert(id, g);
                }
            }
        }
    }
}

enum Slot {
    Owned(Tensor),
    Param(ParamId),
}

struct BiLstmCache {
    dims: SeqDims,
    fwd: DirCache,
    bwd: DirCache,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    Mean(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
    },
    ConvT2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Concat(Vec<Var>),
    PlanesToSeq(Var),
    SeqToPlanes(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    BiLstm {
        x: Var,
        fwd: [Var; 3],
        bwd: [Var; 3],
        cache: Box<BiLstmCache>,
    },
    SegmentMean {
        x: Var,
        groups: Vec<Vec<usize>>,
    },
    ComplexMul(Var, Var),
    L2DistMean(Var, Var),
    Bce {
        p: Var,
        target: Vec<f64>,
    },
    MaskedStft {
        conf: Var,
        signal: Tensor,
        engine: Box<StftEngine>,
        rate: u32,
    },
}

struct Node {
    value: Slot,
    op: Op,
    needs_grad: bool,
}

/// A tape of operations recorded during one forward pass.
///
/// Parameters are borrowed from a [`ParamStore`]; batch-norm running
/// statistics computed in training mode are collected and must be applied
/// with [`ParamStore::apply_updates`] once the graph is dropped.
pub struct Graph<'a> {
    store: &'a ParamStore,
    train: bool,
    frozen: Vec<bool>,
    nodes: Vec<Node>,
    param_nodes: BTreeMap<ParamId, Var>,
    buffer_updates: Vec<(ParamId, Tensor)>,
    grads: Vec<Option<Tensor>>,
}

fn value<'b>(nodes: &'b [Node], store: &'b ParamStore, v: Var) -> &'b Tensor {
    match &nodes[v.0].value {
        Slot::Owned(t) => t,
        Slot::Param(id) => store.get(*id),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected a [B, C, H, W] tensor, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore, train: bool) -> Self {
        Self {
            store,
            train,
            frozen: vec![false; store.len()],
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
            buffer_updates: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Excludes parameters whose name starts with `prefix` from gradients.
    /// Must be called before those parameters enter the graph.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for id in self.store.ids_with_prefix(prefix) {
            self.frozen[id.0] = true;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Slot::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Slot::Owned(t), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked and readable through [`Graph::grad`].
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Slot::Owned(t), op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        let needs_grad = self.store.is_trainable(id) && !self.frozen[id.0];
        self.nodes.push(Node { value: Slot::Param(id), op: Op::Leaf, needs_grad });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        value(&self.nodes, self.store, v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = map(self.value(a), |x| x * k);
        self.push(t, Op::Scale(a, k), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = map(self.value(a), |x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = map(self.value(a), |x| 1.0 / (1.0 + (-x).exp()));
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshape(shape);
        self.push(t, Op::Reshape(a), &[a])
    }

    /// Mean of all entries, as a one-element tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// `x: [B, C, H, W]`, `w: [O, C, kh, kw]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: Conv2dGeom) -> Var {
        let (bsz, c, h, wd) = dims4(self.value(x));
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws, [ws[0], c, geom.kernel.0, geom.kernel.1], "conv weight shape");
        let o = ws[0];
        let out = (geom.out_len(h, 0), geom.out_len(wd, 1));
        let patch = geom.patch(c, (h, wd), out);
        let plane = out.0 * out.1;
        let mut y = vec![0.0; bsz * o * plane];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for bi in 0..bsz {
                kernels::conv_forward_item(
                    &patch,
                    wv,
                    o,
                    &xv[bi * c * h * wd..(bi + 1) * c * h * wd],
                    &mut y[bi * o * plane..(bi + 1) * o * plane],
                );
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (i, p) in y.chunks_exact_mut(plane).enumerate() {
                    let bias = bv[i % o];
                    p.iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        let t = Tensor::new(vec![bsz, o, out.0, out.1], y);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(t, Op::Conv2d { x, w, b, geom }, &inputs)
    }

    /// Transposed convolution producing exactly `out_hw` spatially.
    /// `x: [B, Cin, H, W]`, `w: [Cin, O, kh, kw]`, `b: [O]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
        out_hw: (usize, usize),
    ) -> Var {
        let (bsz, cin, h, wd) = dims4(self.value(x));
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws, [cin, ws[1], geom.kernel.0, geom.kernel.1], "transposed conv weight shape");
        assert!(
            geom.out_len(out_hw.0, 0) == h && geom.out_len(out_hw.1, 1) == wd,
            "target size {out_hw:?} is not reachable from ({h}, {wd})"
        );
        let o = ws[1];
        let patch = geom.patch(o, out_hw, (h, wd));
        let plane = out_hw.0 * out_hw.1;
        let mut y = vec![0.0; bsz * o * plane];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for bi in 0..bsz {
                kernels::tconv_forward_item(
                    &patch,
                    wv,
                    cin,
                    &xv[bi * cin * h * wd..(bi + 1) * cin * h * wd],
                    &mut y[bi * o * plane..(bi + 1) * o * plane],
                );
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (i, p) in y.chunks_exact_mut(plane).enumerate() {
                    let bias = bv[i % o];
                    p.iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        let t = Tensor::new(vec![bsz, o, out_hw.0, out_hw.1], y);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(t, Op::ConvT2d { x, w, b, geom }, &inputs)
    }

    /// Per-channel batch normalization of `[B, C, H, W]`. In training mode the
    /// batch statistics normalize and the running buffers are updated.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Var {
        let (bsz, c, h, wd) = dims4(self.value(x));
        let hw = h * wd;
        let n = bsz * hw;
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if self.train {
            for ch in 0..c {
                let mut s = 0.0;
                for bi in 0..bsz {
                    s += xv[(bi * c + ch) * hw..(bi * c + ch + 1) * hw].iter().sum::<f64>();
                }
                let m = s / n as f64;
                let mut q = 0.0;
                for bi in 0..bsz {
                    q += xv[(bi * c + ch) * hw..(bi * c + ch + 1) * hw]
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = q / n as f64;
            }
        } else {
            mean.copy_from_slice(self.store.get(running_mean).data());
            var.copy_from_slice(self.store.get(running_var).data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut y = vec![0.0; xv.len()];
        for bi in 0..bsz {
            for ch in 0..c {
                let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                for i in r {
                    let xh = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    y[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        if self.train {
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            let rm = self.store.get(running_mean).data();
            let rv = self.store.get(running_var).data();
            let new_m = (0..c).map(|i| (1.0 - BN_MOMENTUM) * rm[i] + BN_MOMENTUM * mean[i]).collect();
            let new_v = (0..c)
                .map(|i| (1.0 - BN_MOMENTUM) * rv[i] + BN_MOMENTUM * var[i] * unbias)
                .collect();
            self.buffer_updates.push((running_mean, Tensor::new(vec![c], new_m)));
            self.buffer_updates.push((running_var, Tensor::new(vec![c], new_v)));
        }
        let t = Tensor::new(vec![bsz, c, h, wd], y);
        let batch_stats = self.train;
        self.push(
            t,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats },
            &[x, gamma, beta],
        )
    }

    /// Concatenates `[B, C_i, H, W]` tensors along channels.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let (bsz, _, h, w) = dims4(self.value(parts[0]));
        let hw = h * w;
        let total: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut y = Vec::with_capacity(bsz * total * hw);
        for bi in 0..bsz {
            for p in parts {
                let (pb, pc, ph, pw) = dims4(self.value(*p));
                assert!(pb == bsz && ph == h && pw == w, "concat shape mismatch");
                y.extend_from_slice(&self.value(*p).data()[bi * pc * hw..(bi + 1) * pc * hw]);
            }
        }
        let t = Tensor::new(vec![bsz, total, h, w], y);
        self.push(t, Op::Concat(parts.to_vec()), parts)
    }

    /// `[B, C, T, F]` to `[B, T, C*F]`: one feature vector per frame.
    pub fn planes_to_seq(&mut self, x: Var) -> Var {
        let (b, c, t, f) = dims4(self.value(x));
        let xv = self.value(x).data();
        let mut y = vec![0.0; xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let src = ((bi * c + ci) * t + ti) * f;
                    let dst = (bi * t + ti) * c * f + ci * f;
                    y[dst..dst + f].copy_from_slice(&xv[src..src + f]);
                }
            }
        }
        let out = Tensor::new(vec![b, t, c * f], y);
        self.push(out, Op::PlanesToSeq(x), &[x])
    }

    /// `[B, T, C*F]` to `[B, C, T, F]`.
    pub fn seq_to_planes(&mut self, x: Var, channels: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() == 3 && s[2] % channels == 0, "cannot split {s:?} into {channels} planes");
        let (b, t, c) = (s[0], s[1], channels);
        let f = s[2] / c;
        let xv = self.value(x).data();
        let mut y = vec![0.0; xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let dst = ((bi * c + ci) * t + ti) * f;
                    let src = (bi * t + ti) * c * f + ci * f;
                    y[dst..dst + f].copy_from_slice(&xv[src..src + f]);
                }
            }
        }
        let out = Tensor::new(vec![b, c, t, f], y);
        self.push(out, Op::SeqToPlanes(x), &[x])
    }

    /// Affine map over the last axis: `y = x W^T + b`, `w: [Out, In]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let inp = *xs.last().expect("linear on a scalar");
        assert_eq!(ws[1], inp, "linear weight expects {} inputs, got {inp}", ws[1]);
        let out = ws[0];
        let rows = self.value(x).len() / inp;
        let mut y = vec![0.0; rows * out];
        for r in y.chunks_exact_mut(out) {
            r.copy_from_slice(self.value(b).data());
        }
        kernels::gemm(rows, inp, out, self.value(x).data(), inp, 1, self.value(w).data(), 1, inp, 1.0, &mut y, out, 1);
        let mut shape = xs;
        *shape.last_mut().unwrap() = out;
        self.push(Tensor::new(shape, y), Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Bidirectional LSTM over `[B, T, In]`, returning `[B, T, 2H]` with the
    /// forward direction in the first `H` features.
    pub fn bilstm(&mut self, x: Var, fwd: &LstmParams, bwd: &LstmParams) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() == 3 && s[2] == fwd.input && bwd.input == fwd.input && bwd.hidden == fwd.hidden);
        let dims = SeqDims { batch: s[0], steps: s[1], input: s[2], hidden: fwd.hidden };
        let h = fwd.hidden;
        let mut y = vec![0.0; s[0] * s[1] * 2 * h];
        let xv = self.value(x).data();
        let st = self.store;
        let fc = lstm::forward_dir(
            xv, dims, st.get(fwd.w_ih).data(), st.get(fwd.w_hh).data(), st.get(fwd.bias).data(),
            false, &mut y, 2 * h, 0,
        );
        let bc = lstm::forward_dir(
            xv, dims, st.get(bwd.w_ih).data(), st.get(bwd.w_hh).data(), st.get(bwd.bias).data(),
            true, &mut y, 2 * h, h,
        );
        let fv = [self.param(fwd.w_ih), self.param(fwd.w_hh), self.param(fwd.bias)];
        let bv = [self.param(bwd.w_ih), self.param(bwd.w_hh), self.param(bwd.bias)];
        let t = Tensor::new(vec![s[0], s[1], 2 * h], y);
        let cache = Box::new(BiLstmCache { dims, fwd: fc, bwd: bc });
        let inputs = [x, fv[0], fv[1], fv[2], bv[0], bv[1], bv[2]];
        self.push(t, Op::BiLstm { x, fwd: fv, bwd: bv, cache }, &inputs)
    }

    /// Averages `[B, T]` frame values into `[B, S]` group means.
    pub fn segment_mean(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "segment_mean expects [B, T]");
        let (b, t) = (s[0], s[1]);
        let xv = self.value(x).data();
        let mut y = vec![0.0; b * groups.len()];
        for bi in 0..b {
            for (si, g) in groups.iter().enumerate() {
                assert!(!g.is_empty(), "empty frame group");
                y[bi * groups.len() + si] = g.iter().map(|&f| xv[bi * t + f]).sum::<f64>() / g.len() as f64;
            }
        }
        let out = Tensor::new(vec![b, groups.len()], y);
        self.push(out, Op::SegmentMean { x, groups }, &[x])
    }

    /// Complex product of `[B, 2, T, F]` tensors whose channels are (re, im).
    pub fn complex_mul(&mut self, a: Var, b: Var) -> Var {
        let (bsz, c, t, f) = dims4(self.value(a));
        assert_eq!(c, 2);
        assert_eq!(self.shape(a), self.shape(b), "complex_mul shape mismatch");
        let plane = t * f;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut y = vec![0.0; av.len()];
        for bi in 0..bsz {
            let o = bi * 2 * plane;
            for i in 0..plane {
                let (ar, ai) = (av[o + i], av[o + plane + i]);
                let (br, bim) = (bv[o + i], bv[o + plane + i]);
                y[o + i] = ar * br - ai * bim;
                y[o + plane + i] = ar * bim + ai * br;
            }
        }
        let out = Tensor::new(vec![bsz, 2, t, f], y);
        self.push(out, Op::ComplexMul(a, b), &[a, b])
    }

    /// Mean over the batch (leading axis) of the L2 norm of `a - b`.
    pub fn l2_dist_mean(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "l2 distance shape mismatch");
        let bsz = self.shape(a)[0];
        let per = self.value(a).len() / bsz;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let total: f64 = (0..bsz)
            .map(|i| {
                av[i * per..(i + 1) * per]
                    .iter()
                    .zip(&bv[i * per..(i + 1) * per])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        self.push(Tensor::scalar(total / bsz as f64), Op::L2DistMean(a, b), &[a, b])
    }

    /// Mean binary cross entropy of probabilities `p` against 0/1 `target`.
    pub fn bce_mean(&mut self, p: Var, target: &[f64]) -> Var {
        let pv = self.value(p).data();
        assert_eq!(pv.len(), target.len(), "bce length mismatch");
        let total: f64 = pv
            .iter()
            .zip(target)
            .map(|(&q, &t)| {
                let q = q.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            })
            .sum();
        let loss = total / pv.len().max(1) as f64;
        self.push(Tensor::scalar(loss), Op::Bce { p, target: target.to_vec() }, &[p])
    }

    /// STFT of each signal row after multiplying it by the per-segment
    /// confidences `conf: [B, S]` expanded to samples. Returns `[B, 2, T, F]`.
    pub fn masked_stft(&mut self, signal: Tensor, conf: Var, engine: &StftEngine, rate: u32) -> Var {
        let s = signal.shape().to_vec();
        assert_eq!(s.len(), 2, "signal must be [B, N]");
        let (bsz, n) = (s[0], s[1]);
        let bounds = segment_bounds(n, rate);
        assert_eq!(self.shape(conf), [bsz, bounds.len()], "confidence shape");
        let frames = engine.config().n_frames(n);
        let f = engine.config().n_freq();
        let cv = self.value(conf).data();
        let mut y = Vec::with_capacity(bsz * 2 * frames * f);
        let mut masked = vec![0.0; n];
        for bi in 0..bsz {
            let row = &signal.data()[bi * n..(bi + 1) * n];
            for (si, r) in bounds.iter().enumerate() {
                let m = cv[bi * bounds.len() + si];
                for j in r.clone() {
                    masked[j] = row[j] * m;
                }
            }
            let spec = engine.forward(&masked).expect("signal shorter than one STFT frame");
            y.extend_from_slice(spec.planes());
        }
        let out = Tensor::new(vec![bsz, 2, frames, f], y);
        let engine = Box::new(engine.clone());
        self.push(out, Op::MaskedStft { conf, signal, engine, rate }, &[conf])
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Reverse pass from the scalar `loss`. Returns gradients of every
    /// trainable, non-frozen parameter that influenced it.
    pub fn backward(&mut self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let nodes = &self.nodes;
        let store = self.store;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0]));

        fn acc(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        fn acc_slice(nodes: &[Node], store: &ParamStore, grads: &mut [Option<Tensor>], v: Var, g: Vec<f64>) {
            let shape = value(nodes, store, v).shape().to_vec();
            acc(nodes, grads, v, Tensor::new(shape, g));
        }
        let val = |v: Var| value(nodes, store, v);
        let wants = |v: Var| nodes[v.0].needs_grad;

        for i in (0..nodes.len()).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = val(Var(i));
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(nodes, &mut grads, *a, g.clone());
                    acc(nodes, &mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(nodes, &mut grads, *a, g.clone());
                    acc(nodes, &mut grads, *b, map(&g, |x| -x));
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        acc(nodes, &mut grads, *a, zip(&g, val(*b), |x, y| x * y));
                    }
                    if wants(*b) {
                        acc(nodes, &mut grads, *b, zip(&g, val(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, k) => acc(nodes, &mut grads, *a, map(&g, |x| x * k)),
                Op::Relu(a) => acc(nodes, &mut grads, *a, zip(&g, out, |x, y| if y > 0.0 { x } else { 0.0 })),
                Op::Sigmoid(a) => acc(nodes, &mut grads, *a, zip(&g, out, |x, y| x * y * (1.0 - y))),
                Op::Tanh(a) => acc(nodes, &mut grads, *a, zip(&g, out, |x, y| x * (1.0 - y * y))),
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    acc(nodes, &mut grads, *a, g.clone().reshape(&shape));
                }
                Op::Mean(a) => {
                    let n = val(*a).len();
                    let gv = g.item() / n.max(1) as f64;
                    acc_slice(nodes, store, &mut grads, *a, vec![gv; n]);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let (bsz, c, h, wd) = dims4(val(*x));
                    let (_, o, oh, ow) = dims4(out);
                    let patch = geom.patch(c, (h, wd), (oh, ow));
                    let plane = oh * ow;
                    let (xv, wv, gv) = (val(*x).data(), val(*w).data(), g.data());
                    let mut dw = wants(*w).then(|| vec![0.0; wv.len()]);
                    let mut dx = wants(*x).then(|| vec![0.0; xv.len()]);
                    let isz = c * h * wd;
                    for bi in 0..bsz {
                        kernels::conv_backward_item(
                            &patch,
                            wv,
                            o,
                            &xv[bi * isz..(bi + 1) * isz],
                            &gv[bi * o * plane..(bi + 1) * o * plane],
                            dw.as_deref_mut(),
                            dx.as_mut().map(|d| &mut d[bi * isz..(bi + 1) * isz]),
                        );
                    }
                    if let Some(b) = b {
                        if wants(*b) {
                            let mut db = vec![0.0; o];
                            for (k, p) in gv.chunks_exact(plane).enumerate() {
                                db[k % o] += p.iter().sum::<f64>();
                            }
                            acc_slice(nodes, store, &mut grads, *b, db);
                        }
                    }
                    if let Some(dw) = dw {
                        acc_slice(nodes, store, &mut grads, *w, dw);
                    }
                    if let Some(dx) = dx {
                        acc_slice(nodes, store, &mut grads, *x, dx);
                    }
                }
                Op::ConvT2d { x, w, b, geom } => {
                    let (bsz, cin, h, wd) = dims4(val(*x));
                    let (_, o, oh, ow) = dims4(out);
                    let patch = geom.patch(o, (oh, ow), (h, wd));
                    let plane = oh * ow;
                    let (xv, wv, gv) = (val(*x).data(), val(*w).data(), g.data());
                    let mut dw = wants(*w).then(|| vec![0.0; wv.len()]);
                    let mut dx = wants(*x).then(|| vec![0.0; xv.len()]);
                    let isz = cin * h * wd;
                    for bi in 0..bsz {
                        kernels::tconv_backward_item(
                            &patch,
                            wv,
                            cin,
                            &xv[bi * isz..(bi + 1) * isz],
                            &gv[bi * o * plane..(bi + 1) * o * plane],
                            dw.as_deref_mut(),
                            dx.as_mut().map(|d| &mut d[bi * isz..(bi + 1) * isz]),
                        );
                    }
                    if let Some(b) = b {
                        if wants(*b) {
                            let mut db = vec![0.0; o];
                            for (k, p) in gv.chunks_exact(plane).enumerate() {
                                db[k % o] += p.iter().sum::<f64>();
                            }
                            acc_slice(nodes, store, &mut grads, *b, db);
                        }
                    }
                    if let Some(dw) = dw {
                        acc_slice(nodes, store, &mut grads, *w, dw);
                    }
                    if let Some(dx) = dx {
                        acc_slice(nodes, store, &mut grads, *x, dx);
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let (bsz, c, h, wd) = dims4(out);
                    let hw = h * wd;
                    let n = (bsz * hw) as f64;
                    let gv = g.data();
                    let gam = val(*gamma).data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for bi in 0..bsz {
                        for ch in 0..c {
                            for i in (bi * c + ch) * hw..(bi * c + ch + 1) * hw {
                                dgamma[ch] += gv[i] * xhat[i];
                                dbeta[ch] += gv[i];
                            }
                        }
                    }
                    if wants(*x) {
                        let mut dx = vec![0.0; gv.len()];
                        for bi in 0..bsz {
                            for ch in 0..c {
                                let k = gam[ch] * inv_std[ch];
                                for i in (bi * c + ch) * hw..(bi * c + ch + 1) * hw {
                                    dx[i] = if *batch_stats {
                                        k * (gv[i] - dbeta[ch] / n - xhat[i] * dgamma[ch] / n)
                                    } else {
                                        k * gv[i]
                                    };
                                }
                            }
                        }
                        acc_slice(nodes, store, &mut grads, *x, dx);
                    }
                    acc_slice(nodes, store, &mut grads, *gamma, dgamma);
                    acc_slice(nodes, store, &mut grads, *beta, dbeta);
                }
                Op::Concat(parts) => {
                    let (bsz, total, h, w) = dims4(out);
                    let hw = h * w;
                    let mut off = 0;
                    for p in parts {
                        let pc = val(*p).shape()[1];
                        if wants(*p) {
                            let mut d = Vec::with_capacity(bsz * pc * hw);
                            for bi in 0..bsz {
                                let s = (bi * total + off) * hw;
                                d.extend_from_slice(&g.data()[s..s + pc * hw]);
                            }
                            acc_slice(nodes, store, &mut grads, *p, d);
                        }
                        off += pc;
                    }
                }
                Op::PlanesToSeq(x) => {
                    let (b, c, t, f) = dims4(val(*x));
                    let gv = g.data();
                    let mut d = vec![0.0; gv.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            for ti in 0..t {
                                let dst = ((bi * c + ci) * t + ti) * f;
                                let src = (bi * t + ti) * c * f + ci * f;
                                d[dst..dst + f].copy_from_slice(&gv[src..src + f]);
                            }
                        }
                    }
                    acc_slice(nodes, store, &mut grads, *x, d);
                }
                Op::SeqToPlanes(x) => {
                    let (b, c, t, f) = dims4(out);
                    let gv = g.data();
                    let mut d = vec![0.0; gv.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            for ti in 0..t {
                                let src = ((bi * c + ci) * t + ti) * f;
                                let dst = (bi * t + ti) * c * f + ci * f;
                                d[dst..dst + f].copy_from_slice(&gv[src..src + f]);
                            }
                        }
                    }
                    acc_slice(nodes, store, &mut grads, *x, d);
                }
                Op::Linear { x, w, b } => {
                    let ws = val(*w).shape();
                    let (o, inp) = (ws[0], ws[1]);
                    let rows = val(*x).len() / inp;
                    let gv = g.data();
                    if wants(*x) {
                        let mut dx = vec![0.0; rows * inp];
                        kernels::gemm(rows, o, inp, gv, o, 1, val(*w).data(), inp, 1, 0.0, &mut dx, inp, 1);
                        acc_slice(nodes, store, &mut grads, *x, dx);
                    }
                    if wants(*w) {
                        let mut dw = vec![0.0; o * inp];
                        kernels::gemm(o, rows, inp, gv, 1, o, val(*x).data(), inp, 1, 0.0, &mut dw, inp, 1);
                        acc_slice(nodes, store, &mut grads, *w, dw);
                    }
                    if wants(*b) {
                        let mut db = vec![0.0; o];
                        for r in gv.chunks_exact(o) {
                            db.iter_mut().zip(r).for_each(|(a, v)| *a += v);
                        }
                        acc_slice(nodes, store, &mut grads, *b, db);
                    }
                }
                Op::BiLstm { x, fwd, bwd, cache } => {
                    let d = cache.dims;
                    let h = d.hidden;
                    let xv = val(*x).data();
                    let fg = lstm::backward_dir(
                        xv, d, val(fwd[0]).data(), val(fwd[1]).data(), &cache.fwd, false, g.data(), 2 * h, 0,
                    );
                    let bg = lstm::backward_dir(
                        xv, d, val(bwd[0]).data(), val(bwd[1]).data(), &cache.bwd, true, g.data(), 2 * h, h,
                    );
                    if wants(*x) {
                        let dx = fg.dx.iter().zip(&bg.dx).map(|(a, b)| a + b).collect();
                        acc_slice(nodes, store, &mut grads, *x, dx);
                    }
                    for (vars, dg) in [(fwd, fg), (bwd, bg)] {
                        acc_slice(nodes, store, &mut grads, vars[0], dg.dw_ih);
                        acc_slice(nodes, store, &mut grads, vars[1], dg.dw_hh);
                        acc_slice(nodes, store, &mut grads, vars[2], dg.dbias);
                    }
                }
                Op::SegmentMean { x, groups } => {
                    let s = val(*x).shape();
                    let (b, t) = (s[0], s[1]);
                    let mut d = vec![0.0; b * t];
                    for bi in 0..b {
                        for (si, grp) in groups.iter().enumerate() {
                            let gv = g.data()[bi * groups.len() + si] / grp.len() as f64;
                            for &f in grp {
                                d[bi * t + f] += gv;
                            }
                        }
                    }
                    acc_slice(nodes, store, &mut grads, *x, d);
                }
                Op::ComplexMul(a, b) => {
                    let (bsz, _, t, f) = dims4(out);
                    let plane = t * f;
                    let (av, bv, gv) = (val(*a).data(), val(*b).data(), g.data());
                    let mut da = vec![0.0; av.len()];
                    let mut db = vec![0.0; bv.len()];
                    for bi in 0..bsz {
                        let o = bi * 2 * plane;
                        for i in 0..plane {
                            let (gr, gi) = (gv[o + i], gv[o + plane + i]);
                            let (ar, ai) = (av[o + i], av[o + plane + i]);
                            let (br, bim) = (bv[o + i], bv[o + plane + i]);
                            da[o + i] = gr * br + gi * bim;
                            da[o + plane + i] = -gr * bim + gi * br;
                            db[o + i] = gr * ar + gi * ai;
                            db[o + plane + i] = -gr * ai + gi * ar;
                        }
                    }
                    if wants(*a) {
                        acc_slice(nodes, store, &mut grads, *a, da);
                    }
                    if wants(*b) {
                        acc_slice(nodes, store, &mut grads, *b, db);
                    }
                }
                Op::L2DistMean(a, b) => {
                    let bsz = val(*a).shape()[0];
                    let per = val(*a).len() / bsz;
                    let (av, bv) = (val(*a).data(), val(*b).data());
                    let mut da = vec![0.0; av.len()];
                    for i in 0..bsz {
                        let r = i * per..(i + 1) * per;
                        let norm = av[r.clone()]
                            .iter()
                            .zip(&bv[r.clone()])
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt();
                        if norm > 0.0 {
                            let k = g.item() / (norm * bsz as f64);
                            for j in r {
                                da[j] = k * (av[j] - bv[j]);
                            }
                        }
                    }
                    if wants(*b) {
                        acc_slice(nodes, store, &mut grads, *b, da.iter().map(|v| -v).collect());
                    }
                    if wants(*a) {
                        acc_slice(nodes, store, &mut grads, *a, da);
                    }
                }
                Op::Bce { p, target } => {
                    let pv = val(*p).data();
                    let n = pv.len() as f64;
                    let d = pv
                        .iter()
                        .zip(target)
                        .map(|(&q, &t)| {
                            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&q) {
                                0.0
                            } else {
                                g.item() * (-t / q + (1.0 - t) / (1.0 - q)) / n
                            }
                        })
                        .collect();
                    acc_slice(nodes, store, &mut grads, *p, d);
                }
                Op::MaskedStft { conf, signal, engine, rate } => {
                    let (bsz, n) = (signal.shape()[0], signal.shape()[1]);
                    let frames = out.shape()[2];
                    let per = out.len() / bsz;
                    let bounds = segment_bounds(n, *rate);
                    let mut d = vec![0.0; bsz * bounds.len()];
                    for bi in 0..bsz {
                        let gx = engine.adjoint(&g.data()[bi * per..(bi + 1) * per], frames, n);
                        let row = &signal.data()[bi * n..(bi + 1) * n];
                        for (si, r) in bounds.iter().enumerate() {
                            d[bi * bounds.len() + si] = r.clone().map(|j| gx[j] * row[j]).sum();
                        }
                    }
                    acc_slice(nodes, store, &mut grads, *conf, d);
                }
            }
            grads[i] = Some(g);
        }

        let mut out = Gradients::default();
        for (id, v) in &self.param_nodes {
            if let Some(g) = grads[v.0].take() {
                out.grads.insert(*id, g.clone());
                grads[v.0] = Some(g);
            }
        }
        self.grads = grads;
        out
    }
}
