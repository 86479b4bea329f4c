//! A recording tape for reverse-mode differentiation over the layer kernels.
//!
//! A forward pass appends nodes to a [`Graph`]; [`Graph::backward`] then walks
//! the tape in reverse from any set of seeded output gradients.

use std::collections::HashMap;

use super::ops;
use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(usize),
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2 {
        x: Var,
        w: Var,
        b: Var,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Dropout {
        x: Var,
        keep: Vec<bool>,
        scale: f64,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SoftmaxChannels {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for each parameter of a store with `count` entries, zero for
    /// parameters the graph never touched.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for &(idx, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                out[idx].add_assign(g);
            }
        }
        out
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::get`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Parameter `idx` of `store`; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, idx: usize) -> Var {
        if let Some(&v) = self.param_vars.get(&idx) {
            return v;
        }
        let v = self.push(store.get(idx).clone(), Op::Param(idx), true);
        self.param_vars.insert(idx, v);
        v
    }

    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Var {
        let idx = store
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        self.param(store, idx)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let y = ops::conv2d_forward(self.value(x), self.value(w), stride, pad);
        let rg = self.rg(x) || self.rg(w);
        self.push(y, Op::Conv2d { x, w, stride, pad }, rg)
    }

    pub fn conv_transpose2(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = ops::conv_transpose2_forward(self.value(x), self.value(w), self.value(b));
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(y, Op::ConvTranspose2 { x, w, b }, rg)
    }

    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (y, xhat, inv_std) =
            ops::instance_norm_forward(self.value(x), self.value(gamma), self.value(beta));
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            y,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Adds `b[c]` to every pixel of channel `c`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(self.value(b).len(), c, "channel bias length");
        let plane = h * w;
        let mut y = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            let bc = bias[i % c];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
        debug_assert_eq!(y.len(), n * c * plane);
        let rg = self.rg(x) || self.rg(b);
        self.push(y, Op::ChannelBias { x, b }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let y = ops::leaky_relu_forward(self.value(x), slope);
        let rg = self.rg(x);
        self.push(y, Op::LeakyRelu { x, slope }, rg)
    }

    /// Zeroes the units where `keep` is false and multiplies the rest by `scale`.
    pub fn dropout(&mut self, x: Var, keep: Vec<bool>, scale: f64) -> Var {
        assert_eq!(keep.len(), self.value(x).len(), "dropout mask length");
        let mut y = self.value(x).clone();
        apply_mask(y.data_mut(), &keep, scale);
        let rg = self.rg(x);
        self.push(y, Op::Dropout { x, keep, scale }, rg)
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (y, argmax) = ops::max_pool2_forward(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::MaxPool2 { x, argmax }, rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let y = ops::concat_channels(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Concat { a, b }, rg)
    }

    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let y = ops::softmax_channels_forward(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::SoftmaxChannels { x }, rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let y = ops::global_avg_pool_forward(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::GlobalAvgPool { x }, rg)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = ops::linear_forward(self.value(x), self.value(w), self.value(b));
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(y, Op::Linear { x, w, b }, rg)
    }

    /// Reverse sweep from the given output gradients. Seeds on the same node
    /// are summed.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(
                g.shape(),
                self.nodes[v.0].value.shape(),
                "seed gradient shape mismatch"
            );
            accumulate(&mut grads, v, g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Input | Op::Param(_) | Op::Constant);
            if is_leaf {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &dy, &mut grads);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, Var(i))),
                _ => None,
            })
            .collect();
        Gradients { grads, params }
    }

    fn propagate(&self, op: &Op, y: &Tensor, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::Conv2d { x, w, stride, pad } => {
                let (dx, dw) = ops::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    dy,
                    *stride,
                    *pad,
                    self.rg(*x),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if self.rg(*w) {
                    accumulate(grads, *w, dw);
                }
            }
            Op::ConvTranspose2 { x, w, b } => {
                let (dx, dw, db) =
                    ops::conv_transpose2_backward(self.value(*x), self.value(*w), dy, self.rg(*x));
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if self.rg(*w) {
                    accumulate(grads, *w, dw);
                }
                if self.rg(*b) {
                    accumulate(grads, *b, db);
                }
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (dx, dg, db) = ops::instance_norm_backward(dy, self.value(*gamma), xhat, inv_std);
                if self.rg(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.rg(*gamma) {
                    accumulate(grads, *gamma, dg);
                }
                if self.rg(*beta) {
                    accumulate(grads, *beta, db);
                }
            }
            Op::ChannelBias { x, b } => {
                if self.rg(*b) {
                    let (_, c, h, w) = dy.dims4();
                    let mut db = Tensor::zeros(&[c]);
                    for (i, chunk) in dy.data().chunks(h * w).enumerate() {
                        db.data_mut()[i % c] += chunk.iter().sum::<f64>();
                    }
                    accumulate(grads, *b, db);
                }
                if self.rg(*x) {
                    accumulate(grads, *x, dy.clone());
                }
            }
            Op::LeakyRelu { x, slope } => {
                accumulate(grads, *x, ops::leaky_relu_backward(y, dy, *slope));
            }
            Op::Dropout { x, keep, scale } => {
                let mut dx = dy.clone();
                apply_mask(dx.data_mut(), keep, *scale);
                accumulate(grads, *x, dx);
            }
            Op::MaxPool2 { x, argmax } => {
                let dx = ops::max_pool2_backward(self.value(*x).shape(), dy, argmax);
                accumulate(grads, *x, dx);
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).shape()[1];
                let (da, db) = ops::split_channels(dy, ca);
                if self.rg(*a) {
                    accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    accumulate(grads, *b, db);
                }
            }
            Op::SoftmaxChannels { x } => {
                accumulate(grads, *x, ops::softmax_channels_backward(y, dy));
            }
            Op::GlobalAvgPool { x } => {
                let dx = ops::global_avg_pool_backward(self.value(*x).shape(), dy);
                accumulate(grads, *x, dx);
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = ops::linear_backward(self.value(*x), self.value(*w), dy);
                if self.rg(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.rg(*w) {
                    accumulate(grads, *w, dw);
                }
                if self.rg(*b) {
                    accumulate(grads, *b, db);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn apply_mask(values: &mut [f64], keep: &[bool], scale: f64) {
    for (v, &k) in values.iter_mut().zip(keep) {
        *v *= scale * f64::from(u8::from(k));
    }
}
