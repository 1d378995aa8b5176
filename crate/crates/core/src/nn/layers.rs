//! Trainable layers: parameter storage, seeded init, and forward methods
//! that bind parameters onto a tape through a [`Cx`].
//!
//! Every layer registers its parameters in the same order its `visit`
//! method walks them; the trainer relies on that alignment to map tape
//! gradients back onto parameter storage.

use super::conv::{self, Conv1dSpec};
use super::init::{uniform_fan_in, Rng};
use super::ops;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Forward context: a tape plus the ordered parameter bindings of the
/// pass. Frozen sections bind parameters as constants so the trainer
/// never sees them.
pub struct Cx<'t> {
    pub tape: &'t mut Tape,
    param_ids: Vec<Var>,
    collect: bool,
}

impl<'t> Cx<'t> {
    pub fn new(tape: &'t mut Tape) -> Self {
        Self {
            tape,
            param_ids: Vec::new(),
            collect: true,
        }
    }

    /// Binds a parameter tensor as a tape leaf, registering it for
    /// gradient collection unless inside a frozen section.
    pub fn param(&mut self, value: &Tensor) -> Var {
        let var = self.tape.leaf(value.clone());
        if self.collect {
            self.param_ids.push(var);
        }
        var
    }

    /// Runs `f` with parameter collection disabled. Gradients still flow
    /// through the frozen section to its inputs.
    pub fn frozen<R>(&mut self, f: impl FnOnce(&mut Self) -> R) -> R {
        let prev = self.collect;
        self.collect = false;
        let out = f(self);
        self.collect = prev;
        out
    }

    pub fn param_ids(&self) -> &[Var] {
        &self.param_ids
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor, // (out, in)
    pub bias: Tensor,   // (out)
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Self {
            weight: uniform_fan_in(&[out_dim, in_dim], in_dim, rng),
            bias: uniform_fan_in(&[out_dim], in_dim, rng),
        }
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Var {
        let w = cx.param(&self.weight);
        let b = cx.param(&self.bias);
        ops::linear(cx.tape, x, w, b)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Tensor, // (out, in/groups, k)
    pub bias: Tensor,   // (out)
    pub spec: Conv1dSpec,
}

impl Conv1d {
    pub fn new(cin: usize, cout: usize, kernel: usize, spec: Conv1dSpec, rng: &mut Rng) -> Self {
        let cpg = cin / spec.groups;
        Self {
            weight: uniform_fan_in(&[cout, cpg, kernel], cpg * kernel, rng),
            bias: uniform_fan_in(&[cout], cpg * kernel, rng),
            spec,
        }
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Var {
        let w = cx.param(&self.weight);
        let b = cx.param(&self.bias);
        conv::conv1d(cx.tape, x, w, b, self.spec)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: Tensor, // (in, out, k)
    pub bias: Tensor,   // (out)
    pub stride: usize,
}

impl ConvTranspose1d {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Self {
        Self {
            weight: uniform_fan_in(&[cin, cout, kernel], cin * kernel, rng),
            bias: uniform_fan_in(&[cout], cin * kernel, rng),
            stride,
        }
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Var {
        let w = cx.param(&self.weight);
        let b = cx.param(&self.bias);
        conv::conv_transpose1d(cx.tape, x, w, b, self.stride)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor, // (out, in, kh, kw)
    pub bias: Tensor,   // (out)
    pub pad: (usize, usize),
}

impl Conv2d {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        pad: (usize, usize),
        rng: &mut Rng,
    ) -> Self {
        let fan_in = cin * kernel.0 * kernel.1;
        Self {
            weight: uniform_fan_in(&[cout, cin, kernel.0, kernel.1], fan_in, rng),
            bias: uniform_fan_in(&[cout], fan_in, rng),
            pad,
        }
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Var {
        let w = cx.param(&self.weight);
        let b = cx.param(&self.bias);
        conv::conv2d(cx.tape, x, w, b, self.pad.0, self.pad.1)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&mut self, cx: &mut Cx, x: Var, train: bool) -> Var {
        let g = cx.param(&self.gamma);
        let b = cx.param(&self.beta);
        if train {
            let n = {
                let s = cx.tape.value(x).shape();
                s[0] * s[2] * s[3]
            };
            let (y, stats) = conv::batchnorm2d_train(cx.tape, x, g, b, self.eps);
            // Unbiased variance in the running estimate, as is conventional.
            let correction = if n > 1 {
                n as f64 / (n as f64 - 1.0)
            } else {
                1.0
            };
            for c in 0..self.running_mean.len() {
                self.running_mean[c] =
                    (1.0 - self.momentum) * self.running_mean[c] + self.momentum * stats.mean[c];
                self.running_var[c] = (1.0 - self.momentum) * self.running_var[c]
                    + self.momentum * stats.var[c] * correction;
            }
            y
        } else {
            conv::batchnorm2d_eval(
                cx.tape,
                x,
                g,
                b,
                &self.running_mean,
                &self.running_var,
                self.eps,
            )
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }

    /// Running statistics, exposed as named tensors for checkpointing.
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, BufferRef)) {
        f(format!("{prefix}.running_mean"), BufferRef(&mut self.running_mean));
        f(format!("{prefix}.running_var"), BufferRef(&mut self.running_var));
    }
}

/// Mutable view of a non-trainable state vector (batch-norm running stats).
pub struct BufferRef<'a>(pub &'a mut Vec<f64>);

#[derive(Debug, Clone)]
pub struct GlobalLayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl GlobalLayerNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            eps: 1e-8,
        }
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Var {
        let g = cx.param(&self.gamma);
        let b = cx.param(&self.beta);
        conv::global_layer_norm(cx.tape, x, g, b, self.eps)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

#[derive(Debug, Clone)]
pub struct PRelu {
    pub alpha: Tensor,
}

impl PRelu {
    pub fn new(channels: usize) -> Self {
        Self {
            alpha: Tensor::filled(&[channels], 0.25),
        }
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Var {
        let a = cx.param(&self.alpha);
        ops::prelu(cx.tape, x, a)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.alpha"), &mut self.alpha);
    }
}
