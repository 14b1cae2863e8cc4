//! Residual blocks and sequential stacks with explicit backward passes.

use serde::{Deserialize, Serialize};

use super::conv::{Conv2d, ConvTranspose2d};
use super::param::{join, Param, Parameterized};
use super::tensor::Tensor;

/// Pointwise activation. Every variant's derivative is recoverable from its output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Act {
    Identity,
    Relu,
    LeakyRelu(f32),
    Sigmoid,
}

impl Act {
    pub fn apply(self, t: &mut Tensor) {
        match self {
            Act::Identity => {}
            Act::Relu => t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            Act::LeakyRelu(a) => t.data_mut().iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v *= a
                }
            }),
            Act::Sigmoid => t.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
    }

    /// Multiplies `grad` in place by the derivative evaluated at `out`.
    pub fn backward(self, out: &Tensor, grad: &mut Tensor) {
        let g = grad.data_mut().iter_mut().zip(out.data());
        match self {
            Act::Identity => {}
            Act::Relu => g.for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Act::LeakyRelu(a) => g.for_each(|(g, &y)| {
                if y < 0.0 {
                    *g *= a
                }
            }),
            Act::Sigmoid => g.for_each(|(g, &y)| *g *= y * (1.0 - y)),
        }
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConvLayer {
    Conv(Conv2d),
    Transposed(ConvTranspose2d),
}

impl ConvLayer {
    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            ConvLayer::Conv(c) => c.forward(x),
            ConvLayer::Transposed(c) => c.forward(x),
        }
    }

    pub fn backward(&mut self, x: &Tensor, grad: &Tensor, param_grads: bool) -> Tensor {
        match self {
            ConvLayer::Conv(c) => c.backward(x, grad, param_grads),
            ConvLayer::Transposed(c) => c.backward(x, grad, param_grads),
        }
    }
}

impl Parameterized for ConvLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            ConvLayer::Conv(c) => c.visit(prefix, f),
            ConvLayer::Transposed(c) => c.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            ConvLayer::Conv(c) => c.visit_mut(prefix, f),
            ConvLayer::Transposed(c) => c.visit_mut(prefix, f),
        }
    }
}

/// `out = act_out(conv2(act_mid(conv1(x))) + skip(x))`, identity skip when `skip` is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub skip: Option<ConvLayer>,
    pub mid: Act,
    pub out: Act,
}

/// One element of a [`Sequential`] stack.
#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Residual(ResidualBlock),
    Plain(ConvLayer, Act),
}

#[derive(Clone, Debug)]
struct StageOut {
    mid: Option<Tensor>,
    out: Tensor,
}

/// Activations retained by [`Sequential::forward_train`].
#[derive(Clone, Debug)]
pub struct SeqCache {
    input: Tensor,
    stages: Vec<StageOut>,
}

impl SeqCache {
    pub fn output(&self) -> &Tensor {
        self.stages.last().map_or(&self.input, |s| &s.out)
    }
}

/// A linear stack of stages.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sequential {
    pub stages: Vec<Stage>,
}

impl Sequential {
    pub fn new(stages: Vec<Stage>) -> Self {
        Self { stages }
    }

    fn run_stage(stage: &Stage, x: &Tensor) -> StageOut {
        match stage {
            Stage::Plain(layer, act) => {
                let mut out = layer.forward(x);
                act.apply(&mut out);
                StageOut { mid: None, out }
            }
            Stage::Residual(block) => {
                let mut mid = block.conv1.forward(x);
                block.mid.apply(&mut mid);
                let mut out = block.conv2.forward(&mid);
                match &block.skip {
                    Some(skip) => out.add_assign(&skip.forward(x)),
                    None => out.add_assign(x),
                }
                block.out.apply(&mut out);
                StageOut { mid: Some(mid), out }
            }
        }
    }

    /// Inference pass; keeps only the running activation.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for stage in &self.stages {
            cur = Self::run_stage(stage, &cur).out;
        }
        cur
    }

    pub fn forward_train(&self, x: Tensor) -> SeqCache {
        let mut stages: Vec<StageOut> = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let out = Self::run_stage(stage, stages.last().map_or(&x, |s| &s.out));
            stages.push(out);
        }
        SeqCache { input: x, stages }
    }

    /// Backpropagates `grad` (w.r.t. the stack output) to the stack input.
    pub fn backward(&mut self, cache: &SeqCache, mut grad: Tensor, param_grads: bool) -> Tensor {
        for (i, stage) in self.stages.iter_mut().enumerate().rev() {
            let input = if i == 0 { &cache.input } else { &cache.stages[i - 1].out };
            let saved = &cache.stages[i];
            grad = match stage {
                Stage::Plain(layer, act) => {
                    act.backward(&saved.out, &mut grad);
                    layer.backward(input, &grad, param_grads)
                }
                Stage::Residual(block) => {
                    block.out.backward(&saved.out, &mut grad);
                    let mid = saved.mid.as_ref().expect("residual stage keeps its mid activation");
                    let mut g_mid = block.conv2.backward(mid, &grad, param_grads);
                    block.mid.backward(mid, &mut g_mid);
                    let mut g_x = block.conv1.backward(input, &g_mid, param_grads);
                    match &mut block.skip {
                        Some(skip) => g_x.add_assign(&skip.backward(input, &grad, param_grads)),
                        None => g_x.add_assign(&grad),
                    }
                    g_x
                }
            };
        }
        grad
    }
}

impl Parameterized for Sequential {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, stage) in self.stages.iter().enumerate() {
            let p = join(prefix, &i.to_string());
            match stage {
                Stage::Plain(layer, _) => layer.visit(&p, f),
                Stage::Residual(b) => {
                    b.conv1.visit(&join(&p, "conv1"), f);
                    b.conv2.visit(&join(&p, "conv2"), f);
                    if let Some(s) = &b.skip {
                        s.visit(&join(&p, "skip"), f);
                    }
                }
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &i.to_string());
            match stage {
                Stage::Plain(layer, _) => layer.visit_mut(&p, f),
                Stage::Residual(b) => {
                    b.conv1.visit_mut(&join(&p, "conv1"), f);
                    b.conv2.visit_mut(&join(&p, "conv2"), f);
                    if let Some(s) = &mut b.skip {
                        s.visit_mut(&join(&p, "skip"), f);
                    }
                }
            }
        }
    }
}
