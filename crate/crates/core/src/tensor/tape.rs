use super::ops::conv::{self, ConvAlgo, ConvGeometry};
use super::ops::{activation, elementwise, loss, norm, pool, resample, shape_ops};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded operation with whatever it needs for its backward pass.
#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        algo: ConvAlgo,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        scale: usize,
        mode: resample::UpsampleMode,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Sigmoid {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    ChannelScale {
        input: Var,
        gate: Var,
    },
    ReflectPad {
        input: Var,
        pads: shape_ops::Pads,
    },
    Crop {
        input: Var,
        top: usize,
        left: usize,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
    },
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
}

/// Ordered record of executed operations. Replaying it in reverse from a
/// scalar loss populates the gradient of every reachable `requires_grad`
/// leaf. A tape supports a single backward pass.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    flops: u64,
    conv_algo: ConvAlgo,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            flops: 0,
            conv_algo: ConvAlgo::Im2col,
        }
    }

    pub fn with_conv_algo(mut self, algo: ConvAlgo) -> Self {
        self.conv_algo = algo;
        self
    }

    pub fn set_conv_algo(&mut self, algo: ConvAlgo) {
        self.conv_algo = algo;
    }

    pub fn conv_algo(&self) -> ConvAlgo {
        self.conv_algo
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Forward FLOPs accumulated by recorded ops.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub(crate) fn add_flops(&mut self, n: u64) {
        self.flops += n;
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(!self.consumed, "recording onto a consumed tape");
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_requires_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    /// Populates gradients of every `requires_grad` node reachable from `loss`.
    ///
    /// Intermediate gradients are released once propagated; leaf gradients stay.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("backward called twice on a consumed tape".into()));
        }
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Tape(format!("unknown var {}", loss.0)))?;
        if loss_node.value.numel() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        self.consumed = true;
        if !loss_node.value.requires_grad() {
            return Ok(());
        }
        self.nodes[loss.0].value.accumulate_grad(&[T::one()]);

        for i in (0..=loss.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &mut tail[0];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = node.value.take_grad() else {
                continue;
            };
            let contributions = backward_op(head, node, &grad);
            for (var, contrib) in contributions {
                let target = &mut head[var.0].value;
                if target.requires_grad() {
                    target.accumulate_grad(&contrib);
                }
            }
        }
        Ok(())
    }
}

/// Gradient contributions of one node to its inputs.
fn backward_op<T: Real>(head: &[Node<T>], node: &Node<T>, grad: &[T]) -> Vec<(Var, Vec<T>)> {
    let rg = |v: Var| head[v.0].value.requires_grad();
    let val = |v: Var| &head[v.0].value;
    let out = &node.value;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
            algo,
        } => conv::backward(
            val(*input),
            val(*weight),
            grad,
            geom,
            *algo,
            rg(*input),
            rg(*weight),
        )
        .into_iter()
        .zip([*input, *weight])
        .filter_map(|(g, v)| g.map(|g| (v, g)))
        .chain((*bias).filter(|b| rg(*b)).map(|b| (b, conv::bias_grad(grad, geom))))
        .collect(),
        Op::BatchNorm {
            input,
            gamma,
            beta,
            normalized,
            inv_std,
            training,
        } => {
            let g = norm::backward(
                out.shape(),
                val(*gamma).data(),
                normalized,
                inv_std,
                *training,
                grad,
            );
            let mut res = Vec::new();
            if rg(*input) {
                res.push((*input, g.input));
            }
            if rg(*gamma) {
                res.push((*gamma, g.gamma));
            }
            if rg(*beta) {
                res.push((*beta, g.beta));
            }
            res
        }
        Op::MaxPool { input, argmax } => {
            let mut g = vec![T::zero(); val(*input).numel()];
            for (&src, &dy) in argmax.iter().zip(grad) {
                g[src] += dy;
            }
            vec![(*input, g)]
        }
        Op::Upsample { input, scale, mode } => {
            vec![(*input, resample::backward(val(*input).shape(), *scale, *mode, grad))]
        }
        Op::LeakyRelu { input, slope } => {
            vec![(*input, activation::leaky_relu_backward(val(*input).data(), *slope, grad))]
        }
        Op::Sigmoid { input } => {
            vec![(*input, activation::sigmoid_backward(out.data(), grad))]
        }
        Op::Dropout { input, mask } => {
            vec![(*input, grad.iter().zip(mask).map(|(&g, &m)| g * m).collect())]
        }
        Op::GlobalAvgPool { input } => {
            vec![(*input, pool::global_avg_backward(val(*input).shape(), grad))]
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let (gx, gw, gb) = elementwise::linear_backward(
                val(*input),
                val(*weight),
                grad,
                rg(*input),
                rg(*weight),
                (*bias).is_some_and(rg),
            );
            let mut res = Vec::new();
            if let Some(g) = gx {
                res.push((*input, g));
            }
            if let Some(g) = gw {
                res.push((*weight, g));
            }
            if let (Some(b), Some(g)) = (bias, gb) {
                res.push((*b, g));
            }
            res
        }
        Op::Add { a, b } => vec![(*a, grad.to_vec()), (*b, grad.to_vec())],
        Op::Mul { a, b } => {
            let ga = grad.iter().zip(val(*b).data()).map(|(&g, &y)| g * y).collect();
            let gb = grad.iter().zip(val(*a).data()).map(|(&g, &x)| g * x).collect();
            vec![(*a, ga), (*b, gb)]
        }
        Op::Concat { inputs } => {
            let shapes: Vec<&[usize]> = inputs.iter().map(|&v| val(v).shape()).collect();
            shape_ops::concat_backward(&shapes, grad)
                .into_iter()
                .zip(inputs.iter().copied())
                .map(|(g, v)| (v, g))
                .collect()
        }
        Op::ChannelScale { input, gate } => {
            let (gx, gg) = elementwise::channel_scale_backward(val(*input), val(*gate), grad);
            vec![(*input, gx), (*gate, gg)]
        }
        Op::ReflectPad { input, pads } => {
            vec![(*input, shape_ops::reflect_pad_backward(val(*input).shape(), *pads, grad))]
        }
        Op::Crop { input, top, left } => vec![(
            *input,
            shape_ops::crop_backward(val(*input).shape(), out.shape(), *top, *left, grad),
        )],
        Op::Sum { input } => vec![(*input, vec![grad[0]; val(*input).numel()])],
        Op::Mean { input } => {
            let n = val(*input).numel();
            vec![(*input, vec![grad[0] / T::lit(n as f64); n])]
        }
        Op::BceWithLogits { logits, targets } => {
            vec![(*logits, loss::bce_backward(val(*logits).data(), targets, grad[0]))]
        }
    }
}
