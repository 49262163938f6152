use std::collections::HashMap;

use indexmap::IndexMap;

use super::conv::{self, ConvSpec};
use super::ops::{self, BnAffine};
use super::{Backend, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d(ConvSpec),
    MaxPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    Resize,
    Relu,
    Sigmoid,
    Softplus,
    Add,
    Mul,
    Concat { first_channels: usize },
    ChannelScale,
    BatchNorm(BnAffine<T>),
    Sum,
    LogL1 { grad: Tensor<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Tape of recorded operations. Nodes are appended after their inputs, so
/// index order is a topological order of the DAG.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
    consumed: bool,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    by_var: HashMap<Var, Tensor<T>>,
    by_name: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, var: Var) -> Option<&Tensor<T>> {
        self.by_var.get(&var)
    }

    pub fn named(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    /// Gradients of trainable parameters, keyed by name in registration order.
    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.by_name
    }

    pub fn into_params(self) -> IndexMap<String, Tensor<T>> {
        self.by_name
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: IndexMap::new(),
            consumed: false,
        }
    }

    /// A differentiable input that is not a named parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, Vec::new(), true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<Var>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<Var>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, inputs, requires_grad)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse pass from a scalar. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Usage("backward called twice on the same tape".into()));
        }
        if self.val(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.val(loss).dims()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut by_var = HashMap::new();
        if !self.needs(loss) {
            return Ok(Gradients {
                by_var,
                by_name: IndexMap::new(),
            });
        }
        grads[loss.0] = Some(Tensor::ones(self.val(loss).dims().to_vec()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                by_var.insert(Var(i), dy);
                continue;
            }
            for (input, g) in self.input_grads(node, &dy)? {
                if !self.needs(input) {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.accumulate(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let by_name = self
            .params
            .iter()
            .filter_map(|(name, v)| by_var.get(v).map(|g| (name.clone(), g.clone())))
            .collect();
        Ok(Gradients { by_var, by_name })
    }

    fn input_grads(&self, node: &Node<T>, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let ins = &node.inputs;
        let x = |k: usize| self.val(ins[k]);
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d(spec) => {
                let want = [self.needs(ins[0]), self.needs(ins[1]), self.needs(ins[2])];
                let g = conv::conv2d_backward(x(0), x(1), spec, dy, want)?;
                [g.input, g.weights, g.bias]
                    .into_iter()
                    .zip(ins)
                    .filter_map(|(g, &v)| g.map(|g| (v, g)))
                    .collect()
            }
            Op::MaxPool { kernel, stride } => {
                vec![(ins[0], ops::max_pool2d_backward(x(0), *kernel, *stride, dy)?)]
            }
            Op::GlobalAvgPool => vec![(ins[0], ops::global_avg_pool_backward(x(0).dims(), dy)?)],
            Op::Resize => vec![(ins[0], ops::resize_bilinear_backward(x(0).dims(), dy)?)],
            Op::Relu => vec![(ins[0], ops::relu_backward(x(0), dy))],
            Op::Sigmoid => vec![(ins[0], ops::sigmoid_backward(&node.value, dy))],
            Op::Softplus => vec![(ins[0], ops::softplus_backward(x(0), dy))],
            Op::Add => vec![(ins[0], dy.clone()), (ins[1], dy.clone())],
            Op::Mul => vec![(ins[0], ops::mul(dy, x(1))?), (ins[1], ops::mul(dy, x(0))?)],
            Op::Concat { first_channels } => {
                let (a, b) = ops::concat_channels_backward(*first_channels, dy)?;
                vec![(ins[0], a), (ins[1], b)]
            }
            Op::ChannelScale => {
                let (dx, dw) = ops::channel_scale_backward(x(0), x(1), dy)?;
                vec![(ins[0], dx), (ins[1], dw)]
            }
            Op::BatchNorm(bn) => vec![(ins[0], bn.backward(dy)?)],
            Op::Sum => {
                let g = dy.data()[0];
                vec![(ins[0], Tensor::full(x(0).dims().to_vec(), g))]
            }
            Op::LogL1 { grad } => {
                let g = dy.data()[0];
                vec![(ins[0], grad.map(|v| v * g))]
            }
        };
        Ok(out)
    }
}

impl<T: Real> Backend<T> for Graph<T> {
    type Value = Var;

    fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, Vec::new(), false)
    }

    fn parameter(&mut self, name: &str, value: &Tensor<T>, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, Vec::new(), trainable);
        if trainable {
            self.params.insert(name.to_string(), v);
        }
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.val(*v)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, spec: &ConvSpec) -> Result<Var> {
        let y = conv::conv2d(self.val(*x), self.val(*w), self.val(*b), spec)?;
        Ok(self.record(y, Op::Conv2d(*spec), vec![*x, *w, *b]))
    }

    fn max_pool2d(&mut self, x: &Var, kernel: usize, stride: usize) -> Result<Var> {
        let y = ops::max_pool2d(self.val(*x), kernel, stride)?;
        Ok(self.record(y, Op::MaxPool { kernel, stride }, vec![*x]))
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.val(*x))?;
        Ok(self.record(y, Op::GlobalAvgPool, vec![*x]))
    }

    fn resize_bilinear(&mut self, x: &Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = ops::resize_bilinear(self.val(*x), out_h, out_w)?;
        Ok(self.record(y, Op::Resize, vec![*x]))
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        let y = ops::relu(self.val(*x));
        Ok(self.record(y, Op::Relu, vec![*x]))
    }

    fn sigmoid(&mut self, x: &Var) -> Result<Var> {
        let y = ops::sigmoid(self.val(*x));
        Ok(self.record(y, Op::Sigmoid, vec![*x]))
    }

    fn softplus(&mut self, x: &Var) -> Result<Var> {
        let y = ops::softplus(self.val(*x));
        Ok(self.record(y, Op::Softplus, vec![*x]))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::add(self.val(*a), self.val(*b))?;
        Ok(self.record(y, Op::Add, vec![*a, *b]))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::mul(self.val(*a), self.val(*b))?;
        Ok(self.record(y, Op::Mul, vec![*a, *b]))
    }

    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::concat_channels(self.val(*a), self.val(*b))?;
        let first_channels = self.val(*a).dims()[1];
        Ok(self.record(y, Op::Concat { first_channels }, vec![*a, *b]))
    }

    fn channel_scale(&mut self, x: &Var, weights: &Var) -> Result<Var> {
        let y = ops::channel_scale(self.val(*x), self.val(*weights))?;
        Ok(self.record(y, Op::ChannelScale, vec![*x, *weights]))
    }

    fn batchnorm_frozen(&mut self, x: &Var, bn: &BnAffine<T>) -> Result<Var> {
        let y = bn.apply(self.val(*x))?;
        Ok(self.record(y, Op::BatchNorm(bn.clone()), vec![*x]))
    }

    fn sum(&mut self, x: &Var) -> Result<Var> {
        let y = Tensor::scalar(self.val(*x).sum());
        Ok(self.record(y, Op::Sum, vec![*x]))
    }

    fn log_l1_loss(&mut self, pred: &Var, truth: &Tensor<T>, mask: &[bool]) -> Result<Var> {
        let r = ops::log_l1_loss(self.val(*pred), truth, mask)?;
        Ok(self.record(Tensor::scalar(r.loss), Op::LogL1 { grad: r.grad }, vec![*pred]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sum_gradient_on_positive_side() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.relu(&x).unwrap();
        let s = g.sum(&y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.of(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = g.add(&x, &x).unwrap();
        let s = g.sum(&y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.of(x).unwrap().data(), &[2.0; 3]);
    }

    #[test]
    fn backward_usage_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::ones([2]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
        let s = g.sum(&x).unwrap();
        assert!(g.backward(s).is_ok());
        assert!(matches!(g.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.parameter("a", &Tensor::scalar(2.0), true);
        let b = g.parameter("b", &Tensor::scalar(5.0), false);
        assert_eq!(g.parameter("a", &Tensor::scalar(9.0), true), a);
        let y = g.add(&a, &b).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.params().keys().collect::<Vec<_>>(), ["a"]);
        assert!(grads.of(b).is_none());
    }
}
