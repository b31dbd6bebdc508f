//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! reverse topological traversal that visits each node once.

use std::fmt;

use crate::conv::{self, ConvWants, KernelMask};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A scalar-valued function evaluated eagerly together with its gradient.
///
/// Used for fused objectives whose per-element derivative is cheaper to
/// write by hand than to compose from primitive ops.
pub trait ScalarObjective {
    fn name(&self) -> &'static str;

    /// Returns the objective value and its gradient with respect to `input`.
    fn value_and_grad(&self, input: &Tensor) -> Result<(f64, Tensor)>;
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
        mask: Option<KernelMask>,
    },
    Add(Var, Var),
    Leaky {
        input: Var,
        slope: f32,
    },
    Concat(Vec<Var>),
    Channels {
        input: Var,
        start: usize,
    },
    Sum(Var),
    Pick {
        input: Var,
        at: [usize; 4],
    },
    Objective {
        input: Var,
        name: &'static str,
        grad: Tensor,
    },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Add(..) => "add",
            Op::Leaky { .. } => "leaky",
            Op::Concat(_) => "concat",
            Op::Channels { .. } => "channels",
            Op::Sum(_) => "sum",
            Op::Pick { .. } => "pick",
            Op::Objective { name, .. } => name,
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    /// Extra precision for scalar objectives; `None` elsewhere.
    exact: Option<f64>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(
                self.nodes
                    .iter()
                    .map(|n| (n.op.tag(), n.value.shape(), n.needs_grad)),
            )
            .finish()
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

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            exact: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf whose gradient is tracked (parameters, probed inputs).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a node, using the `f64` result when one was recorded.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let node = &self.nodes[v.0];
        match node.exact {
            Some(x) => Ok(x),
            None => node.value.item().map(f64::from),
        }
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
        mask: Option<KernelMask>,
    ) -> Result<Var> {
        let value = conv::conv2d(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            dilation,
            mask.as_ref(),
        )?;
        let needs = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                dilation,
                mask,
            },
            value,
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.ensure_same_shape(tb, "add")?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, needs))
    }

    /// Leaky rectifier: `x` for `x > 0`, `slope * x` otherwise.
    pub fn leaky(&mut self, input: Var, slope: f32) -> Var {
        let value = self
            .value(input)
            .map(|x| if x > 0.0 { x } else { slope * x });
        let needs = self.needs(input);
        self.push(Op::Leaky { input, slope }, value, needs)
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Dimension("concat of an empty list".into()))?;
        let [n, _, h, w] = self.value(*first).shape().0;
        let mut channels = 0;
        for v in inputs {
            let [vn, vc, vh, vw] = self.value(*v).shape().0;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::Dimension(format!(
                    "concat: {} is incompatible with {}",
                    self.value(*v).shape(),
                    self.value(*first).shape()
                )));
            }
            channels += vc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * channels * plane);
        for b in 0..n {
            for v in inputs {
                let t = self.value(*v);
                let len = t.shape().c() * plane;
                data.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
            }
        }
        let value = Tensor::from_vec(Shape::new(n, channels, h, w), data)?;
        let needs = inputs.iter().any(|v| self.needs(*v));
        Ok(self.push(Op::Concat(inputs.to_vec()), value, needs))
    }

    /// Channel range `[start, start + len)` of `input`.
    pub fn channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(input).channels(start, len)?;
        let needs = self.needs(input);
        Ok(self.push(Op::Channels { input, start }, value, needs))
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).sum();
        let needs = self.needs(input);
        let v = self.push(Op::Sum(input), Tensor::scalar(total as f32), needs);
        self.nodes[v.0].exact = Some(total);
        v
    }

    /// A single element as a scalar node.
    pub fn pick(&mut self, input: Var, at: [usize; 4]) -> Result<Var> {
        let t = self.value(input);
        let shape = t.shape();
        if at.iter().zip(shape.0).any(|(&i, s)| i >= s) {
            return Err(Error::Dimension(format!(
                "pick index {at:?} out of bounds for {shape}"
            )));
        }
        let value = Tensor::scalar(t.get(at[0], at[1], at[2], at[3]));
        let needs = self.needs(input);
        Ok(self.push(Op::Pick { input, at }, value, needs))
    }

    pub fn objective(&mut self, input: Var, objective: &dyn ScalarObjective) -> Result<Var> {
        let (value, grad) = objective.value_and_grad(self.value(input))?;
        if grad.shape() != self.value(input).shape() {
            return Err(Error::Dimension(format!(
                "objective `{}` returned gradient {} for input {}",
                objective.name(),
                grad.shape(),
                self.value(input).shape()
            )));
        }
        let needs = self.needs(input);
        let v = self.push(
            Op::Objective {
                input,
                name: objective.name(),
                grad,
            },
            Tensor::scalar(value as f32),
            needs,
        );
        self.nodes[v.0].exact = Some(value);
        Ok(v)
    }

    /// Back-propagates from a scalar `root`, returning the gradient of every
    /// node that depends on a tracked leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != Shape::scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got {}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    dilation,
                    mask,
                } => {
                    let wants = ConvWants {
                        input: self.needs(*input),
                        kernel: self.needs(*kernel),
                        bias: self.needs(*bias),
                    };
                    let g = conv::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        self.value(*bias),
                        *dilation,
                        mask.as_ref(),
                        &upstream,
                        wants,
                    )?;
                    accumulate(&mut grads, *input, g.input);
                    accumulate(&mut grads, *kernel, g.kernel);
                    accumulate(&mut grads, *bias, g.bias);
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, Some(upstream.clone()));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, Some(upstream.clone()));
                    }
                }
                Op::Leaky { input, slope } => {
                    let x = self.value(*input);
                    let data = x
                        .data()
                        .iter()
                        .zip(upstream.data())
                        .map(|(&xv, &g)| if xv > 0.0 { g } else { slope * g })
                        .collect();
                    accumulate(&mut grads, *input, Some(Tensor::from_vec(x.shape(), data)?));
                }
                Op::Concat(inputs) => {
                    let mut start = 0;
                    for v in inputs {
                        let c = self.value(*v).shape().c();
                        if self.needs(*v) {
                            accumulate(&mut grads, *v, Some(upstream.channels(start, c)?));
                        }
                        start += c;
                    }
                }
                Op::Channels { input, start } => {
                    let shape = self.value(*input).shape();
                    let len = upstream.shape().c();
                    let mut g = Tensor::zeros(shape);
                    for n in 0..shape.n() {
                        for c in 0..len {
                            g.plane_mut(n, start + c)
                                .copy_from_slice(upstream.plane(n, c));
                        }
                    }
                    accumulate(&mut grads, *input, Some(g));
                }
                Op::Sum(input) => {
                    let shape = self.value(*input).shape();
                    accumulate(&mut grads, *input, Some(Tensor::full(shape, upstream.data()[0])));
                }
                Op::Pick { input, at } => {
                    let mut g = Tensor::zeros(self.value(*input).shape());
                    g.set(at[0], at[1], at[2], at[3], upstream.data()[0]);
                    accumulate(&mut grads, *input, Some(g));
                }
                Op::Objective { input, grad, .. } => {
                    let scale = upstream.data()[0];
                    accumulate(&mut grads, *input, Some(grad.map(|g| g * scale)));
                }
            }
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Option<Tensor>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        slot @ None => *slot = Some(g),
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
