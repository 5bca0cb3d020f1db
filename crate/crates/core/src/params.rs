//! Named parameter trees.
//!
//! Every trainable block is generic over its leaf type so the same layout
//! holds tensors, tape handles (while differentiating) or gradients. Leaves
//! are visited in a fixed order and named with dotted paths such as
//! `gdd.layers.0.ssm.a_log`; those names are the checkpoint keys.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Grads, Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{}.{}", prefix, name)
    }
}

/// A structure whose leaves can be mapped and mutated in a fixed order.
pub trait ParamTree<T> {
    type Mapped<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::Mapped<U>;

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T));

    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &T)) {
        let _ = self.map(prefix, &mut |name, t| f(name, t));
    }
}

/// Bind every tensor as a differentiable tape leaf.
pub fn bind<P: ParamTree<Tensor>>(params: &P, prefix: &str, tape: &mut Tape) -> P::Mapped<Var> {
    params.map(prefix, &mut |_, t| tape.param_tensor(t))
}

/// Flattened gradients of a bound tree, in visiting order.
pub fn collect_grads<P: ParamTree<Var>>(bound: &P, prefix: &str, grads: &Grads, tape: &Tape) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    bound.for_each(prefix, &mut |_, v| out.push(grads.get_or_zeros(*v, tape.value(*v).len())));
    out
}

pub fn count<P: ParamTree<Tensor>>(params: &P) -> usize {
    let mut n = 0;
    params.for_each("", &mut |_, t| n += t.len());
    n
}

/// Affine map `x W + b`; `W` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: Option<T>,
}

impl<T> ParamTree<T> for Linear<T> {
    type Mapped<U> = Linear<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Linear<U> {
        Linear {
            weight: f(&join(prefix, "weight"), &self.weight),
            bias: self.bias.as_ref().map(|b| f(&join(prefix, "bias"), b)),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(&join(prefix, "bias"), b);
        }
    }
}

impl Linear<Var> {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        tape.linear(x, self.weight, self.bias)
    }
}

impl Linear<Tensor> {
    pub fn zeros(inputs: usize, outputs: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: bias.then(|| Tensor::zeros(&[1, outputs])),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: T,
    pub bias: T,
}

impl<T> ParamTree<T> for LayerNorm<T> {
    type Mapped<U> = LayerNorm<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> LayerNorm<U> {
        LayerNorm { gain: f(&join(prefix, "gain"), &self.gain), bias: f(&join(prefix, "bias"), &self.bias) }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl LayerNorm<Tensor> {
    pub fn identity(width: usize) -> Self {
        Self { gain: Tensor::filled(&[1, width], 1.0), bias: Tensor::zeros(&[1, width]) }
    }
}

impl LayerNorm<Var> {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        tape.layer_norm(x, self.gain, self.bias)
    }
}

impl<T, P: ParamTree<T>> ParamTree<T> for Vec<P> {
    type Mapped<U> = Vec<P::Mapped<U>>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::Mapped<U> {
        self.iter().enumerate().map(|(i, p)| p.map(&join(prefix, &format!("{}", i)), f)).collect()
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.for_each_mut(&join(prefix, &format!("{}", i)), f);
        }
    }
}
