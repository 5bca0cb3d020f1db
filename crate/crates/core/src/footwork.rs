//! Footwork adaptor: re-predicts each frame conditioned on the root
//! velocity, and keeps only the lower-body part of its output.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::motion::{lower_body_mask, split_merge_body, GroupMotion, MOTION_DIM};
use crate::params::{bind, join, Linear, ParamTree};
use crate::tensor::Tensor;

/// Width of the per-frame context (root velocity).
pub const CONTEXT_DIM: usize = 3;

/// `feature(x) * sigmoid(gate(ctx)) + bias(ctx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatSquash<T> {
    pub feature: Linear<T>,
    pub gate: Linear<T>,
    /// No intercept of its own; `feature` already carries one.
    pub bias: Linear<T>,
}

impl<T> ParamTree<T> for ConcatSquash<T> {
    type Mapped<U> = ConcatSquash<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> ConcatSquash<U> {
        ConcatSquash {
            feature: self.feature.map(&join(prefix, "feature"), f),
            gate: self.gate.map(&join(prefix, "gate"), f),
            bias: self.bias.map(&join(prefix, "bias"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.feature.for_each_mut(&join(prefix, "feature"), f);
        self.gate.for_each_mut(&join(prefix, "gate"), f);
        self.bias.for_each_mut(&join(prefix, "bias"), f);
    }
}

impl ConcatSquash<Tensor> {
    pub fn zeros(width: usize) -> Self {
        Self {
            feature: Linear::zeros(width, width, true),
            gate: Linear::zeros(CONTEXT_DIM, width, true),
            bias: Linear::zeros(CONTEXT_DIM, width, false),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootworkParams<T> {
    pub input: Linear<T>,
    pub blocks: Vec<ConcatSquash<T>>,
    pub output: Linear<T>,
}

impl<T> ParamTree<T> for FootworkParams<T> {
    type Mapped<U> = FootworkParams<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> FootworkParams<U> {
        FootworkParams {
            input: self.input.map(&join(prefix, "input"), f),
            blocks: self.blocks.map(&join(prefix, "blocks"), f),
            output: self.output.map(&join(prefix, "output"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.input.for_each_mut(&join(prefix, "input"), f);
        self.blocks.for_each_mut(&join(prefix, "blocks"), f);
        self.output.for_each_mut(&join(prefix, "output"), f);
    }
}

impl FootworkParams<Tensor> {
    pub fn zeros(width: usize, blocks: usize) -> Self {
        Self {
            input: Linear::zeros(MOTION_DIM, width, true),
            blocks: (0..blocks).map(|_| ConcatSquash::zeros(width)).collect(),
            output: Linear::zeros(width, MOTION_DIM, true),
        }
    }
}

pub fn concat_squash_on_tape(tape: &mut Tape, block: &ConcatSquash<Var>, x: Var, ctx: Var) -> Var {
    let feat = block.feature.apply(tape, x);
    let gate = block.gate.apply(tape, ctx);
    let gate = tape.sigmoid(gate);
    let bias = block.bias.apply(tape, ctx);
    let y = tape.mul(feat, gate);
    tape.add(y, bias)
}

/// Adapted frames for `(C*L) x 151` raw motion rows.
pub fn adapt_on_tape(tape: &mut Tape, p: &FootworkParams<Var>, raw: Var, dancers: usize) -> Var {
    let ctx = tape.root_velocity(raw, dancers);
    let mut h = p.input.apply(tape, raw);
    for block in &p.blocks {
        let y = concat_squash_on_tape(tape, block, h, ctx);
        h = tape.silu(y);
    }
    p.output.apply(tape, h)
}

/// Upper body from `raw`, everything else from `adapted`.
pub fn finalize_on_tape(tape: &mut Tape, raw: Var, adapted: Var) -> Var {
    tape.merge(raw, adapted, &lower_body_mask())
}

/// One block on `n x d` features with an `n x 3` context.
pub fn concat_squash_forward(x: &Tensor, ctx: &Tensor, block: &ConcatSquash<Tensor>) -> Result<Tensor> {
    let (n, d) = x.as_matrix_dims();
    let (cn, cw) = ctx.as_matrix_dims();
    if d != block.feature.inputs() || cn != n || cw != block.gate.inputs() || cw != block.bias.inputs() {
        return Err(shape_err!("concat-squash on {:?} with context {:?}", x.shape, ctx.shape));
    }
    let mut tape = Tape::new();
    let bound = block.map("block", &mut |_, t| tape.param_tensor(t));
    let xv = tape.constant(n, d, x.data.clone());
    let cv = tape.constant(cn, cw, ctx.data.clone());
    let y = concat_squash_on_tape(&mut tape, &bound, xv, cv);
    Tensor::from_vec(&[n, block.feature.outputs()], tape.value(y).to_vec())
}

pub fn adapt_footwork(raw: &GroupMotion, params: &FootworkParams<Tensor>) -> Result<GroupMotion> {
    let mut tape = Tape::new();
    let bound = bind(params, "fa", &mut tape);
    let rows = raw.dancers() * raw.frames();
    let x = tape.constant(rows, MOTION_DIM, raw.data().to_vec());
    let y = adapt_on_tape(&mut tape, &bound, x, raw.dancers());
    GroupMotion::from_vec(raw.dancers(), raw.frames(), tape.value(y).to_vec())
}

pub fn finalize(raw: &GroupMotion, adapted: &GroupMotion) -> Result<GroupMotion> {
    split_merge_body(raw, adapted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ramp(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) * scale).collect()
    }

    fn random_block(d: usize) -> ConcatSquash<Tensor> {
        let mut b = ConcatSquash::zeros(d);
        b.feature.weight.data = ramp(d * d, 0.1);
        b.feature.bias.as_mut().unwrap().data = ramp(d, 0.05);
        b.bias.weight.data = ramp(3 * d, 0.2);
        b
    }

    #[test]
    fn zero_gate_halves_feature_path() {
        let d = 4;
        let block = random_block(d);
        let x = Tensor::from_vec(&[2, d], ramp(2 * d, 0.3)).unwrap();
        let ctx = Tensor::from_vec(&[2, 3], vec![0.1, -0.2, 0.3, 0.0, 0.5, 1.0]).unwrap();
        let y = concat_squash_forward(&x, &ctx, &block).unwrap();
        for r in 0..2 {
            for k in 0..d {
                let mut feat = block.feature.bias.as_ref().unwrap().data[k];
                let mut bias = 0.0;
                for i in 0..d {
                    feat += x.data[r * d + i] * block.feature.weight.data[i * d + k];
                }
                for i in 0..3 {
                    bias += ctx.data[r * 3 + i] * block.bias.weight.data[i * d + k];
                }
                assert!((y.data[r * d + k] - (0.5 * feat + bias)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_feature_map_ignores_input() {
        let d = 3;
        let mut block = random_block(d);
        block.feature = Linear::zeros(d, d, true);
        let ctx = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let a = concat_squash_forward(&Tensor::filled(&[1, d], 5.0), &ctx, &block).unwrap();
        let b = concat_squash_forward(&Tensor::filled(&[1, d], -2.0), &ctx, &block).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_context_without_bias_map() {
        let d = 3;
        let mut block = random_block(d);
        block.bias = Linear::zeros(3, d, false);
        let x = Tensor::from_vec(&[1, d], vec![1.0, -1.0, 2.0]).unwrap();
        let y = concat_squash_forward(&x, &Tensor::zeros(&[1, 3]), &block).unwrap();
        let mut half = block.clone();
        half.gate.bias.as_mut().unwrap().data = vec![1000.0; d];
        let full = concat_squash_forward(&x, &Tensor::zeros(&[1, 3]), &half).unwrap();
        for (a, b) in y.data.iter().zip(&full.data) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_bias_only() {
        let mut p = FootworkParams::zeros(8, 2);
        let b: Vec<f64> = (0..MOTION_DIM).map(|i| i as f64).collect();
        p.output.bias.as_mut().unwrap().data = b.clone();
        let raw = GroupMotion::from_vec(3, 20, ramp(3 * 20 * MOTION_DIM, 0.1)).unwrap();
        let a = adapt_footwork(&raw, &p).unwrap();
        assert_eq!((a.dancers(), a.frames()), (3, 20));
        for c in 0..3 {
            for l in 0..20 {
                assert_eq!(a.frame(c, l), &b[..]);
            }
        }
    }

    fn live_params() -> FootworkParams<Tensor> {
        let d = 4;
        let mut p = FootworkParams::zeros(d, 1);
        p.input.weight.data = ramp(MOTION_DIM * d, 0.01);
        p.blocks[0] = random_block(d);
        p.blocks[0].gate.weight.data[0] = 3.0;
        p.output.weight.data = ramp(d * MOTION_DIM, 0.1);
        p
    }

    #[test]
    fn velocity_conditioning_is_live() {
        let p = live_params();
        let still = GroupMotion::from_frames(1, 5, |_, _| crate::MotionFrame::rest([0.0, 0.9, 0.0])).unwrap();
        // A static pose at x = 0.4 against one that starts there and glides.
        let mut shifted = still.clone();
        for l in 0..5 {
            shifted.frame_mut(0, l)[crate::motion::ROOT_OFFSET] = 0.4;
        }
        let mut velocity = shifted.clone();
        for l in 1..5 {
            velocity.frame_mut(0, l)[crate::motion::ROOT_OFFSET] = 0.4 + 0.1 * l as f64;
        }
        let s = adapt_footwork(&shifted, &p).unwrap();
        let v = adapt_footwork(&velocity, &p).unwrap();
        assert_eq!(s.frame(0, 0), v.frame(0, 0));
        assert_ne!(s.frame(0, 1), v.frame(0, 1));
    }

    #[test]
    fn root_perturbation_is_local() {
        let p = live_params();
        let raw = GroupMotion::from_vec(1, 6, ramp(6 * MOTION_DIM, 0.05)).unwrap();
        let mut bumped = raw.clone();
        bumped.frame_mut(0, 2)[crate::motion::ROOT_OFFSET + 1] += 0.3;
        let a = adapt_footwork(&raw, &p).unwrap();
        let b = adapt_footwork(&bumped, &p).unwrap();
        for l in 0..6 {
            let changed = a.frame(0, l) != b.frame(0, l);
            assert_eq!(changed, l == 2 || l == 3, "frame {}", l);
        }
    }

    #[test]
    fn finalize_idempotent_and_keeps_upper_body() {
        let raw = GroupMotion::from_vec(2, 3, ramp(2 * 3 * MOTION_DIM, 0.3)).unwrap();
        let adapted = GroupMotion::from_vec(2, 3, ramp(2 * 3 * MOTION_DIM, -0.7)).unwrap();
        let once = finalize(&raw, &adapted).unwrap();
        assert_eq!(finalize(&once, &adapted).unwrap(), once);
        assert_eq!(finalize(&raw, &raw).unwrap(), raw);
        let mask = lower_body_mask();
        for (i, (o, r)) in once.data().iter().zip(raw.data()).enumerate() {
            if !mask[i % MOTION_DIM] {
                assert_eq!(o.to_bits(), r.to_bits());
            }
        }
    }
}
