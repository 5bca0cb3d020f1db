//! Reverse-mode differentiation over row-major matrices.
//!
//! A [`Tape`] records coarse operations (affine maps, attention, the SSM
//! scan, forward kinematics, the loss terms) in evaluation order. Every
//! operation carries a hand-written adjoint, so the backward sweep is one
//! reverse pass over the nodes. Values are always `rows x cols`; a scalar
//! is `1 x 1`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math::{exp, sigmoid, softplus, sqrt};
use crate::motion::{kinematics_pass, SkeletonSpec, CONTACT_JOINTS, CONTACT_OFFSET, MOTION_DIM, NUM_JOINTS, ROOT_OFFSET};
use crate::ssm::zoh;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Relu,
    Softplus,
    Sigmoid,
    Silu,
    Exp,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, v: Var },
    MulRow { x: Var, v: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    AddGroupScalar { x: Var, v: Var, groups: usize },
    Unary { x: Var, f: Unary },
    LayerNorm { x: Var, gain: Var, bias: Var },
    Attention { q: Var, k: Var, v: Var, groups: usize, kv_groups: usize, heads: usize, probs: Vec<f64> },
    SsmScan { u: Var, delta: Var, a: Var, b: Var, c: Var, groups: usize },
    PermuteBlocks { x: Var, outer: usize, inner: usize, block: usize },
    Reshape { x: Var },
    MeanRows { x: Var },
    ConcatCols { parts: Vec<Var> },
    SliceCols { x: Var, start: usize },
    Merge { a: Var, b: Var, mask: Vec<bool> },
    RootVelocity { x: Var, groups: usize },
    ForwardKinematics { x: Var, skel: SkeletonSpec },
    TemporalDiff { x: Var, groups: usize },
    MeanSquaredDiff { x: Var, target: Vec<f64> },
    FootContact { joints: Var, motion: Var, groups: usize },
    DistanceConsistency { x: Var, gt_roots: Vec<f64>, dancers: usize },
    WeightedSum { terms: Vec<(Var, f64)> },
}

struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    requires_grad: bool,
    op: Op,
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` if nothing reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len])
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { value, rows, cols, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(rows * cols, value.len(), "leaf shape");
        self.push(rows, cols, value, Op::Leaf, true)
    }

    pub fn param_tensor(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.as_matrix_dims();
        self.param(r, c, t.data.clone())
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(rows * cols, value.len(), "constant shape");
        self.push(rows, cols, value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "not a scalar");
        n.value[0]
    }

    /// `x W + b` with `x: n x i`, `W: i x o`, `b: 1 x o`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, i) = self.dims(x);
        let (wi, o) = self.dims(w);
        assert_eq!(i, wi, "linear: input width {} vs weight rows {}", i, wi);
        let mut out = vec![0.0; n * o];
        {
            let xv = self.value(x);
            let wv = self.value(w);
            if let Some(b) = b {
                assert_eq!(self.dims(b), (1, o), "linear bias");
                let bv = self.value(b);
                for r in 0..n {
                    out[r * o..(r + 1) * o].copy_from_slice(bv);
                }
            }
            for r in 0..n {
                let orow = &mut out[r * o..(r + 1) * o];
                for k in 0..i {
                    let a = xv[r * i + k];
                    if a == 0.0 {
                        continue;
                    }
                    let wrow = &wv[k * o..(k + 1) * o];
                    for (y, wv) in orow.iter_mut().zip(wrow) {
                        *y += a * wv;
                    }
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        self.push(n, o, out, Op::Linear { x, w, b }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "elementwise shapes");
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(&[a, b]);
        self.push(r, c, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Add a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, v: Var) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(v), (1, c), "add_row shape");
        let vv = self.value(v);
        let out = self.value(x).chunks_exact(c).flat_map(|row| row.iter().zip(vv).map(|(a, b)| a + b)).collect();
        let rg = self.rg(&[x, v]);
        self.push(r, c, out, Op::AddRow { x, v }, rg)
    }

    /// Multiply every row of `x` elementwise by a `1 x cols` row.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(v), (1, c), "mul_row shape");
        let vv = self.value(v);
        let out = self.value(x).chunks_exact(c).flat_map(|row| row.iter().zip(vv).map(|(a, b)| a * b)).collect();
        let rg = self.rg(&[x, v]);
        self.push(r, c, out, Op::MulRow { x, v }, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let (r, cols) = self.dims(x);
        let out = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.rg(&[x]);
        self.push(r, cols, out, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let (r, cols) = self.dims(x);
        let out = self.value(x).iter().map(|v| v + c).collect();
        let rg = self.rg(&[x]);
        self.push(r, cols, out, Op::AddScalar { x }, rg)
    }

    /// Rows split into `groups` equal blocks; block `g` gets `v[g]` added to
    /// every entry.
    pub fn add_group_scalar(&mut self, x: Var, v: Var, groups: usize) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(v), (1, groups), "group scalar shape");
        assert_eq!(r % groups, 0, "rows not divisible by groups");
        let block = r / groups * c;
        let vv = self.value(v);
        let out = self.value(x).iter().enumerate().map(|(i, a)| a + vv[i / block]).collect();
        let rg = self.rg(&[x, v]);
        self.push(r, c, out, Op::AddGroupScalar { x, v, groups }, rg)
    }

    fn unary(&mut self, x: Var, f: Unary) -> Var {
        let (r, c) = self.dims(x);
        let out = self
            .value(x)
            .iter()
            .map(|&v| match f {
                Unary::Relu => v.max(0.0),
                Unary::Softplus => softplus(v),
                Unary::Sigmoid => sigmoid(v),
                Unary::Silu => v * sigmoid(v),
                Unary::Exp => exp(v),
            })
            .collect();
        let rg = self.rg(&[x]);
        self.push(r, c, out, Op::Unary { x, f }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Silu)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(gain), (1, c), "layer norm gain");
        assert_eq!(self.dims(bias), (1, c), "layer norm bias");
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut out = vec![0.0; r * c];
        for (row, orow) in self.value(x).chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            let (mean, inv) = row_stats(row);
            for k in 0..c {
                orow[k] = (row[k] - mean) * inv * gv[k] + bv[k];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push(r, c, out, Op::LayerNorm { x, gain, bias }, rg)
    }

    /// Multi-head scaled dot-product attention without masking.
    ///
    /// `q` holds `groups` blocks of query rows; `k` and `v` hold either one
    /// shared block (`kv_groups == 1`) or one block per query group.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, kv_groups: usize, heads: usize) -> Var {
        let (qr, d) = self.dims(q);
        let (kr, kd) = self.dims(k);
        assert_eq!(self.dims(v), (kr, kd), "attention k/v shapes");
        assert_eq!(d, kd, "attention width");
        assert!(kv_groups == 1 || kv_groups == groups, "kv groups");
        assert_eq!(qr % groups, 0);
        assert_eq!(kr % kv_groups, 0);
        assert_eq!(d % heads, 0, "width {} not divisible by {} heads", d, heads);
        let (sq, sk, dh) = (qr / groups, kr / kv_groups, d / heads);
        let scale = 1.0 / sqrt(dh as f64);
        let (qv, kvv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; groups * heads * sq * sk];
        let mut out = vec![0.0; qr * d];
        let mut scores = vec![0.0; sk];
        for g in 0..groups {
            let gk = if kv_groups == 1 { 0 } else { g };
            for h in 0..heads {
                let ho = h * dh;
                for i in 0..sq {
                    let qrow = &qv[(g * sq + i) * d + ho..(g * sq + i) * d + ho + dh];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        let krow = &kvv[(gk * sk + j) * d + ho..(gk * sk + j) * d + ho + dh];
                        *s = scale * qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                        max = max.max(*s);
                    }
                    let mut total = 0.0;
                    for s in scores.iter_mut() {
                        *s = exp(*s - max);
                        total += *s;
                    }
                    let pbase = ((g * heads + h) * sq + i) * sk;
                    let orow = &mut out[(g * sq + i) * d + ho..(g * sq + i) * d + ho + dh];
                    for j in 0..sk {
                        let p = scores[j] / total;
                        probs[pbase + j] = p;
                        let vrow = &vv[(gk * sk + j) * d + ho..(gk * sk + j) * d + ho + dh];
                        for (o, vx) in orow.iter_mut().zip(vrow) {
                            *o += p * vx;
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        self.push(qr, d, out, Op::Attention { q, k, v, groups, kv_groups, heads, probs }, rg)
    }

    /// Attention weights recorded by an [`attention`](Self::attention) node,
    /// laid out `groups x heads x queries x keys`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Selective diagonal SSM scan. `u` and `delta` are `(groups * L) x D`;
    /// `a`, `b`, `c` are `D x N`. Each group is an independent sequence.
    pub fn ssm_scan(&mut self, u: Var, delta: Var, a: Var, b: Var, c: Var, groups: usize) -> Var {
        let (r, d) = self.dims(u);
        assert_eq!(self.dims(delta), (r, d), "ssm delta shape");
        let (ad, n) = self.dims(a);
        assert_eq!(ad, d, "ssm channel count");
        assert_eq!(self.dims(b), (d, n));
        assert_eq!(self.dims(c), (d, n));
        assert_eq!(r % groups, 0);
        let frames = r / groups;
        let (uv, dv, av, bv, cv) = (self.value(u), self.value(delta), self.value(a), self.value(b), self.value(c));
        let mut out = vec![0.0; r * d];
        for g in 0..groups {
            let base = g * frames;
            for k in 0..d {
                for s in 0..n {
                    let idx = k * n + s;
                    let mut h = 0.0;
                    for l in 0..frames {
                        let row = (base + l) * d + k;
                        let z = zoh(dv[row], av[idx]);
                        h = z.a_bar * h + z.phi * bv[idx] * uv[row];
                        out[row] += cv[idx] * h;
                    }
                }
            }
        }
        let rg = self.rg(&[u, delta, a, b, c]);
        self.push(r, d, out, Op::SsmScan { u, delta, a, b, c, groups }, rg)
    }

    /// Reinterpret `x` as `[outer][inner][block]` and swap the first two
    /// axes, returning `inner x (outer * block)`.
    pub fn permute_blocks(&mut self, x: Var, outer: usize, inner: usize, block: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), outer * inner * block, "permute size");
        let mut out = vec![0.0; xv.len()];
        for a in 0..outer {
            for b in 0..inner {
                let src = (a * inner + b) * block;
                let dst = (b * outer + a) * block;
                out[dst..dst + block].copy_from_slice(&xv[src..src + block]);
            }
        }
        let rg = self.rg(&[x]);
        self.push(inner, outer * block, out, Op::PermuteBlocks { x, outer, inner, block }, rg)
    }

    /// Same values, new row/column split.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), rows * cols, "reshape size");
        let out = xv.to_vec();
        let rg = self.rg(&[x]);
        self.push(rows, cols, out, Op::Reshape { x }, rg)
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = vec![0.0; c];
        for row in self.value(x).chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= r as f64;
        }
        let rg = self.rg(&[x]);
        self.push(1, c, out, Op::MeanRows { x }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|p| self.dims(*p).1).collect();
        assert!(parts.iter().all(|p| self.dims(*p).0 == rows), "concat rows");
        let cols: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p)[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        self.push(rows, cols, out, Op::ConcatCols { parts: parts.to_vec() }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.dims(x);
        assert!(start + len <= c, "slice out of range");
        let out = self.value(x).chunks_exact(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let rg = self.rg(&[x]);
        self.push(r, len, out, Op::SliceCols { x, start }, rg)
    }

    /// Column-wise select: `b` where `mask[col]`, otherwise `a`.
    pub fn merge(&mut self, a: Var, b: Var, mask: &[bool]) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(b), (r, c), "merge shapes");
        assert_eq!(mask.len(), c, "merge mask width");
        let (av, bv) = (self.value(a), self.value(b));
        let out = (0..r * c).map(|i| if mask[i % c] { bv[i] } else { av[i] }).collect();
        let rg = self.rg(&[a, b]);
        self.push(r, c, out, Op::Merge { a, b, mask: mask.to_vec() }, rg)
    }

    /// Root displacement between consecutive frames of motion rows
    /// (`(groups * L) x 151`), zero at each group's first frame.
    pub fn root_velocity(&mut self, x: Var, groups: usize) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(c, MOTION_DIM, "root velocity needs motion rows");
        let frames = r / groups;
        let xv = self.value(x);
        let mut out = vec![0.0; r * 3];
        for g in 0..groups {
            for l in 1..frames {
                let row = g * frames + l;
                for k in 0..3 {
                    out[row * 3 + k] = xv[row * c + ROOT_OFFSET + k] - xv[(row - 1) * c + ROOT_OFFSET + k];
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(r, 3, out, Op::RootVelocity { x, groups }, rg)
    }

    /// Joint positions (`rows x 72`) of motion rows.
    pub fn forward_kinematics(&mut self, x: Var, skel: &SkeletonSpec) -> Result<Var> {
        let (r, c) = self.dims(x);
        assert_eq!(c, MOTION_DIM);
        let mut out = Vec::with_capacity(r * NUM_JOINTS * 3);
        for frame in self.value(x).chunks_exact(c) {
            let pass = kinematics_pass(frame, skel)?;
            for p in pass.positions.iter() {
                out.extend_from_slice(p);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(r, NUM_JOINTS * 3, out, Op::ForwardKinematics { x, skel: skel.clone() }, rg))
    }

    /// Frame-to-frame differences within each group: `(groups * (L-1)) x cols`.
    pub fn temporal_diff(&mut self, x: Var, groups: usize) -> Var {
        let (r, c) = self.dims(x);
        let frames = r / groups;
        assert!(frames >= 2, "temporal diff needs two frames");
        let xv = self.value(x);
        let mut out = Vec::with_capacity(groups * (frames - 1) * c);
        for g in 0..groups {
            for l in 0..frames - 1 {
                let a = (g * frames + l) * c;
                let b = a + c;
                out.extend(xv[b..b + c].iter().zip(&xv[a..a + c]).map(|(p, q)| p - q));
            }
        }
        let rg = self.rg(&[x]);
        self.push(groups * (frames - 1), c, out, Op::TemporalDiff { x, groups }, rg)
    }

    /// `mean((x - target)^2)` over every entry.
    pub fn mean_squared_diff(&mut self, x: Var, target: &[f64]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), target.len(), "mse target length");
        let n = xv.len() as f64;
        let s = xv.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let rg = self.rg(&[x]);
        self.push(1, 1, vec![s], Op::MeanSquaredDiff { x, target: target.to_vec() }, rg)
    }

    /// Contact-gated foot displacement: mean over frame pairs, the four
    /// contact joints and xyz of `(f_i * (P_{i+1} - P_i))^2`, with the
    /// predicted flag `f_i` clamped to `[0, 1]`.
    pub fn foot_contact(&mut self, joints: Var, motion: Var, groups: usize) -> Var {
        let (r, jc) = self.dims(joints);
        assert_eq!(jc, NUM_JOINTS * 3);
        assert_eq!(self.dims(motion), (r, MOTION_DIM));
        let frames = r / groups;
        assert!(frames >= 2, "contact loss needs two frames");
        let (jv, mv) = (self.value(joints), self.value(motion));
        let mut s = 0.0;
        for g in 0..groups {
            for l in 0..frames - 1 {
                let row = g * frames + l;
                for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
                    let f = mv[row * MOTION_DIM + CONTACT_OFFSET + k].clamp(0.0, 1.0);
                    for x in 0..3 {
                        let d = jv[(row + 1) * jc + j * 3 + x] - jv[row * jc + j * 3 + x];
                        s += (f * d) * (f * d);
                    }
                }
            }
        }
        let denom = (groups * (frames - 1) * CONTACT_JOINTS.len() * 3) as f64;
        let rg = self.rg(&[joints, motion]);
        self.push(1, 1, vec![s / denom], Op::FootContact { joints, motion, groups }, rg)
    }

    /// Pairwise root-offset error against ground-truth roots
    /// (`dancers * L * 3`, dancer-major), summed over unordered pairs and
    /// frames, divided by `(C - 1) * L`.
    pub fn distance_consistency(&mut self, x: Var, gt_roots: &[f64], dancers: usize) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(c, MOTION_DIM);
        assert_eq!(gt_roots.len(), r * 3);
        assert!(dancers >= 2, "distance consistency needs two dancers");
        let frames = r / dancers;
        let xv = self.value(x);
        let pred = |dancer: usize, l: usize, k: usize| xv[(dancer * frames + l) * c + ROOT_OFFSET + k];
        let gt = |dancer: usize, l: usize, k: usize| gt_roots[(dancer * frames + l) * 3 + k];
        let mut s = 0.0;
        for l in 0..frames {
            for i in 0..dancers {
                for j in i + 1..dancers {
                    for k in 0..3 {
                        let e = (gt(i, l, k) - gt(j, l, k)) - (pred(i, l, k) - pred(j, l, k));
                        s += e * e;
                    }
                }
            }
        }
        let norm = ((dancers - 1) * frames) as f64;
        let rg = self.rg(&[x]);
        self.push(1, 1, vec![s / norm], Op::DistanceConsistency { x, gt_roots: gt_roots.to_vec(), dancers }, rg)
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let s = terms.iter().map(|(v, w)| w * self.scalar(*v)).sum();
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        self.push(1, 1, vec![s], Op::WeightedSum { terms: terms.to_vec() }, rg)
    }

    /// Reverse sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.nodes[out.0].value.len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backward_node(i, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        Grads { grads }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backward_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, inw) = self.dims(*x);
                let o = cols;
                let (xv, wv) = (self.value(*x), self.value(*w));
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..n {
                        let grow = &gy[r * o..(r + 1) * o];
                        for k in 0..inw {
                            let wrow = &wv[k * o..(k + 1) * o];
                            gx[r * inw + k] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *w) {
                    for r in 0..n {
                        let grow = &gy[r * o..(r + 1) * o];
                        for k in 0..inw {
                            let a = xv[r * inw + k];
                            if a == 0.0 {
                                continue;
                            }
                            for (g, d) in gw[k * o..(k + 1) * o].iter_mut().zip(grow) {
                                *g += a * d;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for grow in gy.chunks_exact(o) {
                            for (g, d) in gb.iter_mut().zip(grow) {
                                *g += d;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(g) = self.acc(grads, *v) {
                        add_into(g, gy);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.acc(grads, *a) {
                    add_into(g, gy);
                }
                if let Some(g) = self.acc(grads, *b) {
                    for (g, d) in g.iter_mut().zip(gy) {
                        *g -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(g) = self.acc(grads, *a) {
                    for k in 0..g.len() {
                        g[k] += gy[k] * bv[k];
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for k in 0..g.len() {
                        g[k] += gy[k] * av[k];
                    }
                }
            }
            Op::AddRow { x, v } => {
                if let Some(g) = self.acc(grads, *x) {
                    add_into(g, gy);
                }
                if let Some(g) = self.acc(grads, *v) {
                    for grow in gy.chunks_exact(cols) {
                        add_into(g, grow);
                    }
                }
            }
            Op::MulRow { x, v } => {
                let (xv, vv) = (self.value(*x), self.value(*v));
                if let Some(g) = self.acc(grads, *x) {
                    for k in 0..g.len() {
                        g[k] += gy[k] * vv[k % cols];
                    }
                }
                if let Some(g) = self.acc(grads, *v) {
                    for k in 0..gy.len() {
                        g[k % cols] += gy[k] * xv[k];
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(g) = self.acc(grads, *x) {
                    for (g, d) in g.iter_mut().zip(gy) {
                        *g += c * d;
                    }
                }
            }
            Op::AddScalar { x } => {
                if let Some(g) = self.acc(grads, *x) {
                    add_into(g, gy);
                }
            }
            Op::AddGroupScalar { x, v, groups } => {
                if let Some(g) = self.acc(grads, *x) {
                    add_into(g, gy);
                }
                if let Some(g) = self.acc(grads, *v) {
                    let block = rows / groups * cols;
                    for (k, d) in gy.iter().enumerate() {
                        g[k / block] += d;
                    }
                }
            }
            Op::Unary { x, f } => {
                let xv = self.value(*x);
                let yv = &node.value;
                if let Some(g) = self.acc(grads, *x) {
                    for k in 0..g.len() {
                        let d = match f {
                            Unary::Relu => {
                                if xv[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Softplus => sigmoid(xv[k]),
                            Unary::Sigmoid => yv[k] * (1.0 - yv[k]),
                            Unary::Silu => {
                                let s = sigmoid(xv[k]);
                                s * (1.0 + xv[k] * (1.0 - s))
                            }
                            Unary::Exp => yv[k],
                        };
                        g[k] += gy[k] * d;
                    }
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let (xv, gv) = (self.value(*x), self.value(*gain));
                let c = cols;
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                let need_x = self.nodes[x.0].requires_grad;
                let mut dgain = vec![0.0; c];
                for (r, row) in xv.chunks_exact(c).enumerate() {
                    let (mean, inv) = row_stats(row);
                    let grow = &gy[r * c..(r + 1) * c];
                    for k in 0..c {
                        xhat[k] = (row[k] - mean) * inv;
                        dgain[k] += grow[k] * xhat[k];
                        dxhat[k] = grow[k] * gv[k];
                    }
                    if need_x {
                        let m1 = dxhat.iter().sum::<f64>() / c as f64;
                        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let gx = self.acc(grads, *x).unwrap();
                        for k in 0..c {
                            gx[r * c + k] += inv * (dxhat[k] - m1 - xhat[k] * m2);
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *gain) {
                    add_into(g, &dgain);
                }
                if let Some(g) = self.acc(grads, *bias) {
                    for grow in gy.chunks_exact(c) {
                        add_into(g, grow);
                    }
                }
            }
            Op::Attention { q, k, v, groups, kv_groups, heads, probs } => {
                self.attention_backward(gy, *q, *k, *v, *groups, *kv_groups, *heads, probs, grads);
            }
            Op::SsmScan { u, delta, a, b, c, groups } => {
                self.ssm_backward(gy, *u, *delta, *a, *b, *c, *groups, grads);
            }
            Op::PermuteBlocks { x, outer, inner, block } => {
                if let Some(g) = self.acc(grads, *x) {
                    for a in 0..*outer {
                        for b in 0..*inner {
                            let src = (a * inner + b) * block;
                            let dst = (b * outer + a) * block;
                            for t in 0..*block {
                                g[src + t] += gy[dst + t];
                            }
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(a, b)| *a += b);
                }
            }
            Op::MeanRows { x } => {
                let r = self.dims(*x).0 as f64;
                if let Some(g) = self.acc(grads, *x) {
                    for (k, gv) in g.iter_mut().enumerate() {
                        *gv += gy[k % cols] / r;
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let mut off = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    if let Some(g) = self.acc(grads, *p) {
                        for r in 0..rows {
                            for t in 0..w {
                                g[r * w + t] += gy[r * cols + off + t];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.dims(*x).1;
                if let Some(g) = self.acc(grads, *x) {
                    for r in 0..rows {
                        for t in 0..cols {
                            g[r * c + start + t] += gy[r * cols + t];
                        }
                    }
                }
            }
            Op::Merge { a, b, mask } => {
                if let Some(g) = self.acc(grads, *a) {
                    for (k, d) in gy.iter().enumerate() {
                        if !mask[k % cols] {
                            g[k] += d;
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for (k, d) in gy.iter().enumerate() {
                        if mask[k % cols] {
                            g[k] += d;
                        }
                    }
                }
            }
            Op::RootVelocity { x, groups } => {
                let frames = rows / groups;
                if let Some(g) = self.acc(grads, *x) {
                    for gr in 0..*groups {
                        for l in 1..frames {
                            let row = gr * frames + l;
                            for k in 0..3 {
                                let d = gy[row * 3 + k];
                                g[row * MOTION_DIM + ROOT_OFFSET + k] += d;
                                g[(row - 1) * MOTION_DIM + ROOT_OFFSET + k] -= d;
                            }
                        }
                    }
                }
            }
            Op::ForwardKinematics { x, skel } => {
                let xv = self.value(*x);
                if let Some(g) = self.acc(grads, *x) {
                    for (r, frame) in xv.chunks_exact(MOTION_DIM).enumerate() {
                        let pass = kinematics_pass(frame, skel).expect("forward pass succeeded");
                        let mut dp = [[0.0; 3]; NUM_JOINTS];
                        for j in 0..NUM_JOINTS {
                            for k in 0..3 {
                                dp[j][k] = gy[r * cols + j * 3 + k];
                            }
                        }
                        pass.backward(skel, &dp, &mut g[r * MOTION_DIM..(r + 1) * MOTION_DIM]);
                    }
                }
            }
            Op::TemporalDiff { x, groups } => {
                let in_frames = self.dims(*x).0 / groups;
                if let Some(g) = self.acc(grads, *x) {
                    for gr in 0..*groups {
                        for l in 0..in_frames - 1 {
                            let orow = gr * (in_frames - 1) + l;
                            let a = (gr * in_frames + l) * cols;
                            for t in 0..cols {
                                let d = gy[orow * cols + t];
                                g[a + cols + t] += d;
                                g[a + t] -= d;
                            }
                        }
                    }
                }
            }
            Op::MeanSquaredDiff { x, target } => {
                let xv = self.value(*x);
                let n = xv.len() as f64;
                if let Some(g) = self.acc(grads, *x) {
                    for k in 0..g.len() {
                        g[k] += gy[0] * 2.0 * (xv[k] - target[k]) / n;
                    }
                }
            }
            Op::FootContact { joints, motion, groups } => {
                let (r, jc) = self.dims(*joints);
                let frames = r / groups;
                let denom = (groups * (frames - 1) * CONTACT_JOINTS.len() * 3) as f64;
                let scale = gy[0] / denom;
                let (jv, mv) = (self.value(*joints), self.value(*motion));
                let mut dj = vec![0.0; jv.len()];
                let mut dm = vec![0.0; mv.len()];
                for gr in 0..*groups {
                    for l in 0..frames - 1 {
                        let row = gr * frames + l;
                        for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
                            let raw = mv[row * MOTION_DIM + CONTACT_OFFSET + k];
                            let f = raw.clamp(0.0, 1.0);
                            let live = raw > 0.0 && raw < 1.0;
                            let mut sq = 0.0;
                            for x in 0..3 {
                                let d = jv[(row + 1) * jc + j * 3 + x] - jv[row * jc + j * 3 + x];
                                sq += d * d;
                                let gd = scale * 2.0 * f * f * d;
                                dj[(row + 1) * jc + j * 3 + x] += gd;
                                dj[row * jc + j * 3 + x] -= gd;
                            }
                            if live {
                                dm[row * MOTION_DIM + CONTACT_OFFSET + k] += scale * 2.0 * f * sq;
                            }
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *joints) {
                    add_into(g, &dj);
                }
                if let Some(g) = self.acc(grads, *motion) {
                    add_into(g, &dm);
                }
            }
            Op::DistanceConsistency { x, gt_roots, dancers } => {
                let (r, c) = self.dims(*x);
                let frames = r / dancers;
                let xv = self.value(*x);
                let norm = ((dancers - 1) * frames) as f64;
                if let Some(g) = self.acc(grads, *x) {
                    for l in 0..frames {
                        for i in 0..*dancers {
                            for j in i + 1..*dancers {
                                let ri = (i * frames + l) * c + ROOT_OFFSET;
                                let rj = (j * frames + l) * c + ROOT_OFFSET;
                                for k in 0..3 {
                                    let gi = gt_roots[(i * frames + l) * 3 + k];
                                    let gj = gt_roots[(j * frames + l) * 3 + k];
                                    let e = (gi - gj) - (xv[ri + k] - xv[rj + k]);
                                    let d = gy[0] * 2.0 * e / norm;
                                    g[ri + k] -= d;
                                    g[rj + k] += d;
                                }
                            }
                        }
                    }
                }
            }
            Op::WeightedSum { terms } => {
                for (v, w) in terms {
                    if let Some(g) = self.acc(grads, *v) {
                        g[0] += w * gy[0];
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        gy: &[f64],
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        kv_groups: usize,
        heads: usize,
        probs: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (qr, d) = self.dims(q);
        let kr = self.dims(k).0;
        let (sq, sk, dh) = (qr / groups, kr / kv_groups, d / heads);
        let scale = 1.0 / sqrt(dh as f64);
        let (qv, kvv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kvv.len()];
        let mut dv = vec![0.0; vv.len()];
        let mut dp = vec![0.0; sk];
        for g in 0..groups {
            let gk = if kv_groups == 1 { 0 } else { g };
            for h in 0..heads {
                let ho = h * dh;
                for i in 0..sq {
                    let qo = (g * sq + i) * d + ho;
                    let grow = &gy[qo..qo + dh];
                    let pbase = ((g * heads + h) * sq + i) * sk;
                    let p = &probs[pbase..pbase + sk];
                    let mut dot = 0.0;
                    for j in 0..sk {
                        let vo = (gk * sk + j) * d + ho;
                        dp[j] = grow.iter().zip(&vv[vo..vo + dh]).map(|(a, b)| a * b).sum();
                        dot += p[j] * dp[j];
                        for t in 0..dh {
                            dv[vo + t] += p[j] * grow[t];
                        }
                    }
                    for j in 0..sk {
                        let ds = p[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let ko = (gk * sk + j) * d + ho;
                        for t in 0..dh {
                            dq[qo + t] += ds * kvv[ko + t];
                            dk[ko + t] += ds * qv[qo + t];
                        }
                    }
                }
            }
        }
        if let Some(g) = self.acc(grads, q) {
            add_into(g, &dq);
        }
        if let Some(g) = self.acc(grads, k) {
            add_into(g, &dk);
        }
        if let Some(g) = self.acc(grads, v) {
            add_into(g, &dv);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn ssm_backward(
        &self,
        gy: &[f64],
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        groups: usize,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (r, d) = self.dims(u);
        let n = self.dims(a).1;
        let frames = r / groups;
        let (uv, dv, av, bv, cv) = (self.value(u), self.value(delta), self.value(a), self.value(b), self.value(c));
        let mut du = vec![0.0; uv.len()];
        let mut dd = vec![0.0; dv.len()];
        let mut da = vec![0.0; av.len()];
        let mut db = vec![0.0; bv.len()];
        let mut dc = vec![0.0; cv.len()];
        let mut hs = vec![0.0; frames];
        let mut zs = Vec::with_capacity(frames);
        for g in 0..groups {
            let base = g * frames;
            for k in 0..d {
                for s in 0..n {
                    let idx = k * n + s;
                    let (aa, bb, cc) = (av[idx], bv[idx], cv[idx]);
                    zs.clear();
                    let mut h = 0.0;
                    for (l, hl) in hs.iter_mut().enumerate() {
                        let row = (base + l) * d + k;
                        let z = zoh(dv[row], aa);
                        h = z.a_bar * h + z.phi * bb * uv[row];
                        *hl = h;
                        zs.push(z);
                    }
                    let mut dh = 0.0;
                    for l in (0..frames).rev() {
                        let row = (base + l) * d + k;
                        let z = zs[l];
                        dh += cc * gy[row];
                        dc[idx] += gy[row] * hs[l];
                        let h_prev = if l == 0 { 0.0 } else { hs[l - 1] };
                        let d_abar = dh * h_prev;
                        let d_phi = dh * bb * uv[row];
                        db[idx] += dh * z.phi * uv[row];
                        du[row] += dh * z.phi * bb;
                        dd[row] += d_abar * aa * z.a_bar + d_phi * z.dphi_ddelta;
                        da[idx] += d_abar * dv[row] * z.a_bar + d_phi * z.dphi_da;
                        dh *= z.a_bar;
                    }
                }
            }
        }
        for (var, buf) in [(u, du), (delta, dd), (a, da), (b, db), (c, dc)] {
            if let Some(g) = self.acc(grads, var) {
                add_into(g, &buf);
            }
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Row mean and `1 / sqrt(var + eps)`.
#[inline]
fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / sqrt(var + LAYER_NORM_EPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Checks every input leaf of a scalar function against central
    /// differences.
    fn check(build: impl Fn(&mut Tape, &[Var]) -> Var, shapes: &[(usize, usize)], seed: u64, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Vec<f64>> = shapes.iter().map(|(r, c)| rand_vec(&mut rng, r * c)).collect();
        let eval = |vals: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = shapes.iter().zip(vals).map(|((r, c), v)| tape.param(*r, *c, v.clone())).collect();
            let out = build(&mut tape, &vars);
            (tape, vars, out)
        };
        let (tape, vars, out) = eval(&inputs);
        let grads = tape.backward(out);
        let eps = 1e-6;
        for (p, var) in vars.iter().enumerate() {
            let g = grads.get_or_zeros(*var, inputs[p].len());
            for k in 0..inputs[p].len() {
                let mut plus = inputs.clone();
                plus[p][k] += eps;
                let mut minus = inputs.clone();
                minus[p][k] -= eps;
                let (tp, _, op) = eval(&plus);
                let (tm, _, om) = eval(&minus);
                let fd = (tp.scalar(op) - tm.scalar(om)) / (2.0 * eps);
                let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
                assert!(err < tol, "input {} entry {}: fd {} analytic {}", p, k, fd, g[k]);
            }
        }
    }

    fn sum_weighted(tape: &mut Tape, x: Var, seed: u64) -> Var {
        let (r, c) = tape.dims(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = rand_vec(&mut rng, r * c);
        tape.mean_squared_diff(x, &target)
    }

    #[test]
    fn linear_and_elementwise() {
        check(
            |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]));
                let z = t.silu(y);
                let s = t.sigmoid(z);
                let m = t.mul(s, y);
                let e = t.exp(m);
                let sp = t.softplus(e);
                let sc = t.scale(sp, 0.7);
                let a = t.add_scalar(sc, 1.0);
                let d = t.sub(a, y);
                sum_weighted(t, d, 1)
            },
            &[(4, 3), (3, 5), (1, 5)],
            11,
            1e-6,
        );
    }

    #[test]
    fn broadcast_ops() {
        check(
            |t, v| {
                let a = t.add_row(v[0], v[1]);
                let b = t.mul_row(a, v[2]);
                let c = t.add_group_scalar(b, v[3], 2);
                let m = t.mean_rows(c);
                let cc = t.concat_cols(&[m, v[1]]);
                let s = t.slice_cols(cc, 1, 4);
                let s2 = t.slice_cols(c, 0, 4);
                let l1 = sum_weighted(t, s, 2);
                let l2 = sum_weighted(t, s2, 3);
                t.weighted_sum(&[(l1, 0.5), (l2, 2.0)])
            },
            &[(4, 4), (1, 4), (1, 4), (1, 2)],
            12,
            1e-6,
        );
    }

    #[test]
    fn layer_norm_and_permute() {
        check(
            |t, v| {
                let n = t.layer_norm(v[0], v[1], v[2]);
                let p = t.permute_blocks(n, 2, 3, 4);
                sum_weighted(t, p, 4)
            },
            &[(6, 4), (1, 4), (1, 4)],
            13,
            1e-6,
        );
    }

    #[test]
    fn attention_gradients() {
        for kv_groups in [1, 2] {
            check(
                |t, v| {
                    let o = t.attention(v[0], v[1], v[2], 2, kv_groups, 2);
                    sum_weighted(t, o, 5)
                },
                &[(6, 4), (4 * kv_groups, 4), (4 * kv_groups, 4)],
                14 + kv_groups as u64,
                1e-6,
            );
        }
    }

    #[test]
    fn attention_rows_are_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let q = t.constant(5, 8, rand_vec(&mut rng, 40));
        let k = t.constant(5, 8, rand_vec(&mut rng, 40));
        let o = t.attention(q, k, k, 1, 1, 4);
        let p = t.attention_probs(o).unwrap();
        for row in p.chunks_exact(5) {
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ssm_scan_gradients() {
        check(
            |t, v| {
                let delta = t.softplus(v[1]);
                let a = t.exp(v[2]);
                let a = t.scale(a, -1.0);
                let y = t.ssm_scan(v[0], delta, a, v[3], v[4], 2);
                sum_weighted(t, y, 6)
            },
            &[(8, 3), (8, 3), (3, 2), (3, 2), (3, 2)],
            16,
            1e-6,
        );
    }

    #[test]
    fn ssm_scan_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (frames, d, n) = (7, 3, 2);
        let u = rand_vec(&mut rng, frames * d);
        let delta: Vec<f64> = (0..frames * d).map(|_| rng.random_range(0.05..1.0)).collect();
        let a: Vec<f64> = (0..d * n).map(|_| -rng.random_range(0.1..2.0)).collect();
        let b = rand_vec(&mut rng, d * n);
        let c = rand_vec(&mut rng, d * n);
        let mut t = Tape::new();
        let vars = [
            t.constant(frames, d, u.clone()),
            t.constant(frames, d, delta.clone()),
            t.constant(d, n, a.clone()),
            t.constant(d, n, b.clone()),
            t.constant(d, n, c.clone()),
        ];
        let y = t.ssm_scan(vars[0], vars[1], vars[2], vars[3], vars[4], 1);
        let ssm = crate::ssm::DiagonalSsm::new(d, n, a, b, c).unwrap();
        let reference = crate::ssm::ssm_scan(&u, &delta, &ssm).unwrap();
        for (x, r) in t.value(y).iter().zip(&reference) {
            assert!((x - r).abs() < 1e-14);
        }
    }

    #[test]
    fn motion_ops_gradients() {
        let skel = SkeletonSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (groups, frames) = (2, 3);
        let rows = groups * frames;
        let mut x = rand_vec(&mut rng, rows * MOTION_DIM);
        for r in 0..rows {
            for k in 0..4 {
                x[r * MOTION_DIM + k] = rng.random_range(0.05..0.95);
            }
        }
        let gt_roots = rand_vec(&mut rng, rows * 3);
        let eval = |vals: &[f64]| {
            let mut t = Tape::new();
            let xv = t.param(rows, MOTION_DIM, vals.to_vec());
            let j = t.forward_kinematics(xv, &skel).unwrap();
            let fk = sum_weighted(&mut t, j, 7);
            let con = t.foot_contact(j, xv, groups);
            let dist = t.distance_consistency(xv, &gt_roots, groups);
            let dxs = t.temporal_diff(xv, groups);
            let vel = sum_weighted(&mut t, dxs, 8);
            let rv = t.root_velocity(xv, groups);
            let rvl = sum_weighted(&mut t, rv, 9);
            let out = t.weighted_sum(&[(fk, 1.0), (con, 3.0), (dist, 0.5), (vel, 2.0), (rvl, 1.5)]);
            (t, xv, out)
        };
        let (t, xv, out) = eval(&x);
        let g = t.backward(out).get_or_zeros(xv, x.len());
        for k in (0..x.len()).step_by(3) {
            let mut p = x.clone();
            p[k] += 1e-6;
            let mut m = x.clone();
            m[k] -= 1e-6;
            let (tp, _, op) = eval(&p);
            let (tm, _, om) = eval(&m);
            let fd = (tp.scalar(op) - tm.scalar(om)) / 2e-6;
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-3);
            assert!(err < 1e-5, "entry {}: fd {} analytic {}", k, fd, g[k]);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.constant(1, 2, vec![1.0, 2.0]);
        let w = t.param(2, 1, vec![3.0, 4.0]);
        let y = t.linear(x, w, None);
        let l = t.mean_squared_diff(y, &[0.0]);
        let g = t.backward(l);
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap(), &[2.0 * 11.0 * 1.0, 2.0 * 11.0 * 2.0]);
    }
}
