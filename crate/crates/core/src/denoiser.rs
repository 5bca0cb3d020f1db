//! The group dance decoder: predicts clean group motion from a noisy
//! sample, the diffusion step, the music track and the swap mode.
//!
//! Pipeline per call:
//! input projection (151 -> d), dancer positioning offsets (one scalar per
//! sorted dancer slot), fusion projection over all dancers jointly, then
//! `M` sequence blocks of
//! self-attention -> selective SSM -> music cross-attention -> FiLM,
//! and an output projection back to 151 dims.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, CoreError, Result};
use crate::math::{cos, exp, ln, sin};
use crate::model::ModelConfig;
use crate::motion::{stable_argsort, GroupMotion, MOTION_DIM};
use crate::music::{MusicTrack, MUSIC_DIM};
use crate::params::{bind, join, LayerNorm, Linear, ParamTree};
use crate::tensor::Tensor;

/// Final-frame left-to-right ranking of the sorted dancer slots:
/// `order[rank]` is the slot standing `rank`-th from the left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapMode {
    order: Vec<usize>,
}

impl SwapMode {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        crate::motion::DancerPermutation::new(order.clone())?;
        Ok(Self { order })
    }

    pub fn identity(dancers: usize) -> Self {
        Self { order: (0..dancers).collect() }
    }

    /// Ranking of each dancer's root x-coordinate in the last frame.
    pub fn from_final_frame(motion: &GroupMotion) -> Self {
        let last = motion.frames() - 1;
        let keys: Vec<f64> = (0..motion.dancers()).map(|c| motion.root(c, last)[0]).collect();
        Self { order: stable_argsort(&keys) }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn dancers(&self) -> usize {
        self.order.len()
    }

    /// `C` one-hot rows of width `C`, flattened: row `rank` marks slot
    /// `order[rank]`.
    pub fn one_hot(&self) -> Vec<f64> {
        let c = self.order.len();
        let mut v = vec![0.0; c * c];
        for (rank, &slot) in self.order.iter().enumerate() {
            v[rank * c + slot] = 1.0;
        }
        v
    }
}

/// Sinusoidal embedding of the diffusion step: `sin(t f_k)` in the first
/// half, `cos(t f_k)` in the second, `f_k = 10000^(-k / (d/2))`.
pub fn sinusoidal_embedding(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for k in 0..half {
        let freq = exp(-ln(10_000.0) * k as f64 / half as f64);
        out[k] = sin(t as f64 * freq);
        out[half + k] = cos(t as f64 * freq);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

impl<T> ParamTree<T> for AttentionParams<T> {
    type Mapped<U> = AttentionParams<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> AttentionParams<U> {
        AttentionParams {
            query: self.query.map(&join(prefix, "query"), f),
            key: self.key.map(&join(prefix, "key"), f),
            value: self.value.map(&join(prefix, "value"), f),
            output: self.output.map(&join(prefix, "output"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.query.for_each_mut(&join(prefix, "query"), f);
        self.key.for_each_mut(&join(prefix, "key"), f);
        self.value.for_each_mut(&join(prefix, "value"), f);
        self.output.for_each_mut(&join(prefix, "output"), f);
    }
}

/// Diagonal selective SSM. `A = -exp(a_log)` keeps every mode stable; the
/// step size is `softplus(x W_delta + b_delta)` per frame and channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams<T> {
    pub delta: Linear<T>,
    pub a_log: T,
    pub b: T,
    pub c: T,
}

impl<T> ParamTree<T> for SsmParams<T> {
    type Mapped<U> = SsmParams<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> SsmParams<U> {
        SsmParams {
            delta: self.delta.map(&join(prefix, "delta"), f),
            a_log: f(&join(prefix, "a_log"), &self.a_log),
            b: f(&join(prefix, "b"), &self.b),
            c: f(&join(prefix, "c"), &self.c),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.delta.for_each_mut(&join(prefix, "delta"), f);
        f(&join(prefix, "a_log"), &mut self.a_log);
        f(&join(prefix, "b"), &mut self.b);
        f(&join(prefix, "c"), &mut self.c);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub norm_attn: LayerNorm<T>,
    pub self_attn: AttentionParams<T>,
    pub norm_ssm: LayerNorm<T>,
    pub ssm: SsmParams<T>,
    pub norm_cross: LayerNorm<T>,
    pub cross_attn: AttentionParams<T>,
    /// Condition (`3d`) to per-channel scale offset and shift (`2d`).
    pub film: Linear<T>,
}

impl<T> ParamTree<T> for DecoderLayer<T> {
    type Mapped<U> = DecoderLayer<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> DecoderLayer<U> {
        DecoderLayer {
            norm_attn: self.norm_attn.map(&join(prefix, "norm_attn"), f),
            self_attn: self.self_attn.map(&join(prefix, "self_attn"), f),
            norm_ssm: self.norm_ssm.map(&join(prefix, "norm_ssm"), f),
            ssm: self.ssm.map(&join(prefix, "ssm"), f),
            norm_cross: self.norm_cross.map(&join(prefix, "norm_cross"), f),
            cross_attn: self.cross_attn.map(&join(prefix, "cross_attn"), f),
            film: self.film.map(&join(prefix, "film"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.norm_attn.for_each_mut(&join(prefix, "norm_attn"), f);
        self.self_attn.for_each_mut(&join(prefix, "self_attn"), f);
        self.norm_ssm.for_each_mut(&join(prefix, "norm_ssm"), f);
        self.ssm.for_each_mut(&join(prefix, "ssm"), f);
        self.norm_cross.for_each_mut(&join(prefix, "norm_cross"), f);
        self.cross_attn.for_each_mut(&join(prefix, "cross_attn"), f);
        self.film.for_each_mut(&join(prefix, "film"), f);
    }
}

/// All trainable weights of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<T> {
    pub input: Linear<T>,
    /// One scalar per sorted dancer slot, `1 x C`.
    pub dpe: T,
    /// `C*d -> d -> d -> C*d`, rectifier between layers.
    pub fusion: Vec<Linear<T>>,
    pub time: Linear<T>,
    pub music: Linear<T>,
    pub swap: Linear<T>,
    pub layers: Vec<DecoderLayer<T>>,
    pub output: Linear<T>,
}

impl<T> ParamTree<T> for DenoiserParams<T> {
    type Mapped<U> = DenoiserParams<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> DenoiserParams<U> {
        DenoiserParams {
            input: self.input.map(&join(prefix, "input"), f),
            dpe: f(&join(prefix, "dpe"), &self.dpe),
            fusion: self.fusion.map(&join(prefix, "fusion"), f),
            time: self.time.map(&join(prefix, "time"), f),
            music: self.music.map(&join(prefix, "music"), f),
            swap: self.swap.map(&join(prefix, "swap"), f),
            layers: self.layers.map(&join(prefix, "layers"), f),
            output: self.output.map(&join(prefix, "output"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.input.for_each_mut(&join(prefix, "input"), f);
        f(&join(prefix, "dpe"), &mut self.dpe);
        self.fusion.for_each_mut(&join(prefix, "fusion"), f);
        self.time.for_each_mut(&join(prefix, "time"), f);
        self.music.for_each_mut(&join(prefix, "music"), f);
        self.swap.for_each_mut(&join(prefix, "swap"), f);
        self.layers.for_each_mut(&join(prefix, "layers"), f);
        self.output.for_each_mut(&join(prefix, "output"), f);
    }
}

impl DenoiserParams<Tensor> {
    /// All-zero parameters with unit layer-norm gains.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (c, d, n) = (cfg.dancers, cfg.hidden, cfg.ssm_state);
        let attn = || AttentionParams {
            query: Linear::zeros(d, d, true),
            key: Linear::zeros(d, d, true),
            value: Linear::zeros(d, d, true),
            output: Linear::zeros(d, d, true),
        };
        let layer = || DecoderLayer {
            norm_attn: LayerNorm::identity(d),
            self_attn: attn(),
            norm_ssm: LayerNorm::identity(d),
            ssm: SsmParams {
                delta: Linear::zeros(d, d, true),
                a_log: Tensor::zeros(&[d, n]),
                b: Tensor::zeros(&[d, n]),
                c: Tensor::zeros(&[d, n]),
            },
            norm_cross: LayerNorm::identity(d),
            cross_attn: attn(),
            film: Linear::zeros(3 * d, 2 * d, true),
        };
        Self {
            input: Linear::zeros(MOTION_DIM, d, true),
            dpe: Tensor::zeros(&[1, c]),
            fusion: vec![Linear::zeros(c * d, d, true), Linear::zeros(d, d, true), Linear::zeros(d, c * d, true)],
            time: Linear::zeros(d, d, true),
            music: Linear::zeros(MUSIC_DIM, d, true),
            swap: Linear::zeros(c * c, d, true),
            layers: (0..cfg.layers).map(|_| layer()).collect(),
            output: Linear::zeros(d, MOTION_DIM, true),
        }
    }
}

/// Conditioning signals of one denoiser call, evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    /// Projected step embedding, `d`.
    pub timestep: Vec<f64>,
    /// Per-frame music projection, `L x d`.
    pub music: Tensor,
    /// Projected swap-mode encoding, `d`.
    pub swap: Vec<f64>,
}

impl ConditionBundle {
    /// `[timestep, mean-pooled music, swap]`, width `3d`.
    pub fn concatenated(&self) -> Vec<f64> {
        let (frames, d) = self.music.as_matrix_dims();
        let mut out = self.timestep.clone();
        let mut pooled = vec![0.0; d];
        for row in self.music.data.chunks_exact(d) {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v / frames as f64;
            }
        }
        out.extend(pooled);
        out.extend_from_slice(&self.swap);
        out
    }
}

/// Conditioning nodes on a tape.
pub struct ConditionVars {
    pub timestep: Var,
    pub music: Var,
    pub swap: Var,
    /// `1 x 3d` concatenation feeding every FiLM block.
    pub cond: Var,
}

pub fn conditioning_on_tape(
    tape: &mut Tape,
    p: &DenoiserParams<Var>,
    hidden: usize,
    t: usize,
    music: Var,
    swap: &SwapMode,
) -> ConditionVars {
    let sin_emb = tape.constant(1, hidden, sinusoidal_embedding(t, hidden));
    let time = p.time.apply(tape, sin_emb);
    let timestep = tape.silu(time);
    let music_proj = p.music.apply(tape, music);
    let c = swap.dancers();
    let one_hot = tape.constant(1, c * c, swap.one_hot());
    let swap_emb = p.swap.apply(tape, one_hot);
    let pooled = tape.mean_rows(music_proj);
    let cond = tape.concat_cols(&[timestep, pooled, swap_emb]);
    ConditionVars { timestep, music: music_proj, swap: swap_emb, cond }
}

/// Per-slot positioning offset broadcast over frames and channels.
pub fn dpe_on_tape(tape: &mut Tape, x: Var, dpe: Var, dancers: usize) -> Var {
    tape.add_group_scalar(x, dpe, dancers)
}

/// `(C*L) x d` dancer-major rows -> `L x (C*d)` -> MLP -> back.
pub fn fusion_on_tape(tape: &mut Tape, fusion: &[Linear<Var>], x: Var, dancers: usize) -> Var {
    let (rows, d) = tape.dims(x);
    let frames = rows / dancers;
    let wide = tape.permute_blocks(x, dancers, frames, d);
    let h = fusion[0].apply(tape, wide);
    let h = tape.relu(h);
    let h = fusion[1].apply(tape, h);
    let h = tape.relu(h);
    let h = fusion[2].apply(tape, h);
    let back = tape.permute_blocks(h, frames, dancers, d);
    tape.reshape(back, rows, d)
}

/// `scale * x + shift` with `(scale - 1, shift)` projected from `cond`.
pub fn film_on_tape(tape: &mut Tape, film: &Linear<Var>, x: Var, cond: Var) -> Var {
    let d = tape.dims(x).1;
    let ss = film.apply(tape, cond);
    let scale = tape.slice_cols(ss, 0, d);
    let scale = tape.add_scalar(scale, 1.0);
    let shift = tape.slice_cols(ss, d, d);
    let y = tape.mul_row(x, scale);
    tape.add_row(y, shift)
}

fn attention_on_tape(
    tape: &mut Tape,
    p: &AttentionParams<Var>,
    x: Var,
    context: Var,
    groups: usize,
    kv_groups: usize,
    heads: usize,
) -> Var {
    let q = p.query.apply(tape, x);
    let k = p.key.apply(tape, context);
    let v = p.value.apply(tape, context);
    let o = tape.attention(q, k, v, groups, kv_groups, heads);
    p.output.apply(tape, o)
}

fn ssm_on_tape(tape: &mut Tape, p: &SsmParams<Var>, x: Var, groups: usize) -> Var {
    let pre = p.delta.apply(tape, x);
    let delta = tape.softplus(pre);
    let a = tape.exp(p.a_log);
    let a = tape.scale(a, -1.0);
    tape.ssm_scan(x, delta, a, p.b, p.c, groups)
}

/// One sequence block; pre-normalized residual sublayers, FiLM applied to
/// the residual stream.
pub fn sequence_layer_on_tape(
    tape: &mut Tape,
    layer: &DecoderLayer<Var>,
    h: Var,
    cond: &ConditionVars,
    dancers: usize,
    heads: usize,
) -> Var {
    let a = layer.norm_attn.apply(tape, h);
    let y = attention_on_tape(tape, &layer.self_attn, a, a, dancers, dancers, heads);
    let h = tape.add(h, y);
    let a = layer.norm_ssm.apply(tape, h);
    let y = ssm_on_tape(tape, &layer.ssm, a, dancers);
    let h = tape.add(h, y);
    let a = layer.norm_cross.apply(tape, h);
    let y = attention_on_tape(tape, &layer.cross_attn, a, cond.music, dancers, 1, heads);
    let h = tape.add(h, y);
    film_on_tape(tape, &layer.film, h, cond.cond)
}

/// Full decoder on a tape. `x` is `(C*L) x 151` in sorted dancer order and
/// `music` is `L x 35`.
pub fn denoise_on_tape(
    tape: &mut Tape,
    p: &DenoiserParams<Var>,
    cfg: &ModelConfig,
    x: Var,
    t: usize,
    music: Var,
    swap: &SwapMode,
) -> Var {
    let c = cfg.dancers;
    let cond = conditioning_on_tape(tape, p, cfg.hidden, t, music, swap);
    let h = p.input.apply(tape, x);
    let h = dpe_on_tape(tape, h, p.dpe, c);
    let mut h = fusion_on_tape(tape, &p.fusion, h, c);
    for layer in &p.layers {
        h = sequence_layer_on_tape(tape, layer, h, &cond, c, cfg.heads);
    }
    p.output.apply(tape, h)
}

fn check_inputs(cfg: &ModelConfig, x_t: &GroupMotion, music: &MusicTrack, swap: &SwapMode) -> Result<()> {
    if x_t.dancers() != cfg.dancers {
        return Err(shape_err!("model trained for {} dancers, got {}", cfg.dancers, x_t.dancers()));
    }
    if music.frames() != x_t.frames() {
        return Err(shape_err!("{} music frames for {} motion frames", music.frames(), x_t.frames()));
    }
    if swap.dancers() != cfg.dancers {
        return Err(shape_err!("swap mode over {} dancers, model has {}", swap.dancers(), cfg.dancers));
    }
    Ok(())
}

/// Evaluate the decoder: noisy sorted motion -> predicted clean motion.
pub fn denoise_forward(
    x_t: &GroupMotion,
    t: usize,
    music: &MusicTrack,
    swap: &SwapMode,
    params: &DenoiserParams<Tensor>,
    cfg: &ModelConfig,
) -> Result<GroupMotion> {
    check_inputs(cfg, x_t, music, swap)?;
    let mut tape = Tape::new();
    let bound = bind(params, "gdd", &mut tape);
    let rows = x_t.dancers() * x_t.frames();
    let x = tape.constant(rows, MOTION_DIM, x_t.data().to_vec());
    let m = tape.constant(music.frames(), MUSIC_DIM, music.data().to_vec());
    let out = denoise_on_tape(&mut tape, &bound, cfg, x, t, m, swap);
    let data = tape.value(out).to_vec();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NumericalDegeneracy("denoiser produced non-finite output".into()));
    }
    GroupMotion::from_vec(x_t.dancers(), x_t.frames(), data)
}

/// Evaluate the conditioning embeddings for one call.
pub fn build_conditioning(
    t: usize,
    music: &MusicTrack,
    swap: &SwapMode,
    params: &DenoiserParams<Tensor>,
    cfg: &ModelConfig,
) -> Result<ConditionBundle> {
    if swap.dancers() != cfg.dancers {
        return Err(shape_err!("swap mode over {} dancers, model has {}", swap.dancers(), cfg.dancers));
    }
    let mut tape = Tape::new();
    let bound = bind(params, "gdd", &mut tape);
    let m = tape.constant(music.frames(), MUSIC_DIM, music.data().to_vec());
    let cv = conditioning_on_tape(&mut tape, &bound, cfg.hidden, t, m, swap);
    Ok(ConditionBundle {
        timestep: tape.value(cv.timestep).to_vec(),
        music: Tensor::from_vec(&[music.frames(), cfg.hidden], tape.value(cv.music).to_vec())?,
        swap: tape.value(cv.swap).to_vec(),
    })
}

/// Add `dpe[c]` to every entry of dancer `c`'s block of a `[C, L, d]` tensor.
pub fn dpe_add(x: &Tensor, dpe: &[f64]) -> Result<Tensor> {
    if x.shape.len() != 3 || x.shape[0] != dpe.len() {
        return Err(shape_err!("dpe of length {} for features of shape {:?}", dpe.len(), x.shape));
    }
    let block = x.shape[1] * x.shape[2];
    let data = x.data.iter().enumerate().map(|(i, v)| v + dpe[i / block]).collect();
    Tensor::from_vec(&x.shape, data)
}

/// Joint projection of all dancers' features, `[C, L, d] -> [C, L, d]`.
pub fn fusion_project(x: &Tensor, fusion: &[Linear<Tensor>]) -> Result<Tensor> {
    if x.shape.len() != 3 || fusion.len() != 3 {
        return Err(shape_err!("fusion expects [C, L, d] features and three layers"));
    }
    let (c, l, d) = (x.shape[0], x.shape[1], x.shape[2]);
    if fusion[0].inputs() != c * d || fusion[2].outputs() != c * d {
        return Err(shape_err!(
            "fusion trained for width {}, got {} dancers x {}",
            fusion[0].inputs(),
            c,
            d
        ));
    }
    let mut tape = Tape::new();
    let bound = fusion.to_vec().map("fusion", &mut |_, t| tape.param_tensor(t));
    let xv = tape.constant(c * l, d, x.data.clone());
    let out = fusion_on_tape(&mut tape, &bound, xv, c);
    Tensor::from_vec(&x.shape, tape.value(out).to_vec())
}

/// `scale * x + shift` per channel over the rows of an `n x d` tensor.
pub fn film_modulate(x: &Tensor, scale: &[f64], shift: &[f64]) -> Result<Tensor> {
    let (_, d) = x.as_matrix_dims();
    if scale.len() != d || shift.len() != d {
        return Err(shape_err!("FiLM width {} / {} for {} channels", scale.len(), shift.len(), d));
    }
    let data = x.data.iter().enumerate().map(|(i, v)| scale[i % d] * v + shift[i % d]).collect();
    Tensor::from_vec(&x.shape, data)
}

/// Scale and shift a FiLM block derives from a `3d` condition vector.
pub fn film_coefficients(film: &Linear<Tensor>, cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if cond.len() != film.inputs() {
        return Err(shape_err!("condition width {} for FiLM input {}", cond.len(), film.inputs()));
    }
    let d = film.outputs() / 2;
    let mut tape = Tape::new();
    let bound = film.map("film", &mut |_, t| tape.param_tensor(t));
    let cv = tape.constant(1, cond.len(), cond.to_vec());
    let ss = bound.apply(&mut tape, cv);
    let v = tape.value(ss);
    Ok((v[..d].iter().map(|s| 1.0 + s).collect(), v[d..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;

    fn small_cfg() -> ModelConfig {
        ModelConfig { dancers: 2, hidden: 8, layers: 1, heads: 2, ssm_state: 2, footwork_blocks: 1 }
    }

    #[test]
    fn dpe_examples() {
        let x = Tensor::filled(&[2, 3, 4], 0.0);
        assert_eq!(dpe_add(&x, &[0.0, 0.0]).unwrap(), x);
        let y = dpe_add(&x, &[1.0, 2.0]).unwrap();
        assert!(y.data[..12].iter().all(|&v| v == 1.0));
        assert!(y.data[12..].iter().all(|&v| v == 2.0));
        let z = dpe_add(&Tensor::filled(&[1, 2, 2], 1.0), &[-0.5]).unwrap();
        assert!(z.data.iter().all(|&v| v == 0.5));
        assert!(matches!(dpe_add(&x, &[1.0]), Err(CoreError::ShapeMismatch(_))));
    }

    #[test]
    fn fusion_shape_and_zero_weights() {
        let cfg = ModelConfig { dancers: 3, ..small_cfg() };
        let model = Model::init(&cfg, 4).unwrap();
        let x = Tensor::filled(&[3, 10, 8], 0.3);
        let y = fusion_project(&x, &model.params.gdd.fusion).unwrap();
        assert_eq!(y.shape, vec![3, 10, 8]);
        let zero = DenoiserParams::zeros(&cfg);
        let y0 = fusion_project(&x, &zero.fusion).unwrap();
        assert!(y0.data.iter().all(|&v| v == 0.0));
        assert!(fusion_project(&Tensor::zeros(&[2, 10, 8]), &model.params.gdd.fusion).is_err());
    }

    #[test]
    fn fusion_breaks_slot_symmetry() {
        // Two dancers with identical features; the first layer reads only
        // dancer 0's block and the last layer writes it to dancer 1 scaled by 2.
        let (c, d) = (2, 2);
        let mut fusion = vec![Linear::zeros(c * d, d, true), Linear::zeros(d, d, true), Linear::zeros(d, c * d, true)];
        fusion[0].weight.data[0] = 1.0; // in col 0 (dancer 0, ch 0) -> hidden 0
        fusion[1].weight.data[0] = 1.0;
        fusion[2].weight.data[0] = 1.0; // hidden 0 -> dancer 0 ch 0
        fusion[2].weight.data[2] = 2.0; // hidden 0 -> dancer 1 ch 0
        let x = Tensor::from_vec(&[2, 1, 2], vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        let y = fusion_project(&x, &fusion).unwrap();
        assert_eq!(y.data, vec![0.5, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn film_examples() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(film_modulate(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap(), x);
        let y = film_modulate(&x, &[0.0, 0.0], &[5.0, 6.0]).unwrap();
        assert_eq!(y.data, vec![5.0, 6.0, 5.0, 6.0]);
        let ones = Tensor::filled(&[3, 2], 1.0);
        let z = film_modulate(&ones, &[2.0, 2.0], &[-1.0, -1.0]).unwrap();
        assert!(z.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sinusoid_at_zero() {
        let e = sinusoidal_embedding(0, 8);
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
    }

    #[test]
    fn conditioning_examples() {
        let cfg = small_cfg();
        let model = Model::init(&cfg, 9).unwrap();
        let music = MusicTrack::zeros(5).unwrap();
        let swap = SwapMode::identity(2);
        let a = build_conditioning(3, &music, &swap, &model.params.gdd, &cfg).unwrap();
        let b = build_conditioning(3, &music, &swap, &model.params.gdd, &cfg).unwrap();
        assert_eq!(a, b);
        let bias = &model.params.gdd.music.bias.as_ref().unwrap().data;
        for row in a.music.data.chunks_exact(cfg.hidden) {
            assert_eq!(row, &bias[..]);
        }
        assert_eq!(a.concatenated().len(), 3 * cfg.hidden);
    }

    #[test]
    fn swap_one_hot_layout() {
        let s = SwapMode::new(vec![1, 0]).unwrap();
        assert_eq!(s.one_hot(), vec![0.0, 1.0, 1.0, 0.0]);
        assert!(SwapMode::new(vec![1, 1]).is_err());
    }

    #[test]
    fn constant_network_outputs_bias() {
        let cfg = small_cfg();
        let mut p = DenoiserParams::zeros(&cfg);
        let b: Vec<f64> = (0..MOTION_DIM).map(|i| i as f64 * 0.01).collect();
        p.output.bias = Some(Tensor::from_vec(&[1, MOTION_DIM], b.clone()).unwrap());
        let x = GroupMotion::from_vec(2, 4, (0..2 * 4 * MOTION_DIM).map(|i| (i % 7) as f64).collect()).unwrap();
        let music = MusicTrack::zeros(4).unwrap();
        let y = denoise_forward(&x, 3, &music, &SwapMode::identity(2), &p, &cfg).unwrap();
        for c in 0..2 {
            for l in 0..4 {
                assert_eq!(y.frame(c, l), &b[..]);
            }
        }
    }

    #[test]
    fn forward_shape_and_purity() {
        let cfg = small_cfg();
        let model = Model::init(&cfg, 1).unwrap();
        let x = GroupMotion::from_vec(2, 30, (0..2 * 30 * MOTION_DIM).map(|i| ((i % 13) as f64) * 0.1).collect())
            .unwrap();
        let music = MusicTrack::zeros(30).unwrap();
        let swap = SwapMode::identity(2);
        let a = denoise_forward(&x, 5, &music, &swap, &model.params.gdd, &cfg).unwrap();
        let b = denoise_forward(&x, 5, &music, &swap, &model.params.gdd, &cfg).unwrap();
        assert_eq!((a.dancers(), a.frames()), (2, 30));
        assert_eq!(a, b);
        let short = MusicTrack::zeros(29).unwrap();
        assert!(denoise_forward(&x, 5, &short, &swap, &model.params.gdd, &cfg).is_err());
    }

    #[test]
    fn film_coefficients_start_at_identity() {
        let cfg = small_cfg();
        let model = Model::init(&cfg, 2).unwrap();
        let (scale, shift) = film_coefficients(&model.params.gdd.layers[0].film, &[0.7; 24]).unwrap();
        assert!(scale.iter().all(|&s| (s - 1.0).abs() < 1e-6));
        assert!(shift.iter().all(|&s| s.abs() < 1e-6));
    }
}
