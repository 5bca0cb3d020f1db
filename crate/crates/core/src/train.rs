//! Training objective, Adam, the overfit loop and the finite-difference
//! gradient check.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::denoiser::{denoise_on_tape, SwapMode};
use crate::diffusion::{gaussian, make_schedule, q_sample, NoiseSchedule, ScheduleKind, DEFAULT_STEPS};
use crate::error::{config_err, CoreError, Result};
use crate::footwork::{adapt_on_tape, finalize_on_tape};
use crate::losses::{loss_terms_on_tape, total_loss, LossComponents, LossVars, LossWeights};
use crate::math::sqrt;
use crate::model::{Model, ModelConfig, ModelParams};
use crate::motion::{sort_dancers, GroupMotion, SkeletonSpec, MOTION_DIM};
use crate::music::{MusicTrack, MUSIC_DIM};
use crate::params::{bind, collect_grads, ParamTree};
use crate::tensor::Tensor;

pub use crate::model::init_params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            steps: 2000,
            batch: 4,
            weights: LossWeights::default(),
            seed: 0,
            diffusion_steps: DEFAULT_STEPS,
            schedule: ScheduleKind::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config_err!("learning rate must be finite and nonnegative"));
        }
        if self.batch == 0 || self.diffusion_steps == 0 {
            return Err(config_err!("batch size and diffusion steps must be positive"));
        }
        self.weights.validate()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.diffusion_steps, self.schedule)
    }
}

/// A ground-truth sequence in sorted dancer order with its swap mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub motion: GroupMotion,
    pub music: MusicTrack,
    pub swap: SwapMode,
}

impl TrainExample {
    pub fn new(motion: &GroupMotion, music: MusicTrack) -> Result<Self> {
        if music.frames() != motion.frames() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} music frames for {} motion frames",
                music.frames(),
                motion.frames()
            )));
        }
        let (sorted, _) = sort_dancers(motion);
        let swap = SwapMode::from_final_frame(&sorted);
        Ok(Self { motion: sorted, music, swap })
    }
}

/// Loss nodes of one example at diffusion step `t` with the given noise.
pub fn example_loss(
    tape: &mut Tape,
    bound: &ModelParams<Var>,
    cfg: &ModelConfig,
    ex: &TrainExample,
    t: usize,
    noise: &[f64],
    sched: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<LossVars> {
    let (c, l) = (ex.motion.dancers(), ex.motion.frames());
    let x_t = q_sample(ex.motion.data(), t, noise, sched)?;
    let x = tape.constant(c * l, MOTION_DIM, x_t);
    let m = tape.constant(l, MUSIC_DIM, ex.music.data().to_vec());
    let raw = denoise_on_tape(tape, &bound.gdd, cfg, x, t, m, &ex.swap);
    let adapted = adapt_on_tape(tape, &bound.fa, raw, c);
    let out = finalize_on_tape(tape, raw, adapted);
    loss_terms_on_tape(tape, out, &ex.motion, &SkeletonSpec::default(), weights)
}

/// One draw of `(t, noise)` per example.
pub struct Corruption {
    pub t: usize,
    pub noise: Vec<f64>,
}

pub fn draw_corruption<R: Rng + ?Sized>(rng: &mut R, ex: &TrainExample, sched: &NoiseSchedule) -> Corruption {
    let t = rng.random_range(0..sched.steps());
    Corruption { t, noise: gaussian(rng, ex.motion.data().len()) }
}

/// Batch-mean objective on a fresh tape.
pub struct BatchObjective {
    pub tape: Tape,
    pub bound: ModelParams<Var>,
    pub total: Var,
    pub components: LossComponents,
}

pub fn batch_objective(
    model: &Model,
    batch: &[(&TrainExample, &Corruption)],
    sched: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<BatchObjective> {
    let mut tape = Tape::new();
    let bound = bind(&model.params, "", &mut tape);
    let scale = 1.0 / batch.len() as f64;
    let mut totals = Vec::with_capacity(batch.len());
    let mut components = LossComponents::default();
    for (ex, cor) in batch {
        let vars = example_loss(&mut tape, &bound, &model.config, ex, cor.t, &cor.noise, sched, weights)?;
        let c = vars.components(&tape);
        components.sim += scale * c.sim;
        components.fk += scale * c.fk;
        components.vel += scale * c.vel;
        components.con += scale * c.con;
        components.dist += scale * c.dist;
        totals.push((vars.total, scale));
    }
    let total = tape.weighted_sum(&totals);
    Ok(BatchObjective { tape, bound, total, components })
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ModelParams<Tensor>) -> Self {
        let mut zeros = Vec::new();
        params.for_each("", &mut |_, t| zeros.push(vec![0.0; t.len()]));
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, params: &mut ModelParams<Tensor>, grads: &[Vec<f64>]) {
        self.step += 1;
        let b1t = 1.0 - libm::pow(self.beta1, self.step as f64);
        let b2t = 1.0 - libm::pow(self.beta2, self.step as f64);
        let mut leaf = 0;
        let (lr, beta1, beta2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.for_each_mut("", &mut |_, t| {
            let (m, v, g) = (&mut ms[leaf], &mut vs[leaf], &grads[leaf]);
            for i in 0..t.data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                t.data[i] -= lr * (m[i] / b1t) / (sqrt(v[i] / b2t) + eps);
            }
            leaf += 1;
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub components: LossComponents,
    pub total: f64,
}

impl StepReport {
    /// One log line: `step=.. sim=.. fk=.. vel=.. con=.. dist=.. total=..`.
    pub fn log_line(&self) -> String {
        let c = &self.components;
        format!(
            "step={} sim={:?} fk={:?} vel={:?} con={:?} dist={:?} total={:?}",
            self.step, c.sim, c.fk, c.vel, c.con, c.dist, self.total
        )
    }
}

/// One optimisation step on `batch`: draws `t` and noise per example from
/// `rng`, back-propagates the batch-mean loss and applies Adam.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[&TrainExample],
    sched: &NoiseSchedule,
    weights: &LossWeights,
    rng: &mut R,
    step: usize,
) -> Result<StepReport> {
    let draws: Vec<Corruption> = batch.iter().map(|ex| draw_corruption(rng, ex, sched)).collect();
    let pairs: Vec<(&TrainExample, &Corruption)> = batch.iter().copied().zip(&draws).collect();
    let obj = batch_objective(model, &pairs, sched, weights)?;
    let total = obj.tape.scalar(obj.total);
    if !total.is_finite() || !obj.components.is_finite() {
        return Err(CoreError::NonFiniteLoss { step, detail: format!("{:?}", obj.components) });
    }
    let grads = obj.tape.backward(obj.total);
    let g = collect_grads(&obj.bound, "", &grads, &obj.tape);
    if g.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFiniteLoss { step, detail: format!("non-finite gradient, loss {:?}", total) });
    }
    adam.update(&mut model.params, &g);
    Ok(StepReport { step, components: obj.components, total: total_loss(&obj.components, weights) })
}

/// Train on `corpus`, cycling through it in fixed order `batch` examples at
/// a time; `on_step` sees every report as it is produced.
pub fn overfit_run(
    model: &mut Model,
    corpus: &[TrainExample],
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&StepReport),
) -> Result<Vec<StepReport>> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(config_err!("empty training corpus"));
    }
    let sched = cfg.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr, &model.params);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<&TrainExample> = (0..cfg.batch).map(|i| &corpus[(step * cfg.batch + i) % corpus.len()]).collect();
        let report = train_step(model, &mut adam, &batch, &sched, &cfg.weights, &mut rng, step)?;
        on_step(&report);
        curve.push(report);
    }
    Ok(curve)
}

/// Diffusion steps at which [`evaluate_loss`] scores the model.
pub fn evaluation_steps(steps: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..5).map(|k| k * (steps - 1) / 4).collect();
    v.dedup();
    v
}

/// Deterministic objective: every example at each evaluation step with
/// noise fixed by `seed`, averaged.
pub fn evaluate_loss(
    model: &Model,
    corpus: &[TrainExample],
    sched: &NoiseSchedule,
    weights: &LossWeights,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::new();
    for ex in corpus {
        for t in evaluation_steps(sched.steps()) {
            draws.push((ex, Corruption { t, noise: gaussian(&mut rng, ex.motion.data().len()) }));
        }
    }
    let pairs: Vec<(&TrainExample, &Corruption)> = draws.iter().map(|(e, c)| (*e, c)).collect();
    let obj = batch_objective(model, &pairs, sched, weights)?;
    Ok(obj.tape.scalar(obj.total))
}

/// Add `U(-scale, scale)` to every parameter.
pub fn jitter(params: &mut ModelParams<Tensor>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.for_each_mut("", &mut |_, t| t.data.iter_mut().for_each(|v| *v += rng.random_range(-scale..scale)));
}

/// Parameter group a leaf belongs to, for stratified checking.
pub fn parameter_group(name: &str) -> &'static str {
    const GROUPS: [(&str, &str); 16] = [
        ("gdd.dpe", "dpe"),
        ("gdd.fusion", "fusion"),
        ("gdd.input", "input"),
        ("gdd.time", "timestep"),
        ("gdd.music", "music"),
        ("gdd.swap", "swap"),
        ("gdd.output", "output"),
        ("fa.input", "footwork_input"),
        ("fa.blocks", "concat_squash"),
        ("fa.output", "footwork_output"),
        (".self_attn.", "self_attention"),
        (".cross_attn.", "cross_attention"),
        (".ssm.", "ssm"),
        (".film.", "film"),
        (".norm_", "layer_norm"),
        ("", "other"),
    ];
    GROUPS.iter().find(|(p, _)| if p.starts_with('.') { name.contains(p) } else { name.starts_with(p) }).map_or("other", |g| g.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_rel_error: f64,
    /// Largest relative error per parameter group.
    pub groups: Vec<(String, f64)>,
}

/// Relative-error floor: gradients smaller than this are compared in
/// absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

fn set_entry(params: &mut ModelParams<Tensor>, leaf: usize, index: usize, value: f64) -> f64 {
    let mut k = 0;
    let mut old = 0.0;
    params.for_each_mut("", &mut |_, t| {
        if k == leaf {
            old = t.data[index];
            t.data[index] = value;
        }
        k += 1;
    });
    old
}

/// Central differences against reverse-mode gradients of the batch-mean
/// objective, on `samples` entries spread evenly over parameter groups.
pub fn grad_check(
    model: &Model,
    batch: &[TrainExample],
    sched: &NoiseSchedule,
    weights: &LossWeights,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Corruption> = batch.iter().map(|ex| draw_corruption(&mut rng, ex, sched)).collect();
    let pairs: Vec<(&TrainExample, &Corruption)> = batch.iter().zip(&draws).collect();
    let obj = batch_objective(model, &pairs, sched, weights)?;
    let grads = obj.tape.backward(obj.total);
    let analytic = collect_grads(&obj.bound, "", &grads, &obj.tape);

    let mut leaves: Vec<(String, usize)> = Vec::new();
    model.params.for_each("", &mut |n, t| leaves.push((String::from(n), t.len())));
    let mut group_names: Vec<&'static str> = Vec::new();
    for (n, _) in &leaves {
        let g = parameter_group(n);
        if !group_names.contains(&g) {
            group_names.push(g);
        }
    }
    let per_group = samples.div_ceil(group_names.len());
    let mut picks: Vec<(usize, usize)> = Vec::new();
    let mut leftover: Vec<(usize, usize)> = Vec::new();
    for g in &group_names {
        let members: Vec<(usize, usize)> = leaves
            .iter()
            .enumerate()
            .filter(|(_, (n, _))| parameter_group(n) == *g)
            .flat_map(|(li, (_, len))| (0..*len).map(move |i| (li, i)))
            .collect();
        let mut pool = members;
        for _ in 0..per_group.min(pool.len()) {
            let k = rng.random_range(0..pool.len());
            picks.push(pool.swap_remove(k));
        }
        leftover.extend(pool);
    }
    // Small groups cannot fill their share; top up from everything else.
    while picks.len() < samples && !leftover.is_empty() {
        let k = rng.random_range(0..leftover.len());
        picks.push(leftover.swap_remove(k));
    }

    let mut work = model.clone();
    let eval = |m: &Model| -> Result<f64> {
        let obj = batch_objective(m, &pairs, sched, weights)?;
        Ok(obj.tape.scalar(obj.total))
    };
    let mut out = Vec::with_capacity(picks.len());
    for (leaf, index) in picks {
        let base = set_entry(&mut work.params, leaf, index, 0.0);
        set_entry(&mut work.params, leaf, index, base + eps);
        let up = eval(&work)?;
        set_entry(&mut work.params, leaf, index, base - eps);
        let down = eval(&work)?;
        set_entry(&mut work.params, leaf, index, base);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[leaf][index];
        let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        out.push(GradSample { name: leaves[leaf].0.clone(), index, analytic: a, numeric, rel_error });
    }
    let max_rel_error = out.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    let groups = group_names
        .iter()
        .map(|g| {
            let worst = out.iter().filter(|s| parameter_group(&s.name) == *g).map(|s| s.rel_error).fold(0.0, f64::max);
            (String::from(*g), worst)
        })
        .collect();
    Ok(GradCheckReport { samples: out, max_rel_error, groups })
}
