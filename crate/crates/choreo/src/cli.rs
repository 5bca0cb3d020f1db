//! Command-line driver.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use choreo_core::denoiser::SwapMode;
use choreo_core::diffusion::{make_schedule, ScheduleKind, DEFAULT_STEPS};
use choreo_core::lgds::{plan_windows, round_up_frames, seam_jump, seam_ratio, WindowPlan, DEFAULT_HOP, DEFAULT_WINDOW};
use choreo_core::metrics::{diversity, evaluate, MetricConfig, MetricReport};
use choreo_core::model::{Model, ModelConfig};
use choreo_core::synth::{corpus_recipes, synth_group_sequence, synth_music, ChoreographyRecipe, Formation};
use choreo_core::train::{evaluate_loss, grad_check, jitter, overfit_run, TrainConfig, TrainExample};
use choreo_core::{MusicTrack, SkeletonSpec};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::config::{output_path, pick, FileConfig};
use crate::error::{AppError, AppResult};
use crate::format::{read_motion, write_motion, MotionFile};
use crate::plot::render_svg;

const FPS: f64 = 30.0;
/// Seed used for the fixed noise of the before/after training evaluation.
const EVAL_SEED: u64 = 0x5eed;

#[derive(Debug, Parser)]
#[command(name = "choreo", version, about = "Music-driven group choreography with a diffusion model")]
pub struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus of motion files.
    Synth(SynthArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Generate one window.
    Sample(SampleArgs),
    /// Generate a long sequence from overlapping windows.
    SampleLong(SampleLongArgs),
    /// Compute metrics for generated motion files.
    Eval(EvalArgs),
    /// Compare reverse-mode gradients with finite differences on a toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub dancers: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// line, circle, swap or converge-diverge; cycles through all when absent.
    #[arg(long)]
    pub pattern: Option<Formation>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub beat_period: Option<usize>,
    /// Pull neighbours together over the middle of each sequence.
    #[arg(long)]
    pub collision: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ssm_state: Option<usize>,
    #[arg(long)]
    pub footwork_blocks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of `.motion` files sharing dancer and frame counts.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    #[arg(long)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step loss log; defaults to the checkpoint path with a `.log` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Take the music track from this motion file instead of synthesizing one.
    #[arg(long)]
    pub music: Option<PathBuf>,
    #[arg(long)]
    pub beat_period: Option<usize>,
    /// Final left-to-right order as comma-separated dancer indices.
    #[arg(long)]
    pub swap_order: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleLongArgs {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Motion files to score; repeat for several.
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG of root trajectories and per-frame displacement.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Window length used to generate the files, for seam statistics.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 240)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I, env_out_dir: Option<PathBuf>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli, env_out_dir.as_deref(), &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, env_out_dir: Option<&Path>, out: &mut dyn Write) -> AppResult<()> {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Context { cfg, env_out_dir };
    match cli.command {
        Command::Synth(a) => ctx.synth(a, out),
        Command::Train(a) => ctx.train(a, out),
        Command::Sample(a) => ctx.sample(a, None, out),
        Command::SampleLong(a) => {
            let (window, hop) = (a.window, a.hop);
            ctx.sample(a.sample, Some((window, hop)), out)
        }
        Command::Eval(a) => ctx.eval(a, out),
        Command::Gradcheck(a) => ctx.gradcheck(a, out),
    }
}

fn say(out: &mut dyn Write, line: String) -> AppResult<()> {
    writeln!(out, "{line}").map_err(|source| AppError::Output { path: PathBuf::from("<stdout>"), source })
}

fn write_text(path: &Path, text: &str) -> AppResult<()> {
    fs::write(path, text).map_err(|source| AppError::Output { path: path.to_path_buf(), source })
}

fn create_parent(path: &Path) -> AppResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|source| AppError::Output { path: dir.to_path_buf(), source })
        }
        _ => Ok(()),
    }
}

pub fn parse_swap_order(s: &str, dancers: usize) -> AppResult<SwapMode> {
    let order: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| AppError::Usage(format!("bad dancer index `{p}` in --swap-order"))))
        .collect::<AppResult<_>>()?;
    if order.len() != dancers {
        return Err(AppError::Usage(format!("--swap-order lists {} dancers, the model has {dancers}", order.len())));
    }
    SwapMode::new(order).map_err(|e| AppError::Usage(format!("--swap-order: {e}")))
}

struct Context<'a> {
    cfg: FileConfig,
    env_out_dir: Option<&'a Path>,
}

impl Context<'_> {
    fn seed(&self, flag: Option<u64>) -> u64 {
        pick(flag, self.cfg.seed, 0)
    }

    fn synth(&self, a: SynthArgs, out: &mut dyn Write) -> AppResult<()> {
        let s = &self.cfg.synth;
        let dancers = pick(a.dancers, s.dancers, 2);
        let frames = pick(a.frames, s.frames, 60);
        let count = pick(a.count, s.count, 1);
        let period = pick(a.beat_period, s.beat_period, 15);
        let seed = self.seed(a.seed);
        let dir = output_path(a.out, &self.cfg, self.env_out_dir, "corpus")?;
        if count == 0 {
            return Err(AppError::Usage("--count must be at least 1".into()));
        }
        let recipes: Vec<ChoreographyRecipe> = corpus_recipes(count, dancers, frames, seed)
            .into_iter()
            .map(|r| ChoreographyRecipe {
                formation: a.pattern.unwrap_or(r.formation),
                beat_period: period,
                collision: a.collision,
                ..r
            })
            .collect();
        recipes.iter().try_for_each(|r| r.validate())?;
        fs::create_dir_all(&dir).map_err(|source| AppError::Output { path: dir.clone(), source })?;
        for (i, r) in recipes.iter().enumerate() {
            let (motion, music) = synth_group_sequence(r)?;
            let path = dir.join(format!("seq_{i:03}.motion"));
            write_motion(&path, &MotionFile { fps: r.fps, motion, music, skeleton: SkeletonSpec::default() })?;
            say(out, format!("wrote {} ({}, {} dancers, {} frames)", path.display(), r.formation.name(), dancers, frames))?;
        }
        Ok(())
    }

    fn model_config(&self, a: &ModelArgs, dancers: usize) -> ModelConfig {
        let m = &self.cfg.model;
        let d = ModelConfig::default();
        ModelConfig {
            dancers,
            hidden: pick(a.hidden, m.hidden, d.hidden),
            layers: pick(a.layers, m.layers, d.layers),
            heads: pick(a.heads, m.heads, d.heads),
            ssm_state: pick(a.ssm_state, m.ssm_state, d.ssm_state),
            footwork_blocks: pick(a.footwork_blocks, m.footwork_blocks, d.footwork_blocks),
        }
    }

    fn train(&self, a: TrainArgs, out: &mut dyn Write) -> AppResult<()> {
        let t = &self.cfg.train;
        let defaults = TrainConfig::default();
        let schedule = match (a.schedule, &t.schedule) {
            (Some(k), _) => k,
            (None, Some(name)) => name.parse()?,
            (None, None) => defaults.schedule,
        };
        let tc = TrainConfig {
            lr: pick(a.lr, t.lr, defaults.lr),
            steps: pick(a.steps, t.steps, defaults.steps),
            batch: pick(a.batch, t.batch, defaults.batch),
            diffusion_steps: pick(a.diffusion_steps, t.diffusion_steps, defaults.diffusion_steps),
            schedule,
            seed: self.seed(a.seed),
            weights: defaults.weights,
        };
        tc.validate()?;
        let corpus = load_corpus(&a.corpus)?;
        let dancers = corpus[0].motion.dancers();
        let mc = self.model_config(&a.model, dancers);
        let ckpt = output_path(a.out, &self.cfg, self.env_out_dir, "model.ckpt")?;
        let log_path = a.log.unwrap_or_else(|| ckpt.with_extension("log"));
        let mut model = Model::init(&mc, tc.seed)?;
        let sched = tc.schedule()?;
        let before = evaluate_loss(&model, &corpus, &sched, &tc.weights, EVAL_SEED)?;

        create_parent(&log_path)?;
        let log_err = |source| AppError::Output { path: log_path.clone(), source };
        let file = fs::File::create(&log_path).map_err(log_err)?;
        let mut log = BufWriter::new(file);
        let mut io_result = Ok(());
        let curve = overfit_run(&mut model, &corpus, &tc, &mut |r| {
            if io_result.is_ok() {
                io_result = writeln!(log, "{}", r.log_line());
            }
        })?;
        io_result.and_then(|_| log.flush()).map_err(log_err)?;

        let after = evaluate_loss(&model, &corpus, &sched, &tc.weights, EVAL_SEED)?;
        create_parent(&ckpt)?;
        write_checkpoint(&ckpt, &Checkpoint { model, schedule: tc.schedule, diffusion_steps: tc.diffusion_steps })?;
        let last = curve.last().map_or(f64::NAN, |r| r.total);
        say(out, format!("steps={} last_batch_total={last:?} eval_before={before:?} eval_after={after:?} ratio={:?}", tc.steps, after / before))?;
        say(out, format!("checkpoint={} log={}", ckpt.display(), log_path.display()))
    }

    fn sample(&self, a: SampleArgs, long: Option<(Option<usize>, Option<usize>)>, out: &mut dyn Write) -> AppResult<()> {
        let s = &self.cfg.sample;
        let ck = read_checkpoint(&a.checkpoint)?;
        let dancers = ck.model.config.dancers;
        let seed = self.seed(a.seed);
        let plan = match long {
            Some((w, h)) => {
                let window = pick(w, s.window, DEFAULT_WINDOW);
                let hop = pick(h, s.hop, DEFAULT_HOP);
                let frames = pick(a.frames, s.frames, 2 * window);
                if frames == 0 || hop == 0 || hop > window {
                    return Err(AppError::Usage(format!("need frames > 0 and 0 < hop <= window, got {frames}/{window}/{hop}")));
                }
                Some((frames, plan_windows(round_up_frames(frames, window, hop), window, hop)?))
            }
            None => None,
        };
        let frames = match &plan {
            Some((f, _)) => *f,
            None => pick(a.frames, s.frames, DEFAULT_WINDOW),
        };
        if frames == 0 {
            return Err(AppError::Usage("--frames must be positive".into()));
        }
        let generated = plan.as_ref().map_or(frames, |(_, p)| p.total());
        let music = match &a.music {
            Some(p) => {
                let f = read_motion(p)?;
                if f.music.frames() < generated {
                    return Err(AppError::Usage(format!("{} has {} music frames, need {generated}", p.display(), f.music.frames())));
                }
                f.music.slice_frames(0, generated)?
            }
            None => default_music(dancers, generated, pick(a.beat_period, s.beat_period, 15), seed)?,
        };
        let swap = match &a.swap_order {
            Some(s) => parse_swap_order(s, dancers)?,
            None => SwapMode::identity(dancers),
        };
        let path = output_path(a.out, &self.cfg, self.env_out_dir, if plan.is_some() { "long.motion" } else { "sample.motion" })?;
        let sched = make_schedule(ck.diffusion_steps, ck.schedule)?;
        let (motion, music, summary) = match &plan {
            None => {
                let m = ck.model.generate(&music, &swap, &sched, seed)?;
                (m, music, format!("frames={frames}"))
            }
            Some((_, p)) => {
                let m = ck.model.generate_long(&music, &swap, p, &sched, seed)?;
                let ratio = seam_ratio(&m, p);
                let m = m.slice_frames(0, frames)?;
                let music = music.slice_frames(0, frames)?;
                (m, music, format!("frames={frames} windows={} seam_ratio={ratio:?}", p.segments.len()))
            }
        };
        create_parent(&path)?;
        write_motion(&path, &MotionFile { fps: FPS, motion, music, skeleton: SkeletonSpec::default() })?;
        say(out, format!("wrote {} {summary}", path.display()))
    }

    fn eval(&self, a: EvalArgs, out: &mut dyn Write) -> AppResult<()> {
        let e = &self.cfg.eval;
        let defaults = MetricConfig::default();
        let files: Vec<MotionFile> = a.pred.iter().map(|p| read_motion(p)).collect::<AppResult<_>>()?;
        let mc = MetricConfig {
            radius: pick(a.radius, e.radius, defaults.radius),
            sigma: pick(a.sigma, e.sigma, defaults.sigma),
            fps: files[0].fps,
        };
        let seams = match (a.window, a.hop) {
            (Some(w), Some(h)) => Some((w, h)),
            (None, None) => None,
            _ => return Err(AppError::Usage("--window and --hop go together".into())),
        };
        let reports: Vec<MetricReport> =
            files.iter().map(|f| evaluate(&f.motion, &f.music, &f.skeleton, &mc)).collect::<Result<_, _>>()?;
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mut report = MetricReport {
            tif: mean(|r| r.tif),
            pfc: mean(|r| r.pfc),
            gmc: mean(|r| r.gmc),
            mmc: mean(|r| r.mmc),
            div: if files.len() == 1 {
                reports[0].div
            } else {
                let seqs: Vec<&[f64]> = files.iter().flat_map(|f| (0..f.motion.dancers()).map(|c| f.motion.dancer(c))).collect();
                diversity(&seqs, &files[0].skeleton)?
            },
            extra: Vec::new(),
        };
        let mut seam_marks = Vec::new();
        if let Some((w, h)) = seams {
            let (mut ratio, mut jump) = (0.0f64, 0.0f64);
            for f in &files {
                let plan = seams_within(f.motion.frames(), w, h)?;
                seam_marks = plan.seams();
                ratio = ratio.max(seam_ratio(&f.motion, &plan));
                jump = jump.max(seam_jump(&f.motion, &plan));
            }
            report.extra.push(("seam_ratio".into(), ratio));
            report.extra.push(("seam_jump".into(), jump));
        }
        let text = report.to_text();
        if let Some(p) = &a.plot {
            create_parent(p)?;
            write_text(p, &render_svg(&files[0].motion, &seam_marks))?;
        }
        match &a.out {
            Some(p) => {
                create_parent(p)?;
                write_text(p, &text)
            }
            None => out.write_all(text.as_bytes()).map_err(|source| AppError::Output { path: "<stdout>".into(), source }),
        }
    }

    fn gradcheck(&self, a: GradcheckArgs, out: &mut dyn Write) -> AppResult<()> {
        let seed = self.seed(a.seed);
        if !(a.eps > 0.0) || a.samples == 0 {
            return Err(AppError::Usage("--eps and --samples must be positive".into()));
        }
        let mc = ModelConfig { dancers: 2, hidden: a.hidden, layers: 1, heads: 2, ssm_state: 2, footwork_blocks: 2 };
        let mut model = Model::init(&mc, seed)?;
        jitter(&mut model.params, 0.1, seed.wrapping_add(1));
        let batch = toy_batch(2, a.frames, seed)?;
        let sched = make_schedule(DEFAULT_STEPS, ScheduleKind::Cosine)?;
        let r = grad_check(&model, &batch, &sched, &TrainConfig::default().weights, a.eps, a.samples, seed)?;
        let mut text = String::new();
        for (g, e) in &r.groups {
            text.push_str(&format!("group={g} max_rel_error={e:?}\n"));
        }
        text.push_str(&format!("samples={}\nmax_rel_error={:?}\n", r.samples.len(), r.max_rel_error));
        match &a.out {
            Some(p) => write_text(p, &text)?,
            None => out.write_all(text.as_bytes()).map_err(|source| AppError::Output { path: "<stdout>".into(), source })?,
        }
        if r.max_rel_error >= a.tolerance {
            return Err(AppError::GradCheck(r.max_rel_error));
        }
        Ok(())
    }
}

/// Short synthetic sequences for gradient checks.
pub fn toy_batch(count: usize, frames: usize, seed: u64) -> AppResult<Vec<TrainExample>> {
    corpus_recipes(count, 2, frames.max(30), seed)
        .iter()
        .map(|r| {
            let (m, music) = synth_group_sequence(r)?;
            Ok(TrainExample::new(&m.slice_frames(0, frames)?, music.slice_frames(0, frames)?)?)
        })
        .collect()
}

/// Every `.motion` file in `dir`, in name order, as training examples.
pub fn load_corpus(dir: &Path) -> AppResult<Vec<TrainExample>> {
    let entries = fs::read_dir(dir).map_err(|source| AppError::Input { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "motion"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(AppError::Usage(format!("no .motion files in {}", dir.display())));
    }
    let files: Vec<MotionFile> = paths.iter().map(|p| read_motion(p)).collect::<AppResult<_>>()?;
    let (c, l) = (files[0].motion.dancers(), files[0].motion.frames());
    if let Some((p, _)) = paths.iter().zip(&files).find(|(_, f)| f.motion.dancers() != c || f.motion.frames() != l) {
        return Err(AppError::Usage(format!("{} does not match the corpus shape {c} dancers x {l} frames", p.display())));
    }
    files.into_iter().map(|f| Ok(TrainExample::new(&f.motion, f.music)?)).collect()
}

/// Window plan covering `frames`, keeping only windows whose seam lies
/// inside the sequence (trimmed outputs drop the tail of the last window).
pub fn seams_within(frames: usize, window: usize, hop: usize) -> AppResult<WindowPlan> {
    let mut plan = plan_windows(round_up_frames(frames, window, hop), window, hop)?;
    let overlap = plan.overlap();
    let first = plan.segments[0];
    plan.segments = std::iter::once(first).chain(plan.segments[1..].iter().copied().filter(|s| s.0 + overlap < frames)).collect();
    Ok(plan)
}

/// Synthesized music for sampling without a `--music` file.
pub fn default_music(dancers: usize, frames: usize, beat_period: usize, seed: u64) -> AppResult<MusicTrack> {
    let recipe = ChoreographyRecipe { beat_period, ..ChoreographyRecipe::new(dancers.clamp(2, 5), frames.max(30), Formation::Line, seed) };
    Ok(synth_music(&recipe)?.slice_frames(0, frames)?)
}
