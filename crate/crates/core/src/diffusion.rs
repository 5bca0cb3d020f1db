//! Noise schedules, forward corruption and ancestral sampling around a
//! clean-motion predictor.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::denoiser::SwapMode;
use crate::error::{config_err, shape_err, CoreError, Result};
use crate::math::{cos, sqrt};
use crate::motion::{GroupMotion, MOTION_DIM};
use crate::music::MusicTrack;

/// Diffusion steps used for training and inference unless configured.
pub const DEFAULT_STEPS: usize = 50;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        }
    }
}

impl core::str::FromStr for ScheduleKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(config_err!("unknown schedule kind `{}`", other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Schedule from per-step decay coefficients, each in `(0, 1)`.
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(config_err!("schedule needs at least one step"));
        }
        if alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(config_err!("decay coefficients must lie in (0, 1)"));
        }
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(CoreError::InvalidStep(t));
        }
        Ok(())
    }

    /// `(x0 coefficient, x_t coefficient, variance)` of `q(x_{t-1} | x_t, x0)`.
    pub fn posterior(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check_step(t)?;
        if t == 0 {
            return Err(CoreError::InvalidStep(0));
        }
        let (a, ab, ab_prev) = (self.alpha[t], self.alpha_bar[t], self.alpha_bar[t - 1]);
        let c0 = sqrt(ab_prev) * (1.0 - a) / (1.0 - ab);
        let ct = sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
        let var = (1.0 - a) * (1.0 - ab_prev) / (1.0 - ab);
        Ok((c0, ct, var))
    }
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(config_err!("schedule needs at least one step"));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let scale = 1000.0 / steps as f64;
            let (lo, hi) = (1e-4 * scale, 0.02 * scale);
            (0..steps)
                .map(|i| if steps == 1 { lo } else { lo + (hi - lo) * i as f64 / (steps - 1) as f64 })
                .map(|b| b.min(MAX_BETA))
                .collect()
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let c = cos((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * core::f64::consts::FRAC_PI_2);
                c * c
            };
            (0..steps).map(|i| (1.0 - f((i + 1) as f64) / f(i as f64)).min(MAX_BETA)).collect()
        }
    };
    NoiseSchedule::from_alphas(betas.into_iter().map(|b| 1.0 - b).collect())
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`.
pub fn q_sample(x0: &[f64], t: usize, noise: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if x0.len() != noise.len() {
        return Err(shape_err!("signal of {} values, noise of {}", x0.len(), noise.len()));
    }
    let ab = sched.alpha_bar[t];
    let (s, n) = (sqrt(ab), sqrt(1.0 - ab));
    Ok(x0.iter().zip(noise).map(|(x, e)| s * x + n * e).collect())
}

pub fn q_sample_motion(x0: &GroupMotion, t: usize, noise: &[f64], sched: &NoiseSchedule) -> Result<GroupMotion> {
    GroupMotion::from_vec(x0.dancers(), x0.frames(), q_sample(x0.data(), t, noise, sched)?)
}

/// One ancestral step `x_t -> x_{t-1}` given a clean-motion estimate. The
/// noise term is dropped at `t = 1`.
pub fn p_step(x_t: &[f64], x0_hat: &[f64], t: usize, noise: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let (c0, ct, var) = sched.posterior(t)?;
    if x_t.len() != x0_hat.len() || x_t.len() != noise.len() {
        return Err(shape_err!("p_step on {} / {} / {} values", x_t.len(), x0_hat.len(), noise.len()));
    }
    let sigma = if t == 1 { 0.0 } else { sqrt(var) };
    Ok(x_t.iter().zip(x0_hat).zip(noise).map(|((xt, x0), e)| c0 * x0 + ct * xt + sigma * e).collect())
}

/// Clean-motion predictor `D(x_t, t, music, swap)`.
pub trait Denoiser {
    fn predict(&self, x_t: &GroupMotion, t: usize, music: &MusicTrack, swap: &SwapMode) -> Result<GroupMotion>;
}

impl<F> Denoiser for F
where
    F: Fn(&GroupMotion, usize, &MusicTrack, &SwapMode) -> Result<GroupMotion>,
{
    fn predict(&self, x_t: &GroupMotion, t: usize, music: &MusicTrack, swap: &SwapMode) -> Result<GroupMotion> {
        self(x_t, t, music, swap)
    }
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Reverse chain from an explicit `x_T`: steps `T-1 .. 1`, then the final
/// clean estimate at step 0. `noise_scale` multiplies every injected draw
/// (1 for sampling, 0 for the deterministic chain).
pub fn sample_from<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    x_t: GroupMotion,
    music: &MusicTrack,
    swap: &SwapMode,
    sched: &NoiseSchedule,
    rng: &mut R,
    noise_scale: f64,
) -> Result<GroupMotion> {
    let (dancers, frames) = (x_t.dancers(), x_t.frames());
    let mut x = x_t;
    for t in (1..sched.steps()).rev() {
        let x0 = denoiser.predict(&x, t, music, swap)?;
        if !x0.same_shape(&x) {
            return Err(shape_err!("denoiser returned {}x{} for {}x{}", x0.dancers(), x0.frames(), dancers, frames));
        }
        let noise: Vec<f64> = if t > 1 {
            gaussian(rng, x.data().len()).into_iter().map(|e| e * noise_scale).collect()
        } else {
            alloc::vec![0.0; x.data().len()]
        };
        x = GroupMotion::from_vec(dancers, frames, p_step(x.data(), x0.data(), t, &noise, sched)?)?;
    }
    denoiser.predict(&x, 0, music, swap)
}

/// Seeded ancestral sampling of a `dancers x frames` motion.
pub fn sample_loop<D: Denoiser + ?Sized>(
    denoiser: &D,
    dancers: usize,
    frames: usize,
    music: &MusicTrack,
    swap: &SwapMode,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<GroupMotion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_t = GroupMotion::from_vec(dancers, frames, gaussian(&mut rng, dancers * frames * MOTION_DIM))?;
    sample_from(denoiser, x_t, music, swap, sched, &mut rng, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_step_linear() {
        let s = make_schedule(1, ScheduleKind::Linear).unwrap();
        assert_eq!(s.alpha_bar(), s.alpha());
    }

    #[test]
    fn cosine_fifty_steps() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        assert!(s.alpha_bar().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar()[49] < 0.01);
        // Oracle: the unclipped cosine curve at the first step.
        let f = |t: f64| libm::cos((t / 50.0 + 0.008) / 1.008 * core::f64::consts::FRAC_PI_2).powi(2);
        assert!((s.alpha_bar()[0] - f(1.0) / f(0.0)).abs() < 1e-12);
        assert_eq!(s, make_schedule(50, ScheduleKind::Cosine).unwrap());
    }

    #[test]
    fn schedule_errors() {
        assert!(matches!(make_schedule(0, ScheduleKind::Cosine), Err(CoreError::InvalidConfig(_))));
        assert!("quadratic".parse::<ScheduleKind>().is_err());
        assert_eq!("linear".parse::<ScheduleKind>().unwrap(), ScheduleKind::Linear);
    }

    #[test]
    fn q_sample_closed_form() {
        let s = NoiseSchedule::from_alphas(vec![0.99]).unwrap();
        let y = q_sample(&[1.0], 0, &[0.0], &s).unwrap();
        assert!((y[0] - 0.99f64.sqrt()).abs() < 1e-15);
        assert!((y[0] - 0.994987).abs() < 1e-6);
        let z = q_sample(&[0.0], 0, &[2.0], &s).unwrap();
        assert!((z[0] - 0.01f64.sqrt() * 2.0).abs() < 1e-15);
        assert!(matches!(q_sample(&[0.0], 0, &[1.0, 2.0], &s), Err(CoreError::ShapeMismatch(_))));
        let near = NoiseSchedule::from_alphas(vec![1.0 - 1e-12]).unwrap();
        assert!((q_sample(&[3.0], 0, &[1.0], &near).unwrap()[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn p_step_constant_and_chain() {
        let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        for t in 1..10 {
            let y = p_step(&[2.5], &[2.5], t, &[0.0], &s).unwrap();
            let (c0, ct, _) = s.posterior(t).unwrap();
            // Mean equals c when the coefficients are applied to equal values.
            assert!((y[0] - 2.5 * (c0 + ct)).abs() < 1e-12);
            let x0 = [0.7, -1.3];
            let xt = q_sample(&x0, t, &[0.0, 0.0], &s).unwrap();
            let prev = p_step(&xt, &x0, t, &[0.0, 0.0], &s).unwrap();
            let want = q_sample(&x0, t - 1, &[0.0, 0.0], &s).unwrap();
            for (a, b) in prev.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "t={} {} vs {}", t, a, b);
            }
        }
        assert_eq!(p_step(&[1.0], &[0.0], 1, &[5.0], &s).unwrap(), p_step(&[1.0], &[0.0], 1, &[-5.0], &s).unwrap());
        assert!(matches!(p_step(&[1.0], &[1.0], 0, &[0.0], &s), Err(CoreError::InvalidStep(0))));
    }

    fn constant(c: f64) -> impl Fn(&GroupMotion, usize, &MusicTrack, &SwapMode) -> Result<GroupMotion> {
        move |x, _, _, _| GroupMotion::from_vec(x.dancers(), x.frames(), vec![c; x.data().len()])
    }

    #[test]
    fn constant_predictor() {
        let s = make_schedule(8, ScheduleKind::Cosine).unwrap();
        let m = MusicTrack::zeros(3).unwrap();
        let out = sample_loop(&constant(0.25), 2, 3, &m, &SwapMode::identity(2), &s, 11).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.25).abs() < 1e-9));
    }

    #[test]
    fn seeded_and_single_step() {
        let s = make_schedule(6, ScheduleKind::Cosine).unwrap();
        let m = MusicTrack::zeros(2).unwrap();
        let echo = |x: &GroupMotion, t: usize, _: &MusicTrack, _: &SwapMode| {
            GroupMotion::from_vec(x.dancers(), x.frames(), x.data().iter().map(|v| 0.5 * v + t as f64).collect())
        };
        let swap = SwapMode::identity(1);
        let a = sample_loop(&echo, 1, 2, &m, &swap, &s, 5).unwrap();
        assert_eq!(a, sample_loop(&echo, 1, 2, &m, &swap, &s, 5).unwrap());
        let one = make_schedule(1, ScheduleKind::Cosine).unwrap();
        let b = sample_loop(&echo, 1, 2, &m, &swap, &one, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = gaussian(&mut rng, 2 * MOTION_DIM);
        let want: Vec<f64> = noise.iter().map(|v| 0.5 * v).collect();
        assert_eq!(b.data(), &want[..]);
    }

    #[test]
    fn oracle_recovers_x0_without_noise() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let x0 = GroupMotion::from_vec(2, 4, (0..2 * 4 * MOTION_DIM).map(|i| (i % 9) as f64 * 0.1).collect()).unwrap();
        let target = x0.clone();
        let oracle = move |_: &GroupMotion, _: usize, _: &MusicTrack, _: &SwapMode| Ok(target.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = GroupMotion::from_vec(2, 4, gaussian(&mut rng, 2 * 4 * MOTION_DIM)).unwrap();
        let m = MusicTrack::zeros(4).unwrap();
        let out = sample_from(&oracle, start, &m, &SwapMode::identity(2), &s, &mut rng, 0.0).unwrap();
        for (a, b) in out.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
