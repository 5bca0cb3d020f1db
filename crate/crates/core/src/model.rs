//! Model configuration, parameter initialisation and the assembled
//! generator (decoder + footwork adaptor).

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{denoise_forward, DenoiserParams, SwapMode};
use crate::diffusion::{sample_loop, Denoiser, NoiseSchedule};
use crate::error::{config_err, Result};
use crate::footwork::{adapt_footwork, finalize, FootworkParams, CONTEXT_DIM};
use crate::lgds::{extend_sequence, WindowPlan};
use crate::math::{exp, expm1, ln, sqrt};
use crate::motion::{GroupMotion, MotionFrame, MOTION_DIM};
use crate::music::{MusicTrack, MUSIC_DIM};
use crate::params::{count, join, ParamTree};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub dancers: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ssm_state: usize,
    pub footwork_blocks: usize,
}

impl Default for ModelConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self { dancers: 2, hidden: 64, layers: 2, heads: 8, ssm_state: 4, footwork_blocks: 3 }
    }
}

impl ModelConfig {
    /// Full-size configuration: width 512, eight sequence blocks.
    pub fn full(dancers: usize) -> Self {
        Self { dancers, hidden: 512, layers: 8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dancers == 0 || self.layers == 0 || self.heads == 0 || self.ssm_state == 0 || self.footwork_blocks == 0 {
            return Err(config_err!("dancers, layers, heads, state size and footwork blocks must be positive"));
        }
        if self.hidden == 0 || self.hidden % 2 != 0 || self.hidden % self.heads != 0 {
            return Err(config_err!("hidden width {} must be even and divisible by {} heads", self.hidden, self.heads));
        }
        Ok(())
    }

    /// Closed-form number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let (c, d, n) = (self.dancers, self.hidden, self.ssm_state);
        let affine = |i: usize, o: usize| i * o + o;
        let attention = 4 * affine(d, d);
        let layer = 3 * 2 * d + attention + (affine(d, d) + 3 * d * n) + attention + affine(3 * d, 2 * d);
        let decoder = affine(MOTION_DIM, d)
            + c
            + affine(c * d, d)
            + affine(d, d)
            + affine(d, c * d)
            + affine(d, d)
            + affine(MUSIC_DIM, d)
            + affine(c * c, d)
            + self.layers * layer
            + affine(d, MOTION_DIM);
        let block = affine(d, d) + affine(CONTEXT_DIM, d) + CONTEXT_DIM * d;
        let footwork = affine(MOTION_DIM, d) + self.footwork_blocks * block + affine(d, MOTION_DIM);
        decoder + footwork
    }
}

/// Decoder and footwork weights under the `gdd` / `fa` namespaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub gdd: DenoiserParams<T>,
    pub fa: FootworkParams<T>,
}

impl<T> ParamTree<T> for ModelParams<T> {
    type Mapped<U> = ModelParams<U>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams { gdd: self.gdd.map(&join(prefix, "gdd"), f), fa: self.fa.map(&join(prefix, "fa"), f) }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.gdd.for_each_mut(&join(prefix, "gdd"), f);
        self.fa.for_each_mut(&join(prefix, "fa"), f);
    }
}

impl ModelParams<Tensor> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self { gdd: DenoiserParams::zeros(cfg), fa: FootworkParams::zeros(cfg.hidden, cfg.footwork_blocks) }
    }

    pub fn count(&self) -> usize {
        count(self)
    }
}

fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    rng.random_range(-bound..bound)
}

/// Seeded initialisation.
///
/// Affine maps draw weights and biases from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
/// Layer norms start at unit gain, the positioning offsets and every FiLM
/// projection at zero (so modulation starts as the identity). SSM decay
/// rates start at `A_n = -(n + 1)` and the step-size bias at the inverse
/// softplus of a log-uniform draw from `[0.001, 0.1]`. Both output heads
/// start with the rest pose as their bias so forward kinematics is well
/// defined from the first step.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<Tensor>> {
    cfg.validate()?;
    let mut params = ModelParams::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = MotionFrame::rest([0.0; 3]);
    let mut fan_in = 1;
    params.for_each_mut("", &mut |name, t| {
        let leaf = name.rsplit('.').next().unwrap_or(name);
        let owner = name.rsplit('.').nth(1).unwrap_or("");
        if name.contains(".norm_") {
            return;
        }
        if name.contains(".film.") || leaf == "dpe" {
            return;
        }
        match leaf {
            "weight" => {
                fan_in = t.shape[0];
                let bound = 1.0 / sqrt(fan_in as f64);
                t.data.iter_mut().for_each(|v| *v = uniform(&mut rng, bound));
            }
            "bias" if name == "gdd.output.bias" || name == "fa.output.bias" => t.data.copy_from_slice(&rest.data),
            "bias" if owner == "delta" => {
                for v in t.data.iter_mut() {
                    let dt = exp(rng.random_range(ln(0.001)..ln(0.1)));
                    // softplus^{-1}(dt) = ln(exp(dt) - 1)
                    *v = ln(expm1(dt));
                }
            }
            "bias" => {
                let bound = 1.0 / sqrt(fan_in as f64);
                t.data.iter_mut().for_each(|v| *v = uniform(&mut rng, bound));
            }
            "a_log" => {
                let state = t.shape[1];
                for (i, v) in t.data.iter_mut().enumerate() {
                    *v = ln((i % state + 1) as f64);
                }
            }
            "b" | "c" => {
                let bound = 1.0 / sqrt(t.shape[1] as f64);
                t.data.iter_mut().for_each(|v| *v = uniform(&mut rng, bound));
            }
            _ => {}
        }
    });
    Ok(params)
}

/// A configured model: decoder plus footwork adaptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor>,
}

impl Model {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self { config: *config, params: init_params(config, seed)? })
    }

    /// Raw decoder output refined by the footwork adaptor, contact flags
    /// clamped into `[0, 1]`.
    pub fn refine(&self, raw: &GroupMotion) -> Result<GroupMotion> {
        let adapted = adapt_footwork(raw, &self.params.fa)?;
        let mut out = finalize(raw, &adapted)?;
        out.clamp_contacts();
        Ok(out)
    }

    /// Sample one window and refine it.
    pub fn generate(&self, music: &MusicTrack, swap: &SwapMode, sched: &NoiseSchedule, seed: u64) -> Result<GroupMotion> {
        let raw = sample_loop(self, self.config.dancers, music.frames(), music, swap, sched, seed)?;
        self.refine(&raw)
    }

    /// Sample `plan.total()` frames by overlapping windows, then refine.
    pub fn generate_long(
        &self,
        music: &MusicTrack,
        swap: &SwapMode,
        plan: &WindowPlan,
        sched: &NoiseSchedule,
        seed: u64,
    ) -> Result<GroupMotion> {
        let raw = extend_sequence(self, self.config.dancers, plan, music, swap, sched, seed)?;
        self.refine(&raw)
    }

    pub fn names(&self) -> Vec<alloc::string::String> {
        let mut out = Vec::new();
        self.params.for_each("", &mut |n, _| out.push(alloc::string::String::from(n)));
        out
    }
}

impl Denoiser for Model {
    fn predict(&self, x_t: &GroupMotion, t: usize, music: &MusicTrack, swap: &SwapMode) -> Result<GroupMotion> {
        denoise_forward(x_t, t, music, swap, &self.params.gdd, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_count_matches_shapes() {
        for cfg in [
            ModelConfig { dancers: 2, hidden: 8, layers: 1, heads: 8, ssm_state: 4, footwork_blocks: 1 },
            ModelConfig::default(),
            ModelConfig { dancers: 3, hidden: 16, layers: 3, heads: 4, ssm_state: 2, footwork_blocks: 2 },
        ] {
            assert_eq!(ModelParams::zeros(&cfg).count(), cfg.parameter_count());
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig { hidden: 16, ..ModelConfig::default() };
        assert_eq!(init_params(&cfg, 3).unwrap(), init_params(&cfg, 3).unwrap());
        assert_ne!(init_params(&cfg, 3).unwrap(), init_params(&cfg, 4).unwrap());
    }

    #[test]
    fn init_structure() {
        let cfg = ModelConfig { hidden: 16, heads: 4, ..ModelConfig::default() };
        let p = init_params(&cfg, 0).unwrap();
        assert!(p.gdd.dpe.data.iter().all(|&v| v == 0.0));
        let layer = &p.gdd.layers[0];
        assert!(layer.film.weight.data.iter().all(|&v| v == 0.0));
        assert!(layer.norm_ssm.gain.data.iter().all(|&v| v == 1.0));
        assert_eq!(&layer.ssm.a_log.data[..4], &[0.0, ln(2.0), ln(3.0), ln(4.0)]);
        for &b in &layer.ssm.delta.bias.as_ref().unwrap().data {
            let dt = crate::math::softplus(b);
            assert!((0.001 - 1e-12..=0.1 + 1e-12).contains(&dt));
        }
        let bound = 1.0 / sqrt(MOTION_DIM as f64);
        assert!(p.gdd.input.weight.data.iter().all(|v| v.abs() <= bound));
        assert_eq!(p.gdd.output.bias.as_ref().unwrap().data, MotionFrame::rest([0.0; 3]).data.to_vec());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = ModelConfig { hidden: 10, heads: 4, ..ModelConfig::default() };
        assert!(init_params(&cfg, 0).is_err());
        assert!(ModelConfig { layers: 0, ..ModelConfig::default() }.validate().is_err());
    }
}
