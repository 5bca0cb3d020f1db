//! Synthetic choreography: formation-driven root paths, beat-locked limb
//! swings, contact flags derived from foot kinematics and a matching
//! 35-channel music track.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::math::{cos, sin, sqrt};
use crate::motion::{fk_sequence, matrix_to_rot6d, GroupMotion, MotionFrame, SkeletonSpec, CONTACT_JOINTS, CONTACT_OFFSET};
use crate::music::{MusicTrack, BEAT_CHANNEL, CHROMA_CHANNELS, ENVELOPE_CHANNEL, MUSIC_DIM, PEAK_CHANNEL, SPECTRAL_CHANNELS};

/// Root height that puts the default skeleton's feet on the ground.
pub const STANDING_HEIGHT: f64 = 0.93;
/// Foot speed (meters per frame) below which a contact flag is set.
pub const CONTACT_SPEED: f64 = 0.02;
const LINE_SPACING: f64 = 1.0;
const CIRCLE_RADIUS: f64 = 1.0;
const COLLISION_SPACING: f64 = 0.2;
const SWAY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formation {
    Line,
    Circle,
    Swap,
    ConvergeDiverge,
}

impl Formation {
    pub const ALL: [Formation; 4] = [Formation::Line, Formation::Circle, Formation::Swap, Formation::ConvergeDiverge];

    pub fn name(&self) -> &'static str {
        match self {
            Formation::Line => "line",
            Formation::Circle => "circle",
            Formation::Swap => "swap",
            Formation::ConvergeDiverge => "converge-diverge",
        }
    }
}

impl core::str::FromStr for Formation {
    type Err = crate::CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Formation::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| config_err!("unknown formation `{}`", s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoreographyRecipe {
    pub dancers: usize,
    pub frames: usize,
    pub fps: f64,
    pub formation: Formation,
    pub beat_period: usize,
    pub seed: u64,
    /// Pull neighbours to 0.2 m apart over the middle third.
    pub collision: bool,
}

impl ChoreographyRecipe {
    pub fn new(dancers: usize, frames: usize, formation: Formation, seed: u64) -> Self {
        Self { dancers, frames, fps: 30.0, formation, beat_period: 15, seed, collision: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.dancers) {
            return Err(config_err!("dancer count {} outside 2..=5", self.dancers));
        }
        if self.frames < 30 {
            return Err(config_err!("need at least 30 frames, got {}", self.frames));
        }
        if self.beat_period < 2 {
            return Err(config_err!("beat period must be at least 2"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(config_err!("fps must be positive"));
        }
        Ok(())
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Smooth band-limited signal: a few low-frequency sinusoids with seeded
/// frequencies, phases and amplitudes.
fn band_limited(rng: &mut ChaCha8Rng, frames: usize) -> Vec<f64> {
    let parts: Vec<(f64, f64, f64)> = (0..3)
        .map(|k| {
            let freq = rng.random_range(0.5..4.0) / frames as f64;
            let phase = rng.random_range(0.0..TAU);
            let amp = rng.random_range(0.5..1.0) / (k + 1) as f64;
            (freq, phase, amp)
        })
        .collect();
    (0..frames).map(|i| parts.iter().map(|(f, p, a)| a * sin(TAU * f * i as f64 + p)).sum()).collect()
}

fn envelope(i: usize, period: usize) -> f64 {
    0.5 * (1.0 + cos(TAU * (i % period) as f64 / period as f64))
}

pub fn synth_music(recipe: &ChoreographyRecipe) -> Result<MusicTrack> {
    recipe.validate()?;
    let (frames, period) = (recipe.frames, recipe.beat_period);
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed ^ 0x6d_7573_6963);
    let mut data = vec![0.0; frames * MUSIC_DIM];
    let env: Vec<f64> = (0..frames).map(|i| envelope(i, period)).collect();
    for ch in SPECTRAL_CHANNELS.chain(CHROMA_CHANNELS) {
        for (i, v) in band_limited(&mut rng, frames).into_iter().enumerate() {
            data[i * MUSIC_DIM + ch] = v;
        }
    }
    for i in 0..frames {
        let row = &mut data[i * MUSIC_DIM..(i + 1) * MUSIC_DIM];
        row[ENVELOPE_CHANNEL] = env[i];
        row[BEAT_CHANNEL] = if i % period == 0 { 1.0 } else { 0.0 };
        let rising = i == 0 || env[i] > env[i - 1];
        let falling = i + 1 < frames && env[i] > env[i + 1];
        row[PEAK_CHANNEL] = if rising && falling { 1.0 } else { 0.0 };
    }
    MusicTrack::from_vec(frames, data)
}

/// 0 outside collision fixtures; inside, ramps up over [1/6, 1/3] of the
/// sequence, holds at 1 and ramps down over [2/3, 5/6].
fn collision_weight(recipe: &ChoreographyRecipe, l: usize) -> f64 {
    if !recipe.collision {
        return 0.0;
    }
    let u = l as f64 / (recipe.frames - 1) as f64;
    smoothstep((u - 1.0 / 6.0) * 6.0) * (1.0 - smoothstep((u - 2.0 / 3.0) * 6.0))
}

/// Ground-plane (x, z) position of every dancer at frame `l`.
fn formation_xz(recipe: &ChoreographyRecipe, l: usize) -> Vec<[f64; 2]> {
    let c = recipe.dancers;
    let u = l as f64 / (recipe.frames - 1) as f64;
    let centred = |k: usize, spacing: f64| (k as f64 - (c - 1) as f64 / 2.0) * spacing;
    let spacing = LINE_SPACING - (LINE_SPACING - COLLISION_SPACING) * collision_weight(recipe, l);
    match recipe.formation {
        Formation::Line => (0..c).map(|k| [centred(k, spacing), 0.0]).collect(),
        Formation::ConvergeDiverge => {
            let s = 1.2 - 0.6 * 0.5 * (1.0 - cos(TAU * u));
            let s = if recipe.collision { s.min(spacing) } else { s };
            (0..c).map(|k| [centred(k, s), 0.0]).collect()
        }
        Formation::Circle => {
            let turn = 0.25 * PI * u;
            let radius = if recipe.collision {
                CIRCLE_RADIUS.min(spacing / (2.0 * sin(PI / c as f64)))
            } else {
                CIRCLE_RADIUS
            };
            (0..c)
                .map(|k| {
                    let a = PI + TAU * k as f64 / c as f64 + turn;
                    [radius * cos(a), radius * sin(a)]
                })
                .collect()
        }
        Formation::Swap => {
            let mut pos: Vec<[f64; 2]> = (0..c).map(|k| [centred(k, spacing), 0.0]).collect();
            let mid = 0.5 * (pos[0][0] + pos[1][0]);
            let half = 0.5 * (pos[1][0] - pos[0][0]);
            let theta = PI * (1.0 - smoothstep((u - 1.0 / 3.0) * 3.0));
            pos[0] = [mid + half * cos(theta), half * sin(theta)];
            pos[1] = [mid - half * cos(theta), -half * sin(theta)];
            pos
        }
    }
}

fn rot_x(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = (sin(a), cos(a));
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Beat-locked swing amplitudes (radians) per joint; mirrored limbs move in
/// antiphase.
const SWINGS: [(usize, f64, f64); 10] = [
    (1, 0.35, 0.0),
    (2, 0.35, PI),
    (4, 0.30, 0.5),
    (5, 0.30, 0.5 + PI),
    (3, 0.08, 0.0),
    (6, 0.06, 0.3),
    (16, 0.50, PI),
    (17, 0.50, 0.0),
    (18, 0.40, 0.8),
    (19, 0.40, 0.8 + PI),
];

pub fn synth_group_sequence(recipe: &ChoreographyRecipe) -> Result<(GroupMotion, MusicTrack)> {
    recipe.validate()?;
    let music = synth_music(recipe)?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let phases: Vec<f64> = (0..recipe.dancers).map(|_| rng.random_range(0.0..TAU)).collect();
    let styles: Vec<f64> = (0..recipe.dancers).map(|_| rng.random_range(0.7..1.3)).collect();
    let period = recipe.beat_period as f64;
    let layout: Vec<Vec<[f64; 2]>> = (0..recipe.frames).map(|l| formation_xz(recipe, l)).collect();
    let mut motion = GroupMotion::from_frames(recipe.dancers, recipe.frames, |c, l| {
        let beat = TAU * l as f64 / period;
        let [x, z] = layout[l][c];
        let sway = SWAY * (1.0 - collision_weight(recipe, l)) * sin(beat / 4.0 + phases[c]);
        let bob = 0.02 * (1.0 - cos(2.0 * beat));
        let mut f = MotionFrame::rest([x, STANDING_HEIGHT - bob, z + sway]);
        for &(joint, amp, phase) in SWINGS.iter() {
            f.set_rot6d(joint, &matrix_to_rot6d(&rot_x(styles[c] * amp * sin(beat + phase))));
        }
        f
    })?;
    label_contacts(&mut motion, &SkeletonSpec::default())?;
    Ok((motion, music))
}

/// Per-frame foot speed `|P_{i+1} - P_i|` of the contact joints; the last
/// frame repeats the previous one.
pub fn foot_speeds(frames: &[f64], skel: &SkeletonSpec) -> Result<Vec<[f64; 4]>> {
    let joints = fk_sequence(frames, skel)?;
    let n = joints.len();
    let mut out = vec![[0.0; 4]; n];
    for i in 0..n.saturating_sub(1) {
        for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
            let d: f64 = (0..3).map(|x| { let d = joints[i + 1][j][x] - joints[i][j][x]; d * d }).sum();
            out[i][k] = sqrt(d);
        }
    }
    if n >= 2 {
        out[n - 1] = out[n - 2];
    }
    Ok(out)
}

/// Set every contact flag from the foot kinematics.
pub fn label_contacts(motion: &mut GroupMotion, skel: &SkeletonSpec) -> Result<()> {
    for c in 0..motion.dancers() {
        let speeds = foot_speeds(motion.dancer(c), skel)?;
        for (l, s) in speeds.iter().enumerate() {
            let row = motion.frame_mut(c, l);
            for k in 0..4 {
                row[CONTACT_OFFSET + k] = if s[k] < CONTACT_SPEED { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(())
}

/// Recipes for a small corpus: formations in turn, seeds `seed, seed+1, ...`.
pub fn corpus_recipes(count: usize, dancers: usize, frames: usize, seed: u64) -> Vec<ChoreographyRecipe> {
    (0..count)
        .map(|i| ChoreographyRecipe::new(dancers, frames, Formation::ALL[i % Formation::ALL.len()], seed + i as u64))
        .collect()
}

pub fn synth_corpus(recipes: &[ChoreographyRecipe]) -> Result<Vec<(GroupMotion, MusicTrack)>> {
    recipes.iter().map(synth_group_sequence).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tif;

    #[test]
    fn beats_every_period() {
        let r = ChoreographyRecipe { frames: 60, ..ChoreographyRecipe::new(2, 60, Formation::Line, 1) };
        let m = synth_music(&r).unwrap();
        assert_eq!(m.beat_frames(), vec![0, 15, 30, 45]);
        assert_eq!(m.peak_frames(), vec![0, 15, 30, 45]);
        assert_eq!(m, synth_music(&r).unwrap());
        assert_eq!(m.data().len(), 60 * 35);
    }

    #[test]
    fn line_starts_sorted() {
        let (m, _) = synth_group_sequence(&ChoreographyRecipe::new(3, 30, Formation::Line, 2)).unwrap();
        assert!(m.root(0, 0)[0] < m.root(1, 0)[0] && m.root(1, 0)[0] < m.root(2, 0)[0]);
    }

    #[test]
    fn swap_reverses_order() {
        let (m, _) = synth_group_sequence(&ChoreographyRecipe::new(2, 60, Formation::Swap, 3)).unwrap();
        let last = m.frames() - 1;
        assert!(m.root(0, 0)[0] < m.root(1, 0)[0]);
        assert!(m.root(0, last)[0] > m.root(1, last)[0]);
    }

    #[test]
    fn corpus_is_collision_free_except_fixtures() {
        for dancers in 2..=5 {
            for f in Formation::ALL {
                let r = ChoreographyRecipe::new(dancers, 90, f, 10 + dancers as u64);
                let (m, _) = synth_group_sequence(&r).unwrap();
                assert_eq!(tif(&m, 0.2).unwrap(), 0.0, "{:?} C={}", f, dancers);
                let (fixture, _) = synth_group_sequence(&ChoreographyRecipe { collision: true, ..r }).unwrap();
                assert!(tif(&fixture, 0.2).unwrap() >= 0.3, "{:?} C={}", f, dancers);
            }
        }
    }

    #[test]
    fn contacts_match_kinematics() {
        let skel = SkeletonSpec::default();
        for f in Formation::ALL {
            let (m, _) = synth_group_sequence(&ChoreographyRecipe::new(3, 60, f, 4)).unwrap();
            for c in 0..3 {
                let speeds = foot_speeds(m.dancer(c), &skel).unwrap();
                for (l, s) in speeds.iter().enumerate() {
                    for k in 0..4 {
                        let flag = m.frame(c, l)[CONTACT_OFFSET + k];
                        assert_eq!(flag == 1.0, s[k] < CONTACT_SPEED);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let r = ChoreographyRecipe::new(2, 30, Formation::Circle, 5);
        assert_eq!(synth_group_sequence(&r).unwrap(), synth_group_sequence(&r).unwrap());
        assert!(synth_group_sequence(&ChoreographyRecipe { dancers: 6, ..r }).is_err());
        assert!(synth_group_sequence(&ChoreographyRecipe { frames: 29, ..r }).is_err());
        assert!(synth_group_sequence(&ChoreographyRecipe { beat_period: 1, ..r }).is_err());
        assert_eq!("converge-diverge".parse::<Formation>().unwrap(), Formation::ConvergeDiverge);
    }
}
