//! Long-sequence sampling by overlapping windows: every window after the
//! first starts from a re-noised copy of the frames it shares with the
//! content already generated, followed by fresh noise for its new tail.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoiser::SwapMode;
use crate::diffusion::{gaussian, q_sample, sample_from, Denoiser, NoiseSchedule};
use crate::error::{shape_err, CoreError, Result};
use crate::math::sqrt;
use crate::motion::{GroupMotion, MOTION_DIM};
use crate::music::MusicTrack;

pub const DEFAULT_WINDOW: usize = 150;
pub const DEFAULT_HOP: usize = 75;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub window: usize,
    pub hop: usize,
    /// Half-open frame ranges.
    pub segments: Vec<(usize, usize)>,
}

impl WindowPlan {
    pub fn overlap(&self) -> usize {
        self.window - self.hop
    }

    pub fn total(&self) -> usize {
        self.segments.last().map_or(0, |s| s.1)
    }

    /// First frame each later window contributes.
    pub fn seams(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.0 + self.overlap()).collect()
    }
}

pub fn plan_windows(total: usize, window: usize, hop: usize) -> Result<WindowPlan> {
    if window == 0 || hop == 0 || hop > window {
        return Err(CoreError::InvalidLength(alloc::format!("window {} with hop {}", window, hop)));
    }
    if total < window || (total - window) % hop != 0 {
        return Err(CoreError::InvalidLength(alloc::format!(
            "{} frames cannot be tiled by windows of {} with hop {}",
            total,
            window,
            hop
        )));
    }
    let segments = (0..=(total - window) / hop).map(|k| (k * hop, k * hop + window)).collect();
    Ok(WindowPlan { window, hop, segments })
}

/// Smallest tileable length that is at least `frames`.
pub fn round_up_frames(frames: usize, window: usize, hop: usize) -> usize {
    if frames <= window || hop == 0 {
        return window;
    }
    window + (frames - window).div_ceil(hop) * hop
}

fn renoise_with<R: Rng + ?Sized>(x0: &GroupMotion, sched: &NoiseSchedule, rng: &mut R) -> Result<GroupMotion> {
    let noise = gaussian(rng, x0.data().len());
    let y = q_sample(x0.data(), sched.steps() - 1, &noise, sched)?;
    GroupMotion::from_vec(x0.dancers(), x0.frames(), y)
}

/// Corrupt a clean segment to the last diffusion step with seeded noise.
pub fn renoise_segment(x0: &GroupMotion, sched: &NoiseSchedule, seed: u64) -> Result<GroupMotion> {
    renoise_with(x0, sched, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-window record of the conditioning fed to the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTrace {
    pub segment: (usize, usize),
    /// Kept frames shared with this window (empty for the first window).
    pub overlap: Option<GroupMotion>,
    /// The re-noised overlap placed at the start of this window's input.
    pub renoised: Option<GroupMotion>,
    /// Noise used for the re-noising, so the prefix can be recomputed.
    pub noise: Vec<f64>,
    pub swap: SwapMode,
}

pub fn extend_sequence_traced<D: Denoiser + ?Sized>(
    denoiser: &D,
    dancers: usize,
    plan: &WindowPlan,
    music: &MusicTrack,
    swap: &SwapMode,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<(GroupMotion, Vec<WindowTrace>)> {
    if music.frames() < plan.total() {
        return Err(shape_err!("{} music frames for {} output frames", music.frames(), plan.total()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::with_capacity(plan.segments.len());
    let overlap = plan.overlap();
    let (start, end) = plan.segments[0];
    let x_t = GroupMotion::from_vec(dancers, plan.window, gaussian(&mut rng, dancers * plan.window * MOTION_DIM))?;
    let mut kept = sample_from(denoiser, x_t, &music.slice_frames(start, end)?, swap, sched, &mut rng, 1.0)?;
    if kept.frames() != plan.window || kept.dancers() != dancers {
        return Err(shape_err!("denoiser returned {} frames for a window of {}", kept.frames(), plan.window));
    }
    traces.push(WindowTrace { segment: (start, end), overlap: None, renoised: None, noise: Vec::new(), swap: swap.clone() });
    for &(start, end) in &plan.segments[1..] {
        let shared = kept.slice_frames(start, start + overlap)?;
        let noise = gaussian(&mut rng, shared.data().len());
        let prefix = GroupMotion::from_vec(dancers, overlap, q_sample(shared.data(), sched.steps() - 1, &noise, sched)?)?;
        let tail = GroupMotion::from_vec(dancers, plan.hop, gaussian(&mut rng, dancers * plan.hop * MOTION_DIM))?;
        let window_swap = SwapMode::from_final_frame(&kept);
        let out = sample_from(denoiser, prefix.concat_frames(&tail)?, &music.slice_frames(start, end)?, &window_swap, sched, &mut rng, 1.0)?;
        kept = kept.concat_frames(&out.slice_frames(overlap, plan.window)?)?;
        traces.push(WindowTrace { segment: (start, end), overlap: Some(shared), renoised: Some(prefix), noise, swap: window_swap });
    }
    Ok((kept, traces))
}

/// Generate `plan.total()` frames window by window.
pub fn extend_sequence<D: Denoiser + ?Sized>(
    denoiser: &D,
    dancers: usize,
    plan: &WindowPlan,
    music: &MusicTrack,
    swap: &SwapMode,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<GroupMotion> {
    extend_sequence_traced(denoiser, dancers, plan, music, swap, sched, seed).map(|r| r.0)
}

/// Largest root jump across any seam.
pub fn seam_jump(motion: &GroupMotion, plan: &WindowPlan) -> f64 {
    plan.seams().iter().map(|&s| frame_jump(motion, s)).fold(0.0, f64::max)
}

fn frame_jump(motion: &GroupMotion, frame: usize) -> f64 {
    (0..motion.dancers())
        .map(|c| {
            let (a, b) = (motion.root(c, frame - 1), motion.root(c, frame));
            sqrt((0..3).map(|k| (b[k] - a[k]) * (b[k] - a[k])).sum())
        })
        .fold(0.0, f64::max)
}

/// Seam jump divided by the largest frame-to-frame root displacement
/// away from seams; `0/0` counts as 0.
pub fn seam_ratio(motion: &GroupMotion, plan: &WindowPlan) -> f64 {
    let seams = plan.seams();
    let inner = (1..motion.frames()).filter(|f| !seams.contains(f)).map(|f| frame_jump(motion, f)).fold(0.0, f64::max);
    let seam = seam_jump(motion, plan);
    if seam == 0.0 {
        0.0
    } else {
        seam / inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, sample_loop, ScheduleKind};
    use alloc::vec;

    fn track(frames: usize) -> MusicTrack {
        let mut data = vec![0.0; frames * crate::music::MUSIC_DIM];
        for l in 0..frames {
            data[l * crate::music::MUSIC_DIM] = l as f64;
        }
        MusicTrack::from_vec(frames, data).unwrap()
    }

    #[test]
    fn plans() {
        assert_eq!(plan_windows(225, 150, 75).unwrap().segments, vec![(0, 150), (75, 225)]);
        assert_eq!(plan_windows(300, 150, 75).unwrap().segments, vec![(0, 150), (75, 225), (150, 300)]);
        assert_eq!(plan_windows(150, 150, 75).unwrap().segments, vec![(0, 150)]);
        assert!(matches!(plan_windows(200, 150, 75), Err(CoreError::InvalidLength(_))));
        assert!(plan_windows(100, 150, 75).is_err());
        assert_eq!(round_up_frames(200, 150, 75), 225);
        assert_eq!(round_up_frames(225, 150, 75), 225);
    }

    #[test]
    fn renoise_matches_q_sample() {
        let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let x0 = GroupMotion::from_vec(1, 2, (0..2 * MOTION_DIM).map(|i| i as f64 * 0.01).collect()).unwrap();
        let a = renoise_segment(&x0, &s, 9).unwrap();
        let noise = gaussian(&mut ChaCha8Rng::seed_from_u64(9), x0.data().len());
        assert_eq!(a.data(), &q_sample(x0.data(), 9, &noise, &s).unwrap()[..]);
        let zero = GroupMotion::zeros(1, 2).unwrap();
        let z = renoise_segment(&zero, &s, 9).unwrap();
        let scale = sqrt(1.0 - s.alpha_bar()[9]);
        for (v, e) in z.data().iter().zip(&noise) {
            assert_eq!(*v, scale * e);
        }
    }

    #[test]
    fn single_window_equals_sample_loop() {
        let s = make_schedule(5, ScheduleKind::Cosine).unwrap();
        let echo = |x: &GroupMotion, _: usize, _: &MusicTrack, _: &SwapMode| {
            GroupMotion::from_vec(x.dancers(), x.frames(), x.data().iter().map(|v| 0.3 * v).collect())
        };
        let m = track(6);
        let plan = plan_windows(6, 6, 3).unwrap();
        let swap = SwapMode::identity(2);
        let a = extend_sequence(&echo, 2, &plan, &m, &swap, &s, 4).unwrap();
        assert_eq!(a, sample_loop(&echo, 2, 6, &m, &swap, &s, 4).unwrap());
    }

    fn truth(frames: usize) -> GroupMotion {
        GroupMotion::from_vec(2, frames, (0..2 * frames * MOTION_DIM).map(|i| ((i * 31) % 17) as f64 * 0.1).collect())
            .unwrap()
    }

    #[test]
    fn oracle_stitching_reproduces_truth() {
        let s = make_schedule(4, ScheduleKind::Cosine).unwrap();
        let gt = truth(12);
        let g = gt.clone();
        // Locate the window from the envelope channel, which stores the frame index.
        let oracle = move |x: &GroupMotion, _: usize, m: &MusicTrack, _: &SwapMode| {
            let start = m.frame(0)[0] as usize;
            g.slice_frames(start, start + x.frames())
        };
        let plan = plan_windows(12, 6, 2).unwrap();
        let (out, traces) = extend_sequence_traced(&oracle, 2, &plan, &track(12), &SwapMode::identity(2), &s, 3).unwrap();
        assert_eq!(out, gt);
        assert_eq!(traces.len(), 4);
        for tr in &traces[1..] {
            let shared = tr.overlap.as_ref().unwrap();
            let want = q_sample(shared.data(), 3, &tr.noise, &s).unwrap();
            assert_eq!(tr.renoised.as_ref().unwrap().data(), &want[..]);
            assert_eq!(shared, &gt.slice_frames(tr.segment.0, tr.segment.0 + 4).unwrap());
        }
    }

    #[test]
    fn constant_oracle_has_no_seams() {
        let s = make_schedule(4, ScheduleKind::Cosine).unwrap();
        let c = GroupMotion::from_vec(2, 1, (0..2 * MOTION_DIM).map(|i| i as f64).collect()).unwrap();
        let oracle = move |x: &GroupMotion, _: usize, _: &MusicTrack, _: &SwapMode| {
            let mut out = x.clone();
            for d in 0..2 {
                for l in 0..x.frames() {
                    out.frame_mut(d, l).copy_from_slice(c.frame(d, 0));
                }
            }
            Ok(out)
        };
        let plan = plan_windows(24, 6, 3).unwrap();
        let m = track(24);
        let out = extend_sequence(&oracle, 2, &plan, &m, &SwapMode::identity(2), &s, 1).unwrap();
        assert_eq!(out.frames(), 24);
        assert_eq!(seam_jump(&out, &plan), 0.0);
        assert_eq!(seam_ratio(&out, &plan), 0.0);
        let again = extend_sequence(&oracle, 2, &plan, &m, &SwapMode::identity(2), &s, 1).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn seam_ratio_hand_case() {
        let mut m = GroupMotion::zeros(1, 6).unwrap();
        let xs = [0.0, 0.1, 0.2, 0.5, 0.6, 0.7];
        for (l, x) in xs.iter().enumerate() {
            m.frame_mut(0, l)[crate::motion::ROOT_OFFSET] = *x;
        }
        let plan = plan_windows(6, 4, 2).unwrap(); // seam at frame 4
        assert_eq!(plan.seams(), vec![4]);
        let r = seam_ratio(&m, &plan);
        assert!((r - 0.1 / 0.3).abs() < 1e-12, "{}", r);
    }
}
