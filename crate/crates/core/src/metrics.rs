//! Evaluation metrics computable without learned feature extractors.
//!
//! Single-dancer metrics take that dancer's `L x 151` frame rows, e.g.
//! [`GroupMotion::dancer`].

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{config_err, CoreError, Result};
use crate::math::{exp, sqrt};
use crate::motion::{fk_sequence, GroupMotion, SkeletonSpec, NUM_JOINTS};
use crate::music::MusicTrack;

pub const DEFAULT_RADIUS: f64 = 0.2;
pub const DEFAULT_SIGMA: f64 = 3.0;
pub const DEFAULT_FPS: f64 = 30.0;
const LEFT_FOOT: usize = 10;
const RIGHT_FOOT: usize = 11;

fn norm(v: [f64; 3]) -> f64 {
    sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Fraction of frames where some pair of dancers is closer than
/// `2 * radius` on the ground plane.
pub fn tif(motion: &GroupMotion, radius: f64) -> Result<f64> {
    if motion.dancers() < 2 {
        return Err(config_err!("collision frequency needs at least two dancers"));
    }
    let hits = (0..motion.frames())
        .filter(|&l| {
            (0..motion.dancers()).any(|i| {
                (i + 1..motion.dancers()).any(|j| {
                    let (a, b) = (motion.root(i, l), motion.root(j, l));
                    let (dx, dz) = (a[0] - b[0], a[2] - b[2]);
                    sqrt(dx * dx + dz * dz) < 2.0 * radius
                })
            })
        })
        .count();
    Ok(hits as f64 / motion.frames() as f64)
}

/// Foot-contact plausibility: root acceleration weighted by the slower
/// foot's speed, averaged over interior frames and normalised by the peak
/// acceleration. Lower is better; `0/0` counts as 0.
pub fn pfc(frames: &[f64], skel: &SkeletonSpec, fps: f64) -> Result<f64> {
    let joints = fk_sequence(frames, skel)?;
    let n = joints.len();
    if n < 3 {
        return Err(CoreError::InvalidLength(alloc::format!("foot contact metric needs three frames, got {}", n)));
    }
    let root = |l: usize| joints[l][0];
    let mut acc = Vec::with_capacity(n - 2);
    let mut weighted = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        let a = sub(root(i + 1), root(i));
        let b = sub(root(i), root(i - 1));
        let accel = norm(sub(a, b)) * fps * fps;
        let foot = |j: usize| norm(sub(joints[i + 1][j], joints[i - 1][j])) * fps / 2.0;
        acc.push(accel);
        weighted.push(accel * foot(LEFT_FOOT).min(foot(RIGHT_FOOT)));
    }
    let peak = acc.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(0.0);
    }
    Ok(weighted.iter().sum::<f64>() / weighted.len() as f64 / peak)
}

fn joint_velocities(frames: &[f64], skel: &SkeletonSpec) -> Result<Vec<f64>> {
    let joints = fk_sequence(frames, skel)?;
    let mut out = Vec::with_capacity(joints.len().saturating_sub(1) * NUM_JOINTS * 3);
    for w in joints.windows(2) {
        for j in 0..NUM_JOINTS {
            out.extend_from_slice(&sub(w[1][j], w[0][j]));
        }
    }
    Ok(out)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / sqrt(va * vb)
}

/// Mean zero-lag correlation of joint velocities over dancer pairs.
pub fn gmc(motion: &GroupMotion, skel: &SkeletonSpec) -> Result<f64> {
    if motion.dancers() < 2 {
        return Err(config_err!("group correlation needs at least two dancers"));
    }
    if motion.frames() < 2 {
        return Err(CoreError::InvalidLength("group correlation needs two frames".into()));
    }
    let vels = (0..motion.dancers()).map(|c| joint_velocities(motion.dancer(c), skel)).collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..vels.len() {
        for j in i + 1..vels.len() {
            sum += pearson(&vels[i], &vels[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Frames that are strict local minima of total joint speed, where the
/// speed at frame `i` sums `|P_{i+1} - P_i|` over joints.
pub fn kinematic_beats(frames: &[f64], skel: &SkeletonSpec) -> Result<Vec<usize>> {
    let joints = fk_sequence(frames, skel)?;
    let speed: Vec<f64> =
        joints.windows(2).map(|w| (0..NUM_JOINTS).map(|j| norm(sub(w[1][j], w[0][j]))).sum()).collect();
    Ok((1..speed.len().saturating_sub(1)).filter(|&i| speed[i] < speed[i - 1] && speed[i] < speed[i + 1]).collect())
}

/// Mean over music beats of `exp(-d^2 / (2 sigma^2))`, `d` being the
/// distance to the nearest kinematic beat; 0 if either set is empty.
pub fn beat_alignment(music_beats: &[usize], kinematic: &[usize], sigma: f64) -> f64 {
    if music_beats.is_empty() || kinematic.is_empty() {
        return 0.0;
    }
    let score: f64 = music_beats
        .iter()
        .map(|&b| {
            let d = kinematic.iter().map(|&k| (b as f64 - k as f64).abs()).fold(f64::INFINITY, f64::min);
            exp(-d * d / (2.0 * sigma * sigma))
        })
        .sum();
    score / music_beats.len() as f64
}

pub fn mmc(frames: &[f64], music: &MusicTrack, sigma: f64, skel: &SkeletonSpec) -> Result<f64> {
    Ok(beat_alignment(&music.beat_frames(), &kinematic_beats(frames, skel)?, sigma))
}

/// Per-joint mean speed (meters per frame).
pub fn kinetic_features(frames: &[f64], skel: &SkeletonSpec) -> Result<[f64; NUM_JOINTS]> {
    let joints = fk_sequence(frames, skel)?;
    let mut out = [0.0; NUM_JOINTS];
    if joints.len() < 2 {
        return Ok(out);
    }
    for w in joints.windows(2) {
        for (j, o) in out.iter_mut().enumerate() {
            *o += norm(sub(w[1][j], w[0][j]));
        }
    }
    let n = (joints.len() - 1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

pub fn diversity_from_features(features: &[[f64; NUM_JOINTS]]) -> Result<f64> {
    if features.len() < 2 {
        return Err(config_err!("diversity needs at least two sequences"));
    }
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            sum += sqrt(features[i].iter().zip(&features[j]).map(|(a, b)| (a - b) * (a - b)).sum());
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Mean pairwise distance between the kinetic features of the sequences.
pub fn diversity(sequences: &[&[f64]], skel: &SkeletonSpec) -> Result<f64> {
    let feats = sequences.iter().map(|s| kinetic_features(s, skel)).collect::<Result<Vec<_>>>()?;
    diversity_from_features(&feats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub radius: f64,
    pub sigma: f64,
    pub fps: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { radius: DEFAULT_RADIUS, sigma: DEFAULT_SIGMA, fps: DEFAULT_FPS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub tif: f64,
    pub pfc: f64,
    pub gmc: f64,
    pub mmc: f64,
    pub div: f64,
    /// Extra `key=value` lines, e.g. a seam ratio.
    pub extra: Vec<(String, f64)>,
}

impl MetricReport {
    /// `key=value` lines; learned-feature metrics are reported as `n/a`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [("tif", self.tif), ("pfc", self.pfc), ("gmc", self.gmc), ("mmc", self.mmc), ("div", self.div)] {
            let _ = writeln!(s, "{}={:?}", k, v);
        }
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{}={:?}", k, v);
        }
        s.push_str("gmr=n/a\nfid=n/a\n");
        s
    }
}

/// Every metric for one group sequence: per-dancer metrics are averaged
/// over dancers and diversity is taken across dancers.
pub fn evaluate(motion: &GroupMotion, music: &MusicTrack, skel: &SkeletonSpec, cfg: &MetricConfig) -> Result<MetricReport> {
    let c = motion.dancers();
    let per_dancer = |f: &dyn Fn(&[f64]) -> Result<f64>| -> Result<f64> {
        let mut sum = 0.0;
        for d in 0..c {
            sum += f(motion.dancer(d))?;
        }
        Ok(sum / c as f64)
    };
    let dancers: Vec<&[f64]> = (0..c).map(|d| motion.dancer(d)).collect();
    Ok(MetricReport {
        tif: tif(motion, cfg.radius)?,
        pfc: per_dancer(&|f| pfc(f, skel, cfg.fps))?,
        gmc: gmc(motion, skel)?,
        mmc: per_dancer(&|f| mmc(f, music, cfg.sigma, skel))?,
        div: diversity(&dancers, skel)?,
        extra: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{MotionFrame, MOTION_DIM, ROOT_OFFSET};
    use alloc::vec;

    fn pair(frames: usize, gap: impl Fn(usize) -> f64) -> GroupMotion {
        GroupMotion::from_frames(2, frames, |c, l| MotionFrame::rest([c as f64 * gap(l), 0.93, 0.0])).unwrap()
    }

    #[test]
    fn tif_fixtures() {
        assert_eq!(tif(&pair(10, |_| 0.1), 0.1).unwrap(), 1.0);
        assert_eq!(tif(&pair(10, |_| 5.0), 0.1).unwrap(), 0.0);
        assert_eq!(tif(&pair(10, |l| if l < 5 { 0.1 } else { 3.0 }), 0.1).unwrap(), 0.5);
        assert!(tif(&GroupMotion::zeros(1, 3).unwrap(), 0.2).is_err());
    }

    #[test]
    fn tif_ignores_height() {
        let m = GroupMotion::from_frames(2, 1, |c, _| MotionFrame::rest([0.0, 3.0 * c as f64, 0.0])).unwrap();
        assert_eq!(tif(&m, 0.2).unwrap(), 1.0);
    }

    fn glide(frames: usize, x: impl Fn(usize) -> f64) -> Vec<f64> {
        GroupMotion::from_frames(1, frames, |_, l| MotionFrame::rest([x(l), 0.93, 0.0])).unwrap().into_data()
    }

    #[test]
    fn pfc_cases() {
        let skel = SkeletonSpec::default();
        assert_eq!(pfc(&glide(5, |_| 1.0), &skel, 30.0).unwrap(), 0.0);
        // Quadratic root, rigid pose: a = fps^2, foot speed = i * fps at frame i.
        let v = pfc(&glide(4, |l| 0.5 * (l * l) as f64), &skel, 30.0).unwrap();
        assert!((v - 1.5 * 30.0).abs() < 1e-9, "{}", v);
        assert!(pfc(&glide(2, |_| 0.0), &skel, 30.0).is_err());
    }

    #[test]
    fn pfc_pinned_foot() {
        // Rotate the whole body about the left foot so it never moves while the root accelerates.
        let skel = SkeletonSpec::default();
        let rest = crate::motion::forward_kinematics(&MotionFrame::rest([0.0; 3]), &skel).unwrap();
        let foot = rest[LEFT_FOOT];
        let frames = GroupMotion::from_frames(1, 6, |_, l| {
            let a = 0.05 * (l * l) as f64;
            let (s, c) = (libm::sin(a), libm::cos(a));
            let rot = [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]];
            let rf = crate::math::matvec3(&rot, &foot);
            let mut f = MotionFrame::rest([-rf[0] + foot[0], -rf[1] + foot[1], -rf[2] + foot[2]]);
            f.set_rot6d(0, &crate::motion::matrix_to_rot6d(&rot));
            f
        })
        .unwrap();
        let v = pfc(frames.data(), &skel, 30.0).unwrap();
        assert!(v.abs() < 1e-9, "{}", v);
    }

    #[test]
    fn gmc_cases() {
        let skel = SkeletonSpec::default();
        let same = GroupMotion::from_frames(3, 8, |c, l| MotionFrame::rest([c as f64, 0.93, libm::sin(l as f64)])).unwrap();
        assert!((gmc(&same, &skel).unwrap() - 1.0).abs() < 1e-12);
        let neg = GroupMotion::from_frames(2, 8, |c, l| {
            let s = if c == 0 { 1.0 } else { -1.0 };
            MotionFrame::rest([c as f64 + s * libm::sin(l as f64), 0.93, 0.0])
        })
        .unwrap();
        assert!((gmc(&neg, &skel).unwrap() + 1.0).abs() < 1e-12);
        let mut still = same.clone();
        for l in 0..8 {
            still.frame_mut(0, l)[ROOT_OFFSET + 2] = 0.0;
        }
        let two = GroupMotion::from_vec(2, 8, still.data()[..2 * 8 * MOTION_DIM].to_vec()).unwrap();
        assert_eq!(gmc(&two, &skel).unwrap(), 0.0);
    }

    #[test]
    fn beat_alignment_cases() {
        assert!((beat_alignment(&[10], &[13], 3.0) - libm::exp(-0.5)).abs() < 1e-15);
        assert!((beat_alignment(&[10], &[13], 3.0) - 0.6065).abs() < 1e-4);
        assert_eq!(beat_alignment(&[0, 15, 30], &[0, 15, 30], 3.0), 1.0);
        assert_eq!(beat_alignment(&[0, 15], &[], 3.0), 0.0);
    }

    #[test]
    fn kinematic_beats_at_speed_minima() {
        // Root x moves with speeds 3,2,1,2,3,2,1,2 → minima at 2 and 6.
        let steps = [3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0];
        let mut xs = vec![0.0];
        for s in steps {
            xs.push(xs.last().unwrap() + s * 0.01);
        }
        let frames = glide(xs.len(), |l| xs[l]);
        assert_eq!(kinematic_beats(&frames, &SkeletonSpec::default()).unwrap(), vec![2, 6]);
    }

    #[test]
    fn diversity_cases() {
        let skel = SkeletonSpec::default();
        let a = glide(5, |l| 0.1 * l as f64);
        assert_eq!(diversity(&[&a, &a], &skel).unwrap(), 0.0);
        let mut f = [0.0; NUM_JOINTS];
        f[0] = 3.0;
        f[1] = 4.0;
        assert!((diversity_from_features(&[[0.0; NUM_JOINTS], f]).unwrap() - 5.0).abs() < 1e-12);
        let b = glide(5, |l| 0.3 * l as f64);
        let c = glide(5, |l| libm::sin(l as f64));
        let d1 = diversity(&[&a, &b, &c], &skel).unwrap();
        let d2 = diversity(&[&c, &a, &b], &skel).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        assert!(diversity(&[&a], &skel).is_err());
    }

    #[test]
    fn report_lists_unavailable_metrics() {
        let r = MetricReport { tif: 0.0, pfc: 0.5, gmc: 1.0, mmc: 0.25, div: 2.0, extra: vec![("seam_ratio".into(), 1.5)] };
        let t = r.to_text();
        assert!(t.contains("tif=0.0\n") && t.contains("seam_ratio=1.5\n") && t.ends_with("gmr=n/a\nfid=n/a\n"));
    }
}
