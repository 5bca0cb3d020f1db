//! Training objectives: reconstruction, joint positions, velocity, foot
//! contact and inter-dancer distance, plus their weighted sum.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{config_err, shape_err, CoreError, Result};
use crate::motion::{fk_sequence, GroupMotion, SkeletonSpec, MOTION_DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub sim: f64,
    pub fk: f64,
    pub vel: f64,
    pub con: f64,
    pub dist: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { sim: 0.636, fk: 0.646, vel: 2.964, con: 10.942, dist: 0.636 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sim, self.fk, self.vel, self.con, self.dist];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(config_err!("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub sim: f64,
    pub fk: f64,
    pub vel: f64,
    pub con: f64,
    pub dist: f64,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        [self.sim, self.fk, self.vel, self.con, self.dist].iter().all(|v| v.is_finite())
    }
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.sim * c.sim + w.fk * c.fk + w.vel * c.vel + w.con * c.con + w.dist * c.dist
}

/// Scalar nodes of every loss term on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub sim: Var,
    pub fk: Var,
    pub vel: Var,
    pub con: Var,
    /// Absent for a single dancer.
    pub dist: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn components(&self, tape: &Tape) -> LossComponents {
        LossComponents {
            sim: tape.scalar(self.sim),
            fk: tape.scalar(self.fk),
            vel: tape.scalar(self.vel),
            con: tape.scalar(self.con),
            dist: self.dist.map_or(0.0, |v| tape.scalar(v)),
        }
    }
}

fn flat_joints(motion: &GroupMotion, skel: &SkeletonSpec) -> Result<Vec<f64>> {
    Ok(fk_sequence(motion.data(), skel)?.into_iter().flat_map(|j| j.into_iter().flatten()).collect())
}

fn frame_diffs(data: &[f64], dancers: usize, width: usize) -> Vec<f64> {
    let frames = data.len() / (dancers * width);
    let mut out = Vec::with_capacity(dancers * (frames - 1) * width);
    for c in 0..dancers {
        for l in 0..frames - 1 {
            let a = (c * frames + l) * width;
            out.extend((0..width).map(|k| data[a + width + k] - data[a + k]));
        }
    }
    out
}

fn root_block(motion: &GroupMotion) -> Vec<f64> {
    (0..motion.dancers()).flat_map(|c| motion.roots(c)).flatten().collect()
}

/// All five terms for the prediction node `pred` (`(C*L) x 151`).
pub fn loss_terms_on_tape(
    tape: &mut Tape,
    pred: Var,
    gt: &GroupMotion,
    skel: &SkeletonSpec,
    weights: &LossWeights,
) -> Result<LossVars> {
    let c = gt.dancers();
    if tape.dims(pred) != (c * gt.frames(), MOTION_DIM) {
        return Err(shape_err!("prediction {:?} for {} dancers x {} frames", tape.dims(pred), c, gt.frames()));
    }
    if gt.frames() < 2 {
        return Err(CoreError::InvalidLength("losses need at least two frames".into()));
    }
    let gt_joints = flat_joints(gt, skel)?;
    let sim = tape.mean_squared_diff(pred, gt.data());
    let joints = tape.forward_kinematics(pred, skel)?;
    let fk = tape.mean_squared_diff(joints, &gt_joints);
    let diffs = tape.temporal_diff(pred, c);
    let vel = tape.mean_squared_diff(diffs, &frame_diffs(gt.data(), c, MOTION_DIM));
    let con = tape.foot_contact(joints, pred, c);
    let dist = (c >= 2).then(|| tape.distance_consistency(pred, &root_block(gt), c));
    let mut terms = alloc::vec![(sim, weights.sim), (fk, weights.fk), (vel, weights.vel), (con, weights.con)];
    if let Some(d) = dist {
        terms.push((d, weights.dist));
    }
    let total = tape.weighted_sum(&terms);
    Ok(LossVars { sim, fk, vel, con, dist, total })
}

fn check_pair(gt: &GroupMotion, pred: &GroupMotion) -> Result<()> {
    if !gt.same_shape(pred) {
        return Err(shape_err!(
            "ground truth {}x{} vs prediction {}x{}",
            gt.dancers(),
            gt.frames(),
            pred.dancers(),
            pred.frames()
        ));
    }
    Ok(())
}

/// `(sim, fk, vel, con)`; the distance term is left at zero.
pub fn reconstruction_losses(gt: &GroupMotion, pred: &GroupMotion, skel: &SkeletonSpec) -> Result<LossComponents> {
    check_pair(gt, pred)?;
    let mut tape = Tape::new();
    let p = tape.constant(pred.dancers() * pred.frames(), MOTION_DIM, pred.data().to_vec());
    let vars = loss_terms_on_tape(&mut tape, p, gt, skel, &LossWeights::default())?;
    Ok(LossComponents { dist: 0.0, ..vars.components(&tape) })
}

/// Pairwise root-offset error, summed over unordered pairs and frames and
/// divided by `(C - 1) * L`.
pub fn distance_consistency_loss(gt: &GroupMotion, pred: &GroupMotion) -> Result<f64> {
    check_pair(gt, pred)?;
    if gt.dancers() < 2 {
        return Err(config_err!("distance consistency needs at least two dancers"));
    }
    let mut tape = Tape::new();
    let p = tape.constant(pred.dancers() * pred.frames(), MOTION_DIM, pred.data().to_vec());
    let d = tape.distance_consistency(p, &root_block(gt), gt.dancers());
    Ok(tape.scalar(d))
}

/// Every term, distance included when there are at least two dancers.
pub fn all_losses(gt: &GroupMotion, pred: &GroupMotion, skel: &SkeletonSpec) -> Result<LossComponents> {
    let mut c = reconstruction_losses(gt, pred, skel)?;
    if gt.dancers() >= 2 {
        c.dist = distance_consistency_loss(gt, pred)?;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{matrix_to_rot6d, MotionFrame, CONTACT_OFFSET, ROOT_OFFSET};

    fn sway(dancers: usize, frames: usize) -> GroupMotion {
        GroupMotion::from_frames(dancers, frames, |c, l| {
            let mut f = MotionFrame::rest([c as f64, 0.93, 0.1 * l as f64]);
            let a = 0.2 * l as f64 + c as f64;
            let (s, co) = (libm::sin(a), libm::cos(a));
            f.set_rot6d(1, &matrix_to_rot6d(&[[1.0, 0.0, 0.0], [0.0, co, -s], [0.0, s, co]]));
            f
        })
        .unwrap()
    }

    #[test]
    fn zero_at_truth() {
        let gt = sway(2, 5);
        let c = all_losses(&gt, &gt, &SkeletonSpec::default()).unwrap();
        assert_eq!((c.sim, c.fk, c.vel, c.dist), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn static_feet_have_no_contact_loss() {
        let gt = GroupMotion::from_frames(2, 4, |c, _| {
            let mut f = MotionFrame::rest([c as f64, 0.93, 0.0]);
            f.data[CONTACT_OFFSET..CONTACT_OFFSET + 4].copy_from_slice(&[1.0; 4]);
            f
        })
        .unwrap();
        let c = all_losses(&gt, &gt, &SkeletonSpec::default()).unwrap();
        assert_eq!(c, LossComponents::default());
    }

    #[test]
    fn root_offset_cancels_in_velocity() {
        let gt = sway(2, 5);
        let mut pred = gt.clone();
        for c in 0..2 {
            for l in 0..5 {
                pred.frame_mut(c, l)[ROOT_OFFSET] += 0.5;
            }
        }
        let c = reconstruction_losses(&gt, &pred, &SkeletonSpec::default()).unwrap();
        assert!(c.vel.abs() < 1e-15);
        assert!(c.sim > 0.0 && c.fk > 0.0);
    }

    #[test]
    fn contact_gating() {
        let gt = sway(1, 5);
        let mut on = gt.clone();
        for l in 0..5 {
            on.frame_mut(0, l)[CONTACT_OFFSET..CONTACT_OFFSET + 4].copy_from_slice(&[1.0; 4]);
        }
        let skel = SkeletonSpec::default();
        assert!(reconstruction_losses(&gt, &on, &skel).unwrap().con > 0.0);
        assert_eq!(reconstruction_losses(&gt, &gt, &skel).unwrap().con, 0.0);
    }

    #[test]
    fn distance_hand_case() {
        let gt = GroupMotion::from_frames(2, 1, |c, _| MotionFrame::rest([c as f64, 0.0, 0.0])).unwrap();
        let pred = GroupMotion::from_frames(2, 1, |c, _| MotionFrame::rest([3.0 * c as f64, 0.0, 0.0])).unwrap();
        assert!((distance_consistency_loss(&gt, &pred).unwrap() - 4.0).abs() < 1e-12);
        let one = GroupMotion::zeros(1, 1).unwrap();
        assert!(matches!(distance_consistency_loss(&one, &one), Err(CoreError::InvalidConfig(_))));
    }

    #[test]
    fn distance_translation_invariant() {
        let gt = sway(3, 4);
        let mut pred = sway(3, 4);
        pred.frame_mut(1, 2)[ROOT_OFFSET] += 0.3;
        let base = distance_consistency_loss(&gt, &pred).unwrap();
        let mut moved = pred.clone();
        for c in 0..3 {
            for l in 0..4 {
                for k in 0..3 {
                    moved.frame_mut(c, l)[ROOT_OFFSET + k] += [1.5, -2.0, 0.25][k];
                }
            }
        }
        assert!((distance_consistency_loss(&gt, &moved).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn weights_and_total() {
        let w = LossWeights::default();
        let ones = LossComponents { sim: 1.0, fk: 1.0, vel: 1.0, con: 1.0, dist: 1.0 };
        assert!((total_loss(&ones, &w) - 15.824).abs() < 1e-12);
        assert_eq!(total_loss(&LossComponents::default(), &w), 0.0);
        let zero = LossWeights { sim: 0.0, fk: 0.0, vel: 0.0, con: 0.0, dist: 0.0 };
        assert_eq!(total_loss(&ones, &zero), 0.0);
        assert!(LossWeights { vel: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = sway(2, 4);
        let b = sway(2, 5);
        assert!(matches!(all_losses(&a, &b, &SkeletonSpec::default()), Err(CoreError::ShapeMismatch(_))));
    }
}
