//! Motion descriptors, the kinematic skeleton and dancer ordering.
//!
//! A frame is laid out as `[contacts(4), root(3), rot6d(24 x 6)]`, 151
//! values in total. Coordinates are meters with y up and the ground on the
//! x-z plane.

mod kinematics;
mod rotation;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, CoreError, Result};

pub use kinematics::{forward_kinematics, forward_kinematics_slice, SkeletonSpec, SMPL_PARENTS};
pub(crate) use kinematics::{fk_sequence, FkPass};

pub(crate) fn kinematics_pass(frame: &[f64], skel: &SkeletonSpec) -> Result<FkPass> {
    FkPass::run(frame, skel)
}
pub use rotation::{matrix_to_rot6d, rot6d_to_matrix, COLUMN_NORM_EPS};

pub const NUM_JOINTS: usize = 24;
pub const CONTACT_DIM: usize = 4;
pub const ROOT_DIM: usize = 3;
pub const ROT6D_DIM: usize = NUM_JOINTS * 6;
pub const MOTION_DIM: usize = CONTACT_DIM + ROOT_DIM + ROT6D_DIM;

pub const CONTACT_OFFSET: usize = 0;
pub const ROOT_OFFSET: usize = CONTACT_DIM;
pub const ROT6D_OFFSET: usize = CONTACT_DIM + ROOT_DIM;

/// Hips, knees, ankles and feet.
pub const LOWER_BODY_JOINTS: [usize; 8] = [1, 2, 4, 5, 7, 8, 10, 11];

/// Joints carrying the contact flags, in flag order (L heel, R heel, L toe, R toe).
pub const CONTACT_JOINTS: [usize; 4] = [7, 8, 10, 11];

/// Column offset of joint `j`'s 6D rotation inside a frame.
#[inline]
pub const fn rot6d_offset(joint: usize) -> usize {
    ROT6D_OFFSET + 6 * joint
}

/// Per-column mask: `true` where the column belongs to the lower body
/// partition (contacts, root translation and lower-body joint rotations).
pub fn lower_body_mask() -> [bool; MOTION_DIM] {
    let mut mask = [false; MOTION_DIM];
    for m in mask.iter_mut().take(ROT6D_OFFSET) {
        *m = true;
    }
    for &j in LOWER_BODY_JOINTS.iter() {
        for k in 0..6 {
            mask[rot6d_offset(j) + k] = true;
        }
    }
    mask
}

/// One dancer pose at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionFrame {
    pub data: [f64; MOTION_DIM],
}

impl MotionFrame {
    /// A frame with identity rotations everywhere.
    pub fn rest(root: [f64; 3]) -> Self {
        let mut data = [0.0; MOTION_DIM];
        data[ROOT_OFFSET..ROOT_OFFSET + 3].copy_from_slice(&root);
        for j in 0..NUM_JOINTS {
            let o = rot6d_offset(j);
            data[o] = 1.0;
            data[o + 4] = 1.0;
        }
        Self { data }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != MOTION_DIM {
            return Err(shape_err!("frame needs {} values, got {}", MOTION_DIM, values.len()));
        }
        let mut data = [0.0; MOTION_DIM];
        data.copy_from_slice(values);
        Ok(Self { data })
    }

    pub fn contacts(&self) -> &[f64] {
        &self.data[CONTACT_OFFSET..CONTACT_OFFSET + CONTACT_DIM]
    }

    pub fn root(&self) -> [f64; 3] {
        [self.data[ROOT_OFFSET], self.data[ROOT_OFFSET + 1], self.data[ROOT_OFFSET + 2]]
    }

    pub fn set_root(&mut self, root: [f64; 3]) {
        self.data[ROOT_OFFSET..ROOT_OFFSET + 3].copy_from_slice(&root);
    }

    pub fn rot6d(&self, joint: usize) -> &[f64] {
        &self.data[rot6d_offset(joint)..rot6d_offset(joint) + 6]
    }

    pub fn set_rot6d(&mut self, joint: usize, r: &[f64; 6]) {
        self.data[rot6d_offset(joint)..rot6d_offset(joint) + 6].copy_from_slice(r);
    }

    /// Contacts in `[0, 1]` and every value finite.
    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite()) && self.contacts().iter().all(|c| (0.0..=1.0).contains(c))
    }
}

/// `C` dancers by `L` frames of 151-dim descriptors, dancer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMotion {
    dancers: usize,
    frames: usize,
    data: Vec<f64>,
}

impl GroupMotion {
    pub fn zeros(dancers: usize, frames: usize) -> Result<Self> {
        Self::check_dims(dancers, frames)?;
        Ok(Self { dancers, frames, data: vec![0.0; dancers * frames * MOTION_DIM] })
    }

    pub fn from_vec(dancers: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        Self::check_dims(dancers, frames)?;
        if data.len() != dancers * frames * MOTION_DIM {
            return Err(shape_err!(
                "{} dancers x {} frames needs {} values, got {}",
                dancers,
                frames,
                dancers * frames * MOTION_DIM,
                data.len()
            ));
        }
        Ok(Self { dancers, frames, data })
    }

    pub fn from_frames(dancers: usize, frames: usize, f: impl Fn(usize, usize) -> MotionFrame) -> Result<Self> {
        let mut m = Self::zeros(dancers, frames)?;
        for c in 0..dancers {
            for l in 0..frames {
                m.frame_mut(c, l).copy_from_slice(&f(c, l).data);
            }
        }
        Ok(m)
    }

    fn check_dims(dancers: usize, frames: usize) -> Result<()> {
        if dancers == 0 || frames == 0 {
            return Err(shape_err!("group motion needs at least one dancer and one frame"));
        }
        Ok(())
    }

    pub fn dancers(&self) -> usize {
        self.dancers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn frame(&self, dancer: usize, frame: usize) -> &[f64] {
        let o = (dancer * self.frames + frame) * MOTION_DIM;
        &self.data[o..o + MOTION_DIM]
    }

    #[inline]
    pub fn frame_mut(&mut self, dancer: usize, frame: usize) -> &mut [f64] {
        let o = (dancer * self.frames + frame) * MOTION_DIM;
        &mut self.data[o..o + MOTION_DIM]
    }

    pub fn motion_frame(&self, dancer: usize, frame: usize) -> MotionFrame {
        let mut data = [0.0; MOTION_DIM];
        data.copy_from_slice(self.frame(dancer, frame));
        MotionFrame { data }
    }

    /// All frames of one dancer, contiguous.
    pub fn dancer(&self, dancer: usize) -> &[f64] {
        let o = dancer * self.frames * MOTION_DIM;
        &self.data[o..o + self.frames * MOTION_DIM]
    }

    pub fn root(&self, dancer: usize, frame: usize) -> [f64; 3] {
        let f = self.frame(dancer, frame);
        [f[ROOT_OFFSET], f[ROOT_OFFSET + 1], f[ROOT_OFFSET + 2]]
    }

    pub fn roots(&self, dancer: usize) -> Vec<[f64; 3]> {
        (0..self.frames).map(|l| self.root(dancer, l)).collect()
    }

    pub fn same_shape(&self, other: &GroupMotion) -> bool {
        self.dancers == other.dancers && self.frames == other.frames
    }

    fn require_same_shape(&self, other: &GroupMotion) -> Result<()> {
        if !self.same_shape(other) {
            return Err(shape_err!(
                "{}x{} vs {}x{}",
                self.dancers,
                self.frames,
                other.dancers,
                other.frames
            ));
        }
        Ok(())
    }

    /// Frames `[start, end)` of every dancer.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<GroupMotion> {
        if start >= end || end > self.frames {
            return Err(CoreError::InvalidLength(alloc::format!(
                "frame range [{}, {}) outside 0..{}",
                start,
                end,
                self.frames
            )));
        }
        let len = end - start;
        let mut data = Vec::with_capacity(self.dancers * len * MOTION_DIM);
        for c in 0..self.dancers {
            for l in start..end {
                data.extend_from_slice(self.frame(c, l));
            }
        }
        GroupMotion::from_vec(self.dancers, len, data)
    }

    /// Frames of `other` appended after this motion's frames.
    pub fn concat_frames(&self, other: &GroupMotion) -> Result<GroupMotion> {
        if self.dancers != other.dancers {
            return Err(shape_err!("dancer counts differ: {} vs {}", self.dancers, other.dancers));
        }
        let frames = self.frames + other.frames;
        let mut data = Vec::with_capacity(self.dancers * frames * MOTION_DIM);
        for c in 0..self.dancers {
            data.extend_from_slice(self.dancer(c));
            data.extend_from_slice(other.dancer(c));
        }
        GroupMotion::from_vec(self.dancers, frames, data)
    }

    /// Every value finite and every contact flag in `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        (0..self.dancers).all(|c| (0..self.frames).all(|l| self.motion_frame(c, l).is_valid()))
    }

    /// Clamp contact flags into `[0, 1]`.
    pub fn clamp_contacts(&mut self) {
        for c in 0..self.dancers {
            for l in 0..self.frames {
                for v in &mut self.frame_mut(c, l)[CONTACT_OFFSET..CONTACT_OFFSET + CONTACT_DIM] {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// `order[slot]` is the original index of the dancer placed at `slot`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DancerPermutation {
    order: Vec<usize>,
}

impl DancerPermutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || seen[i] {
                return Err(CoreError::InvalidConfig(alloc::format!("{:?} is not a permutation", order)));
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self { order: (0..n).collect() }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (slot, &orig) in self.order.iter().enumerate() {
            inv[orig] = slot;
        }
        Self { order: inv }
    }

    /// Reorder dancers so that slot `s` holds input dancer `order[s]`.
    pub fn apply(&self, motion: &GroupMotion) -> Result<GroupMotion> {
        if self.order.len() != motion.dancers() {
            return Err(shape_err!("permutation of {} applied to {} dancers", self.order.len(), motion.dancers()));
        }
        let mut data = Vec::with_capacity(motion.data().len());
        for &src in &self.order {
            data.extend_from_slice(motion.dancer(src));
        }
        GroupMotion::from_vec(motion.dancers(), motion.frames(), data)
    }
}

/// Stable argsort of `keys`: ties keep their original order.
pub fn stable_argsort(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    idx
}

/// Reorder dancers left to right by their frame-0 root x-coordinate.
pub fn sort_dancers(motion: &GroupMotion) -> (GroupMotion, DancerPermutation) {
    let keys: Vec<f64> = (0..motion.dancers()).map(|c| motion.root(c, 0)[0]).collect();
    let perm = DancerPermutation { order: stable_argsort(&keys) };
    let sorted = perm.apply(motion).expect("permutation sized from motion");
    (sorted, perm)
}

/// Per-frame root displacement `p_i - p_{i-1}`; frame 0 gets the zero vector.
pub fn root_velocity(roots: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(roots.len());
    for (i, p) in roots.iter().enumerate() {
        if i == 0 {
            out.push([0.0; 3]);
        } else {
            let q = roots[i - 1];
            out.push([p[0] - q[0], p[1] - q[1], p[2] - q[2]]);
        }
    }
    out
}

/// Upper-body rotations from `raw`; contacts, root and lower-body rotations
/// from `adapted`.
pub fn split_merge_body(raw: &GroupMotion, adapted: &GroupMotion) -> Result<GroupMotion> {
    raw.require_same_shape(adapted)?;
    let mask = lower_body_mask();
    let mut out = raw.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        if mask[i % MOTION_DIM] {
            *v = adapted.data[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_roots(xs: &[f64]) -> GroupMotion {
        GroupMotion::from_frames(xs.len(), 3, |c, l| MotionFrame::rest([xs[c], 0.0, l as f64])).unwrap()
    }

    #[test]
    fn frame_layout_is_151() {
        assert_eq!(MOTION_DIM, 151);
        assert_eq!(ROT6D_OFFSET, 7);
    }

    #[test]
    fn root_velocity_examples() {
        let v = root_velocity(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        assert_eq!(v, vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(root_velocity(&[[2.0, 3.0, 4.0]; 4]), vec![[0.0; 3]; 4]);
        assert_eq!(root_velocity(&[[2.0, 3.0, 4.0]]), vec![[0.0; 3]]);
    }

    #[test]
    fn sort_examples() {
        let (sorted, p) = sort_dancers(&with_roots(&[0.5, -1.0, 0.2]));
        assert_eq!(p.order(), &[1, 2, 0]);
        assert_eq!(sorted.root(0, 0)[0], -1.0);
        assert_eq!(sorted.root(2, 0)[0], 0.5);

        let (_, p) = sort_dancers(&with_roots(&[-1.0, 0.0, 1.0]));
        assert_eq!(p.order(), &[0, 1, 2]);
        let (_, p) = sort_dancers(&with_roots(&[0.3, 0.3]));
        assert_eq!(p.order(), &[0, 1]);
    }

    #[test]
    fn inverse_permutation_restores_input() {
        let m = with_roots(&[0.5, -1.0, 0.2, 7.0]);
        let (sorted, p) = sort_dancers(&m);
        assert_eq!(p.inverse().apply(&sorted).unwrap(), m);
    }

    #[test]
    fn permutation_rejects_duplicates() {
        assert!(DancerPermutation::new(vec![0, 0]).is_err());
        assert!(DancerPermutation::new(vec![0, 2]).is_err());
    }

    #[test]
    fn merge_examples() {
        let raw = GroupMotion::from_frames(2, 4, |c, l| MotionFrame::rest([c as f64, 1.0, l as f64])).unwrap();
        assert_eq!(split_merge_body(&raw, &raw).unwrap(), raw);

        let mut zero = GroupMotion::zeros(1, 2).unwrap();
        let mut one = GroupMotion::zeros(1, 2).unwrap();
        for l in 0..2 {
            zero.frame_mut(0, l)[ROOT_OFFSET..ROOT_OFFSET + 3].copy_from_slice(&[1.0; 3]);
            let f = one.frame_mut(0, l);
            f[ROOT_OFFSET..ROOT_OFFSET + 3].copy_from_slice(&[2.0; 3]);
            for v in &mut f[ROT6D_OFFSET..] {
                *v = 1.0;
            }
        }
        let merged = split_merge_body(&zero, &one).unwrap();
        for l in 0..2 {
            assert_eq!(merged.root(0, l), [2.0; 3]);
            for j in 0..NUM_JOINTS {
                let expect = if LOWER_BODY_JOINTS.contains(&j) { 1.0 } else { 0.0 };
                assert!(merged.motion_frame(0, l).rot6d(j).iter().all(|&v| v == expect));
            }
        }
    }

    #[test]
    fn merge_rejects_shape_mismatch() {
        let a = GroupMotion::zeros(2, 3).unwrap();
        let b = GroupMotion::zeros(2, 4).unwrap();
        assert!(matches!(split_merge_body(&a, &b), Err(CoreError::ShapeMismatch(_))));
    }

    #[test]
    fn slicing_and_concat_roundtrip() {
        let m = with_roots(&[0.0, 1.0]);
        let a = m.slice_frames(0, 1).unwrap();
        let b = m.slice_frames(1, 3).unwrap();
        assert_eq!(a.concat_frames(&b).unwrap(), m);
        assert!(m.slice_frames(2, 2).is_err());
    }
}
