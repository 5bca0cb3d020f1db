use alloc::format;
use alloc::vec::Vec;

use super::rotation::{gram_schmidt, gram_schmidt_backward, GramSchmidt};
use super::{rot6d_offset, MotionFrame, NUM_JOINTS, ROOT_OFFSET};
use crate::error::{CoreError, Result};
use crate::math::{matmul3, matvec3, transpose3, Mat3};

/// Standard SMPL parent array.
pub const SMPL_PARENTS: [i32; NUM_JOINTS] =
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];

/// Approximate SMPL rest-pose bone offsets in meters (y up, +x to the
/// dancer's left, +z forward). Root at ~0.93 m puts the feet on the ground.
const DEFAULT_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0],
    [-0.06, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.04, -0.38, 0.0],
    [-0.04, -0.38, 0.0],
    [0.0, 0.14, 0.0],
    [0.0, -0.40, -0.04],
    [0.0, -0.40, -0.04],
    [0.0, 0.06, 0.02],
    [0.02, -0.06, 0.12],
    [-0.02, -0.06, 0.12],
    [0.0, 0.21, -0.03],
    [0.07, 0.12, -0.01],
    [-0.07, 0.12, -0.01],
    [0.0, 0.09, 0.05],
    [0.11, 0.04, -0.01],
    [-0.11, 0.04, -0.01],
    [0.26, 0.0, 0.0],
    [-0.26, 0.0, 0.0],
    [0.25, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
    [0.08, 0.0, 0.0],
    [-0.08, 0.0, 0.0],
];

/// 24-joint kinematic tree. Parents always precede their children.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    parents: [i32; NUM_JOINTS],
    offsets: [[f64; 3]; NUM_JOINTS],
}

impl Default for SkeletonSpec {
    fn default() -> Self {
        Self { parents: SMPL_PARENTS, offsets: DEFAULT_OFFSETS }
    }
}

impl SkeletonSpec {
    pub fn new(parents: [i32; NUM_JOINTS], offsets: [[f64; 3]; NUM_JOINTS]) -> Result<Self> {
        if parents[0] != -1 {
            return Err(CoreError::InvalidConfig(format!("root parent must be -1, got {}", parents[0])));
        }
        for (j, &p) in parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(CoreError::InvalidConfig(format!(
                    "joint {} has parent {}; parents must precede children",
                    j, p
                )));
            }
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidConfig("non-finite bone offset".into()));
        }
        Ok(Self { parents, offsets })
    }

    pub fn parents(&self) -> &[i32; NUM_JOINTS] {
        &self.parents
    }

    pub fn offsets(&self) -> &[[f64; 3]; NUM_JOINTS] {
        &self.offsets
    }

    #[inline]
    pub fn parent(&self, joint: usize) -> usize {
        self.parents[joint] as usize
    }
}

/// Joint positions of one frame.
pub fn forward_kinematics(frame: &MotionFrame, skel: &SkeletonSpec) -> Result<[[f64; 3]; NUM_JOINTS]> {
    forward_kinematics_slice(&frame.data, skel)
}

pub fn forward_kinematics_slice(frame: &[f64], skel: &SkeletonSpec) -> Result<[[f64; 3]; NUM_JOINTS]> {
    let pass = FkPass::run(frame, skel)?;
    Ok(pass.positions)
}

/// Forward pass state retained for the adjoint.
pub(crate) struct FkPass {
    pub positions: [[f64; 3]; NUM_JOINTS],
    local: [Mat3; NUM_JOINTS],
    global: [Mat3; NUM_JOINTS],
    gs: [GramSchmidt; NUM_JOINTS],
}

impl FkPass {
    pub fn run(frame: &[f64], skel: &SkeletonSpec) -> Result<Self> {
        let zero_gs = GramSchmidt { a2: [0.0; 3], b1: [0.0; 3], b2: [0.0; 3], n1: 0.0, n2: 0.0 };
        let mut pass = FkPass {
            positions: [[0.0; 3]; NUM_JOINTS],
            local: [[[0.0; 3]; 3]; NUM_JOINTS],
            global: [[[0.0; 3]; 3]; NUM_JOINTS],
            gs: [zero_gs; NUM_JOINTS],
        };
        for j in 0..NUM_JOINTS {
            let o = rot6d_offset(j);
            let (m, gs) = gram_schmidt(&frame[o..o + 6])?;
            pass.local[j] = m;
            pass.gs[j] = gs;
        }
        pass.positions[0] = [frame[ROOT_OFFSET], frame[ROOT_OFFSET + 1], frame[ROOT_OFFSET + 2]];
        pass.global[0] = pass.local[0];
        for j in 1..NUM_JOINTS {
            let p = skel.parent(j);
            let bone = matvec3(&pass.global[p], &skel.offsets[j]);
            let base = pass.positions[p];
            pass.positions[j] = [base[0] + bone[0], base[1] + bone[1], base[2] + bone[2]];
            pass.global[j] = matmul3(&pass.global[p], &pass.local[j]);
        }
        Ok(pass)
    }

    /// Accumulate d(loss)/d(frame) into `d_frame` given d(loss)/d(positions).
    pub fn backward(&self, skel: &SkeletonSpec, d_pos: &[[f64; 3]; NUM_JOINTS], d_frame: &mut [f64]) {
        let mut dp = *d_pos;
        let mut dg = [[[0.0; 3]; 3]; NUM_JOINTS];
        let mut dl = [[[0.0; 3]; 3]; NUM_JOINTS];
        for j in (1..NUM_JOINTS).rev() {
            let p = skel.parent(j);
            // G_j = G_p R_j
            let gj = dg[j];
            let rt = transpose3(&self.local[j]);
            let add = matmul3(&gj, &rt);
            let gpt = transpose3(&self.global[p]);
            dl[j] = matmul3(&gpt, &gj);
            // P_j = P_p + G_p o_j
            let o = skel.offsets[j];
            for r in 0..3 {
                dp[p][r] += dp[j][r];
                for c in 0..3 {
                    dg[p][r][c] += add[r][c] + dp[j][r] * o[c];
                }
            }
        }
        dl[0] = dg[0];
        for k in 0..3 {
            d_frame[ROOT_OFFSET + k] += dp[0][k];
        }
        for j in 0..NUM_JOINTS {
            let g = gram_schmidt_backward(&self.gs[j], &dl[j]);
            let o = rot6d_offset(j);
            for k in 0..6 {
                d_frame[o + k] += g[k];
            }
        }
    }
}

/// Joint positions for every frame of one dancer, `frames x 24`.
pub(crate) fn fk_sequence(frames: &[f64], skel: &SkeletonSpec) -> Result<Vec<[[f64; 3]; NUM_JOINTS]>> {
    frames.chunks_exact(super::MOTION_DIM).map(|f| forward_kinematics_slice(f, skel)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_sum(skel: &SkeletonSpec, j: usize) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut k = j;
        while k != 0 {
            for i in 0..3 {
                acc[i] += skel.offsets()[k][i];
            }
            k = skel.parent(k);
        }
        acc
    }

    #[test]
    fn identity_pose_sums_offsets() {
        let skel = SkeletonSpec::default();
        let pos = forward_kinematics(&MotionFrame::rest([0.0; 3]), &skel).unwrap();
        for j in 0..NUM_JOINTS {
            let s = chain_sum(&skel, j);
            for i in 0..3 {
                assert!((pos[j][i] - s[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_pose_translates_with_root() {
        let skel = SkeletonSpec::default();
        let a = forward_kinematics(&MotionFrame::rest([0.0; 3]), &skel).unwrap();
        let b = forward_kinematics(&MotionFrame::rest([5.0, 0.0, 0.0]), &skel).unwrap();
        for j in 0..NUM_JOINTS {
            assert!((b[j][0] - a[j][0] - 5.0).abs() < 1e-15);
            assert_eq!(b[j][1], a[j][1]);
            assert_eq!(b[j][2], a[j][2]);
        }
    }

    #[test]
    fn root_rotation_moves_child() {
        let mut offsets = [[0.0; 3]; NUM_JOINTS];
        offsets[1] = [1.0, 0.0, 0.0];
        let skel = SkeletonSpec::new(SMPL_PARENTS, offsets).unwrap();
        let mut frame = MotionFrame::rest([0.0; 3]);
        frame.set_rot6d(0, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
        let pos = forward_kinematics(&frame, &skel).unwrap();
        assert!((pos[1][0] - 0.0).abs() < 1e-15);
        assert!((pos[1][1] - 1.0).abs() < 1e-15);
        assert!(pos[1][2].abs() < 1e-15);
    }

    #[test]
    fn skeleton_validation() {
        let mut bad = SMPL_PARENTS;
        bad[5] = 7;
        assert!(SkeletonSpec::new(bad, DEFAULT_OFFSETS).is_err());
        let mut bad_root = SMPL_PARENTS;
        bad_root[0] = 0;
        assert!(SkeletonSpec::new(bad_root, DEFAULT_OFFSETS).is_err());
    }

    #[test]
    fn default_feet_touch_ground() {
        let skel = SkeletonSpec::default();
        let pos = forward_kinematics(&MotionFrame::rest([0.0, 0.93, 0.0]), &skel).unwrap();
        assert!(pos[10][1].abs() < 0.05 && pos[11][1].abs() < 0.05);
    }
}
