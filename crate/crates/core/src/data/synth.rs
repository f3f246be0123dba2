//! Kinematic pose sampler for the 16-joint skeleton.
//!
//! Body frame: `x` toward the subject's left, `y` up, `z` forward. Each
//! joint's local rotation turns the bones of its children; the rotation is
//! `R_y(twist) · R_x(flexion) · R_z(abduction)` with angles drawn uniformly
//! from the ranges below. Leaves carry no rotation.

use rand::Rng as _;

use super::{Camera, Dataset, PoseSample};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};
use crate::skeleton::{SkeletonGraph, H36M_EDGES, H36M_JOINTS};

/// One bone ending at `joint`.
#[derive(Debug, Clone, Copy)]
pub struct Bone {
    pub joint: usize,
    pub parent: usize,
    /// Meters.
    pub length: f64,
    /// Unit direction in the parent's frame at rest.
    pub rest: [f64; 3],
}

const fn bone(joint: usize, parent: usize, length: f64, rest: [f64; 3]) -> Bone {
    Bone {
        joint,
        parent,
        length,
        rest,
    }
}

/// Adult bone lengths in meters, listed parent-before-child.
pub const BONES: [Bone; 15] = [
    bone(1, 0, 0.13, [-1.0, 0.0, 0.0]),
    bone(2, 1, 0.45, [0.0, -1.0, 0.0]),
    bone(3, 2, 0.44, [0.0, -1.0, 0.0]),
    bone(4, 0, 0.13, [1.0, 0.0, 0.0]),
    bone(5, 4, 0.45, [0.0, -1.0, 0.0]),
    bone(6, 5, 0.44, [0.0, -1.0, 0.0]),
    bone(7, 0, 0.23, [0.0, 1.0, 0.0]),
    bone(8, 7, 0.25, [0.0, 1.0, 0.0]),
    bone(9, 8, 0.28, [0.0, 1.0, 0.0]),
    bone(10, 8, 0.15, [1.0, 0.0, 0.0]),
    bone(11, 10, 0.28, [0.0, -1.0, 0.0]),
    bone(12, 11, 0.25, [0.0, -1.0, 0.0]),
    bone(13, 8, 0.15, [-1.0, 0.0, 0.0]),
    bone(14, 13, 0.28, [0.0, -1.0, 0.0]),
    bone(15, 14, 0.25, [0.0, -1.0, 0.0]),
];

/// An angle interval in degrees.
type Range = [f64; 2];

/// `(joint, [twist], [flexion], [abduction])` limits in degrees. Negative
/// flexion swings a downward bone forward.
const LIMITS: [(usize, Range, Range, Range); 11] = [
    (0, [-180.0, 180.0], [-10.0, 10.0], [-10.0, 10.0]),
    (1, [-30.0, 30.0], [-120.0, 30.0], [-45.0, 10.0]),
    (2, [0.0, 0.0], [0.0, 150.0], [0.0, 0.0]),
    (4, [-30.0, 30.0], [-120.0, 30.0], [-10.0, 45.0]),
    (5, [0.0, 0.0], [0.0, 150.0], [0.0, 0.0]),
    (7, [-30.0, 30.0], [-15.0, 40.0], [-20.0, 20.0]),
    (8, [-30.0, 30.0], [-20.0, 20.0], [-15.0, 15.0]),
    (10, [-60.0, 60.0], [-170.0, 45.0], [-10.0, 150.0]),
    (11, [0.0, 0.0], [-145.0, 0.0], [0.0, 0.0]),
    (13, [-60.0, 60.0], [-170.0, 45.0], [-150.0, 10.0]),
    (14, [0.0, 0.0], [-145.0, 0.0], [0.0, 0.0]),
];

type Mat = [[f64; 3]; 3];

fn mul(a: &Mat, b: &Mat) -> Mat {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn apply(a: &Mat, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

fn rot_x(t: f64) -> Mat {
    let (s, c) = t.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(t: f64) -> Mat {
    let (s, c) = t.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(t: f64) -> Mat {
    let (s, c) = t.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

const IDENTITY: Mat = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn draw(rng: &mut Rng, range: Range) -> f64 {
    if range[0] == range[1] {
        range[0].to_radians()
    } else {
        rng.gen_range(range[0]..range[1]).to_radians()
    }
}

fn local_rotation(rng: &mut Rng, twist: Range, flex: Range, abduct: Range) -> Mat {
    let (t, f, a) = (draw(rng, twist), draw(rng, flex), draw(rng, abduct));
    mul(&rot_y(t), &mul(&rot_x(f), &rot_z(a)))
}

/// Forward kinematics in the body frame, root at the origin.
fn sample_body(rng: &mut Rng) -> Vec<[f64; 3]> {
    let mut local = [IDENTITY; H36M_JOINTS];
    for &(j, twist, flex, abduct) in &LIMITS {
        local[j] = local_rotation(rng, twist, flex, abduct);
    }

    let mut global = [IDENTITY; H36M_JOINTS];
    global[0] = local[0];
    let mut pos = vec![[0.0; 3]; H36M_JOINTS];
    for b in &BONES {
        let off = apply(&global[b.parent], b.rest.map(|v| v * b.length));
        let p = pos[b.parent];
        pos[b.joint] = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
        global[b.joint] = mul(&global[b.parent], &local[b.joint]);
    }
    pos
}

fn random_camera(rng: &mut Rng) -> Camera {
    let f = rng.gen_range(1100.0..1200.0);
    Camera {
        fx: f,
        fy: f,
        cx: 500.0,
        cy: 500.0,
        width: 1000.0,
        height: 1000.0,
    }
}

/// One sample drawn from its own generator stream.
fn sample(seed: u64, index: u64) -> PoseSample {
    let mut rng = stream(seed, Stream::Synth, index);
    let body = sample_body(&mut rng);
    let camera = random_camera(&mut rng);
    let distance = rng.gen_range(4.0..6.0);
    let offset = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
    let tilt = rot_x(rng.gen_range(-10.0f64..10.0).to_radians());
    // body frame (y up) to camera frame (y down): half-turn about z
    let cam_pts: Vec<[f64; 3]> = body
        .iter()
        .map(|&p| {
            let q = apply(&tilt, [-p[0], -p[1], p[2]]);
            [q[0] + offset[0], q[1] + offset[1], q[2] + distance]
        })
        .collect();
    let px: Vec<[f64; 2]> = cam_pts.iter().map(|&p| camera.project(p)).collect();
    PoseSample::normalize(&px, &cam_pts, &camera, 0, Some("synthetic".into()))
        .expect("generator camera is valid")
}

fn check_skeleton(skeleton: &SkeletonGraph) -> Result<()> {
    let mut edges: Vec<(usize, usize)> = skeleton.edges().iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    edges.sort_unstable();
    let mut want: Vec<(usize, usize)> = H36M_EDGES.to_vec();
    want.sort_unstable();
    if skeleton.num_joints() != H36M_JOINTS || edges != want || skeleton.root() != 0 {
        return Err(Error::Data(
            "the synthetic generator only supports the default 16-joint skeleton".into(),
        ));
    }
    Ok(())
}

/// `count` samples; sample `i` depends only on `(seed, i)`.
pub fn synth_poses(count: usize, seed: u64, skeleton: &SkeletonGraph) -> Result<Vec<PoseSample>> {
    check_skeleton(skeleton)?;
    if count == 0 {
        return Err(Error::Data("synthetic sample count must be positive".into()));
    }
    Ok((0..count as u64).map(|i| sample(seed, i)).collect())
}

pub fn synth_dataset(count: usize, seed: u64, skeleton: &SkeletonGraph) -> Result<Dataset> {
    Dataset::new(skeleton.num_joints(), synth_poses(count, seed, skeleton)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let g = SkeletonGraph::human36m(3);
        let a = synth_poses(20, 3, &g).unwrap();
        assert_eq!(a, synth_poses(20, 3, &g).unwrap());
        assert_ne!(a, synth_poses(20, 4, &g).unwrap());
        for s in &a {
            s.validate(&g).unwrap();
        }
    }

    #[test]
    fn bone_lengths_match_table() {
        let g = SkeletonGraph::human36m(3);
        for s in synth_poses(50, 9, &g).unwrap() {
            for b in &BONES {
                let (p, q) = (s.joint3d(b.joint), s.joint3d(b.parent));
                let len = (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>().sqrt();
                assert!((len - b.length).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn knee_flexion_within_limit() {
        let mut rng = stream(0, Stream::Synth, 99);
        for _ in 0..100 {
            let body = sample_body(&mut rng);
            let v = |a: usize, b: usize| [0, 1, 2].map(|c| body[b][c] - body[a][c]);
            let (thigh, shin) = (v(1, 2), v(2, 3));
            let cos = (0..3).map(|c| thigh[c] * shin[c]).sum::<f64>() / (0.45 * 0.44);
            assert!(cos > (150.0f64).to_radians().cos() - 1e-9);
        }
    }

    #[test]
    fn rejects_other_skeletons() {
        let g = SkeletonGraph::build(3, &[(0, 1), (1, 2)], 0, 2).unwrap();
        assert!(synth_poses(1, 0, &g).is_err());
    }
}
