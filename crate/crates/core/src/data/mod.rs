//! Pose samples, camera normalization, dataset files and the synthetic
//! kinematic generator.

mod io;
mod synth;

pub use io::{load_dataset, read_csv, read_hfp, save_dataset, write_csv, write_hfp, DataFormat, HFP_MAGIC};
pub use synth::{synth_dataset, synth_poses, BONES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::skeleton::SkeletonGraph;
use crate::tensor::Tensor;

/// Pinhole camera in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Data(format!("invalid camera {self:?}")));
        }
        Ok(())
    }

    /// Camera-space point (meters, `z` forward) to pixels.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }

    /// Pixels to the width-normalized frame: `x ∈ [-1, 1]`, aspect kept.
    pub fn normalize_2d(&self, uv: [f64; 2]) -> [f64; 2] {
        [2.0 * uv[0] / self.width - 1.0, 2.0 * uv[1] / self.width - self.height / self.width]
    }

    pub fn denormalize_2d(&self, xy: [f64; 2]) -> [f64; 2] {
        [(xy[0] + 1.0) * self.width / 2.0, (xy[1] + self.height / self.width) * self.width / 2.0]
    }
}

/// One 2D/3D pair. `joints2d` is `N × 2` in the width-normalized image
/// frame; `joints3d` is `N × 3` camera-space meters relative to the root.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub joints2d: Vec<f64>,
    pub joints3d: Vec<f64>,
    pub action: Option<String>,
}

/// Largest root offset accepted as "at the origin".
const ROOT_TOLERANCE: f64 = 1e-6;

impl PoseSample {
    pub fn num_joints(&self) -> usize {
        self.joints2d.len() / 2
    }

    /// Build from raw pixels and camera-space meters.
    pub fn normalize(raw2d: &[[f64; 2]], raw3d: &[[f64; 3]], camera: &Camera, root: usize, action: Option<String>) -> Result<Self> {
        camera.validate()?;
        if raw2d.len() != raw3d.len() || root >= raw3d.len() {
            return Err(Error::Data(format!(
                "{} 2D joints, {} 3D joints, root {root}",
                raw2d.len(),
                raw3d.len()
            )));
        }
        let r = raw3d[root];
        Ok(PoseSample {
            joints2d: raw2d.iter().flat_map(|&uv| camera.normalize_2d(uv)).collect(),
            joints3d: raw3d
                .iter()
                .flat_map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]])
                .collect(),
            action,
        })
    }

    pub fn joint3d(&self, j: usize) -> [f64; 3] {
        [self.joints3d[3 * j], self.joints3d[3 * j + 1], self.joints3d[3 * j + 2]]
    }

    /// Finite values, root at the origin, positive bone lengths.
    pub fn validate(&self, skeleton: &SkeletonGraph) -> Result<()> {
        let n = skeleton.num_joints();
        if self.joints2d.len() != 2 * n || self.joints3d.len() != 3 * n {
            return Err(Error::Data(format!(
                "sample has {} joints, skeleton has {n}",
                self.joints2d.len() / 2
            )));
        }
        if !self.joints2d.iter().chain(&self.joints3d).all(|v| v.is_finite()) {
            return Err(Error::Data("sample contains non-finite coordinates".into()));
        }
        if self.joint3d(skeleton.root()).iter().any(|v| v.abs() > ROOT_TOLERANCE) {
            return Err(Error::Data("3D root joint is not at the origin".into()));
        }
        for &(a, b) in skeleton.edges() {
            let (pa, pb) = (self.joint3d(a), self.joint3d(b));
            let len: f64 = (0..3).map(|c| (pa[c] - pb[c]).powi(2)).sum::<f64>().sqrt();
            if len <= 0.0 {
                return Err(Error::Data(format!("bone {a}-{b} has zero length")));
            }
        }
        Ok(())
    }

    /// Round every coordinate through `f32`, the storage precision of the
    /// binary format.
    pub fn quantize_f32(&mut self) {
        for v in self.joints2d.iter_mut().chain(self.joints3d.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub joints: usize,
    pub samples: Vec<PoseSample>,
}

impl Dataset {
    pub fn new(joints: usize, samples: Vec<PoseSample>) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.joints2d.len() != 2 * joints || s.joints3d.len() != 3 * joints) {
            return Err(Error::Data(format!(
                "record with {} joints in a {joints}-joint dataset",
                s.num_joints()
            )));
        }
        Ok(Dataset { joints, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self, skeleton: &SkeletonGraph) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            s.validate(skeleton).map_err(|e| Error::Data(format!("sample {i}: {e}")))?;
        }
        Ok(())
    }

    /// `([B, N, 2], [B, N, 3])` tensors of the selected samples.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = self.joints;
        let mut x = Vec::with_capacity(indices.len() * n * 2);
        let mut y = Vec::with_capacity(indices.len() * n * 3);
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::Data(format!("sample index {i} out of range for {} samples", self.len())))?;
            x.extend(s.joints2d.iter().map(|&v| T::lit(v)));
            y.extend(s.joints3d.iter().map(|&v| T::lit(v)));
        }
        let b = indices.len();
        Ok((Tensor::new(&[b, n, 2], x)?, Tensor::new(&[b, n, 3], y)?))
    }

    /// All 3D targets, sample-major.
    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| s.joints3d.iter().copied()).collect()
    }

    /// Labels, with absent ones as empty strings.
    pub fn actions(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.action.clone().unwrap_or_default()).collect()
    }

    /// First `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        (
            Dataset {
                joints: self.joints,
                samples: self.samples[..n].to_vec(),
            },
            Dataset {
                joints: self.joints,
                samples: self.samples[n..].to_vec(),
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera {
            fx: 1000.0,
            fy: 1000.0,
            cx: 500.0,
            cy: 400.0,
            width: 1000.0,
            height: 800.0,
        }
    }

    #[test]
    fn principal_point_maps_to_center() {
        let c = cam();
        assert_eq!(c.normalize_2d([c.cx, c.cy]), [0.0, 0.0]);
        assert_eq!(c.project([0.0, 0.0, 4.0]), [c.cx, c.cy]);
    }

    #[test]
    fn denormalize_inverts() {
        let c = cam();
        for uv in [[0.0, 0.0], [123.25, 777.5], [1000.0, 800.0]] {
            let back = c.denormalize_2d(c.normalize_2d(uv));
            assert!((back[0] - uv[0]).abs() < 1e-9 && (back[1] - uv[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_centers_root() {
        let s = PoseSample::normalize(
            &[[500.0, 400.0], [600.0, 400.0]],
            &[[0.1, 0.2, 4.0], [0.3, 0.2, 4.1]],
            &cam(),
            0,
            None,
        )
        .unwrap();
        assert_eq!(s.joint3d(0), [0.0, 0.0, 0.0]);
        assert_eq!(&s.joints2d[..2], &[0.0, 0.0]);
    }
}
