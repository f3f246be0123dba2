//! Training loss and evaluation protocols. Poses are in meters; every
//! reported error is in millimeters.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Tape, Var};

pub const LOSS_ALPHA: f64 = 1.0;
pub const LOSS_BETA: f64 = 0.1;
pub const PCK_THRESHOLD_MM: f64 = 150.0;

/// 5, 10, …, 150 mm.
pub fn auc_thresholds() -> Vec<f64> {
    (1..=30).map(|i| 5.0 * i as f64).collect()
}

/// `α Σ_n ‖e_n‖₂ + β Σ_n ‖e_n‖₁` summed over joints, averaged over the batch.
pub fn pose_loss<T: Real>(tape: &Tape<T>, pred: Var, target: Var, alpha: f64, beta: f64) -> Result<Var> {
    let shape = tape.shape(pred);
    if shape != tape.shape(target) || shape.len() != 3 || shape[2] != 3 {
        return Err(Error::shape("pose_loss", &shape, &tape.shape(target)));
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::invalid("pose_loss", "loss weights must be nonnegative"));
    }
    let inv_b = 1.0 / shape[0] as f64;
    let e = tape.sub(pred, target)?;
    let l2 = tape.sum(tape.norm_last(e)?)?;
    let l1 = tape.sum(tape.abs(e)?)?;
    let total = tape.add(tape.scale(l2, alpha * inv_b)?, tape.scale(l1, beta * inv_b)?)?;
    Ok(total)
}

fn check_poses(pred: &[f64], target: &[f64], joints: usize) -> Result<usize> {
    if joints == 0 || pred.len() != target.len() || !pred.len().is_multiple_of(joints * 3) {
        return Err(Error::invalid(
            "metrics",
            format!("{} vs {} values for {joints}-joint poses", pred.len(), target.len()),
        ));
    }
    Ok(pred.len() / (joints * 3))
}

/// Per-(sample, joint) Euclidean errors in mm, sample-major.
pub fn joint_errors_mm(pred: &[f64], target: &[f64], joints: usize) -> Result<Vec<f64>> {
    check_poses(pred, target, joints)?;
    Ok(pred
        .chunks_exact(3)
        .zip(target.chunks_exact(3))
        .map(|(p, t)| {
            let d: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
            d.sqrt() * 1000.0
        })
        .collect())
}

pub fn mpjpe(pred: &[f64], target: &[f64], joints: usize) -> Result<f64> {
    let e = joint_errors_mm(pred, target, joints)?;
    Ok(e.iter().sum::<f64>() / e.len().max(1) as f64)
}

/// Spread below which a pose counts as all-coincident.
const DEGENERATE_NORM: f64 = 1e-12;

/// Similarity-align `pred` onto `target` (one `N × 3` pose each) with a
/// proper rotation. Returns `None` for a degenerate pose.
pub fn procrustes_align(pred: &[f64], target: &[f64]) -> Option<Vec<f64>> {
    let n = pred.len() / 3;
    let mean = |p: &[f64]| -> Vector3<f64> {
        p.chunks_exact(3).fold(Vector3::zeros(), |acc, c| acc + Vector3::new(c[0], c[1], c[2])) / n as f64
    };
    let (mx, my) = (mean(pred), mean(target));
    let centered = |p: &[f64], m: &Vector3<f64>| -> Vec<Vector3<f64>> {
        p.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2]) - m).collect()
    };
    let (x0, y0) = (centered(pred, &mx), centered(target, &my));
    let nx = x0.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    let ny = y0.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    if nx < DEGENERATE_NORM || ny < DEGENERATE_NORM {
        return None;
    }
    // cross-covariance of the normalized point sets, rows are points
    let mut h = Matrix3::zeros();
    for (x, y) in x0.iter().zip(&y0) {
        h += (x / nx) * (y / ny).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut s = svd.singular_values;
    let mut v = v_t.transpose();
    // rotate row vectors as x·R
    let mut r = u * v.transpose();
    if r.determinant() < 0.0 {
        let k = s.imin();
        v.column_mut(k).neg_mut();
        s[k] = -s[k];
        r = u * v.transpose();
    }
    let scale = s.sum() * ny / nx;
    let mut out = Vec::with_capacity(pred.len());
    for x in &x0 {
        let a = scale * (x.transpose() * r).transpose() + my;
        out.extend_from_slice(a.as_slice());
    }
    Some(out)
}

/// Returns the mean aligned error in mm and the number of degenerate
/// samples scored without alignment.
pub fn p_mpjpe(pred: &[f64], target: &[f64], joints: usize) -> Result<(f64, usize)> {
    let samples = check_poses(pred, target, joints)?;
    let stride = joints * 3;
    let mut total = 0.0;
    let mut degenerate = 0;
    for s in 0..samples {
        let (p, t) = (&pred[s * stride..(s + 1) * stride], &target[s * stride..(s + 1) * stride]);
        let e = match procrustes_align(p, t) {
            Some(aligned) => mpjpe(&aligned, t, joints)?,
            None => {
                degenerate += 1;
                mpjpe(p, t, joints)?
            }
        };
        total += e;
    }
    Ok((total / samples.max(1) as f64, degenerate))
}

/// Fraction of errors strictly below `threshold_mm`.
pub fn pck(errors_mm: &[f64], threshold_mm: f64) -> f64 {
    if errors_mm.is_empty() {
        return 0.0;
    }
    errors_mm.iter().filter(|&&e| e < threshold_mm).count() as f64 / errors_mm.len() as f64
}

/// `(PCK@threshold, mean PCK over the AUC grid)`.
pub fn pck_auc(errors_mm: &[f64], threshold_mm: f64) -> (f64, f64) {
    let grid = auc_thresholds();
    let auc = grid.iter().map(|&t| pck(errors_mm, t)).sum::<f64>() / grid.len() as f64;
    (pck(errors_mm, threshold_mm), auc)
}

/// Which metrics an evaluation computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// MPJPE only.
    P1,
    /// Everything.
    All,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(Protocol::P1),
            "all" => Ok(Protocol::All),
            other => Err(Error::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_mpjpe_mm: Option<f64>,
    pub per_joint_mm: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pck_150: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_action: Option<BTreeMap<String, f64>>,
    /// Samples whose alignment was skipped as degenerate.
    #[serde(skip)]
    pub degenerate_alignments: usize,
}

impl EvalReport {
    /// `pred` and `target` are sample-major `N × 3` poses in meters;
    /// `actions`, when given, has one label per sample.
    pub fn compute(
        pred: &[f64],
        target: &[f64],
        joints: usize,
        actions: Option<&[String]>,
        protocol: Protocol,
    ) -> Result<Self> {
        let samples = check_poses(pred, target, joints)?;
        if samples == 0 {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        let errors = joint_errors_mm(pred, target, joints)?;
        let mut per_joint = vec![0.0; joints];
        for row in errors.chunks_exact(joints) {
            for (acc, e) in per_joint.iter_mut().zip(row) {
                *acc += e;
            }
        }
        per_joint.iter_mut().for_each(|v| *v /= samples as f64);
        let mpjpe_mm = errors.iter().sum::<f64>() / errors.len() as f64;

        let per_action = match actions {
            Some(labels) if labels.len() != samples => {
                return Err(Error::Data(format!("{} action labels for {samples} samples", labels.len())))
            }
            Some(labels) if labels.iter().any(|l| !l.is_empty()) => {
                let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
                for (label, row) in labels.iter().zip(errors.chunks_exact(joints)) {
                    let e = sums.entry(label.clone()).or_default();
                    e.0 += row.iter().sum::<f64>();
                    e.1 += joints;
                }
                Some(sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect())
            }
            _ => None,
        };

        let mut report = EvalReport {
            mpjpe_mm,
            p_mpjpe_mm: None,
            per_joint_mm: per_joint,
            pck_150: None,
            auc: None,
            per_action,
            degenerate_alignments: 0,
        };
        if protocol == Protocol::All {
            let (p, degenerate) = p_mpjpe(pred, target, joints)?;
            let (pck, auc) = pck_auc(&errors, PCK_THRESHOLD_MM);
            report.p_mpjpe_mm = Some(p);
            report.degenerate_alignments = degenerate;
            report.pck_150 = Some(pck);
            report.auc = Some(auc);
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
