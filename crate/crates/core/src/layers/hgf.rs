//! Hop-wise graph fusion: the HA layer fused with a per-sample global
//! feature and the raw 2D keypoints.

use super::attention::{HaLayer, HaVariant};
use super::basic::{Activation, ActivationKind, Linear};
use super::context::{Ctx, Init};
use super::graph::ReductionSchedule;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::skeleton::SkeletonGraph;
use crate::tensor::Var;

/// Shared hyperparameters of one HGF module.
#[derive(Debug, Clone)]
pub struct HgfSpec<'a> {
    pub hops: usize,
    pub channels: usize,
    pub global_dim: usize,
    pub schedule: &'a ReductionSchedule,
    pub variant: HaVariant,
    pub with_projection: bool,
    pub act: ActivationKind,
    pub learnable_graph: bool,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct Hgf<T> {
    pub ha: HaLayer<T>,
    pub global: Linear,
    pub global_act: Activation,
    pub fuse: Linear,
    pub fuse_act: Activation,
    pub num_joints: usize,
    pub dropout: f64,
}

impl<T: Real> Hgf<T> {
    pub fn new(init: &mut Init<T>, name: &str, skeleton: &SkeletonGraph, spec: &HgfSpec) -> Result<Self> {
        let n = skeleton.num_joints();
        let d = spec.channels;
        let ha = HaLayer::new(
            init,
            name,
            skeleton,
            spec.hops,
            d,
            spec.schedule,
            spec.variant,
            spec.with_projection,
            spec.act,
            spec.learnable_graph,
        )?;
        Ok(Hgf {
            ha,
            global: Linear::new(init, &format!("{name}.global"), n * d, spec.global_dim, true)?,
            global_act: Activation::new(init, &format!("{name}.global.act"), spec.act)?,
            fuse: Linear::new(init, &format!("{name}.fuse"), d + spec.global_dim + 2, d, true)?,
            fuse_act: Activation::new(init, &format!("{name}.fuse.act"), spec.act)?,
            num_joints: n,
            dropout: spec.dropout,
        })
    }

    /// `h` is `[B, N, D]`, `x2d` is `[B, N, 2]`.
    pub fn forward(&self, cx: &Ctx<T>, h: Var, x2d: Option<Var>) -> Result<Var> {
        let tape = cx.tape;
        let x2d = x2d.ok_or_else(|| Error::invalid("hgf", "fusion needs the 2D keypoints"))?;
        let shape = tape.shape(h);
        let &[b, n, d] = shape.as_slice() else {
            return Err(Error::invalid("hgf", format!("expected [B, N, D] features, got {shape:?}")));
        };
        if n != self.num_joints || tape.shape(x2d) != [b, n, 2] {
            return Err(Error::shape("hgf", &shape, &tape.shape(x2d)));
        }
        let local = self.ha.forward(cx, h)?;
        let flat = tape.reshape(h, &[b, n * d])?;
        let g = self.global_act.forward(cx, self.global.forward(cx, flat)?)?;
        let gdim = self.global.out_dim;
        let g = tape.expand(tape.reshape(g, &[b, 1, gdim])?, 1, n)?;
        let cat = tape.concat(&[local, g, x2d], 2)?;
        let y = self.fuse_act.forward(cx, self.fuse.forward(cx, cat)?)?;
        cx.dropout(y, self.dropout)
    }
}
