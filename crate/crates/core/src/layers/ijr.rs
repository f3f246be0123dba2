//! Intragroup joint refinement: global self-attention followed by
//! self-attention restricted to each limb group.

use super::context::{Ctx, Init};
use super::mhsa::Mhsa;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::skeleton::LimbGroup;
use crate::tensor::Var;

#[derive(Debug, Clone)]
pub struct Ijr {
    pub global: Mhsa,
    /// Shared by every group.
    pub group: Mhsa,
    groups: Vec<Vec<usize>>,
    /// Position of each joint in the group-ordered concatenation.
    inverse: Vec<usize>,
    pub dropout: f64,
}

impl Ijr {
    pub fn new<T: Real>(
        init: &mut Init<T>,
        name: &str,
        dim: usize,
        heads: usize,
        groups: &[LimbGroup],
        num_joints: usize,
        dropout: f64,
    ) -> Result<Self> {
        let order: Vec<usize> = groups.iter().flat_map(|g| g.joints.iter().copied()).collect();
        let mut inverse = vec![usize::MAX; num_joints];
        for (pos, &j) in order.iter().enumerate() {
            if j >= num_joints || inverse[j] != usize::MAX || groups.iter().any(|g| g.joints.is_empty()) {
                return Err(Error::Graph(format!(
                    "limb groups do not partition {num_joints} joints"
                )));
            }
            inverse[j] = pos;
        }
        if order.len() != num_joints {
            return Err(Error::Graph(format!(
                "limb groups cover {} of {num_joints} joints",
                order.len()
            )));
        }
        Ok(Ijr {
            global: Mhsa::new(init, &format!("{name}.global"), dim, heads)?,
            group: Mhsa::new(init, &format!("{name}.group"), dim, heads)?,
            groups: groups.iter().map(|g| g.joints.clone()).collect(),
            inverse,
            dropout,
        })
    }

    /// `h` is `[..., N, D]`.
    pub fn forward<T: Real>(&self, cx: &Ctx<T>, h: Var) -> Result<Var> {
        let g = self.global.forward(cx, h)?;
        self.grouped(cx, g)
    }

    /// The second stage only.
    pub fn grouped<T: Real>(&self, cx: &Ctx<T>, g: Var) -> Result<Var> {
        let tape = cx.tape;
        let axis = tape.shape(g).len() - 2;
        let mut parts = Vec::with_capacity(self.groups.len());
        for joints in &self.groups {
            let sel = tape.index_select(g, axis, joints)?;
            parts.push(self.group.forward(cx, sel)?);
        }
        let cat = tape.concat(&parts, axis)?;
        let y = tape.index_select(cat, axis, &self.inverse)?;
        cx.dropout(y, self.dropout)
    }
}
