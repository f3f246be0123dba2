//! Hop-wise attention between joint features and their k-hop representations.

use std::fmt;
use std::str::FromStr;

use super::basic::{ActivationKind, Linear};
use super::context::{Ctx, Init};
use super::graph::{ConvKind, HopAggregate, HopConv, ReductionSchedule};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::skeleton::SkeletonGraph;
use crate::tensor::Var;

/// Which of `H` and `S^k` play the query, key and value roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaVariant {
    /// `softmax(H S^kᵀ/√d) S^k`
    Hss,
    /// `softmax(S^k S^kᵀ/√d) S^k`
    Sss,
    /// `softmax(S^k Hᵀ/√d) H`
    Shh,
}

impl FromStr for HaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HSS" => Ok(HaVariant::Hss),
            "SSS" => Ok(HaVariant::Sss),
            "SHH" => Ok(HaVariant::Shh),
            other => Err(Error::Config(format!("unknown attention variant {other:?}"))),
        }
    }
}

impl fmt::Display for HaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HaVariant::Hss => "HSS",
            HaVariant::Sss => "SSS",
            HaVariant::Shh => "SHH",
        })
    }
}

impl HaVariant {
    /// `(query, key, value)` sources.
    pub fn roles(self, h: Var, s: Var) -> (Var, Var, Var) {
        match self {
            HaVariant::Hss => (h, s, s),
            HaVariant::Sss => (s, s, s),
            HaVariant::Shh => (s, h, h),
        }
    }
}

/// Learned query/key/value maps applied before attention, shared by all hops.
#[derive(Debug, Clone)]
pub struct QkvProjection {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl QkvProjection {
    pub fn new<T: Real>(init: &mut Init<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(QkvProjection {
            q: Linear::new(init, &format!("{name}.q"), dim, dim, true)?,
            k: Linear::new(init, &format!("{name}.k"), dim, dim, true)?,
            v: Linear::new(init, &format!("{name}.v"), dim, dim, true)?,
        })
    }
}

/// Returns `(Z^k, attention)`; the softmax runs over the key axis.
pub fn ha_attention<T: Real>(
    cx: &Ctx<T>,
    h: Var,
    s: Var,
    variant: HaVariant,
    proj: Option<&QkvProjection>,
) -> Result<(Var, Var)> {
    let (mut q, mut k, mut v) = variant.roles(h, s);
    if let Some(p) = proj {
        q = p.q.forward(cx, q)?;
        k = p.k.forward(cx, k)?;
        v = p.v.forward(cx, v)?;
    }
    let shape = cx.tape.shape(q);
    let d = *shape
        .last()
        .ok_or_else(|| Error::invalid("ha_attention", "rank-0 features"))?;
    let scores = cx.tape.matmul_nt(q, k)?;
    let scores = cx.tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let attn = cx.tape.softmax(scores, shape.len() - 1)?;
    let z = cx.tape.matmul(attn, v)?;
    Ok((z, attn))
}

/// HopGCN, per-hop attention, per-hop reduction and aggregation.
#[derive(Debug, Clone)]
pub struct HaLayer<T> {
    pub name: String,
    pub conv: HopConv<T>,
    pub variant: HaVariant,
    pub proj: Option<QkvProjection>,
    pub agg: HopAggregate,
}

impl<T: Real> HaLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init<T>,
        name: &str,
        skeleton: &SkeletonGraph,
        hops: usize,
        channels: usize,
        schedule: &ReductionSchedule,
        variant: HaVariant,
        with_projection: bool,
        act: ActivationKind,
        learnable_graph: bool,
    ) -> Result<Self> {
        let conv = HopConv::new(init, name, skeleton, ConvKind::Hop, hops, channels, learnable_graph)?;
        let proj = if with_projection {
            Some(QkvProjection::new(init, &format!("{name}.proj"), channels)?)
        } else {
            None
        };
        let reduced = schedule.dims(channels, hops)?;
        let agg = HopAggregate::new(init, name, channels, &reduced, act)?;
        Ok(HaLayer {
            name: name.to_string(),
            conv,
            variant,
            proj,
            agg,
        })
    }

    pub fn forward(&self, cx: &Ctx<T>, h: Var) -> Result<Var> {
        let s = self.conv.forward(cx, h)?;
        let mut zs = Vec::with_capacity(s.len());
        for (k, &sk) in s.iter().enumerate() {
            let (z, attn) = ha_attention(cx, h, sk, self.variant, self.proj.as_ref())?;
            cx.record_attention(format!("{}.hop{}", self.name, k + 1), attn);
            zs.push(z);
        }
        self.agg.forward(cx, h, &zs)
    }
}
