//! Graph convolutions: the vanilla normalized GCN, the exact-k-hop HopGCN,
//! per-hop reduction and concatenation aggregation.

use std::fmt;
use std::str::FromStr;

use super::basic::{Activation, ActivationKind, Linear};
use super::context::{Ctx, Init, ParamId};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::skeleton::{affinity_on, SkeletonGraph};
use crate::tensor::{Tape, Tensor, Var};

/// Learnable additive graphs start in `[-LEARNABLE_GRAPH_INIT, LEARNABLE_GRAPH_INIT)`.
pub const LEARNABLE_GRAPH_INIT: f64 = 0.01;

/// `σ(Ã H W)`; `None` activation is the identity.
pub fn gcn_layer<T: Real>(cx: &Ctx<T>, h: Var, affinity: Var, w: Var, act: Option<&Activation>) -> Result<Var> {
    let hw = cx.tape.matmul(h, w)?;
    let out = cx.tape.matmul(affinity, hw)?;
    match act {
        Some(a) => a.forward(cx, out),
        None => Ok(out),
    }
}

/// `s^k_i = Σ_j a^k_ij h_j W^k`, batched over any leading axes of `h`.
pub fn hop_gcn<T: Real>(tape: &Tape<T>, h: Var, hop: Var, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    tape.matmul(hop, hw)
}

/// Divisors of the channel count giving each hop's reduced width:
/// `d_k = D / divisors[k-1]`, the last divisor repeating for higher hops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionSchedule(pub Vec<usize>);

impl Default for ReductionSchedule {
    fn default() -> Self {
        ReductionSchedule(vec![2, 8, 8, 8])
    }
}

impl ReductionSchedule {
    pub fn dims(&self, channels: usize, hops: usize) -> Result<Vec<usize>> {
        let last = *self
            .0
            .last()
            .ok_or_else(|| Error::Config("reduction schedule is empty".into()))?;
        (0..hops)
            .map(|k| {
                let div = self.0.get(k).copied().unwrap_or(last);
                if div == 0 || !channels.is_multiple_of(div) {
                    Err(Error::Config(format!(
                        "channels {channels} not divisible by reduction divisor {div} for hop {}",
                        k + 1
                    )))
                } else {
                    Ok(channels / div)
                }
            })
            .collect()
    }
}

impl FromStr for ReductionSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad reduction divisor {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if v.is_empty() {
            return Err(Error::Config("reduction schedule is empty".into()));
        }
        Ok(ReductionSchedule(v))
    }
}

impl fmt::Display for ReductionSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// Normalized first-order affinity with self-loops.
    Gcn,
    /// One exact-k-hop matrix per hop order.
    Hop,
}

/// The per-hop propagation matrices of one module.
#[derive(Debug, Clone)]
pub struct HopGraphs<T> {
    mats: Vec<Tensor<T>>,
    learnable: Vec<Option<ParamId>>,
    normalize: bool,
}

impl<T: Real> HopGraphs<T> {
    /// With `learnable_graph`, each hop gets `normalize(A^k + S(L_k) + I)`;
    /// otherwise hops use the raw binary `A^k` and the GCN uses
    /// `normalize(A + I)`.
    pub fn new(
        init: &mut Init<T>,
        name: &str,
        skeleton: &SkeletonGraph,
        kind: ConvKind,
        hops: usize,
        learnable_graph: bool,
    ) -> Result<Self> {
        let n = skeleton.num_joints();
        let orders: Vec<usize> = match kind {
            ConvKind::Gcn => vec![1],
            ConvKind::Hop => (1..=hops).collect(),
        };
        let normalize = kind == ConvKind::Gcn || learnable_graph;
        let mut mats = Vec::new();
        let mut learnable = Vec::new();
        for k in orders {
            let mut m = skeleton.hop_matrix(k)?.to_tensor::<T>();
            if normalize {
                for i in 0..n {
                    m.data_mut()[i * n + i] = T::one();
                }
            }
            mats.push(m);
            learnable.push(if learnable_graph {
                Some(init.symmetric(&format!("{name}.graph{k}"), n, LEARNABLE_GRAPH_INIT)?)
            } else {
                None
            });
        }
        Ok(HopGraphs {
            mats,
            learnable,
            normalize,
        })
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn matrix(&self, cx: &Ctx<T>, i: usize) -> Result<Var> {
        let base = cx.tape.constant(self.mats[i].clone());
        if self.normalize {
            affinity_on(cx.tape, base, self.learnable[i].map(|l| cx.p(l)))
        } else {
            Ok(base)
        }
    }
}

/// Per-hop graph convolution producing `S^1..S^K`.
#[derive(Debug, Clone)]
pub struct HopConv<T> {
    pub graphs: HopGraphs<T>,
    pub weights: Vec<ParamId>,
}

impl<T: Real> HopConv<T> {
    pub fn new(
        init: &mut Init<T>,
        name: &str,
        skeleton: &SkeletonGraph,
        kind: ConvKind,
        hops: usize,
        channels: usize,
        learnable_graph: bool,
    ) -> Result<Self> {
        let graphs = HopGraphs::new(init, name, skeleton, kind, hops, learnable_graph)?;
        let bound = 1.0 / (channels as f64).sqrt();
        let weights = (1..=graphs.len())
            .map(|k| init.uniform(&format!("{name}.hop{k}.weight"), &[channels, channels], bound))
            .collect::<Result<Vec<_>>>()?;
        Ok(HopConv { graphs, weights })
    }

    pub fn forward(&self, cx: &Ctx<T>, h: Var) -> Result<Vec<Var>> {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, &w)| hop_gcn(cx.tape, h, self.graphs.matrix(cx, i)?, cx.p(w)))
            .collect()
    }
}

/// Per-hop reduction `F^k` followed by `F(h ‖ r^1 ‖ … ‖ r^K)` and activation.
#[derive(Debug, Clone)]
pub struct HopAggregate {
    pub reduce: Vec<Linear>,
    pub fuse: Linear,
    pub act: Activation,
}

impl HopAggregate {
    pub fn new<T: Real>(
        init: &mut Init<T>,
        name: &str,
        channels: usize,
        reduced: &[usize],
        act: ActivationKind,
    ) -> Result<Self> {
        let reduce = reduced
            .iter()
            .enumerate()
            .map(|(i, &d)| Linear::new(init, &format!("{name}.reduce{}", i + 1), channels, d, true))
            .collect::<Result<Vec<_>>>()?;
        let width = channels + reduced.iter().sum::<usize>();
        let fuse = Linear::new(init, &format!("{name}.aggregate"), width, channels, true)?;
        let act = Activation::new(init, &format!("{name}.aggregate.act"), act)?;
        Ok(HopAggregate { reduce, fuse, act })
    }

    /// `R^k = F^k(Z^k)`.
    pub fn hop_reduce<T: Real>(&self, cx: &Ctx<T>, z: Var, k: usize) -> Result<Var> {
        let f = self
            .reduce
            .get(k - 1)
            .ok_or_else(|| Error::invalid("hop_reduce", format!("no reduction for hop {k}")))?;
        f.forward(cx, z)
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<T>, h: Var, zs: &[Var]) -> Result<Var> {
        if zs.len() != self.reduce.len() {
            return Err(Error::invalid(
                "hop_aggregate",
                format!("{} hop inputs for {} reductions", zs.len(), self.reduce.len()),
            ));
        }
        let mut parts = vec![h];
        for (k, &z) in zs.iter().enumerate() {
            parts.push(self.hop_reduce(cx, z, k + 1)?);
        }
        let rank = cx.tape.shape(h).len();
        let cat = cx.tape.concat(&parts, rank - 1)?;
        let y = self.fuse.forward(cx, cat)?;
        self.act.forward(cx, y)
    }
}

/// Graph convolution + reduction + aggregation, with no attention or fusion.
/// Serves as the GCN / HopGCN module of the ablations and as the body of the
/// output head.
#[derive(Debug, Clone)]
pub struct GraphModule<T> {
    pub conv: HopConv<T>,
    pub agg: HopAggregate,
    pub dropout: f64,
}

impl<T: Real> GraphModule<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init<T>,
        name: &str,
        skeleton: &SkeletonGraph,
        kind: ConvKind,
        hops: usize,
        channels: usize,
        schedule: &ReductionSchedule,
        act: ActivationKind,
        learnable_graph: bool,
        dropout: f64,
    ) -> Result<Self> {
        let conv = HopConv::new(init, name, skeleton, kind, hops, channels, learnable_graph)?;
        let reduced = schedule.dims(channels, conv.graphs.len())?;
        let agg = HopAggregate::new(init, name, channels, &reduced, act)?;
        Ok(GraphModule { conv, agg, dropout })
    }

    pub fn forward(&self, cx: &Ctx<T>, h: Var) -> Result<Var> {
        let s = self.conv.forward(cx, h)?;
        let y = self.agg.forward(cx, h, &s)?;
        cx.dropout(y, self.dropout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::context::ParamSet;

    #[test]
    fn schedule_dims() {
        let s = ReductionSchedule::default();
        assert_eq!(s.dims(128, 3).unwrap(), vec![64, 16, 16]);
        assert_eq!(s.dims(128, 1).unwrap(), vec![64]);
        assert!(s.dims(12, 2).is_err());
        let p: ReductionSchedule = "2,4".parse().unwrap();
        assert_eq!(p.dims(128, 4).unwrap(), vec![64, 32, 32, 32]);
        assert_eq!(p.to_string(), "2,4");
        assert!("2,x".parse::<ReductionSchedule>().is_err());
    }

    #[test]
    fn gcn_identity_case() {
        let tape = Tape::<f64>::new();
        let params = ParamSet::default();
        let cx = Ctx::new(&tape, &params);
        let h = tape.constant(Tensor::from_f64(&[3, 2], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let a = tape.constant(Tensor::eye(3));
        let w = tape.constant(Tensor::eye(2));
        let y = gcn_layer(&cx, h, a, w, None).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn hop_gcn_two_hop_neighbor_on_path() {
        let g = SkeletonGraph::build(3, &[(0, 1), (1, 2)], 0, 3).unwrap();
        let tape = Tape::<f64>::new();
        let h = tape.constant(Tensor::from_f64(&[3, 2], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let a2 = tape.constant(g.hop_matrix(2).unwrap().to_tensor());
        let w = tape.constant(Tensor::eye(2));
        let s = hop_gcn(&tape, h, a2, w).unwrap();
        assert_eq!(&tape.value(s).data()[..2], &[5., 6.]);

        let a9 = tape.constant(g.hop_matrix(9).unwrap().to_tensor());
        let s = hop_gcn(&tape, h, a9, w).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_reduction_gives_zero() {
        let mut init = Init::<f64>::new(0);
        let agg = HopAggregate::new(&mut init, "m", 8, &[4], ActivationKind::Relu).unwrap();
        let mut params = init.finish();
        *params.get_mut(agg.reduce[0].weight) = Tensor::zeros(&[4, 8]);
        *params.get_mut(agg.reduce[0].bias.unwrap()) = Tensor::zeros(&[4]);
        let tape = Tape::<f64>::new();
        let cx = Ctx::new(&tape, &params);
        let z = tape.constant(Tensor::full(&[16, 8], 0.3));
        let r = agg.hop_reduce(&cx, z, 1).unwrap();
        assert_eq!(tape.shape(r), vec![16, 4]);
        assert!(tape.value(r).data().iter().all(|&v| v == 0.0));
    }
}
