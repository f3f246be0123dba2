//! The assembled network: per-joint embedding, residual blocks and the
//! output head.

mod config;

pub use config::{parse_pairs, HopFirConfig, ModuleMode, MODEL_KEYS};
pub(crate) use config::parse_value;

use crate::error::{Error, Result};
use crate::layers::{ConvKind, Ctx, GraphModule, Hgf, HgfSpec, Ijr, Init, Linear, ParamSet};
use crate::scalar::Real;
use crate::skeleton::SkeletonGraph;
use crate::tensor::{Tape, Tensor, Var};

/// Named tensors in a fixed order.
pub type LabelledTensors<T> = Vec<(String, Tensor<T>)>;

/// One slot of a residual block.
#[derive(Debug, Clone)]
pub enum Unit<T> {
    Hgf(Hgf<T>),
    Graph(GraphModule<T>),
    Ijr(Ijr),
}

impl<T: Real> Unit<T> {
    fn forward(&self, cx: &Ctx<T>, h: Var, x2d: Var) -> Result<Var> {
        match self {
            Unit::Hgf(m) => m.forward(cx, h, Some(x2d)),
            Unit::Graph(m) => m.forward(cx, h),
            Unit::Ijr(m) => m.forward(cx, h),
        }
    }
}

/// Graph module without attention or fusion, then a linear map to 3D.
#[derive(Debug, Clone)]
pub struct OutputHead<T> {
    pub body: GraphModule<T>,
    pub out: Linear,
}

impl<T: Real> OutputHead<T> {
    pub fn new(init: &mut Init<T>, config: &HopFirConfig, skeleton: &SkeletonGraph) -> Result<Self> {
        let kind = match config.module_mode {
            ModuleMode::GcnOnly => ConvKind::Gcn,
            _ => ConvKind::Hop,
        };
        let body = GraphModule::new(
            init,
            "head",
            skeleton,
            kind,
            config.hops,
            config.channels,
            &config.reduction,
            config.activation,
            config.learnable_graph,
            0.0,
        )?;
        let out = Linear::new(init, "head.out", config.channels, 3, true)?;
        Ok(OutputHead { body, out })
    }

    pub fn forward(&self, cx: &Ctx<T>, h: Var) -> Result<Var> {
        let y = self.body.forward(cx, h)?;
        self.out.forward(cx, y)
    }
}

#[derive(Debug, Clone)]
pub struct HopFirModel<T> {
    pub config: HopFirConfig,
    pub skeleton: SkeletonGraph,
    pub params: ParamSet<T>,
    pub embed: Linear,
    /// Each block adds the output of its unit chain to its input.
    pub blocks: Vec<Vec<Unit<T>>>,
    pub head: OutputHead<T>,
}

impl<T: Real> HopFirModel<T> {
    /// Deterministic in `config.seed`.
    pub fn build(config: &HopFirConfig, skeleton: &SkeletonGraph) -> Result<Self> {
        config.validate()?;
        let n = skeleton.num_joints();
        let d = config.channels;
        let mut init = Init::<T>::new(config.seed);
        let embed = Linear::new(&mut init, "embed", 2, d, true)?;
        let spec = HgfSpec {
            hops: config.hops,
            channels: d,
            global_dim: config.global_dim(),
            schedule: &config.reduction,
            variant: config.ha_variant,
            with_projection: config.with_projection,
            act: config.activation,
            learnable_graph: config.learnable_graph,
            dropout: config.dropout,
        };
        let groups = if config.module_mode.uses_ijr() && config.arrangement.contains('I') {
            skeleton.limb_groups()?.to_vec()
        } else {
            Vec::new()
        };
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let mut units = Vec::new();
            for (i, slot) in config.arrangement.chars().enumerate() {
                let name = format!("block{b}.{i}");
                let unit = match slot {
                    'H' if config.module_mode.uses_hgf() => Unit::Hgf(Hgf::new(&mut init, &name, skeleton, &spec)?),
                    'H' => {
                        let kind = if config.module_mode == ModuleMode::GcnOnly {
                            ConvKind::Gcn
                        } else {
                            ConvKind::Hop
                        };
                        Unit::Graph(GraphModule::new(
                            &mut init,
                            &name,
                            skeleton,
                            kind,
                            config.hops,
                            d,
                            &config.reduction,
                            config.activation,
                            config.learnable_graph,
                            config.dropout,
                        )?)
                    }
                    _ if config.module_mode.uses_ijr() => {
                        Unit::Ijr(Ijr::new(&mut init, &name, d, config.heads, &groups, n, config.dropout)?)
                    }
                    _ => continue,
                };
                units.push(unit);
            }
            blocks.push(units);
        }
        let head = OutputHead::new(&mut init, config, skeleton)?;
        Ok(HopFirModel {
            config: config.clone(),
            skeleton: skeleton.clone(),
            params: init.finish(),
            embed,
            blocks,
            head,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        self.params.to_named()
    }

    /// `x2d` is `[B, N, 2]`; returns `[B, N, 3]`.
    pub fn forward(&self, cx: &Ctx<T>, x2d: Var) -> Result<Var> {
        let tape = cx.tape;
        let shape = tape.shape(x2d);
        if shape.len() != 3 || shape[1] != self.skeleton.num_joints() || shape[2] != 2 {
            return Err(Error::invalid(
                "forward",
                format!(
                    "expected [B, {}, 2] keypoints, got {shape:?}",
                    self.skeleton.num_joints()
                ),
            ));
        }
        if !tape.value(x2d).is_finite() {
            return Err(Error::NonFinite("forward input".into()));
        }
        let mut h = self.embed.forward(cx, x2d)?;
        for units in &self.blocks {
            let mut y = h;
            for unit in units {
                y = unit.forward(cx, y, x2d)?;
            }
            h = if y == h { h } else { tape.add(h, y)? };
        }
        self.head.forward(cx, h)
    }

    /// Eval-mode prediction on a plain tensor.
    pub fn predict(&self, x2d: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &self.params);
        let y = self.forward(&cx, tape.constant(x2d.clone()))?;
        let out = tape.value(y).clone();
        Ok(out)
    }

    /// Eval-mode prediction that also returns every hop-attention matrix,
    /// labelled `block{b}.{slot}.hop{k}`.
    pub fn predict_with_attention(&self, x2d: &Tensor<T>) -> Result<(Tensor<T>, LabelledTensors<T>)> {
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &self.params).recording_attention();
        let y = self.forward(&cx, tape.constant(x2d.clone()))?;
        let attn = cx
            .take_attention()
            .into_iter()
            .map(|(label, v)| (label, tape.value(v).clone()))
            .collect();
        let out = tape.value(y).clone();
        Ok((out, attn))
    }
}

