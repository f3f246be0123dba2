//! Network building blocks on top of the tape.

pub mod attention;
pub mod basic;
pub mod context;
pub mod graph;
pub mod hgf;
pub mod ijr;
pub mod mhsa;

pub use attention::{ha_attention, HaLayer, HaVariant, QkvProjection};
pub use basic::{Activation, ActivationKind, Linear};
pub use context::{Ctx, Init, ParamId, ParamSet};
pub use graph::{gcn_layer, hop_gcn, ConvKind, GraphModule, HopAggregate, HopConv, HopGraphs, ReductionSchedule};
pub use hgf::{Hgf, HgfSpec};
pub use ijr::Ijr;
pub use mhsa::Mhsa;
