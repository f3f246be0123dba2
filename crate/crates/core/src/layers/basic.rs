use std::fmt;
use std::str::FromStr;

use super::context::{Ctx, Init, ParamId};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Var;

/// Affine map `x · Wᵀ + b`, `W` stored as `[out, in]`, fan-in scaled
/// uniform initialization.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(init: &mut Init<T>, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = init.uniform(&format!("{name}.weight"), &[out_dim, in_dim], bound)?;
        let bias = if bias {
            Some(init.uniform(&format!("{name}.bias"), &[out_dim], bound)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        cx.tape
            .linear(x, cx.p(self.weight), self.bias.map(|b| cx.p(b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    PRelu,
    LeakyRelu,
}

pub const LEAKY_SLOPE: f64 = 0.01;
pub const PRELU_INIT: f64 = 0.25;

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "prelu" => Ok(ActivationKind::PRelu),
            "leakyrelu" | "leaky_relu" => Ok(ActivationKind::LeakyRelu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationKind::Relu => "relu",
            ActivationKind::PRelu => "prelu",
            ActivationKind::LeakyRelu => "leakyrelu",
        })
    }
}

/// An activation site. PReLU owns one learnable slope.
#[derive(Debug, Clone)]
pub struct Activation {
    pub kind: ActivationKind,
    slope: Option<ParamId>,
}

impl Activation {
    pub fn new<T: Real>(init: &mut Init<T>, name: &str, kind: ActivationKind) -> Result<Self> {
        let slope = match kind {
            ActivationKind::PRelu => Some(init.constant(&format!("{name}.slope"), &[1], PRELU_INIT)?),
            _ => None,
        };
        Ok(Activation { kind, slope })
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        match (self.kind, self.slope) {
            (ActivationKind::Relu, _) => cx.tape.relu(x),
            (ActivationKind::LeakyRelu, _) => cx.tape.leaky_relu(x, LEAKY_SLOPE),
            (ActivationKind::PRelu, Some(a)) => cx.tape.prelu(x, cx.p(a)),
            (ActivationKind::PRelu, None) => unreachable!("prelu always owns a slope"),
        }
    }
}
