//! Named parameters and the per-pass forward context.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};
use crate::scalar::Real;
use crate::tensor::{Tape, Tensor, Var};

/// Index of a parameter in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid("params", format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replace values by name; every name must exist with a matching shape.
    pub fn load(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, t) in named {
            let i = *self
                .index
                .get(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name:?}")))?;
            if self.values[i].shape() != t.shape() {
                return Err(Error::shape("load", self.values[i].shape(), t.shape()));
            }
            self.values[i] = t.clone();
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor<T>)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }
}

/// Allocates parameters with deterministic, seeded initialization.
pub struct Init<T> {
    params: ParamSet<T>,
    rng: Rng,
}

impl<T: Real> Init<T> {
    pub fn new(seed: u64) -> Self {
        Init {
            params: ParamSet::default(),
            rng: stream(seed, Stream::Init, 0),
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let t = Tensor::uniform(shape, -bound, bound, &mut self.rng);
        self.params.insert(name, t)
    }

    /// Symmetric square matrix with entries uniform in `[-bound, bound)`.
    pub fn symmetric(&mut self, name: &str, n: usize, bound: f64) -> Result<ParamId> {
        let upper = Tensor::<T>::uniform(&[n, n], -bound, bound, &mut self.rng);
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                t.data_mut()[i * n + j] = upper.data()[a * n + b];
            }
        }
        self.params.insert(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.params.insert(name, Tensor::full(shape, T::lit(value)))
    }

    pub fn finish(self) -> ParamSet<T> {
        self.params
    }
}

/// One forward pass: the tape, parameter leaves bound on it, and the
/// train/eval switch.
pub struct Ctx<'t, T: Real> {
    pub tape: &'t Tape<T>,
    params: Vec<Var>,
    training: bool,
    rng: RefCell<Option<Rng>>,
    attention: Option<RefCell<Vec<(String, Var)>>>,
}

impl<'t, T: Real> Ctx<'t, T> {
    /// Bind every parameter as a differentiable leaf, in eval mode.
    pub fn new(tape: &'t Tape<T>, params: &ParamSet<T>) -> Self {
        let vars = params.values().iter().map(|v| tape.leaf(v.clone())).collect();
        Self::from_vars(tape, vars)
    }

    /// Use already-bound leaves, one per parameter in set order.
    pub fn from_vars(tape: &'t Tape<T>, params: Vec<Var>) -> Self {
        Ctx {
            tape,
            params,
            training: false,
            rng: RefCell::new(None),
            attention: None,
        }
    }

    /// Switch to training mode; dropout draws from `rng`.
    pub fn training(mut self, rng: Rng) -> Self {
        self.training = true;
        self.rng = RefCell::new(Some(rng));
        self
    }

    /// Keep every hop-attention matrix computed during the pass.
    pub fn recording_attention(mut self) -> Self {
        self.attention = Some(RefCell::new(Vec::new()));
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    pub fn dropout(&self, x: Var, rate: f64) -> Result<Var> {
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = self.rng.borrow_mut();
        let rng = rng
            .as_mut()
            .ok_or_else(|| Error::invalid("dropout", "training context without a generator"))?;
        self.tape.dropout(x, rate, true, rng)
    }

    pub fn record_attention(&self, label: String, attn: Var) {
        if let Some(log) = &self.attention {
            log.borrow_mut().push((label, attn));
        }
    }

    pub fn take_attention(&self) -> Vec<(String, Var)> {
        self.attention
            .as_ref()
            .map(|log| std::mem::take(&mut *log.borrow_mut()))
            .unwrap_or_default()
    }

    /// Gradients of every bound parameter after `tape.backward`.
    pub fn param_grads(&self, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .zip(params.values())
            .map(|(&v, p)| self.tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}
