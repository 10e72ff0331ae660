//! Named parameter storage and the per-pass graph that binds it to a tape.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered table of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform matrix `[fan_in × fan_out]`.
    pub fn add_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut RngState) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| S::lit(rng.uniform_range(-a, a))).collect();
        self.add(name, Tensor::from_parts(vec![fan_in, fan_out], data))
    }

    pub fn add_filled(&mut self, name: impl Into<String>, n: usize, value: f64) -> ParamId {
        self.add(name, Tensor::from_parts(vec![n], vec![S::lit(value); n]))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape { op: "set_param", lhs: self.values[id.0].shape().to_vec(), rhs: value.shape().to_vec() });
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Mutable access to the raw values; the caller keeps them finite.
    pub fn values_mut(&mut self, id: ParamId) -> &mut [S] {
        self.values[id.0].data_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }
}

/// One forward pass: a fresh tape plus lazily bound parameters.
///
/// A parameter becomes a tape leaf the first time it is requested and the
/// same leaf is reused afterwards, so gradients from every use accumulate.
pub struct Graph<'p, S> {
    pub tape: Tape<S>,
    store: &'p ParamStore<S>,
    bound: Vec<Option<Var>>,
    trainable: bool,
    dropout_rng: Option<RngState>,
}

impl<'p, S: Scalar> Graph<'p, S> {
    /// Graph whose parameters are tracked for gradients.
    pub fn training(store: &'p ParamStore<S>) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], trainable: true, dropout_rng: None }
    }

    /// Graph whose parameters are constants.
    pub fn inference(store: &'p ParamStore<S>) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], trainable: false, dropout_rng: None }
    }

    /// Enables dropout with masks drawn from `rng`.
    pub fn with_dropout(mut self, rng: RngState) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    pub fn is_training(&self) -> bool {
        self.trainable
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Whether `id` has been bound in this pass.
    /// Tape leaf of a parameter already used in this pass.
    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    pub fn is_bound(&self, id: ParamId) -> bool {
        self.bound[id.0].is_some()
    }

    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.tape.constant(value)
    }

    /// Inverted dropout; identity at inference or when the rate is zero.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if rate <= 0.0 || !self.trainable {
            return Ok(x);
        }
        let Some(rng) = self.dropout_rng.as_mut() else { return Ok(x) };
        let keep = 1.0 - rate;
        let shape = self.tape.shape(x).to_vec();
        let n = self.tape.value(x).len();
        let mask = (0..n).map(|_| if rng.uniform() < keep { S::lit(1.0 / keep) } else { S::zero() }).collect();
        let mask = self.tape.constant(Tensor::from_parts(shape, mask));
        self.tape.mul(x, mask)
    }

    /// Per-parameter gradients indexed by [`ParamId`]; `None` where unreached.
    pub fn param_grads(&self, grads: &Gradients<S>) -> Vec<Option<Vec<S>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| grads.raw(v).map(|g| g.to_vec())))
            .collect()
    }
}
