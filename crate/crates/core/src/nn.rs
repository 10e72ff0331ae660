//! Framewise layers and multi-head attention built on [`Graph`].

use crate::error::{Error, Result};
use crate::params::{Graph, ParamId, ParamStore};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tape::Var;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x · W + b` applied to every row.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, in_dim: usize, out_dim: usize, rng: &mut RngState) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = store.add_filled(format!("{name}.bias"), out_dim, 0.0);
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.tape.matmul(x, w)?;
        g.tape.add_row(xw, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Two-layer perceptron with a GELU hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut RngState,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.fc1"), in_dim, hidden, rng),
            out: Linear::new(store, &format!("{name}.fc2"), hidden, out_dim, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.tape.gelu(h)?;
        self.out.forward(g, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.hidden.params().into_iter().chain(self.out.params()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add_filled(format!("{name}.gain"), dim, 1.0),
            bias: store.add_filled(format!("{name}.bias"), dim, 0.0),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.tape.layer_norm(x, gain, bias, S::lit(LAYER_NORM_EPS))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}

/// Scaled dot-product attention with `heads` parallel heads.
///
/// Queries come from one sequence and keys/values from another (the same
/// one for self-attention); both are projected to `model_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub model_dim: usize,
}

/// Attention output together with each head's `[Tq × Tk]` weight matrix.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        query_dim: usize,
        kv_dim: usize,
        model_dim: usize,
        heads: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(Error::Invalid(format!("{name}: model_dim {model_dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), query_dim, model_dim, rng),
            key: Linear::new(store, &format!("{name}.k"), kv_dim, model_dim, rng),
            value: Linear::new(store, &format!("{name}.v"), kv_dim, model_dim, rng),
            output: Linear::new(store, &format!("{name}.o"), model_dim, model_dim, rng),
            heads,
            model_dim,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, query: Var, kv: Var) -> Result<AttentionOutput> {
        let q = self.query.forward(g, query)?;
        let k = self.key.forward(g, kv)?;
        let v = self.value.forward(g, kv)?;
        let head_dim = self.model_dim / self.heads;
        let scale = S::one() / S::from_count(head_dim).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                let start = h * head_dim;
                (
                    g.tape.slice(q, 1, start, head_dim)?,
                    g.tape.slice(k, 1, start, head_dim)?,
                    g.tape.slice(v, 1, start, head_dim)?,
                )
            };
            let kt = g.tape.transpose(kh)?;
            let scores = g.tape.matmul(qh, kt)?;
            let scores = g.tape.scale(scores, scale)?;
            let attn = g.tape.softmax(scores, 1)?;
            weights.push(attn);
            outs.push(g.tape.matmul(attn, vh)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.tape.concat(&outs, 1)? };
        let output = self.output.forward(g, merged)?;
        Ok(AttentionOutput { output, weights })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output].iter().flat_map(|l| l.params()).collect()
    }
}
