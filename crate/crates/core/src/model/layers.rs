//! Parameterized building blocks shared by the encoders and the fusion block.

use rand::Rng as _;

use crate::autodiff::{ParamId, ParameterStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Registers parameters with deterministic per-name initialization.
pub(crate) struct Builder<'a, T> {
    pub store: &'a mut ParameterStore<T>,
    pub seeds: SeedStream,
}

impl<T: Scalar> Builder<'_, T> {
    /// Glorot-uniform matrix `[fan_in x fan_out]`, bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = self.seeds.rng(&format!("init/{name}"));
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        self.store.add(name, Tensor::new(&[fan_in, fan_out], data)?)
    }

    pub fn zeros(&mut self, name: &str, len: usize) -> Result<ParamId> {
        self.store.add(name, Tensor::zeros(&[len]))
    }

    pub fn ones(&mut self, name: &str, len: usize) -> Result<ParamId> {
        self.store.add(name, Tensor::full(&[len], T::one()))
    }
}

/// `y = x W + b`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Linear {
            weight: b.weight(&format!("{name}.weight"), fan_in, fan_out)?,
            bias: b.zeros(&format!("{name}.bias"), fan_out)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// Row-wise layer normalization with learned gain and shift.
#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: b.ones(&format!("{name}.gamma"), dim)?,
            beta: b.zeros(&format!("{name}.beta"), dim)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let n = tape.layer_norm_rows(x, T::of(LAYER_NORM_EPS))?;
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let scaled = tape.mul_row(n, g)?;
        tape.add_row(scaled, b)
    }
}

/// Two-layer perceptron `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    pub hidden: Linear,
    pub out: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, input: usize, hidden: usize, output: usize) -> Result<Self> {
        Ok(FeedForward {
            hidden: Linear::new(b, &format!("{name}.hidden"), input, hidden)?,
            out: Linear::new(b, &format!("{name}.out"), hidden, output)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, store, h)
    }
}

/// Multi-head scaled dot-product self-attention with an output projection.
#[derive(Debug, Clone)]
pub(crate) struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub(crate) struct AttentionOutput {
    pub out: Var,
    /// One `n x n` weight matrix per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("{name}: dim {dim} is not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(b, &format!("{name}.query"), dim, dim)?,
            key: Linear::new(b, &format!("{name}.key"), dim, dim)?,
            value: Linear::new(b, &format!("{name}.value"), dim, dim)?,
            output: Linear::new(b, &format!("{name}.output"), dim, dim)?,
            heads,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParameterStore<T>, x: Var) -> Result<AttentionOutput> {
        let q = self.query.forward(tape, store, x)?;
        let k = self.key.forward(tape, store, x)?;
        let v = self.value.forward(tape, store, x)?;
        let dh = self.dim / self.heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores)?;
            weights.push(attn);
            head_outputs.push(tape.matmul(attn, vh)?);
        }
        let concat = if head_outputs.len() == 1 {
            head_outputs[0]
        } else {
            tape.concat_cols(&head_outputs)?
        };
        let out = self.output.forward(tape, store, concat)?;
        Ok(AttentionOutput { out, weights })
    }
}
