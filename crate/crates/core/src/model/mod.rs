//! The fusion classifier.
//!
//! ```text
//!   text ──► text encoder ──► z_t ──► W_t z_t + b_t ─┐
//!                                                    ├─► [graph; text] ─► MHA ─► flatten z_f ─► task head ─► 2 logits
//!   graph ─► GCN ─► mean pool ─► z_g ─► W_g z_g + b_g┘                              │
//!                                                            grad_reverse(λ) ◄──────┘
//!                                                                  │
//!                                                                  └─► dialect head ─► 5 logits
//! ```

mod checkpoint;
mod layers;
mod text;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, ParamShape};
pub use text::{EmbeddingRecord, PrecomputedEmbeddings, ToyTransformerConfig, Vocab, CLS, CLS_ID, UNK, UNK_ID};

use layers::{Builder, FeedForward, Linear, MultiHeadAttention};
use text::ToyTransformer;

use crate::autodiff::{ParamId, ParameterStore, Scalar, Tape, Tensor, Var};
use crate::corpus::{DialectTag, Sample};
use crate::error::{Error, Result};
use crate::graph::{graph_for_text, normalized_adjacency, GraphConfig, WordGraph, FEATURE_DIM};
use crate::rng::SeedStream;

pub const NUM_DIALECTS: usize = DialectTag::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TextEncoderConfig {
    ToyTransformer(ToyTransformerConfig),
    Precomputed { dim: usize },
}

impl TextEncoderConfig {
    /// Width of the sentence vector `z_t`.
    pub fn dim(&self) -> usize {
        match self {
            TextEncoderConfig::ToyTransformer(c) => c.hidden,
            TextEncoderConfig::Precomputed { dim } => *dim,
        }
    }
}

/// Which modalities feed the fusion block. The ablations replace the
/// missing modality's vector with zeros and drop its encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    TextOnly,
    GraphOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub text: TextEncoderConfig,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub fusion_dim: usize,
    pub fusion_heads: usize,
    pub classifier_hidden: usize,
    pub dialect_head: bool,
    pub grl_lambda: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text: TextEncoderConfig::ToyTransformer(ToyTransformerConfig::default()),
            gcn_layers: 2,
            gcn_hidden: 64,
            fusion_dim: 64,
            fusion_heads: 4,
            classifier_hidden: 64,
            dialect_head: false,
            grl_lambda: 1.0,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("text dim", self.text.dim()),
            ("gcn_layers", self.gcn_layers),
            ("gcn_hidden", self.gcn_hidden),
            ("fusion_dim", self.fusion_dim),
            ("fusion_heads", self.fusion_heads),
            ("classifier_hidden", self.classifier_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.fusion_dim.is_multiple_of(self.fusion_heads) {
            return Err(Error::Config(format!(
                "fusion_dim {} is not divisible by fusion_heads {}",
                self.fusion_dim, self.fusion_heads
            )));
        }
        if let TextEncoderConfig::ToyTransformer(c) = &self.text {
            if c.blocks == 0 || c.heads == 0 || c.hidden % c.heads != 0 || c.ffn_hidden == 0 {
                return Err(Error::Config(format!("invalid toy transformer dims {c:?}")));
            }
        }
        if !(self.grl_lambda >= 0.0) || !self.grl_lambda.is_finite() {
            return Err(Error::Config(format!("grl_lambda must be >= 0, got {}", self.grl_lambda)));
        }
        Ok(())
    }

    /// Total trainable scalars, or `None` on overflow. Lets a loader reject
    /// an inconsistent header before allocating the model.
    pub fn num_scalars(&self, vocab_len: usize) -> Option<usize> {
        fn lin(i: usize, o: usize) -> Option<usize> {
            i.checked_mul(o)?.checked_add(o)
        }
        fn ffn(i: usize, h: usize, o: usize) -> Option<usize> {
            lin(i, h)?.checked_add(lin(h, o)?)
        }
        fn mha(d: usize) -> Option<usize> {
            lin(d, d)?.checked_mul(4)
        }
        let h_t = self.text.dim();
        let g = self.gcn_hidden;
        let d = self.fusion_dim;
        let c = self.classifier_hidden;
        let mut total = 0usize;
        if self.ablation != Ablation::GraphOnly {
            if let TextEncoderConfig::ToyTransformer(t) = &self.text {
                let h = t.hidden;
                let block = mha(h)?.checked_add(4 * h)?.checked_add(ffn(h, t.ffn_hidden, h)?)?;
                total = vocab_len
                    .checked_add(t.max_len)?
                    .checked_mul(h)?
                    .checked_add(block.checked_mul(t.blocks)?)?;
            }
        }
        if self.ablation != Ablation::TextOnly {
            let rest = g.checked_mul(g)?.checked_mul(self.gcn_layers.checked_sub(1)?)?;
            total = total.checked_add(FEATURE_DIM.checked_mul(g)?)?.checked_add(rest)?;
        }
        total = total
            .checked_add(lin(g, d)?)?
            .checked_add(lin(h_t, d)?)?
            .checked_add(mha(d)?)?
            .checked_add(ffn(2 * d, c, 2)?)?;
        if self.dialect_head {
            total = total.checked_add(ffn(d.checked_mul(2)?, c, NUM_DIALECTS)?)?;
        }
        Some(total)
    }

    /// Names of dimension fields that differ between two configs.
    pub fn dim_mismatches(&self, other: &ModelConfig) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.text != other.text {
            out.push("text");
        }
        let pairs = [
            ("gcn_layers", self.gcn_layers, other.gcn_layers),
            ("gcn_hidden", self.gcn_hidden, other.gcn_hidden),
            ("fusion_dim", self.fusion_dim, other.fusion_dim),
            ("fusion_heads", self.fusion_heads, other.fusion_heads),
            ("classifier_hidden", self.classifier_hidden, other.classifier_hidden),
        ];
        out.extend(pairs.iter().filter(|(_, a, b)| a != b).map(|(n, _, _)| *n));
        if self.dialect_head != other.dialect_head {
            out.push("dialect_head");
        }
        if self.ablation != other.ablation {
            out.push("ablation");
        }
        out
    }
}

/// Text side of a prepared example.
#[derive(Debug, Clone, PartialEq)]
pub enum TextInput {
    /// `[CLS]` + word ids for the toy transformer.
    Ids(Vec<usize>),
    /// A precomputed sentence vector.
    Vector(Vec<f64>),
}

/// A sample turned into model inputs: text ids or vector, normalized
/// adjacency and node features.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: u8,
    pub dialect: DialectTag,
    pub text: TextInput,
    pub num_nodes: usize,
    /// `num_nodes x num_nodes`, row-major.
    pub adjacency: Vec<f64>,
    /// `num_nodes x FEATURE_DIM`, row-major.
    pub features: Vec<f64>,
}

impl Example {
    pub fn from_parts(sample: &Sample, text: TextInput, graph: &WordGraph) -> Self {
        Example {
            id: sample.id.clone(),
            label: sample.label,
            dialect: sample.dialect,
            text,
            num_nodes: graph.num_nodes(),
            adjacency: normalized_adjacency(graph),
            features: graph.feature_matrix(),
        }
    }
}

#[derive(Debug, Clone)]
enum TextBranch {
    Toy(ToyTransformer),
    Precomputed,
}

/// Output of the fusion block.
pub struct Fused {
    /// Flattened attended tokens, shape `[2 * fusion_dim]`.
    pub z_f: Var,
    /// The projected `[graph; text]` tokens, `2 x fusion_dim`.
    pub tokens: Var,
    /// Per-head `2 x 2` attention weights.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct FusionModel<T> {
    pub config: ModelConfig,
    pub vocab: Option<Vocab>,
    pub params: ParameterStore<T>,
    text: Option<TextBranch>,
    gcn: Vec<ParamId>,
    proj_graph: Linear,
    proj_text: Linear,
    fusion: MultiHeadAttention,
    task_head: FeedForward,
    dialect_head: Option<FeedForward>,
}

impl<T: Scalar> FusionModel<T> {
    /// Builds and initializes every parameter from `seed`. The toy text
    /// encoder needs a vocabulary.
    pub fn new(config: ModelConfig, vocab: Option<Vocab>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let mut b = Builder {
            store: &mut params,
            seeds: SeedStream::new(seed),
        };
        let h_t = config.text.dim();
        let h_g = config.gcn_hidden;
        let d = config.fusion_dim;

        let text = match (config.ablation, &config.text) {
            (Ablation::GraphOnly, _) => None,
            (_, TextEncoderConfig::ToyTransformer(c)) => {
                let v = vocab
                    .as_ref()
                    .ok_or_else(|| Error::Config("toy text encoder needs a vocabulary".into()))?;
                Some(TextBranch::Toy(ToyTransformer::new(&mut b, *c, v.len())?))
            }
            (_, TextEncoderConfig::Precomputed { .. }) => Some(TextBranch::Precomputed),
        };

        let mut gcn = Vec::new();
        if config.ablation != Ablation::TextOnly {
            for l in 0..config.gcn_layers {
                let fan_in = if l == 0 { FEATURE_DIM } else { h_g };
                gcn.push(b.weight(&format!("gcn.layer{l}.weight"), fan_in, h_g)?);
            }
        }

        let proj_graph = Linear::new(&mut b, "fusion.proj_graph", h_g, d)?;
        let proj_text = Linear::new(&mut b, "fusion.proj_text", h_t, d)?;
        let fusion = MultiHeadAttention::new(&mut b, "fusion.attn", d, config.fusion_heads)?;
        let task_head = FeedForward::new(&mut b, "task_head", 2 * d, config.classifier_hidden, 2)?;
        let dialect_head = if config.dialect_head {
            Some(FeedForward::new(&mut b, "dialect_head", 2 * d, config.classifier_hidden, NUM_DIALECTS)?)
        } else {
            None
        };

        Ok(FusionModel {
            config,
            vocab,
            params,
            text,
            gcn,
            proj_graph,
            proj_text,
            fusion,
            task_head,
            dialect_head,
        })
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> FusionModel<U> {
        let mut out = FusionModel::<U>::new(self.config, self.vocab.clone(), 0).expect("config already validated");
        for ((_, src), dst) in self.params.iter().zip(out.params.iter_mut()) {
            *dst.value_mut() = src.value().cast();
        }
        out
    }

    /// The same architecture running on another set of parameter values,
    /// e.g. a best-epoch snapshot. Names and shapes must line up.
    pub fn with_params(&self, params: ParameterStore<T>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((_, a), (_, b)) in self.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value().shape() != b.value().shape() {
                return Err(Error::InvalidArgument(format!("parameter {:?} does not match {:?}", b.name, a.name)));
            }
        }
        Ok(FusionModel {
            params,
            ..self.clone()
        })
    }

    pub fn has_dialect_head(&self) -> bool {
        self.dialect_head.is_some()
    }

    /// Parameters that belong to the dialect head.
    pub fn dialect_head_params(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, p)| p.name.starts_with("dialect_head."))
            .map(|(id, _)| id)
            .collect()
    }

    /// Converts a sample into model inputs.
    pub fn prepare(&self, sample: &Sample, graph: &GraphConfig, embeddings: Option<&PrecomputedEmbeddings>) -> Result<Example> {
        let text = match &self.config.text {
            TextEncoderConfig::ToyTransformer(c) => {
                let vocab = self
                    .vocab
                    .as_ref()
                    .ok_or_else(|| Error::Config("toy text encoder needs a vocabulary".into()))?;
                TextInput::Ids(vocab.encode(&sample.text, c.max_len)?)
            }
            TextEncoderConfig::Precomputed { dim } => {
                let e = embeddings.ok_or_else(|| Error::Config("precomputed text encoder needs an embeddings file".into()))?;
                let v = e.get(&sample.id)?;
                if v.len() != *dim {
                    return Err(Error::Config(format!(
                        "embedding for {:?} has length {}, model expects {dim}",
                        sample.id,
                        v.len()
                    )));
                }
                TextInput::Vector(v.to_vec())
            }
        };
        let g = graph_for_text(&sample.text, graph)?;
        Ok(Example::from_parts(sample, text, &g))
    }

    pub fn prepare_all(&self, samples: &[Sample], graph: &GraphConfig, embeddings: Option<&PrecomputedEmbeddings>) -> Result<Vec<Example>> {
        samples.iter().map(|s| self.prepare(s, graph, embeddings)).collect()
    }

    /// `z_t`, shape `[h_t]`.
    pub fn encode_text(&self, tape: &mut Tape<T>, ex: &Example) -> Result<Var> {
        let h_t = self.config.text.dim();
        match (&self.text, &ex.text) {
            (None, _) => Ok(tape.constant(Tensor::zeros(&[h_t]))),
            (Some(TextBranch::Toy(enc)), TextInput::Ids(ids)) => enc.forward(tape, &self.params, ids),
            (Some(TextBranch::Precomputed), TextInput::Vector(v)) => {
                if v.len() != h_t {
                    return Err(Error::Shape {
                        op: "encode_text",
                        lhs: vec![v.len()],
                        rhs: vec![h_t],
                    });
                }
                Ok(tape.constant(Tensor::from_f64(&[h_t], v)?))
            }
            _ => Err(Error::InvalidArgument(format!(
                "example {:?} does not match the configured text encoder",
                ex.id
            ))),
        }
    }

    /// `z_g = mean_rows(relu(Â ... relu(Â X W1) ... W_K))`, shape `[h_g]`.
    pub fn encode_graph(&self, tape: &mut Tape<T>, ex: &Example) -> Result<Var> {
        let n = ex.num_nodes;
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if self.gcn.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[self.config.gcn_hidden])));
        }
        let adj = tape.constant(Tensor::from_f64(&[n, n], &ex.adjacency)?);
        let mut h = tape.constant(Tensor::from_f64(&[n, FEATURE_DIM], &ex.features)?);
        for &w in &self.gcn {
            let w = tape.param(&self.params, w);
            let ah = tape.matmul(adj, h)?;
            let ahw = tape.matmul(ah, w)?;
            h = tape.relu(ahw);
        }
        tape.mean_pool_rows(h)
    }

    /// Projects both vectors into the fusion space and attends over `[graph; text]`.
    pub fn fuse(&self, tape: &mut Tape<T>, z_t: Var, z_g: Var) -> Result<Fused> {
        let g = self.proj_graph.forward(tape, &self.params, z_g)?;
        let t = self.proj_text.forward(tape, &self.params, z_t)?;
        self.attend(tape, g, t)
    }

    /// Self-attention over two projected tokens in the given order, flattened.
    pub fn attend(&self, tape: &mut Tape<T>, first: Var, second: Var) -> Result<Fused> {
        let tokens = tape.concat_rows(&[first, second])?;
        let att = self.fusion.forward(tape, &self.params, tokens)?;
        let z_f = tape.reshape(att.out, &[2 * self.config.fusion_dim])?;
        Ok(Fused {
            z_f,
            tokens,
            attention: att.weights,
        })
    }

    /// Text encoder, graph encoder and fusion for one example.
    pub fn represent(&self, tape: &mut Tape<T>, ex: &Example) -> Result<Fused> {
        let z_t = self.encode_text(tape, ex)?;
        let z_g = self.encode_graph(tape, ex)?;
        self.fuse(tape, z_t, z_g)
    }

    /// Task logits for a `B x 2d` (or `[2d]`) batch of fused vectors.
    pub fn task_logits(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        self.task_head.forward(tape, &self.params, z)
    }

    /// Dialect logits. With `reversal = Some(λ)` gradients crossing into the
    /// shared layers are multiplied by `-λ`; `None` is a plain head.
    pub fn dialect_logits(&self, tape: &mut Tape<T>, z: Var, reversal: Option<T>) -> Result<Var> {
        let head = self
            .dialect_head
            .as_ref()
            .ok_or_else(|| Error::Config("model has no dialect head".into()))?;
        let input = match reversal {
            Some(lambda) => tape.grad_reverse(z, lambda)?,
            None => z,
        };
        head.forward(tape, &self.params, input)
    }

    /// Two task logits for one example.
    pub fn forward_task(&self, ex: &Example) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let f = self.represent(&mut tape, ex)?;
        let logits = self.task_logits(&mut tape, f.z_f)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Five dialect logits for one example through the reversal layer.
    pub fn forward_dialect(&self, ex: &Example) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let f = self.represent(&mut tape, ex)?;
        let lambda = T::of(self.config.grl_lambda);
        let logits = self.dialect_logits(&mut tape, f.z_f, Some(lambda))?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// `z_f` for one example.
    pub fn embed(&self, ex: &Example) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let f = self.represent(&mut tape, ex)?;
        Ok(tape.value(f.z_f).data().to_vec())
    }

    /// Argmax of the task logits; ties go to class 0.
    pub fn predict(&self, ex: &Example) -> Result<u8> {
        let l = self.forward_task(ex)?;
        Ok(u8::from(l[1] > l[0]))
    }
}
