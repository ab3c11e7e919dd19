//! Text encoders: a small trainable transformer with a CLS readout, or a
//! table of precomputed per-sample vectors.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Builder, FeedForward, LayerNorm, MultiHeadAttention};
use crate::autodiff::{ParamId, ParameterStore, Scalar, Tape, Var};
use crate::corpus::{parse_jsonl, Sample};
use crate::error::{Error, Result};
use crate::graph::tokenize;

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const UNK_ID: usize = 0;
pub const CLS_ID: usize = 1;

/// Word to id map. Ids 0 and 1 are reserved for `[UNK]` and `[CLS]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_words(Vec::<String>::new()).unwrap()
    }
}

impl Vocab {
    /// All words of the given samples in first-occurrence order.
    pub fn build<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut v = Vocab::default();
        for s in samples {
            for t in tokenize(&s.text).into_vec() {
                if !v.index.contains_key(&t) {
                    v.index.insert(t.clone(), v.words.len());
                    v.words.push(t);
                }
            }
        }
        v
    }

    /// Rebuilds from a word list that may or may not start with the reserved entries.
    pub fn from_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut all: Vec<String> = words.into_iter().map(Into::into).collect();
        if all.first().map(String::as_str) != Some(UNK) {
            all.insert(0, CLS.to_owned());
            all.insert(0, UNK.to_owned());
        }
        if all.len() < 2 || all[0] != UNK || all[1] != CLS {
            return Err(Error::InvalidArgument("vocab must start with [UNK], [CLS]".into()));
        }
        let mut index = HashMap::with_capacity(all.len());
        for (i, w) in all.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::DuplicateId(w.clone()));
            }
        }
        Ok(Vocab { words: all, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `[CLS]` followed by the word ids, truncated to `max_len` positions.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<Vec<usize>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::NoTokens);
        }
        let mut ids = Vec::with_capacity(max_len.min(tokens.len() + 1));
        ids.push(CLS_ID);
        ids.extend(tokens.as_slice().iter().map(|t| self.id(t)));
        ids.truncate(max_len);
        Ok(ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTransformerConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Maximum positions including the leading CLS token.
    pub max_len: usize,
    pub ffn_hidden: usize,
}

impl Default for ToyTransformerConfig {
    fn default() -> Self {
        ToyTransformerConfig {
            hidden: 64,
            blocks: 2,
            heads: 4,
            max_len: 64,
            ffn_hidden: 128,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ffn: FeedForward,
    norm2: LayerNorm,
}

/// Post-norm transformer encoder over word ids; the sentence vector is the
/// final state at the CLS position.
#[derive(Debug, Clone)]
pub(crate) struct ToyTransformer {
    token_embed: ParamId,
    pos_embed: ParamId,
    blocks: Vec<Block>,
    pub cfg: ToyTransformerConfig,
}

impl ToyTransformer {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: ToyTransformerConfig, vocab_size: usize) -> Result<Self> {
        if cfg.max_len < 2 {
            return Err(Error::Config("toy transformer max_len must be >= 2".into()));
        }
        let h = cfg.hidden;
        let token_embed = b.weight("text.token_embed", vocab_size, h)?;
        let pos_embed = b.weight("text.pos_embed", cfg.max_len, h)?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let p = format!("text.block{i}");
            blocks.push(Block {
                attn: MultiHeadAttention::new(b, &format!("{p}.attn"), h, cfg.heads)?,
                norm1: LayerNorm::new(b, &format!("{p}.norm1"), h)?,
                ffn: FeedForward::new(b, &format!("{p}.ffn"), h, cfg.ffn_hidden, h)?,
                norm2: LayerNorm::new(b, &format!("{p}.norm2"), h)?,
            });
        }
        Ok(ToyTransformer {
            token_embed,
            pos_embed,
            blocks,
            cfg,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParameterStore<T>, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::NoTokens);
        }
        let ids = &ids[..ids.len().min(self.cfg.max_len)];
        let table = tape.param(store, self.token_embed);
        let tokens = tape.gather_rows(table, ids)?;
        let pos_table = tape.param(store, self.pos_embed);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather_rows(pos_table, &positions)?;
        let mut x = tape.add(tokens, pos)?;
        for block in &self.blocks {
            let a = block.attn.forward(tape, store, x)?.out;
            let r = tape.add(x, a)?;
            x = block.norm1.forward(tape, store, r)?;
            let f = block.ffn.forward(tape, store, x)?;
            let r = tape.add(x, f)?;
            x = block.norm2.forward(tape, store, r)?;
        }
        let cls = tape.slice_rows(x, 0, 1)?;
        tape.reshape(cls, &[self.cfg.hidden])
    }
}

/// One line of an embeddings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Per-sample text vectors loaded from a JSON-lines file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.vector.len());
        let mut vectors = HashMap::with_capacity(records.len());
        for r in records {
            if r.vector.len() != dim || dim == 0 {
                return Err(Error::InvalidArgument(format!(
                    "embedding {:?} has length {}, expected {dim}",
                    r.id,
                    r.vector.len()
                )));
            }
            if r.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding {:?}", r.id)));
            }
            if vectors.insert(r.id.clone(), r.vector).is_some() {
                return Err(Error::DuplicateId(r.id));
            }
        }
        Ok(PrecomputedEmbeddings { dim, vectors })
    }

    pub fn parse(input: &str, source_name: &str) -> Result<Self> {
        let records = parse_jsonl(input, source_name, |_: &EmbeddingRecord| Ok(()))?;
        Self::from_records(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(id.to_owned()))
    }

    pub fn insert(&mut self, id: &str, vector: Vec<f64>) -> Result<()> {
        if self.dim == 0 {
            self.dim = vector.len();
        }
        if vector.len() != self.dim {
            return Err(Error::InvalidArgument(format!("embedding {id:?} has wrong length")));
        }
        self.vectors.insert(id.to_owned(), vector);
        Ok(())
    }

    /// Records sorted by id.
    pub fn records(&self) -> Vec<EmbeddingRecord> {
        let mut out: Vec<_> = self
            .vectors
            .iter()
            .map(|(id, v)| EmbeddingRecord {
                id: id.clone(),
                vector: v.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_reserves_unk_and_cls() {
        let s = Sample {
            id: "a".into(),
            text: "قط كلب قط".into(),
            label: 1,
            dialect: crate::corpus::DialectTag::Msa,
            source: crate::corpus::SourceTag::Synthetic,
            parent_id: None,
        };
        let v = Vocab::build([&s]);
        assert_eq!(v.words(), &["[UNK]", "[CLS]", "قط", "كلب"]);
        assert_eq!(v.encode("قط حصان", 10).unwrap(), vec![CLS_ID, 2, UNK_ID]);
        assert_eq!(v.encode("قط كلب قط كلب", 3).unwrap().len(), 3);
        assert!(matches!(v.encode(" ... ", 10), Err(Error::NoTokens)));
        assert_eq!(Vocab::from_words(v.words().to_vec()).unwrap(), v);
    }

    #[test]
    fn embeddings_parse_and_validate() {
        let e = PrecomputedEmbeddings::parse("{\"id\":\"s1\",\"vector\":[0.5,-1.0]}\n{\"id\":\"s2\",\"vector\":[1,2]}\n", "e").unwrap();
        assert_eq!(e.dim(), 2);
        assert_eq!(e.get("s1").unwrap(), &[0.5, -1.0]);
        match e.get("nope") {
            Err(Error::MissingEmbedding(id)) => assert_eq!(id, "nope"),
            other => panic!("{other:?}"),
        }
        assert!(PrecomputedEmbeddings::parse("{\"id\":\"a\",\"vector\":[1]}\n{\"id\":\"b\",\"vector\":[1,2]}", "e").is_err());
        assert!(PrecomputedEmbeddings::parse("{\"id\":\"a\",\"vector\":[1]}\n{\"id\":\"a\",\"vector\":[2]}", "e").is_err());
    }
}
