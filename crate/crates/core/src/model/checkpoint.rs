//! Checkpoint files: one line of compact JSON header, then the parameter
//! values as little-endian `f32` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FusionModel, ModelConfig, Vocab};
use crate::autodiff::{Precision, Scalar, Tensor};
use crate::error::{Error, Result};

const FORMAT: &str = "graphfuse-checkpoint";
const VERSION: u32 = 1;
/// Guards the decoder against absurd headers.
const MAX_HEADER_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Fixed facts about the fusion wiring, recorded so a reader knows what
/// the parameter names mean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionWiring {
    pub token_order: Vec<String>,
    pub projection_bias: bool,
    pub attention_output_projection: bool,
}

impl Default for FusionWiring {
    fn default() -> Self {
        FusionWiring {
            token_order: vec!["graph".into(), "text".into()],
            projection_bias: true,
            attention_output_projection: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    /// Precision of the payload.
    pub precision: Precision,
    pub model: ModelConfig,
    pub fusion: FusionWiring,
    #[serde(default)]
    pub vocab: Option<Vec<String>>,
    pub params: Vec<ParamShape>,
    /// Whatever run configuration produced the checkpoint.
    #[serde(default)]
    pub config: serde_json::Value,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: FusionModel<f32>,
}

pub fn encode_checkpoint<T: Scalar>(model: &FusionModel<T>, config: &serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        precision: Precision::Single,
        model: model.config,
        fusion: FusionWiring::default(),
        vocab: model.vocab.as_ref().map(|v| v.words().to_vec()),
        params: model
            .params
            .iter()
            .map(|(_, p)| ParamShape {
                name: p.name.clone(),
                shape: p.value().shape().to_vec(),
            })
            .collect(),
        config: config.clone(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(model.params.num_scalars() * 4);
    for (_, p) in model.params.iter() {
        for x in p.value().data() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let nl = bytes
        .iter()
        .take(MAX_HEADER_BYTES)
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(format!("unknown format {:?}", header.format)));
    }
    if header.version != VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    if header.precision != Precision::Single {
        return Err(bad("payload must be single precision".into()));
    }
    header.model.validate()?;
    let payload = &bytes[nl + 1..];
    if !payload.len().is_multiple_of(4) {
        return Err(bad(format!("payload length {} is not a multiple of 4", payload.len())));
    }
    let vocab = header.vocab.clone().map(Vocab::from_words).transpose()?;
    // Check the size implied by the config before allocating anything for it.
    let expected = header
        .model
        .num_scalars(vocab.as_ref().map_or(0, Vocab::len))
        .ok_or_else(|| bad("model dimensions overflow".into()))?;
    if expected != payload.len() / 4 {
        return Err(bad(format!(
            "payload holds {} values, model config needs {expected}",
            payload.len() / 4
        )));
    }

    let mut model = FusionModel::<f32>::new(header.model, vocab, 0)?;
    if model.params.len() != header.params.len() {
        return Err(bad(format!(
            "header lists {} parameters, model has {}",
            header.params.len(),
            model.params.len()
        )));
    }
    let mut offset = 0;
    for (p, want) in model.params.iter_mut().zip(&header.params) {
        if p.name != want.name || p.value().shape() != want.shape.as_slice() {
            return Err(bad(format!(
                "parameter {:?} {:?} does not match model parameter {:?} {:?}",
                want.name,
                want.shape,
                p.name,
                p.value().shape()
            )));
        }
        let n = p.value().numel();
        let data: Vec<f32> = payload[offset * 4..(offset + n) * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint parameter {:?}", want.name)));
        }
        *p.value_mut() = Tensor::new(&want.shape, data)?;
        offset += n;
    }
    Ok(Checkpoint { header, model })
}

pub fn save_checkpoint<T: Scalar>(model: &FusionModel<T>, config: &serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, config)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::{Ablation, TextEncoderConfig, ToyTransformerConfig};
    use super::*;
    use crate::corpus::{DialectTag, Sample, SourceTag};
    use crate::graph::GraphConfig;

    fn config(ablation: Ablation, dialect_head: bool) -> ModelConfig {
        ModelConfig {
            text: TextEncoderConfig::ToyTransformer(ToyTransformerConfig {
                hidden: 8,
                blocks: 2,
                heads: 2,
                max_len: 6,
                ffn_hidden: 12,
            }),
            gcn_layers: 3,
            gcn_hidden: 5,
            fusion_dim: 6,
            fusion_heads: 3,
            classifier_hidden: 7,
            dialect_head,
            grl_lambda: 0.5,
            ablation,
        }
    }

    fn vocab() -> Vocab {
        Vocab::from_words(["قط", "كلب", "بيت"]).unwrap()
    }

    #[test]
    fn closed_form_size_matches_built_model() {
        for ablation in [Ablation::Full, Ablation::TextOnly, Ablation::GraphOnly] {
            for head in [false, true] {
                let cfg = config(ablation, head);
                let m = FusionModel::<f32>::new(cfg, Some(vocab()), 0).unwrap();
                assert_eq!(cfg.num_scalars(vocab().len()), Some(m.params.num_scalars()), "{ablation:?} {head}");
            }
        }
        let pre = ModelConfig {
            text: TextEncoderConfig::Precomputed { dim: 11 },
            ..config(Ablation::Full, true)
        };
        let m = FusionModel::<f32>::new(pre, None, 0).unwrap();
        assert_eq!(pre.num_scalars(0), Some(m.params.num_scalars()));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = FusionModel::<f32>::new(config(Ablation::Full, true), Some(vocab()), 9).unwrap();
        let echo = serde_json::json!({"seed": 9});
        let bytes = encode_checkpoint(&m, &echo).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.header.config, echo);
        for ((_, a), (_, b)) in m.params.iter().zip(ck.model.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value(), b.value());
        }
        let s = Sample {
            id: "p".into(),
            text: "قط في بيت".into(),
            label: 1,
            dialect: DialectTag::Msa,
            source: SourceTag::Synthetic,
            parent_id: None,
        };
        let ex = m.prepare(&s, &GraphConfig::default(), None).unwrap();
        let a = m.forward_task(&ex).unwrap();
        let b = ck.model.forward_task(&ex).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = FusionModel::<f32>::new(config(Ablation::Full, false), Some(vocab()), 1).unwrap();
        let bytes = encode_checkpoint(&m, &serde_json::Value::Null).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 4]).is_err());
        assert!(decode_checkpoint(&bytes[..10]).is_err());
        assert!(decode_checkpoint(b"").is_err());
        let text = String::from_utf8_lossy(&bytes).replace("\"gcn_hidden\":5", "\"gcn_hidden\":4");
        assert!(decode_checkpoint(text.as_bytes()).is_err());
    }
}
