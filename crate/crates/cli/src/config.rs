use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use graphfuse::corpus::DialectTag;
use graphfuse::expander::{EndpointConfig, DEFAULT_SPOT_CHECK};
use graphfuse::graph::GraphConfig;
use graphfuse::model::{ModelConfig, PrecomputedEmbeddings, TextEncoderConfig, ToyTransformerConfig};
use graphfuse::train::TrainConfig;
use graphfuse::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Everything a run depends on. Loaded from JSON (missing fields take
/// defaults), then overridden by command-line flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub endpoint: EndpointConfig,
    /// Custom expansion prompt with `{dialect}` and `{sentence}` slots.
    pub prompt_template: Option<String>,
    pub dialects: Vec<DialectTag>,
    pub spotcheck_n: usize,
    pub embeddings: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            split: [0.8, 0.1, 0.1],
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            endpoint: EndpointConfig::default(),
            prompt_template: None,
            dialects: DialectTag::REGIONAL.to_vec(),
            spotcheck_n: DEFAULT_SPOT_CHECK,
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TextEncoderFlag {
    Toy,
    Precomputed,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration; flags win over file values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Co-occurrence window size.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Train against the dialect discriminator through gradient reversal.
    #[arg(long, global = true)]
    pub adversarial: bool,
    /// Gradient reversal strength.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub weight_decay: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub text_encoder: Option<TextEncoderFlag>,
    /// JSONL file of precomputed sentence vectors.
    #[arg(long, global = true, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
}

/// Recursive JSON merge. Objects merge key by key; anything else is
/// replaced. Tagged objects whose `mode` differs are replaced whole so a
/// text encoder switch does not inherit the other variant's fields.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let switched = matches!((b.get("mode"), p.get("mode")), (Some(x), Some(y)) if x != y);
            if switched {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Layers the config file and the flags over `base`, then resolves
    /// derived fields. Embeddings are loaded when the text encoder needs them.
    pub fn resolve(base: Value, flags: &Overrides) -> Result<(RunConfig, Option<PrecomputedEmbeddings>)> {
        let mut v = base;
        if let Some(path) = &flags.config {
            merge(&mut v, read_json(path)?);
        }
        let mut cfg: RunConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.apply(flags);
        let emb = cfg.finish()?;
        Ok((cfg, emb))
    }

    pub fn from_flags(flags: &Overrides) -> Result<(RunConfig, Option<PrecomputedEmbeddings>)> {
        Self::resolve(serde_json::to_value(RunConfig::default())?, flags)
    }

    fn apply(&mut self, f: &Overrides) {
        if let Some(s) = f.seed {
            self.seed = s;
        }
        if let Some(w) = f.window {
            self.graph.window = w;
        }
        if f.adversarial {
            self.train.adversarial = true;
        }
        if let Some(l) = f.lambda {
            self.train.lambda_adv = l;
        }
        if let Some(e) = f.epochs {
            self.train.epochs = e;
        }
        if let Some(b) = f.batch_size {
            self.train.batch_size = b;
        }
        if let Some(lr) = f.lr {
            self.train.learning_rate = lr;
        }
        if let Some(wd) = f.weight_decay {
            self.train.weight_decay = wd;
        }
        match (f.text_encoder, &self.model.text) {
            (Some(TextEncoderFlag::Toy), TextEncoderConfig::Precomputed { .. }) => {
                self.model.text = TextEncoderConfig::ToyTransformer(ToyTransformerConfig::default());
            }
            (Some(TextEncoderFlag::Precomputed), TextEncoderConfig::ToyTransformer(_)) => {
                self.model.text = TextEncoderConfig::Precomputed { dim: 0 };
            }
            _ => {}
        }
        if let Some(p) = &f.embeddings {
            self.embeddings = Some(p.clone());
        }
    }

    fn finish(&mut self) -> Result<Option<PrecomputedEmbeddings>> {
        self.train.seed = self.seed;
        if self.train.adversarial {
            self.model.dialect_head = true;
        }
        // one knob: the reversal used in training is the one stored with the model
        self.model.grl_lambda = self.train.lambda_adv;
        self.graph.validate()?;
        self.train.validate()?;
        self.endpoint.validate()?;
        let emb = match &mut self.model.text {
            TextEncoderConfig::Precomputed { dim } => {
                let path = self
                    .embeddings
                    .as_ref()
                    .ok_or_else(|| Error::Config("the precomputed text encoder needs --embeddings".into()))?;
                let emb = PrecomputedEmbeddings::load(path)?;
                if *dim == 0 {
                    *dim = emb.dim();
                } else if *dim != emb.dim() {
                    return Err(Error::Config(format!(
                        "model.text.dim is {dim} but {} holds {}-dimensional vectors",
                        path.display(),
                        emb.dim()
                    )));
                }
                Some(emb)
            }
            TextEncoderConfig::ToyTransformer(_) => None,
        };
        self.model.validate()?;
        Ok(emb)
    }

    pub fn split_ratios(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_recursive_and_replaces_scalars() {
        let mut a = json!({"x": 1, "o": {"a": 1, "b": 2}});
        merge(&mut a, json!({"o": {"b": 3, "c": 4}, "y": [1]}));
        assert_eq!(a, json!({"x": 1, "o": {"a": 1, "b": 3, "c": 4}, "y": [1]}));
    }

    #[test]
    fn mode_switch_replaces_the_whole_object() {
        let mut a = json!({"mode": "toy_transformer", "hidden": 8});
        merge(&mut a, json!({"mode": "precomputed", "dim": 4}));
        assert_eq!(a, json!({"mode": "precomputed", "dim": 4}));
    }

    #[test]
    fn flags_override_file_values_and_sync_lambda() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 5, "train": {"epochs": 9, "learning_rate": 0.5}, "graph": {"window": 4}}"#).unwrap();
        let flags = Overrides {
            config: Some(p),
            epochs: Some(2),
            lambda: Some(0.25),
            adversarial: true,
            ..Default::default()
        };
        let (cfg, emb) = RunConfig::from_flags(&flags).unwrap();
        assert!(emb.is_none());
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.graph.window, 4);
        assert!(cfg.model.dialect_head);
        assert_eq!(cfg.model.grl_lambda, 0.25);
        assert_eq!(cfg.train.lambda_adv, 0.25);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = RunConfig::resolve(json!({"sede": 1}), &Overrides::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let (cfg, _) = RunConfig::from_flags(&Overrides::default()).unwrap();
        let (again, _) = RunConfig::resolve(cfg.echo(), &Overrides::default()).unwrap();
        assert_eq!(cfg.echo(), again.echo());
    }
}
