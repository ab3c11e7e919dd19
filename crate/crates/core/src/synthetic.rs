//! Seeded synthetic corpora with known structure, used for smoke tests
//! and demos where the right answer is fixed by construction.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::corpus::{Choice, DialectTag, PairInstance, Sample, SourceTag};
use crate::model::{Ablation, ModelConfig, PrecomputedEmbeddings, TextEncoderConfig, ToyTransformerConfig};
use crate::rng::SeedStream;

const LETTERS: &[char] = &[
    'ب', 'ت', 'ج', 'د', 'ر', 'س', 'ش', 'ع', 'ف', 'ق', 'ك', 'ل', 'م', 'ن', 'ه', 'و',
];
const ARABIC_INDIC_DIGITS: &[char] = &['٠', '١', '٢', '٣', '٤', '٥', '٦', '٧', '٨', '٩'];

/// A fixture's samples and, for precomputed text vectors, their embeddings.
#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub embeddings: Option<PrecomputedEmbeddings>,
}

/// `n` distinct 3 to 5 letter pseudo-words.
pub fn pseudo_words(n: usize, seed: u64) -> Vec<String> {
    let mut rng = SeedStream::new(seed).rng("synthetic/words");
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(3..=5);
        let w: String = (0..len).map(|_| LETTERS[rng.random_range(0..LETTERS.len())]).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn sample(id: String, text: String, label: u8, dialect: DialectTag) -> Sample {
    let parent_id = (dialect != DialectTag::Msa).then(|| format!("{id}~msa"));
    Sample {
        id,
        text,
        label,
        dialect,
        source: SourceTag::Synthetic,
        parent_id,
    }
}

/// Random filler words with one class-indicating word inserted at a random
/// position; balanced labels.
fn signal_sentences(
    rng: &mut impl rand::Rng,
    n: usize,
    signal: [&str; 2],
    fillers: &[String],
) -> Vec<(String, u8)> {
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let len = rng.random_range(4..=8);
            let mut words: Vec<&str> = (0..len).map(|_| fillers.choose(rng).unwrap().as_str()).collect();
            let at = rng.random_range(0..=words.len());
            words.insert(at, signal[usize::from(label)]);
            (words.join(" "), label)
        })
        .collect()
}

/// Linearly separable MSA set over a 50-word vocabulary: two of the words
/// each mark one class and every sentence contains exactly one of them.
pub fn separable(n_train: usize, n_test: usize, seed: u64) -> SyntheticSet {
    let words = pseudo_words(50, seed);
    let signal = [words[0].as_str(), words[1].as_str()];
    let mut rng = SeedStream::new(seed).rng("synthetic/separable");
    let all = signal_sentences(&mut rng, n_train + n_test, signal, &words[2..]);
    let mut samples: Vec<Sample> = all
        .into_iter()
        .enumerate()
        .map(|(i, (text, label))| sample(format!("sep-{i}"), text, label, DialectTag::Msa))
        .collect();
    let test = samples.split_off(n_train);
    SyntheticSet {
        train: samples,
        test,
        embeddings: None,
    }
}

/// Small toy-encoder model sized for the synthetic sets.
pub fn toy_model_config(max_len: usize) -> ModelConfig {
    ModelConfig {
        text: TextEncoderConfig::ToyTransformer(ToyTransformerConfig {
            hidden: 16,
            blocks: 1,
            heads: 2,
            max_len,
            ffn_hidden: 32,
        }),
        gcn_layers: 2,
        gcn_hidden: 16,
        fusion_dim: 16,
        fusion_heads: 2,
        classifier_hidden: 16,
        dialect_head: false,
        grl_lambda: 1.0,
        ablation: Ablation::Full,
    }
}

/// Width of the text vectors in [`xor_fusion`].
pub const XOR_TEXT_DIM: usize = 4;
const XOR_VARIANTS: usize = 8;

/// Label = text cue XOR graph cue.
///
/// The text side is a precomputed vector that encodes only the text cue
/// (two distinct vectors in the whole set). The graph side is a sentence
/// whose co-occurrence graph carries the graph cue: with the cue on, a
/// digit token is woven through a repeating word cycle, giving a dense
/// graph with a numeric node; with it off, all words are distinct letters.
/// Every (text cue, graph sentence) combination appears equally often with
/// each label, so either modality alone is stuck at 0.5 while both together
/// determine the label exactly.
pub fn xor_fusion(n_train: usize, n_test: usize, seed: u64) -> SyntheticSet {
    let words = pseudo_words(6 * XOR_VARIANTS, seed);
    let mut rng = SeedStream::new(seed).rng("synthetic/xor");
    let graph_sentence = |cue: bool, variant: usize| -> String {
        let w = &words[variant * 6..variant * 6 + 6];
        if cue {
            let digit = ARABIC_INDIC_DIGITS[variant % ARABIC_INDIC_DIGITS.len()].to_string();
            [&w[0], &w[1], &digit, &w[0], &w[1], &digit, &w[0]]
                .map(String::as_str)
                .join(" ")
        } else {
            w.join(" ")
        }
    };
    let text_vector = |cue: bool| -> Vec<f64> {
        if cue {
            vec![1.0, 0.0, 0.5, -0.5]
        } else {
            vec![0.0, 1.0, -0.5, 0.5]
        }
    };

    let mut make = |n: usize, prefix: &str| -> Vec<(Sample, Vec<f64>)> {
        let mut out = Vec::with_capacity(n);
        let cells = 4 * XOR_VARIANTS;
        for i in 0..n {
            // cycle through every (text cue, graph cue, variant) cell
            let cell = i % cells;
            let (text_cue, graph_cue, variant) = (cell & 1 == 1, cell & 2 == 2, cell / 4);
            let label = u8::from(text_cue ^ graph_cue);
            let s = sample(format!("{prefix}-{i}"), graph_sentence(graph_cue, variant), label, DialectTag::Msa);
            out.push((s, text_vector(text_cue)));
        }
        out.shuffle(&mut rng);
        out
    };
    let train = make(n_train, "xor-train");
    let test = make(n_test, "xor-test");
    let mut emb = PrecomputedEmbeddings::default();
    for (s, v) in train.iter().chain(&test) {
        emb.insert(&s.id, v.clone()).expect("fixed width");
    }
    SyntheticSet {
        train: train.into_iter().map(|(s, _)| s).collect(),
        test: test.into_iter().map(|(s, _)| s).collect(),
        embeddings: Some(emb),
    }
}

/// Model sized for [`xor_fusion`] with the given ablation.
pub fn xor_model_config(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        text: TextEncoderConfig::Precomputed { dim: XOR_TEXT_DIM },
        gcn_layers: 2,
        gcn_hidden: 16,
        fusion_dim: 16,
        fusion_heads: 2,
        classifier_hidden: 16,
        dialect_head: false,
        grl_lambda: 1.0,
        ablation,
    }
}

/// Latin marker word per dialect. All markers have the same length and no
/// Arabic letters, so their node features are identical and only the text
/// encoder can tell them apart.
pub fn dialect_marker(dialect: DialectTag) -> &'static str {
    match dialect {
        DialectTag::Msa => "qva",
        DialectTag::Egyptian => "qvb",
        DialectTag::Gulf => "qvc",
        DialectTag::Levantine => "qvd",
        DialectTag::Moroccan => "qve",
    }
}

/// Separable-style task whose sentences also carry a dialect marker token;
/// dialects are balanced and independent of the label.
pub fn dialect_markers(n_train: usize, n_test: usize, seed: u64) -> SyntheticSet {
    let words = pseudo_words(50, seed);
    let signal = [words[0].as_str(), words[1].as_str()];
    let mut rng = SeedStream::new(seed).rng("synthetic/dialect");
    let all = signal_sentences(&mut rng, n_train + n_test, signal, &words[2..]);
    let mut samples: Vec<Sample> = all
        .into_iter()
        .enumerate()
        .map(|(i, (text, label))| {
            // labels alternate with period 2 and dialects with period 10
            let dialect = DialectTag::ALL[(i / 2) % DialectTag::ALL.len()];
            let mut words: Vec<&str> = text.split(' ').collect();
            let at = rng.random_range(0..=words.len());
            words.insert(at, dialect_marker(dialect));
            sample(format!("dm-{i}"), words.join(" "), label, dialect)
        })
        .collect();
    let test = samples.split_off(n_train);
    SyntheticSet {
        train: samples,
        test,
        embeddings: None,
    }
}

/// `n` two-choice pairs with distinct sentences and alternating answers.
pub fn pairs(n: usize, seed: u64) -> Vec<PairInstance> {
    let words = pseudo_words(40, seed);
    let mut rng = SeedStream::new(seed).rng("synthetic/pairs");
    (0..n)
        .map(|i| {
            let mut sentence = |tag: &str| {
                let body: Vec<&str> = (0..4).map(|_| words.choose(&mut rng).unwrap().as_str()).collect();
                // a unique suffix keeps every sentence distinct under dedup
                format!("{} {tag}{i}", body.join(" "))
            };
            let (a, b) = (sentence("أ"), sentence("ب"));
            PairInstance {
                id: format!("pair-{i}"),
                sent_a: a,
                sent_b: b,
                correct: if i % 2 == 0 { Choice::A } else { Choice::B },
                source: SourceTag::Synthetic,
            }
        })
        .collect()
}
