//! Per-sentence word co-occurrence graphs.
//!
//! Nodes are the unique words of a sentence in first-occurrence order; an
//! undirected edge joins two distinct words whenever some pair of their
//! occurrences lies within a sliding window of `w` tokens (`|i - j| <= w - 1`).
//! Each node carries an 8-component morphological feature vector.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::normalize_text;
use crate::error::{Error, Result};

/// Width of the node feature vector.
pub const FEATURE_DIM: usize = 8;

/// Current node-feature schema version.
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub window: usize,
    pub feature_version: u32,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            window: 3,
            feature_version: FEATURE_VERSION,
        }
    }
}

impl GraphConfig {
    pub fn with_window(window: usize) -> Result<Self> {
        let cfg = GraphConfig {
            window,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config(format!("window must be >= 2, got {}", self.window)));
        }
        if self.feature_version != FEATURE_VERSION {
            return Err(Error::Config(format!(
                "unsupported feature_version {} (this build knows {FEATURE_VERSION})",
                self.feature_version
            )));
        }
        Ok(())
    }
}

/// Surface words of a sentence. Never contains empty tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    /// Builds a sequence, dropping empty strings.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSequence {
            tokens: tokens.into_iter().map(Into::into).filter(|t: &String| !t.is_empty()).collect(),
        }
    }

    pub fn as_slice(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_vec(self) -> Vec<String> {
        self.tokens
    }
}

/// Punctuation stripped from token edges: ASCII punctuation plus the
/// Arabic and typographic marks that show up in the corpora.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{060C}' // ، comma
            | '\u{061B}' // ؛ semicolon
            | '\u{061F}' // ؟ question mark
            | '\u{066A}' // ٪ percent
            | '\u{066B}' | '\u{066C}'
            | '\u{06D4}' // ۔ full stop
            | '\u{00AB}' | '\u{00BB}' // « »
            | '\u{2018}'..='\u{201F}'
            | '\u{2026}' // …
            | '\u{2013}' | '\u{2014}'
            | '\u{00A1}' | '\u{00BF}'
            | '\u{00B7}'
        )
}

/// Normalizes, splits on Unicode whitespace and strips edge punctuation.
pub fn tokenize(text: &str) -> TokenSequence {
    let normalized = normalize_text(text);
    TokenSequence::new(
        normalized
            .split_whitespace()
            .map(|w| w.trim_matches(is_punctuation).to_owned()),
    )
}

/// `G = (V, E, X)` for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordGraph {
    pub nodes: Vec<String>,
    /// Undirected edges stored as `(i, j)` with `i < j`.
    pub edges: BTreeSet<(usize, usize)>,
    /// Row-major `|V| x FEATURE_DIM`.
    pub features: Vec<[f64; FEATURE_DIM]>,
}

impl WordGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// 0/1 symmetric adjacency without self-loops, row-major.
    pub fn adjacency(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut a = vec![0.0; n * n];
        for &(i, j) in &self.edges {
            a[i * n + j] = 1.0;
            a[j * n + i] = 1.0;
        }
        a
    }

    /// Features flattened row-major.
    pub fn feature_matrix(&self) -> Vec<f64> {
        self.features.iter().flat_map(|r| r.iter().copied()).collect()
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> WordGraph {
        assert_eq!(perm.len(), self.nodes.len());
        let n = self.nodes.len();
        let mut nodes = vec![String::new(); n];
        let mut features = vec![[0.0; FEATURE_DIM]; n];
        for i in 0..n {
            nodes[perm[i]] = self.nodes[i].clone();
            features[perm[i]] = self.features[i];
        }
        let edges = self
            .edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (perm[i], perm[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        WordGraph { nodes, edges, features }
    }
}

/// Builds the windowed co-occurrence graph.
pub fn build_cooccurrence_graph(tokens: &TokenSequence, cfg: &GraphConfig) -> Result<WordGraph> {
    cfg.validate()?;
    if tokens.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let ids: Vec<usize> = tokens
        .as_slice()
        .iter()
        .map(|t| {
            *index.entry(t.as_str()).or_insert_with(|| {
                nodes.push(t.clone());
                nodes.len() - 1
            })
        })
        .collect();

    let mut edges = BTreeSet::new();
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len().min(i + cfg.window) {
            let (a, b) = (ids[i], ids[j]);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
    }

    let features = nodes
        .iter()
        .map(|w| node_features(w))
        .collect::<Result<Vec<_>>>()?;
    Ok(WordGraph { nodes, edges, features })
}

/// Tokenize and build in one go.
pub fn graph_for_text(text: &str, cfg: &GraphConfig) -> Result<WordGraph> {
    build_cooccurrence_graph(&tokenize(text), cfg)
}

fn is_arabic_letter(c: char) -> bool {
    matches!(c,
        '\u{0621}'..='\u{063A}'
        | '\u{0641}'..='\u{064A}'
        | '\u{0671}'..='\u{06D3}'
        | '\u{06D5}'
        | '\u{06EE}'..='\u{06EF}'
        | '\u{06FA}'..='\u{06FC}'
        | '\u{06FF}')
}

fn is_decimal_digit(c: char) -> bool {
    c.is_ascii_digit() || matches!(c, '\u{0660}'..='\u{0669}' | '\u{06F0}'..='\u{06F9}')
}

/// Morphological features of a word:
///
/// | idx | feature |
/// |-----|---------|
/// | 0 | length in Unicode scalars |
/// | 1 | Arabic letters (tatweel, marks and digits excluded) |
/// | 2 | starts with the definite article ال |
/// | 3 | taa marbuta ة |
/// | 4 | alef forms ا أ إ آ |
/// | 5 | ي and ى |
/// | 6 | decimal digits (ASCII, Arabic-Indic, extended Arabic-Indic) |
/// | 7 | word is all digits |
pub fn node_features(word: &str) -> Result<[f64; FEATURE_DIM]> {
    if word.is_empty() {
        return Err(Error::InvalidArgument("node_features: empty word".into()));
    }
    let mut v = [0.0; FEATURE_DIM];
    let mut all_digits = true;
    for c in word.chars() {
        v[0] += 1.0;
        if is_arabic_letter(c) {
            v[1] += 1.0;
        }
        match c {
            '\u{0629}' => v[3] += 1.0,
            '\u{0627}' | '\u{0623}' | '\u{0625}' | '\u{0622}' => v[4] += 1.0,
            '\u{064A}' | '\u{0649}' => v[5] += 1.0,
            _ => {}
        }
        if is_decimal_digit(c) {
            v[6] += 1.0;
        } else {
            all_digits = false;
        }
    }
    v[2] = f64::from(u8::from(word.starts_with("\u{0627}\u{0644}")));
    v[7] = f64::from(u8::from(all_digits));
    Ok(v)
}

/// `D^-1/2 (A + I) D^-1/2`, row-major `|V| x |V|`.
pub fn normalized_adjacency(g: &WordGraph) -> Vec<f64> {
    let n = g.num_nodes();
    let mut a = g.adjacency();
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / a[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    a
}

/// One line of a graph dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub nodes: Vec<String>,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<f64>,
}

impl GraphRecord {
    pub fn new(id: &str, g: &WordGraph) -> Self {
        GraphRecord {
            id: id.to_owned(),
            nodes: g.nodes.clone(),
            edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
            features: g.feature_matrix(),
        }
    }

    /// Rebuilds the graph, checking that indices and shapes are consistent.
    pub fn to_graph(&self) -> Result<WordGraph> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if self.features.len() != n * FEATURE_DIM {
            return Err(Error::Shape {
                op: "graph record features",
                lhs: vec![self.features.len()],
                rhs: vec![n, FEATURE_DIM],
            });
        }
        let mut edges = BTreeSet::new();
        for &[i, j] in &self.edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidArgument(format!("bad edge ({i}, {j}) for {n} nodes")));
            }
            edges.insert((i.min(j), i.max(j)));
        }
        let features = self
            .features
            .chunks(FEATURE_DIM)
            .map(|c| <[f64; FEATURE_DIM]>::try_from(c).unwrap())
            .collect();
        Ok(WordGraph {
            nodes: self.nodes.clone(),
            edges,
            features,
        })
    }
}

pub fn write_graph_dump<W: Write>(records: &[GraphRecord], w: &mut W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_graph_dump(input: &str, source_name: &str) -> Result<Vec<GraphRecord>> {
    crate::corpus::parse_jsonl(input, source_name, |r: &GraphRecord| r.to_graph().map(|_| ()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> TokenSequence {
        TokenSequence::new(words.iter().copied())
    }

    fn edge_names(g: &WordGraph) -> BTreeSet<(String, String)> {
        g.edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (g.nodes[i].clone(), g.nodes[j].clone());
                if a < b { (a, b) } else { (b, a) }
            })
            .collect()
    }

    fn names(pairs: &[(&str, &str)]) -> BTreeSet<(String, String)> {
        pairs
            .iter()
            .map(|&(a, b)| if a < b { (a.into(), b.into()) } else { (b.into(), a.into()) })
            .collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("كان متعبًا.").into_vec(), vec!["كان", "متعبًا"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a,  b!").into_vec(), vec!["a", "b"]);
        assert_eq!(tokenize("« هل ذهبت؟ » ...").into_vec(), vec!["هل", "ذهبت"]);
    }

    #[test]
    fn window_three_example() {
        let g = build_cooccurrence_graph(&toks(&["w1", "w2", "w1", "w3"]), &GraphConfig::default()).unwrap();
        assert_eq!(g.nodes, vec!["w1", "w2", "w3"]);
        assert_eq!(edge_names(&g), names(&[("w1", "w2"), ("w2", "w3"), ("w1", "w3")]));
    }

    #[test]
    fn window_two_example() {
        let g = build_cooccurrence_graph(&toks(&["w1", "w2", "w1", "w3"]), &GraphConfig::with_window(2).unwrap()).unwrap();
        assert_eq!(edge_names(&g), names(&[("w1", "w2"), ("w1", "w3")]));
    }

    #[test]
    fn single_and_empty() {
        let g = build_cooccurrence_graph(&toks(&["solo"]), &GraphConfig::default()).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert!(g.edges.is_empty());
        assert!(matches!(
            build_cooccurrence_graph(&toks(&[]), &GraphConfig::default()),
            Err(Error::EmptyGraph)
        ));
        assert!(GraphConfig::with_window(1).is_err());
    }

    #[test]
    fn repeated_word_makes_no_self_loop() {
        let g = build_cooccurrence_graph(&toks(&["a", "a", "a"]), &GraphConfig::default()).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn feature_examples() {
        assert_eq!(node_features("123").unwrap(), [3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 1.0]);
        assert_eq!(node_features("ة").unwrap(), [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(node_features("").is_err());
    }

    #[test]
    fn feature_manual_tally() {
        // ا ل م ا ء: five letters, article prefix, two alefs
        let word = "الماء";
        let chars: Vec<char> = word.chars().collect();
        assert_eq!(chars, vec!['\u{0627}', '\u{0644}', '\u{0645}', '\u{0627}', '\u{0621}']);
        assert_eq!(node_features(word).unwrap(), [5.0, 5.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        // tanween is a mark, not a letter
        assert_eq!(node_features("متعبًا").unwrap()[..2], [6.0, 5.0]);
        assert_eq!(node_features("في").unwrap()[5], 1.0);
        assert_eq!(node_features("٣٤").unwrap()[6..], [2.0, 1.0]);
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn adjacency_examples() {
        let g = build_cooccurrence_graph(&toks(&["x"]), &GraphConfig::default()).unwrap();
        assert_eq!(normalized_adjacency(&g), vec![1.0]);

        let g = build_cooccurrence_graph(&toks(&["x", "y"]), &GraphConfig::default()).unwrap();
        assert!(close(&normalized_adjacency(&g), &[0.5, 0.5, 0.5, 0.5], 1e-15));

        // path x - y - z with degrees (with self-loops) 2, 3, 2
        let g = build_cooccurrence_graph(&toks(&["x", "y", "z"]), &GraphConfig::with_window(2).unwrap()).unwrap();
        let a = normalized_adjacency(&g);
        let s6 = 1.0 / 6f64.sqrt();
        let expected = [0.5, s6, 0.0, s6, 1.0 / 3.0, s6, 0.0, s6, 0.5];
        assert!(close(&a, &expected, 1e-12));
        assert_eq!(a[2], 0.0);
        for i in 0..3 {
            let row: f64 = a[i * 3..i * 3 + 3].iter().sum();
            assert!(row <= 1.21, "row {i} sums to {row}");
        }
    }

    #[test]
    fn dump_record_round_trip() {
        let g = graph_for_text("الماء بارد جدا 12", &GraphConfig::default()).unwrap();
        let rec = GraphRecord::new("s1", &g);
        let mut buf = Vec::new();
        write_graph_dump(std::slice::from_ref(&rec), &mut buf).unwrap();
        let back = parse_graph_dump(std::str::from_utf8(&buf).unwrap(), "dump").unwrap();
        assert_eq!(back, vec![rec]);
        assert_eq!(back[0].to_graph().unwrap(), g);
    }
}
