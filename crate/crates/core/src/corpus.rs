//! Commonsense samples: loading, normalization, pair decoupling,
//! deduplication, stratified splitting and tallies.
//!
//! A *pair* is a two-choice instance (one sentence makes sense, the other
//! does not). Training works on single sentences, so each pair is decoupled
//! into two [`Sample`]s labeled 1 (reasonable) and 0 (non-reasonable).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::rng::SeedStream;

const TATWEEL: char = '\u{0640}';

/// Dialect of a sample. Serialized as the short codes used in sample files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DialectTag {
    #[serde(rename = "msa")]
    Msa,
    #[serde(rename = "egy")]
    Egyptian,
    #[serde(rename = "glf")]
    Gulf,
    #[serde(rename = "lev")]
    Levantine,
    #[serde(rename = "mor")]
    Moroccan,
}

impl DialectTag {
    pub const ALL: [DialectTag; 5] = [
        DialectTag::Msa,
        DialectTag::Egyptian,
        DialectTag::Gulf,
        DialectTag::Levantine,
        DialectTag::Moroccan,
    ];

    /// The four regional dialects targeted by expansion.
    pub const REGIONAL: [DialectTag; 4] = [
        DialectTag::Egyptian,
        DialectTag::Gulf,
        DialectTag::Levantine,
        DialectTag::Moroccan,
    ];

    pub fn code(self) -> &'static str {
        match self {
            DialectTag::Msa => "msa",
            DialectTag::Egyptian => "egy",
            DialectTag::Gulf => "glf",
            DialectTag::Levantine => "lev",
            DialectTag::Moroccan => "mor",
        }
    }

    pub fn english_name(self) -> &'static str {
        match self {
            DialectTag::Msa => "MSA",
            DialectTag::Egyptian => "Egyptian",
            DialectTag::Gulf => "Gulf",
            DialectTag::Levantine => "Levantine",
            DialectTag::Moroccan => "Moroccan",
        }
    }

    pub fn arabic_name(self) -> &'static str {
        match self {
            DialectTag::Msa => "الفصحى",
            DialectTag::Egyptian => "المصرية",
            DialectTag::Gulf => "الخليجية",
            DialectTag::Levantine => "الشامية",
            DialectTag::Moroccan => "المغربية",
        }
    }

    /// Position in [`DialectTag::ALL`]; the class index of the dialect head.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for DialectTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for DialectTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        DialectTag::ALL
            .into_iter()
            .find(|d| d.code() == lower || d.english_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dialect {s:?}")))
    }
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceTag {
    #[serde(rename = "ComVE_AR")]
    ComVeAr,
    #[serde(rename = "ArabicSense")]
    ArabicSense,
    #[serde(rename = "Synthetic")]
    Synthetic,
}

impl SourceTag {
    pub const ALL: [SourceTag; 3] = [SourceTag::ComVeAr, SourceTag::ArabicSense, SourceTag::Synthetic];

    pub fn name(self) -> &'static str {
        match self {
            SourceTag::ComVeAr => "ComVE_AR",
            SourceTag::ArabicSense => "ArabicSense",
            SourceTag::Synthetic => "Synthetic",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which sentence of a pair is the sensible one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
}

/// A two-choice source record before decoupling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairInstance {
    pub id: String,
    pub sent_a: String,
    pub sent_b: String,
    pub correct: Choice,
    pub source: SourceTag,
}

/// One labeled sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub text: String,
    /// 1 = reasonable, 0 = non-reasonable.
    pub label: u8,
    pub dialect: DialectTag,
    pub source: SourceTag,
    pub parent_id: Option<String>,
}

impl Sample {
    /// Checks the per-record invariants.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidArgument("sample id is empty".into()));
        }
        if self.label > 1 {
            return Err(Error::InvalidArgument(format!(
                "sample {:?}: label must be 0 or 1, got {}",
                self.id, self.label
            )));
        }
        if normalize_text(&self.text).is_empty() {
            return Err(Error::InvalidArgument(format!(
                "sample {:?}: text is empty after normalization",
                self.id
            )));
        }
        if self.dialect != DialectTag::Msa && self.parent_id.is_none() {
            return Err(Error::InvalidArgument(format!(
                "sample {:?}: dialectal sample without parent_id",
                self.id
            )));
        }
        Ok(())
    }
}

/// NFC, tatweel removal, whitespace collapse and trim.
///
/// Diacritics are kept.
pub fn normalize_text(text: &str) -> String {
    let composed: String = text.chars().filter(|&c| c != TATWEEL).nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Splits each pair into two samples: the sensible sentence labeled 1 and
/// its counterpart labeled 0. Child ids are `<pair_id>#a` and `<pair_id>#b`.
pub fn decouple_pairs(pairs: &[PairInstance]) -> Result<Vec<Sample>> {
    let mut seen = HashSet::with_capacity(pairs.len());
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for pair in pairs {
        if !seen.insert(pair.id.as_str()) {
            return Err(Error::DuplicateId(pair.id.clone()));
        }
        for (suffix, raw, choice) in [("a", &pair.sent_a, Choice::A), ("b", &pair.sent_b, Choice::B)] {
            let text = normalize_text(raw);
            if text.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "pair {:?}: sentence {suffix} is empty",
                    pair.id
                )));
            }
            out.push(Sample {
                id: format!("{}#{suffix}", pair.id),
                text,
                label: u8::from(pair.correct == choice),
                dialect: DialectTag::Msa,
                source: pair.source,
                parent_id: None,
            });
        }
    }
    Ok(out)
}

/// Emitted by [`dedup`] when texts that collapse to the same key carry
/// different labels. The first occurrence wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelConflict {
    pub text: String,
    pub kept_id: String,
    pub kept_label: u8,
    pub dropped_id: String,
    pub dropped_label: u8,
}

/// Keeps the first occurrence of each normalized text, preserving order.
pub fn dedup(samples: &[Sample]) -> (Vec<Sample>, Vec<LabelConflict>) {
    let mut first: HashMap<String, usize> = HashMap::with_capacity(samples.len());
    let mut kept: Vec<Sample> = Vec::with_capacity(samples.len());
    let mut conflicts = Vec::new();
    for s in samples {
        let key = normalize_text(&s.text);
        match first.get(&key) {
            Some(&at) => {
                let k = &kept[at];
                if k.label != s.label {
                    log::warn!(
                        "dedup: {:?} and {:?} share text but disagree on label; keeping {:?}",
                        k.id,
                        s.id,
                        k.id
                    );
                    conflicts.push(LabelConflict {
                        text: key,
                        kept_id: k.id.clone(),
                        kept_label: k.label,
                        dropped_id: s.id.clone(),
                        dropped_label: s.label,
                    });
                }
            }
            None => {
                first.insert(key, kept.len());
                kept.push(s.clone());
            }
        }
    }
    (kept, conflicts)
}

/// Train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn parts(&self) -> [&[Sample]; 3] {
        [&self.train, &self.validation, &self.test]
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Stratified split by (label, dialect).
///
/// Samples are grouped by stratum, shuffled within each stratum, and then
/// dealt out in sequence to whichever split is furthest below its quota.
/// That keeps every prefix, and hence every stratum, within one sample of
/// the requested proportions and makes the overall sizes exact whenever
/// `ratio * n` is integral. A final pass guarantees that every split with a
/// nonzero ratio sees every dialect.
pub fn split(samples: &[Sample], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| !(0.0..=1.0).contains(&x) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("split ratios out of range: {r:?}")));
    }
    if ((r[0] + r[1] + r[2]) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios must sum to 1, got {r:?}")));
    }
    let mut ids = HashSet::with_capacity(samples.len());
    for s in samples {
        if !ids.insert(s.id.as_str()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
    }

    let mut strata: BTreeMap<(DialectTag, u8), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        strata.entry((s.dialect, s.label)).or_default().push(i);
    }

    let active = r.iter().filter(|&&x| x > 0.0).count();
    let mut per_dialect: BTreeMap<DialectTag, usize> = BTreeMap::new();
    for ((d, _), members) in &strata {
        *per_dialect.entry(*d).or_default() += members.len();
    }
    for (d, n) in &per_dialect {
        if *n < active {
            return Err(Error::Stratify(format!(
                "dialect {d} has {n} samples but {active} non-empty splits need one each"
            )));
        }
    }

    let mut rng = SeedStream::new(seed).rng("split");
    let mut order = Vec::with_capacity(samples.len());
    for members in strata.values() {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        order.extend(m);
    }

    let mut assigned: [Vec<usize>; 3] = Default::default();
    let mut counts = [0usize; 3];
    for (k, &idx) in order.iter().enumerate() {
        let target = (0..3)
            .max_by(|&a, &b| {
                let da = r[a] * (k + 1) as f64 - counts[a] as f64;
                let db = r[b] * (k + 1) as f64 - counts[b] as f64;
                // ties go to the lower split index
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        counts[target] += 1;
        assigned[target].push(idx);
    }

    ensure_dialect_coverage(samples, &r, &mut assigned)?;

    let take = |v: &[usize]| v.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: take(&assigned[0]),
        validation: take(&assigned[1]),
        test: take(&assigned[2]),
        seed,
    })
}

fn ensure_dialect_coverage(samples: &[Sample], r: &[f64; 3], assigned: &mut [Vec<usize>; 3]) -> Result<()> {
    let dialects: Vec<DialectTag> = {
        let mut set: Vec<_> = samples.iter().map(|s| s.dialect).collect();
        set.sort();
        set.dedup();
        set
    };
    let count = |part: &[usize], d: DialectTag| part.iter().filter(|&&i| samples[i].dialect == d).count();

    for j in 0..3 {
        if r[j] == 0.0 {
            continue;
        }
        for &d in &dialects {
            if count(&assigned[j], d) > 0 {
                continue;
            }
            // donor: the split holding the most samples of `d`
            let donor = (0..3)
                .filter(|&k| k != j)
                .max_by_key(|&k| (count(&assigned[k], d), std::cmp::Reverse(k)))
                .unwrap();
            if count(&assigned[donor], d) < 2 {
                return Err(Error::Stratify(format!(
                    "cannot place dialect {d} in every split"
                )));
            }
            let give_pos = assigned[donor]
                .iter()
                .rposition(|&i| samples[i].dialect == d)
                .unwrap();
            let give_label = samples[assigned[donor][give_pos]].label;
            // receiver side: swap out a sample whose dialect is over-represented,
            // preferring the same label to keep balance
            let candidates: Vec<usize> = (0..assigned[j].len())
                .rev()
                .filter(|&p| count(&assigned[j], samples[assigned[j][p]].dialect) >= 2)
                .collect();
            let take_pos = candidates
                .iter()
                .copied()
                .find(|&p| samples[assigned[j][p]].label == give_label)
                .or_else(|| candidates.first().copied());
            match take_pos {
                Some(p) => {
                    let a = assigned[donor][give_pos];
                    let b = assigned[j][p];
                    assigned[donor][give_pos] = b;
                    assigned[j][p] = a;
                }
                None => {
                    return Err(Error::Stratify(format!(
                        "split {j} is too small to hold every dialect (missing {d})"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Sample counts keyed by (source, dialect, label). Every key is present,
/// so an empty input yields an all-zero tally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    counts: BTreeMap<(SourceTag, DialectTag, u8), usize>,
}

impl Tally {
    pub fn get(&self, source: SourceTag, dialect: DialectTag, label: u8) -> usize {
        self.counts.get(&(source, dialect, label)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn by_dialect(&self, dialect: DialectTag) -> usize {
        self.counts
            .iter()
            .filter(|((_, d, _), _)| *d == dialect)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn by_source(&self, source: SourceTag) -> usize {
        self.counts
            .iter()
            .filter(|((s, _, _), _)| *s == source)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn by_label(&self, label: u8) -> usize {
        self.counts
            .iter()
            .filter(|((_, _, l), _)| *l == label)
            .map(|(_, n)| n)
            .sum()
    }

    /// Sum over everything that is not MSA.
    pub fn dialectal(&self) -> usize {
        self.total() - self.by_dialect(DialectTag::Msa)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(SourceTag, DialectTag, u8), &usize)> {
        self.counts.iter()
    }
}

impl fmt::Display for Tally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>8} {:>8} {:>8}", "source", "dialect", "label", "count")?;
        for ((s, d, l), n) in self.counts.iter().filter(|(_, n)| **n > 0) {
            writeln!(f, "{:<12} {:>8} {:>8} {:>8}", s.name(), d.code(), l, n)?;
        }
        write!(f, "total {}", self.total())
    }
}

pub fn tally(samples: &[Sample]) -> Tally {
    let mut counts = BTreeMap::new();
    for s in SourceTag::ALL {
        for d in DialectTag::ALL {
            for l in 0..=1u8 {
                counts.insert((s, d, l), 0);
            }
        }
    }
    for s in samples {
        *counts.entry((s.source, s.dialect, s.label)).or_insert(0) += 1;
    }
    Tally { counts }
}

/// Parses JSON-lines records of type `T`. Blank lines are skipped; CRLF is
/// accepted. Errors carry the 1-based line number.
pub fn parse_jsonl<T, F>(input: &str, source_name: &str, mut check: F) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    F: FnMut(&T) -> Result<()>,
{
    let mut out = Vec::new();
    for (i, line) in input.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_owned(),
            line: i + 1,
            message,
        };
        let rec: T = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        check(&rec).map_err(|e| parse_err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Parses a sample file's contents.
pub fn parse_samples(input: &str, source_name: &str) -> Result<Vec<Sample>> {
    parse_jsonl(input, source_name, Sample::validate)
}

/// Parses a pair file's contents.
pub fn parse_pairs(input: &str, source_name: &str) -> Result<Vec<PairInstance>> {
    parse_jsonl(input, source_name, |p: &PairInstance| {
        if p.id.is_empty() {
            return Err(Error::InvalidArgument("pair id is empty".into()));
        }
        if p.sent_a.trim().is_empty() || p.sent_b.trim().is_empty() {
            return Err(Error::InvalidArgument(format!("pair {:?} has an empty sentence", p.id)));
        }
        Ok(())
    })
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    BufReader::new(std::fs::File::open(path)?).read_to_string(&mut s)?;
    Ok(s)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    parse_samples(&read_to_string(path)?, &path.display().to_string())
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairInstance>> {
    let path = path.as_ref();
    parse_pairs(&read_to_string(path)?, &path.display().to_string())
}

/// Writes samples as JSON lines (LF endings).
pub fn write_samples(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_samples_to(samples, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_samples_to<W: Write>(samples: &[Sample], w: &mut W) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_pairs(pairs: &[PairInstance], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, text: &str, label: u8, dialect: DialectTag) -> Sample {
        Sample {
            id: id.into(),
            text: text.into(),
            label,
            dialect,
            source: SourceTag::Synthetic,
            parent_id: (dialect != DialectTag::Msa).then(|| format!("p-{id}")),
        }
    }

    fn pair(id: &str, a: &str, b: &str, correct: Choice) -> PairInstance {
        PairInstance {
            id: id.into(),
            sent_a: a.into(),
            sent_b: b.into(),
            correct,
            source: SourceTag::ComVeAr,
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("  كان  متعبًا "), "كان متعبًا");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("abـc"), "abc");
        assert_eq!(normalize_text("a\t\n b\u{00A0}c"), "a b c");
    }

    #[test]
    fn normalize_strips_tatweel_like_a_char_filter() {
        let input = "اـلـعـربـيـة";
        let oracle: String = input.chars().filter(|&c| c != '\u{0640}').collect();
        assert_eq!(normalize_text(input), oracle);
    }

    #[test]
    fn normalize_composes_to_nfc() {
        // alef + madda above composes to U+0622
        assert_eq!(normalize_text("\u{0627}\u{0653}"), "\u{0622}");
    }

    #[test]
    fn decouple_labels_follow_correct_choice() {
        let out = decouple_pairs(&[pair("p1", "X", "Y", Choice::A), pair("p2", "U", "V", Choice::B)]).unwrap();
        let got: Vec<_> = out.iter().map(|s| (s.id.as_str(), s.text.as_str(), s.label)).collect();
        assert_eq!(got, vec![("p1#a", "X", 1), ("p1#b", "Y", 0), ("p2#a", "U", 0), ("p2#b", "V", 1)]);
        assert!(out.iter().all(|s| s.dialect == DialectTag::Msa && s.parent_id.is_none()));
    }

    #[test]
    fn decouple_rejects_duplicate_ids() {
        let err = decouple_pairs(&[pair("dup", "a", "b", Choice::A), pair("dup", "c", "d", Choice::B)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "dup"), "{err}");
    }

    #[test]
    fn decouple_counts_match_source_sizes() {
        for (n, expected) in [(11_000usize, 22_000usize), (5_650, 11_300)] {
            let pairs: Vec<_> = (0..n)
                .map(|i| pair(&format!("p{i}"), &format!("a{i}"), &format!("b{i}"), Choice::A))
                .collect();
            assert_eq!(decouple_pairs(&pairs).unwrap().len(), expected);
        }
    }

    #[test]
    fn dedup_keeps_first_and_reports_conflicts() {
        let input = vec![
            sample("1", "t1", 1, DialectTag::Msa),
            sample("2", "t1", 1, DialectTag::Msa),
            sample("3", "t2", 0, DialectTag::Msa),
        ];
        let (kept, conflicts) = dedup(&input);
        assert_eq!(kept, vec![input[0].clone(), input[2].clone()]);
        assert!(conflicts.is_empty());

        let input = vec![sample("1", "t1", 1, DialectTag::Msa), sample("2", " t1 ", 0, DialectTag::Msa)];
        let (kept, conflicts) = dedup(&input);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "1");
        assert_eq!(conflicts.len(), 1);
        assert_eq!(conflicts[0].dropped_id, "2");
    }

    #[test]
    fn dedup_identity_without_duplicates() {
        let input: Vec<_> = (0..20).map(|i| sample(&i.to_string(), &format!("t{i}"), (i % 2) as u8, DialectTag::Msa)).collect();
        assert_eq!(dedup(&input).0, input);
    }

    #[test]
    fn dedup_matches_bruteforce_count() {
        // 187 distinct texts plus 13 exact repeats
        let mut input: Vec<Sample> = (0..187).map(|i| sample(&format!("u{i}"), &format!("text {i}"), 1, DialectTag::Msa)).collect();
        for k in 0..13 {
            let src = input[k * 11].clone();
            input.insert(k * 7 + 3, Sample { id: format!("d{k}"), ..src });
        }
        assert_eq!(input.len(), 200);
        // oracle: a sample survives iff no earlier sample has the same text
        let oracle = (0..input.len())
            .filter(|&i| (0..i).all(|j| input[j].text != input[i].text))
            .count();
        assert_eq!(oracle, 187);
        assert_eq!(dedup(&input).0.len(), oracle);
    }

    fn balanced(n: usize) -> Vec<Sample> {
        (0..n).map(|i| sample(&format!("s{i}"), &format!("t{i}"), (i % 2) as u8, DialectTag::Msa)).collect()
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let s = split(&balanced(100), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(s.sizes(), (80, 10, 10));
        assert_eq!(s, split(&balanced(100), (0.8, 0.1, 0.1), 7).unwrap());
        assert_ne!(s.train, split(&balanced(100), (0.8, 0.1, 0.1), 8).unwrap().train);
    }

    #[test]
    fn split_covers_every_dialect() {
        let mut input = Vec::new();
        for (di, d) in DialectTag::ALL.into_iter().enumerate() {
            for l in 0..2u8 {
                for k in 0..4 {
                    input.push(sample(&format!("{di}-{l}-{k}"), &format!("x{di}{l}{k}"), l, d));
                }
            }
        }
        assert_eq!(input.len(), 40);
        let s = split(&input, (0.5, 0.25, 0.25), 3).unwrap();
        for part in s.parts() {
            for d in DialectTag::ALL {
                assert!(part.iter().any(|x| x.dialect == d), "{d} missing");
            }
        }
    }

    #[test]
    fn split_rejects_impossible_strata() {
        let input = vec![
            sample("a", "a", 1, DialectTag::Gulf),
            sample("b", "b", 0, DialectTag::Gulf),
            sample("c", "c", 1, DialectTag::Msa),
            sample("d", "d", 0, DialectTag::Msa),
            sample("e", "e", 0, DialectTag::Msa),
        ];
        let err = split(&input, (0.5, 0.25, 0.25), 1).unwrap_err();
        assert!(err.to_string().contains("glf"), "{err}");
    }

    #[test]
    fn split_rejects_bad_ratios() {
        assert!(split(&balanced(10), (0.5, 0.5, 0.5), 1).is_err());
    }

    #[test]
    fn tally_counts() {
        let t = tally(&[]);
        assert_eq!(t.total(), 0);
        assert!(t.iter().all(|(_, &n)| n == 0));
        assert_eq!(t.iter().count(), 30);

        let t = tally(&[sample("1", "a", 1, DialectTag::Msa), sample("2", "b", 0, DialectTag::Gulf)]);
        assert_eq!(t.total(), 2);
        assert_eq!(t.get(SourceTag::Synthetic, DialectTag::Gulf, 0), 1);
        assert_eq!(t.dialectal(), 1);
    }

    #[test]
    fn sample_file_format() {
        let s = Sample {
            id: "x#a".into(),
            text: "نص".into(),
            label: 1,
            dialect: DialectTag::Levantine,
            source: SourceTag::ArabicSense,
            parent_id: Some("x".into()),
        };
        let line = serde_json::to_string(&s).unwrap();
        assert_eq!(
            line,
            r#"{"id":"x#a","text":"نص","label":1,"dialect":"lev","source":"ArabicSense","parent_id":"x"}"#
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let good = r#"{"id":"a","text":"t","label":1,"dialect":"msa","source":"Synthetic","parent_id":null}"#;
        let missing = r#"{"id":"b","text":"t","dialect":"msa","source":"Synthetic","parent_id":null}"#;
        let input = format!("{good}\n{missing}\n");
        match parse_samples(&input, "f.jsonl").unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("label"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
        let bad_dialect = good.replace("\"msa\"", "\"xyz\"");
        assert!(matches!(parse_samples(&bad_dialect, "f").unwrap_err(), Error::Parse { line: 1, .. }));
        let bad_label = good.replace("\"label\":1", "\"label\":2");
        assert!(parse_samples(&bad_label, "f").is_err());
    }

    #[test]
    fn crlf_parses_like_lf() {
        let lf = "{\"id\":\"a\",\"text\":\"t\",\"label\":1,\"dialect\":\"msa\",\"source\":\"Synthetic\",\"parent_id\":null}\n\
                  {\"id\":\"b\",\"text\":\"u\",\"label\":0,\"dialect\":\"egy\",\"source\":\"Synthetic\",\"parent_id\":\"a\"}\n";
        let crlf = lf.replace('\n', "\r\n");
        assert_eq!(crlf.replace("\r\n", "\n").as_bytes(), lf.as_bytes());
        assert_eq!(parse_samples(&crlf, "x").unwrap(), parse_samples(lf, "x").unwrap());
    }

    #[test]
    fn pair_file_format() {
        let p: PairInstance = serde_json::from_str(r#"{"id":"1","sent_a":"x","sent_b":"y","correct":"b","source":"ArabicSense"}"#).unwrap();
        assert_eq!(p.correct, Choice::B);
        assert!(parse_pairs(r#"{"id":"1","sent_a":"","sent_b":"y","correct":"b","source":"ArabicSense"}"#, "p").is_err());
    }
}
