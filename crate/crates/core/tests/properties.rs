mod common;

use std::collections::HashSet;

use graphfuse::corpus::{self, normalize_text, DialectTag, Sample, SourceTag};
use graphfuse::graph::{self, build_cooccurrence_graph, tokenize, GraphConfig, GraphRecord, TokenSequence};
use graphfuse::model::{decode_checkpoint, Vocab};
use proptest::prelude::*;

/// A letter followed by letters, tatweel, tanween, digits or Latin.
fn arabic_word() -> impl Strategy<Value = String> {
    let first = prop::sample::select(vec!['ك', 'ت', 'ب', 'م', 'a']);
    let rest = prop::collection::vec(
        prop::sample::select(vec!['ك', 'ت', 'ب', 'م', 'د', 'ر', 'س', 'ة', 'ـ', 'ً', '٣', 'a', 'Z', '7']),
        0..5,
    );
    (first, rest).prop_map(|(f, r)| std::iter::once(f).chain(r).collect())
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(
        (arabic_word(), prop::sample::select(vec![" ", "  ", "\t", "، ", ". ", "\n"])),
        1..8,
    )
    .prop_map(|parts| parts.into_iter().map(|(w, sep)| w + sep).collect())
}

fn dialect() -> impl Strategy<Value = DialectTag> {
    prop::sample::select(DialectTag::ALL.to_vec())
}

fn samples(max: usize) -> impl Strategy<Value = Vec<Sample>> {
    prop::collection::vec((sentence(), 0u8..2, dialect()), 0..max).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (text, label, dialect))| Sample {
                id: format!("p{i}"),
                text,
                label,
                dialect,
                source: SourceTag::Synthetic,
                parent_id: (dialect != DialectTag::Msa).then(|| format!("m{i}")),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn normalization_is_idempotent(s in sentence()) {
        let once = normalize_text(&s);
        prop_assert_eq!(normalize_text(&once), once.clone());
        prop_assert!(!once.contains('ـ'));
        prop_assert!(!once.starts_with(' ') && !once.ends_with(' ') && !once.contains("  "));
    }

    #[test]
    fn dedup_keeps_first_of_each_key_in_order(input in samples(40)) {
        let (kept, conflicts) = corpus::dedup(&input);
        let keys: Vec<String> = kept.iter().map(|s| normalize_text(&s.text)).collect();
        prop_assert_eq!(keys.iter().collect::<HashSet<_>>().len(), keys.len());
        let all: HashSet<String> = input.iter().map(|s| normalize_text(&s.text)).collect();
        prop_assert_eq!(all.len(), kept.len());
        // kept is a subsequence of the input
        let mut it = input.iter();
        for k in &kept {
            prop_assert!(it.any(|s| s == k));
        }
        prop_assert_eq!(corpus::dedup(&kept).0, kept.clone());
        for c in conflicts {
            prop_assert_ne!(c.kept_label, c.dropped_label);
        }
    }

    #[test]
    fn split_partitions_and_stratifies(input in samples(120), seed in 0u64..1000) {
        let input: Vec<Sample> = input.into_iter().filter(|s| s.dialect != DialectTag::Msa).collect();
        let present: HashSet<DialectTag> = input.iter().map(|s| s.dialect).collect();
        match corpus::split(&input, (0.6, 0.2, 0.2), seed) {
            Ok(sp) => {
                let mut ids: Vec<&str> = sp.parts().iter().flat_map(|p| p.iter().map(|s| s.id.as_str())).collect();
                prop_assert_eq!(ids.len(), input.len());
                ids.sort_unstable();
                ids.dedup();
                prop_assert_eq!(ids.len(), input.len());
                for (part, r) in sp.parts().iter().zip([0.6, 0.2, 0.2]) {
                    prop_assert!((part.len() as f64 - r * input.len() as f64).abs() <= 1.0 + 1e-9);
                }
                for part in sp.parts() {
                    let seen: HashSet<DialectTag> = part.iter().map(|s| s.dialect).collect();
                    prop_assert_eq!(&seen, &present);
                }
                prop_assert_eq!(corpus::split(&input, (0.6, 0.2, 0.2), seed).unwrap(), sp);
            }
            Err(e) => prop_assert!(matches!(e, graphfuse::Error::Stratify(_)), "{}", e),
        }
    }

    #[test]
    fn sample_files_round_trip(input in samples(20)) {
        let mut buf = Vec::new();
        corpus::write_samples_to(&input, &mut buf).unwrap();
        let back = corpus::parse_samples(std::str::from_utf8(&buf).unwrap(), "mem").unwrap();
        prop_assert_eq!(back, input);
    }

    #[test]
    fn graph_edges_match_the_all_pairs_oracle(
        tokens in prop::collection::vec((0usize..20).prop_map(|i| format!("w{i}")), 1..16),
        window in 2usize..7,
    ) {
        let g = build_cooccurrence_graph(&TokenSequence::new(tokens.iter().cloned()), &GraphConfig::with_window(window).unwrap()).unwrap();
        prop_assert_eq!(common::word_edges(&g), common::edge_oracle(&tokens, window));
        let distinct: HashSet<&String> = tokens.iter().collect();
        prop_assert_eq!(g.num_nodes(), distinct.len());
    }

    #[test]
    fn graph_dump_round_trips(s in sentence()) {
        prop_assume!(!tokenize(&s).is_empty());
        let g = graph::graph_for_text(&s, &GraphConfig::default()).unwrap();
        let mut buf = Vec::new();
        graph::write_graph_dump(&[GraphRecord::new("x", &g)], &mut buf).unwrap();
        let back = graph::parse_graph_dump(std::str::from_utf8(&buf).unwrap(), "mem").unwrap();
        prop_assert_eq!(back[0].to_graph().unwrap(), g);
    }

    #[test]
    fn tokens_are_never_empty_or_padded(s in sentence()) {
        for t in tokenize(&s).as_slice() {
            prop_assert!(!t.is_empty());
            prop_assert!(!t.chars().any(char::is_whitespace));
        }
    }

    #[test]
    fn vocab_encoding_starts_with_cls_and_respects_max_len(s in sentence(), max_len in 1usize..10) {
        let vocab = Vocab::from_words(["كتب", "w"]).unwrap();
        match vocab.encode(&s, max_len) {
            Ok(ids) => {
                prop_assert_eq!(ids[0], graphfuse::model::CLS_ID);
                prop_assert!(ids.len() <= max_len);
                prop_assert!(ids.iter().all(|&i| i < vocab.len()));
            }
            Err(e) => prop_assert!(matches!(e, graphfuse::Error::NoTokens | graphfuse::Error::InvalidArgument(_))),
        }
    }

    #[test]
    fn checkpoint_decoder_rejects_garbage_without_panicking(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        prop_assert!(decode_checkpoint(&bytes).is_err());
    }
}
