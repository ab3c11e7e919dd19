#![no_main]

use graphfuse::graph::{graph_for_text, normalized_adjacency, GraphConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (u8, &str)| {
    let (w, text) = input;
    let Ok(cfg) = GraphConfig::with_window(2 + usize::from(w % 8)) else { return };
    if let Ok(g) = graph_for_text(text, &cfg) {
        let n = g.num_nodes();
        assert!(g.edges.iter().all(|&(i, j)| i < j && j < n));
        assert!(normalized_adjacency(&g).iter().all(|v| v.is_finite()));
    }
});
