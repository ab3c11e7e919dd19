#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = graphfuse::graph::parse_graph_dump(text, "fuzz") {
            for r in &records {
                let _ = r.to_graph();
            }
        }
    }
});
