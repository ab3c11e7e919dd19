#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(emb) = graphfuse::model::PrecomputedEmbeddings::parse(text, "fuzz") {
            for r in emb.records() {
                assert_eq!(r.vector.len(), emb.dim());
            }
        }
    }
});
