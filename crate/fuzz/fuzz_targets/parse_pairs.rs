#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(pairs) = graphfuse::corpus::parse_pairs(text, "fuzz") {
            if let Ok(samples) = graphfuse::corpus::decouple_pairs(&pairs) {
                assert_eq!(samples.len(), 2 * pairs.len());
                let _ = graphfuse::corpus::dedup(&samples);
            }
        }
    }
});
