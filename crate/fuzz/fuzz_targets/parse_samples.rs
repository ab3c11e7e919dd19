#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(samples) = graphfuse::corpus::parse_samples(text, "fuzz") {
            // whatever parses must survive a write/read cycle unchanged
            let mut buf = Vec::new();
            graphfuse::corpus::write_samples_to(&samples, &mut buf).unwrap();
            let back = graphfuse::corpus::parse_samples(std::str::from_utf8(&buf).unwrap(), "again").unwrap();
            assert_eq!(back, samples);
        }
    }
});
