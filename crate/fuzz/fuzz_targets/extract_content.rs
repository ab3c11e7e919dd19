#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(body) = std::str::from_utf8(data) {
        if let Ok(content) = graphfuse::expander::extract_content(body) {
            assert_eq!(content.trim(), content);
        }
    }
});
