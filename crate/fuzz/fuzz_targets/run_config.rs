#![no_main]

use graphfuse_cli::config::{merge, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(patch) = serde_json::from_slice::<serde_json::Value>(data) else { return };
    let mut base = serde_json::to_value(RunConfig::default()).unwrap();
    merge(&mut base, patch);
    let _ = serde_json::from_value::<RunConfig>(base);
});
