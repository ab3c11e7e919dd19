#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = graphfuse::model::decode_checkpoint(data) {
        let again = graphfuse::model::encode_checkpoint(&ck.model, &ck.header.config).unwrap();
        let back = graphfuse::model::decode_checkpoint(&again).unwrap();
        assert_eq!(back.header.params, ck.header.params);
    }
});
