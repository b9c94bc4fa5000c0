#![no_main]

use libfuzzer_sys::fuzz_target;
use mpts_core::model::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(layers) = checkpoint::decode_layers(data) {
        assert!(!layers.is_empty());
    }
    if let Ok(params) = checkpoint::decode(data, 1, 0.0) {
        assert_eq!(checkpoint::encode(&params), data);
    }
});
