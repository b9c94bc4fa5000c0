#![no_main]

use libfuzzer_sys::fuzz_target;
use mpts_core::dataio::{encode_idx_images, idx_to_dataset, parse_idx_images};

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = parse_idx_images(data) {
        assert_eq!(encode_idx_images(&images), data);
        let labels = vec![0u8; images.count];
        let _ = idx_to_dataset("fuzz", &images, &labels);
    }
});
