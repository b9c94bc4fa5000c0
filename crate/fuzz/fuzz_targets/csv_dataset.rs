#![no_main]

use libfuzzer_sys::fuzz_target;
use mpts_core::dataio::{parse_csv, LabelColumn};

fuzz_target!(|data: &[u8]| {
    if let Ok((ds, map)) = parse_csv(data, "fuzz", &LabelColumn::Last) {
        assert_eq!(ds.class_count, map.classes.len());
        assert!(ds.labels.iter().all(|&y| y < ds.class_count));
        assert!(ds.features.is_finite());
    }
});
