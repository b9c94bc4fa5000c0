#![no_main]

use libfuzzer_sys::fuzz_target;
use mpts_core::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_json(text) {
            // the resolved form must be accepted again
            let again = ExperimentConfig::from_json(&cfg.resolved().to_json_pretty())
                .expect("resolved config re-parses");
            assert_eq!(again, cfg.resolved());
        }
    }
});
