#![no_main]

use libfuzzer_sys::fuzz_target;
use rzk_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(text) {
            // anything accepted must survive a round trip
            let again = RunConfig::from_json(&cfg.to_json()).expect("re-parse of serialized config");
            assert_eq!(again, cfg);
        }
    }
});
