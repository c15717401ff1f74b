#![no_main]

use libfuzzer_sys::fuzz_target;
use svo_harness::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let again = RunConfig::parse(&cfg.to_toml()).expect("serialized config must parse");
        assert_eq!(again.to_toml(), cfg.to_toml());
    }
});
