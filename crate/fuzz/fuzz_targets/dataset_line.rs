#![no_main]

use libfuzzer_sys::fuzz_target;
use svo_agents::dataset::{parse_header, parse_record};

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let _ = parse_header(line);
    if let Ok(sample) = parse_record(line) {
        let _ = sample.truths();
    }
});
