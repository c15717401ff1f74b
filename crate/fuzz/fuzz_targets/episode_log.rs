#![no_main]

use libfuzzer_sys::fuzz_target;
use svo_harness::{parse_log_line, EpisodeLog};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for line in text.lines() {
        let _ = parse_log_line(line);
    }
    if let Ok(log) = EpisodeLog::parse(text) {
        assert!(EpisodeLog::parse(&log.to_lines()).is_ok());
    }
});
