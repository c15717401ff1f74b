#![no_main]

use libfuzzer_sys::fuzz_target;
use svo_harness::{metrics_table, parse_metrics_table};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_metrics_table(text) {
        let again = parse_metrics_table(&metrics_table(&rows)).expect("written table must parse");
        assert_eq!(again.len(), rows.len());
    }
});
