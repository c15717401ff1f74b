#![no_main]

use libfuzzer_sys::fuzz_target;
use svo_nn::ParamStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = ParamStore::from_bytes(data) {
        let bytes = store.to_bytes();
        let again = ParamStore::from_bytes(&bytes).expect("re-encoded checkpoint must decode");
        assert_eq!(again.to_bytes(), bytes);
    }
});
