#![no_main]
use lerp_core::checkpoint::{decode_train_state, encode_train_state};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = decode_train_state(data) {
        let bytes = encode_train_state(&state);
        let again = decode_train_state(&bytes).expect("re-encoded state decodes");
        assert_eq!(encode_train_state(&again), bytes);
    }
});
