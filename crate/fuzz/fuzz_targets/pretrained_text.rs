#![no_main]
use lerp_core::embedding::{format_pretrained, parse_pretrained};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((vocab, table)) = parse_pretrained(text) {
        let again =
            parse_pretrained(&format_pretrained(&vocab, &table)).expect("formatted table parses");
        assert_eq!(again.0, vocab);
    }
});
