#![no_main]
use lerp_core::data::{format_dataset, parse_dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let n_labels = usize::from(n % 8) + 1;
    if let Ok(records) = parse_dataset(text, n_labels) {
        let again =
            parse_dataset(&format_dataset(&records), n_labels).expect("formatted records parse");
        assert_eq!(again, records);
    }
});
