#![no_main]
use lerp_core::data::parse_catalog;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(catalog) = parse_catalog(text) {
        assert_eq!(
            parse_catalog(&catalog.to_json()).expect("catalog round-trips"),
            catalog
        );
    }
});
