#![no_main]
use lerp_cli::{Overrides, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::resolve(Some(text), &Overrides::default()) {
        let again = RunConfig::resolve(Some(&cfg.to_json()), &Overrides::default())
            .expect("resolved config parses");
        assert_eq!(again, cfg);
    }
});
