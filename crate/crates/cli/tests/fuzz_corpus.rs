//! Replays the checked-in fuzz seeds through the fuzz targets' invariants.

use std::path::{Path, PathBuf};

use lerp_cli::{Overrides, RunConfig};
use lerp_core::checkpoint::{decode_model, decode_train_state, encode_model, encode_train_state};
use lerp_core::data::{format_dataset, parse_catalog, parse_dataset};
use lerp_core::embedding::{format_pretrained, parse_pretrained};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = std::fs::read(&path).unwrap();
            (path, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn name(path: &Path) -> &str {
    path.file_name().unwrap().to_str().unwrap()
}

#[test]
fn pretrained_text_seeds() {
    for (path, bytes) in seeds("pretrained_text") {
        let Ok(text) = std::str::from_utf8(&bytes) else {
            continue;
        };
        if let Ok((vocab, table)) = parse_pretrained(text) {
            let again = parse_pretrained(&format_pretrained(&vocab, &table)).unwrap();
            assert_eq!(again.0, vocab, "{}", path.display());
        }
    }
}

#[test]
fn dataset_lines_seeds() {
    let mut parsed = 0;
    for (path, bytes) in seeds("dataset_lines") {
        let (&n, rest) = bytes.split_first().unwrap();
        let Ok(text) = std::str::from_utf8(rest) else {
            continue;
        };
        let n_labels = usize::from(n % 8) + 1;
        if let Ok(records) = parse_dataset(text, n_labels) {
            let again = parse_dataset(&format_dataset(&records), n_labels).unwrap();
            assert_eq!(again, records, "{}", path.display());
            parsed += 1;
        }
    }
    assert!(parsed > 0);
}

#[test]
fn catalog_json_seeds() {
    for (path, bytes) in seeds("catalog_json") {
        let Ok(text) = std::str::from_utf8(&bytes) else {
            continue;
        };
        if let Ok(catalog) = parse_catalog(text) {
            assert_eq!(
                parse_catalog(&catalog.to_json()).unwrap(),
                catalog,
                "{}",
                path.display()
            );
        }
    }
}

#[test]
fn model_checkpoint_seeds() {
    for (path, bytes) in seeds("model_checkpoint") {
        match decode_model(&bytes) {
            Ok(model) => {
                let enc = encode_model(&model);
                assert_eq!(encode_model(&decode_model(&enc).unwrap()), enc);
            }
            Err(_) => assert!(
                !name(&path).starts_with("tiny"),
                "{} should decode",
                path.display()
            ),
        }
    }
}

#[test]
fn train_state_seeds() {
    for (path, bytes) in seeds("train_state") {
        match decode_train_state(&bytes) {
            Ok(state) => {
                let enc = encode_train_state(&state);
                assert_eq!(encode_train_state(&decode_train_state(&enc).unwrap()), enc);
            }
            Err(_) => assert!(
                !name(&path).starts_with("tiny"),
                "{} should decode",
                path.display()
            ),
        }
    }
}

#[test]
fn run_config_seeds() {
    for (path, bytes) in seeds("run_config") {
        let Ok(text) = std::str::from_utf8(&bytes) else {
            continue;
        };
        if let Ok(cfg) = RunConfig::resolve(Some(text), &Overrides::default()) {
            let again = RunConfig::resolve(Some(&cfg.to_json()), &Overrides::default()).unwrap();
            assert_eq!(again, cfg, "{}", path.display());
        }
    }
}
