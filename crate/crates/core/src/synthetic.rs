//! Synthetic admissions with planted word/event → label signal.
//!
//! Label `j` owns a trigger word `trig{j}` and a trigger event
//! `trig{j} therapy`; its name is `trig{j} risk`. Filler words `word{i}` and
//! filler events `proc{k} therapy` carry no signal.
//!
//! Two planting modes exist per label:
//!
//! * note-and-event: when the trigger fires, the trigger word is inserted in
//!   the note and the trigger event is added; the label is then 1 with
//!   probability `signal_strength`. Without the trigger the label is 0.
//! * event-only: the trigger word appears in every note, so the note alone
//!   says nothing; only the trigger event's presence is informative. A model
//!   must use events to pick out the relevant word.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EhrRecord, LabelCatalog};
use crate::error::{LerpError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_records: usize,
    pub n_labels: usize,
    /// Distinct note word types: trigger words plus fillers.
    pub vocab_size: usize,
    pub signal_strength: f64,
    pub seed: u64,
    /// The last `event_only_labels` labels use event-only planting.
    pub event_only_labels: usize,
    /// Probability that a label's trigger fires in a record.
    pub trigger_rate: f64,
    pub min_note_len: usize,
    pub max_note_len: usize,
    pub filler_event_types: usize,
    pub max_filler_events: usize,
}

impl SyntheticConfig {
    pub fn new(
        n_records: usize,
        n_labels: usize,
        vocab_size: usize,
        signal_strength: f64,
        seed: u64,
    ) -> Self {
        SyntheticConfig {
            n_records,
            n_labels,
            vocab_size,
            signal_strength,
            seed,
            event_only_labels: 0,
            trigger_rate: 0.3,
            min_note_len: 20,
            max_note_len: 40,
            filler_event_types: 20,
            max_filler_events: 3,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LerpError::Config(m));
        if self.n_labels < 2 {
            return bad(format!(
                "n_labels must be at least 2, got {}",
                self.n_labels
            ));
        }
        if self.vocab_size < 10 * self.n_labels {
            return bad(format!(
                "vocab_size {} must be at least 10 x n_labels ({})",
                self.vocab_size,
                10 * self.n_labels
            ));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad(format!(
                "signal_strength {} outside [0, 1]",
                self.signal_strength
            ));
        }
        if !(0.0..=1.0).contains(&self.trigger_rate) {
            return bad(format!("trigger_rate {} outside [0, 1]", self.trigger_rate));
        }
        if self.event_only_labels > self.n_labels {
            return bad("event_only_labels exceeds n_labels".into());
        }
        if self.min_note_len == 0 || self.min_note_len > self.max_note_len {
            return bad("note length bounds must satisfy 1 <= min <= max".into());
        }
        if self.filler_event_types == 0 || self.max_filler_events == 0 {
            return bad("need at least one filler event type and slot".into());
        }
        Ok(())
    }

    fn is_event_only(&self, label: usize) -> bool {
        label >= self.n_labels - self.event_only_labels
    }
}

pub fn trigger_word(label: usize) -> String {
    format!("trig{label}")
}

pub fn trigger_event(label: usize) -> String {
    format!("trig{label} therapy")
}

pub fn label_name(label: usize) -> String {
    format!("trig{label} risk")
}

/// Where planted words ended up in one record's note.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantedWords {
    pub record_id: String,
    /// `(position, label)` of trigger words planted because the trigger fired.
    pub signal: Vec<(usize, usize)>,
    /// `(position, label)` of uninformative trigger words of event-only labels.
    pub anchors: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub records: Vec<EhrRecord>,
    pub catalog: LabelCatalog,
    pub planted: Vec<PlantedWords>,
}

/// Generates with default planting options (every label note-and-event).
pub fn generate_synthetic(
    n_records: usize,
    n_labels: usize,
    vocab_size: usize,
    signal_strength: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    generate(&SyntheticConfig::new(
        n_records,
        n_labels,
        vocab_size,
        signal_strength,
        seed,
    ))
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fillers: Vec<String> = (0..config.vocab_size - config.n_labels)
        .map(|i| format!("word{i}"))
        .collect();
    let filler_events: Vec<String> = (0..config.filler_event_types)
        .map(|k| format!("proc{k} therapy"))
        .collect();
    let catalog = LabelCatalog::new((0..config.n_labels).map(label_name).collect())?;
    let width = config.n_records.saturating_sub(1).to_string().len();

    let mut records = Vec::with_capacity(config.n_records);
    let mut planted = Vec::with_capacity(config.n_records);
    for r in 0..config.n_records {
        let id = format!("syn-{r:0width$}");
        let len = rng.random_range(config.min_note_len..=config.max_note_len);
        // (token, Some((label, is_signal))) for planted words
        let mut note: Vec<(String, Option<(usize, bool)>)> = (0..len)
            .map(|_| (fillers.choose(&mut rng).expect("fillers").clone(), None))
            .collect();
        let n_fill_events = rng.random_range(1..=config.max_filler_events.min(filler_events.len()));
        let mut events: Vec<String> = filler_events
            .choose_multiple(&mut rng, n_fill_events)
            .cloned()
            .collect();
        let mut labels = vec![0u8; config.n_labels];

        for (j, label) in labels.iter_mut().enumerate() {
            let fired = rng.random_bool(config.trigger_rate);
            let event_only = config.is_event_only(j);
            if fired || event_only {
                let pos = rng.random_range(0..=note.len());
                note.insert(pos, (trigger_word(j), Some((j, fired && !event_only))));
            }
            if fired {
                events.push(trigger_event(j));
                *label = u8::from(rng.random_bool(config.signal_strength));
            }
        }
        events.shuffle(&mut rng);

        let mut sites = PlantedWords {
            record_id: id.clone(),
            ..Default::default()
        };
        for (pos, (_, tag)) in note.iter().enumerate() {
            match tag {
                Some((j, true)) => sites.signal.push((pos, *j)),
                Some((j, false)) => sites.anchors.push((pos, *j)),
                None => {}
            }
        }
        records.push(EhrRecord {
            id,
            note: note.into_iter().map(|(t, _)| t).collect(),
            events: events.iter().map(|e| crate::data::tokenize(e)).collect(),
            labels,
        });
        planted.push(sites);
    }
    Ok(SyntheticDataset {
        records,
        catalog,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{format_dataset, parse_dataset};

    #[test]
    fn full_signal_marks_every_trigger_record_positive() {
        let ds = generate_synthetic(300, 3, 60, 1.0, 5).unwrap();
        for rec in &ds.records {
            for j in 0..3 {
                if rec.note.contains(&trigger_word(j)) {
                    assert_eq!(rec.labels[j], 1, "{}", rec.id);
                }
            }
        }
    }

    #[test]
    fn zero_records_still_has_catalog() {
        let ds = generate_synthetic(0, 2, 20, 0.9, 1).unwrap();
        assert!(ds.records.is_empty());
        assert_eq!(ds.catalog.len(), 2);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic(50, 4, 200, 0.95, 9).unwrap();
        let b = generate_synthetic(50, 4, 200, 0.95, 9).unwrap();
        assert_eq!(format_dataset(&a.records), format_dataset(&b.records));
        let c = generate_synthetic(50, 4, 200, 0.95, 10).unwrap();
        assert_ne!(format_dataset(&a.records), format_dataset(&c.records));
    }

    #[test]
    fn parameter_bounds() {
        assert!(matches!(
            generate_synthetic(10, 1, 200, 0.9, 0),
            Err(LerpError::Config(_))
        ));
        assert!(matches!(
            generate_synthetic(10, 4, 39, 0.9, 0),
            Err(LerpError::Config(_))
        ));
        assert!(matches!(
            generate_synthetic(10, 4, 40, 1.5, 0),
            Err(LerpError::Config(_))
        ));
    }

    #[test]
    fn planted_positions_point_at_trigger_words() {
        let mut cfg = SyntheticConfig::new(100, 4, 200, 0.95, 2);
        cfg.event_only_labels = 2;
        let ds = generate(&cfg).unwrap();
        for (rec, sites) in ds.records.iter().zip(&ds.planted) {
            for &(pos, j) in sites.signal.iter().chain(&sites.anchors) {
                assert_eq!(rec.note[pos], trigger_word(j));
            }
            // event-only labels are anchored in every note
            assert_eq!(sites.anchors.len(), 2);
            assert!(sites.signal.iter().all(|&(_, j)| j < 2));
            assert!(!rec.events.is_empty());
        }
    }

    #[test]
    fn round_trips_through_the_record_format() {
        let ds = generate_synthetic(100, 4, 200, 0.95, 3).unwrap();
        let text = format_dataset(&ds.records);
        let back = parse_dataset(&text, ds.catalog.len()).unwrap();
        assert_eq!(back, ds.records);
    }

    #[test]
    fn trigger_conditional_rate_matches_signal_strength() {
        let s = 0.8;
        let ds = generate_synthetic(2000, 4, 200, s, 17).unwrap();
        for j in 0..4 {
            let with: Vec<_> = ds
                .records
                .iter()
                .filter(|r| r.note.contains(&trigger_word(j)))
                .collect();
            let pos = with.iter().filter(|r| r.labels[j] == 1).count();
            let rate = pos as f64 / with.len() as f64;
            assert!((rate - s).abs() < 0.05, "label {j}: {rate}");
        }
    }
}
