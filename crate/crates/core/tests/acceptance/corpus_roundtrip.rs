use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map};
use stops_core::corpus::{
    label_binary, parse_records, records_to_jsonl, split_train_test, AgeGroup, Sex, SCHEMA_V1,
};
use stops_core::{CutoffPolicy, Instrument, Label, NarrativeRecord, PromptContext};

use crate::common::*;

const CONTEXTS: [PromptContext; 5] = [
    PromptContext::Happy,
    PromptContext::Distress,
    PromptContext::Both,
    PromptContext::Ema,
    PromptContext::Interview,
];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 10] = ["I", "felt", "tired", "\"quoted\"", "zwölf", "line\nbreak", "tab\there", "😀", "ok,", "\\"];
    (0..rng.random_range(1..30)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn random_record(rng: &mut ChaCha8Rng, i: usize) -> NarrativeRecord {
    let instrument = if rng.random_bool(0.8) { Instrument::Phq9 } else { Instrument::Phq8 };
    let mut extra = Map::new();
    if rng.random_bool(0.5) {
        extra.insert("site".into(), json!(format!("s{}", rng.random_range(0..5))));
    }
    if rng.random_bool(0.3) {
        extra.insert("visit".into(), json!({"n": rng.random_range(0..9), "tags": ["a", "b"]}));
    }
    NarrativeRecord {
        id: format!("r-{i:03}"),
        text: random_text(rng),
        prompt_context: CONTEXTS[rng.random_range(0..CONTEXTS.len())],
        phq_score: rng.random_range(0..=instrument.max_score()),
        instrument,
        sex: [None, Some(Sex::Female), Some(Sex::Male), Some(Sex::Other)][rng.random_range(0..4)],
        age_group: [None, Some(AgeGroup::From20To39), Some(AgeGroup::From40To59), Some(AgeGroup::Over60)]
            [rng.random_range(0..4)],
        dataset_tag: ["cohort-a", "cohort-b", "cohort-c"][rng.random_range(0..3)].to_string(),
        extra,
    }
}

fn cohort(rng: &mut ChaCha8Rng, n: usize, p_depressed: f64) -> Vec<NarrativeRecord> {
    (0..n)
        .map(|i| {
            let mut r = random_record(rng, i);
            r.instrument = Instrument::Phq9;
            r.phq_score = if rng.random_bool(p_depressed) { rng.random_range(10..=27) } else { rng.random_range(0..10) };
            r
        })
        .collect()
}

fn depressed_share(records: &[NarrativeRecord], policy: &CutoffPolicy) -> f64 {
    let n = records.iter().filter(|r| label_binary(r, policy).unwrap() == Label::Depression).count();
    n as f64 / records.len() as f64
}

fn check_split(records: &[NarrativeRecord], fraction: f64, seed: u64, policy: &CutoffPolicy) {
    let (train, test) = split_train_test(records, fraction, seed, policy).unwrap();
    assert_eq!(train.len() + test.len(), records.len());
    assert_eq!(train.len(), (records.len() as f64 * fraction).round() as usize);
    let train_ids: BTreeSet<&str> = train.iter().map(|r| r.id.as_str()).collect();
    let test_ids: BTreeSet<&str> = test.iter().map(|r| r.id.as_str()).collect();
    assert!(train_ids.is_disjoint(&test_ids), "splits overlap");
    let all: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(train_ids.union(&test_ids).copied().collect::<BTreeSet<_>>(), all, "splits not exhaustive");

    if records.len() >= 100 {
        let full = depressed_share(records, policy);
        for (name, part) in [("train", &train), ("test", &test)] {
            let share = depressed_share(part, policy);
            assert!(
                (share - full).abs() <= 0.02,
                "n={} seed={seed}: {name} depressed share {share:.4} vs {full:.4}",
                records.len()
            );
        }
    }

    let again = split_train_test(records, fraction, seed, policy).unwrap();
    assert_eq!(again, (train, test), "seed {seed} not deterministic");
}

pub fn run() {
    let mut rng = rng(5);

    let records: Vec<NarrativeRecord> = (0..100).map(|i| random_record(&mut rng, i)).collect();
    let exported = records_to_jsonl(&records);
    let loaded = parse_records(exported.as_bytes(), SCHEMA_V1).unwrap();
    assert_eq!(loaded, records, "load(export(records)) differs");
    assert_eq!(records_to_jsonl(&loaded), exported, "export is not stable");

    let policy = CutoffPolicy::new(10, Instrument::Phq9).unwrap();
    let synthetic = cohort(&mut rng, 1000, 0.3);
    for seed in 0..5 {
        check_split(&synthetic, 0.8, seed, &policy);
    }
    let large = cohort(&mut rng, 3699, 0.25);
    let (train, test) = split_train_test(&large, 0.8, 0, &policy).unwrap();
    assert_eq!((train.len(), test.len()), (2959, 740));
    check_split(&large, 0.8, 0, &policy);
    for (n, fraction) in [(100, 0.8), (150, 0.7), (250, 0.5), (37, 0.8)] {
        let small = cohort(&mut rng, n, 0.4);
        check_split(&small, fraction, 1, &policy);
    }

    let a = split_train_test(&synthetic, 0.8, 1, &policy).unwrap();
    let b = split_train_test(&synthetic, 0.8, 2, &policy).unwrap();
    assert_ne!(a, b, "different seeds gave the same split");
}
