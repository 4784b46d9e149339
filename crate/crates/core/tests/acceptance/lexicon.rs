use std::collections::BTreeMap;

use stops_core::lexicon::{class_frequency, FrequencyOptions, FrequencyTable, Grouping, UtteranceCues};
use stops_core::metrics::load_predictions;

use crate::common::*;

fn table(cues: &[UtteranceCues], grouping: Grouping) -> FrequencyTable {
    class_frequency(cues, FrequencyOptions { grouping, dense: false }).unwrap()
}

/// Compares a table with a hand-checked CSV both textually and field by
/// field, with the percentage compared as a number.
fn compare(table: &FrequencyTable, golden_name: &str) {
    let expected = std::fs::read_to_string(fixture(golden_name)).unwrap();
    let mut rdr = csv::Reader::from_reader(expected.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), table.rows.len(), "{golden_name}: row count");
    for (want, got) in rows.iter().zip(&table.rows) {
        assert_eq!(&want[0], got.group, "{golden_name}: group");
        assert_eq!(&want[1], got.phrase, "{golden_name}: phrase");
        assert_eq!(want[2].parse::<usize>().unwrap(), got.count, "{golden_name}: {} count", got.phrase);
        assert_eq!(want[3].parse::<usize>().unwrap(), got.class_total, "{golden_name}: {} total", got.phrase);
        let pct: f64 = want[4].parse().unwrap();
        assert_eq!(pct, got.percentage, "{golden_name}: {} percentage", got.phrase);
    }
    assert_eq!(table.to_csv(), expected, "{golden_name}: csv text");
}

pub fn run() {
    let preds = load_predictions(&fixture("lexicon_predictions.jsonl")).unwrap();
    let cues: Vec<UtteranceCues> = preds.iter().map(UtteranceCues::from).collect();
    let by_class = table(&cues, Grouping::Class);
    let by_context = table(&cues, Grouping::ClassContext);
    compare(&by_class, "lexicon_golden_class.csv");
    compare(&by_context, "lexicon_golden_class_context.csv");

    // Summing class x context cells over contexts recovers the class table.
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for r in &by_context.rows {
        *counts.entry((r.key.class.to_string(), r.phrase.clone())).or_default() += r.count;
    }
    for (key, n) in &by_context.group_totals {
        *totals.entry(key.class.to_string()).or_default() += n;
    }
    let class_counts: BTreeMap<(String, String), usize> = by_class
        .rows
        .iter()
        .map(|r| ((r.group.clone(), r.phrase.clone()), r.count))
        .collect();
    assert_eq!(counts, class_counts);
    let class_totals: BTreeMap<String, usize> =
        by_class.group_totals.iter().map(|(k, n)| (k.class.to_string(), *n)).collect();
    assert_eq!(totals, class_totals);
    assert_eq!(class_totals.values().sum::<usize>(), preds.len());
}
