//! Acceptance suite. Each criterion runs at its stated tolerance and
//! runtime budget and prints one PASS/FAIL line. Exits non-zero if any
//! criterion fails.
//!
//! `UPDATE_GOLDENS=1` rewrites the committed golden files instead of
//! comparing against them.

mod calibration;
mod common;
mod corpus_roundtrip;
mod e2e;
mod estimators;
mod lexicon;
mod metric_oracles;
mod scheme_equivalence;
mod service;
mod stops_oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn(),
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria = [
        Criterion { name: "stops oracle equivalence", budget: Duration::from_secs(5), run: stops_oracle::run },
        Criterion { name: "tokenization-scheme equivalence", budget: Duration::from_secs(5), run: scheme_equivalence::run },
        Criterion { name: "metric oracles", budget: Duration::from_secs(10), run: metric_oracles::run },
        Criterion { name: "calibration filtering property", budget: Duration::from_secs(30), run: calibration::filtering },
        Criterion { name: "zero-noise limit", budget: Duration::from_secs(5), run: calibration::zero_noise },
        Criterion { name: "end-to-end golden", budget: Duration::from_secs(10), run: e2e::run },
        Criterion { name: "lexicon correctness", budget: Duration::from_secs(2), run: lexicon::run },
        Criterion { name: "confidence estimator invariants", budget: Duration::from_secs(5), run: estimators::run },
        Criterion { name: "corpus round-trip", budget: Duration::from_secs(5), run: corpus_roundtrip::run },
        Criterion { name: "service contract", budget: Duration::from_secs(10), run: service::run },
    ];

    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if filter.as_deref().is_some_and(|f| !c.name.contains(f)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = start.elapsed();
        let verdict = match outcome {
            Err(_) => Some("assertion failed, see above".to_string()),
            Ok(()) if elapsed > c.budget => Some(format!("over the {:?} budget", c.budget)),
            Ok(()) => None,
        };
        match verdict {
            None => println!("PASS  {:<34} {:>8.3}s", c.name, elapsed.as_secs_f64()),
            Some(why) => {
                failed += 1;
                println!("FAIL  {:<34} {:>8.3}s  {why}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
