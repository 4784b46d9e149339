use std::collections::BTreeMap;

use stops_core::stops::{extract_score_distribution, TerminatorPolicy};
use stops_core::{TokenProb, TokenizationScheme};

use crate::common::*;

const TOL: f64 = 1e-12;

fn tp(token: impl Into<String>, p: f64) -> TokenProb {
    TokenProb::from_prob(token, p).unwrap()
}

/// Encodes `mass` as a single-digit vocabulary would emit it:
/// `p("d") = p(d) + Σ_e p(de)` at the first position, and after a live
/// first digit the conditional continuations `p(de) / p("d")` plus a
/// newline terminator carrying `p(d) / p("d")`.
fn single_digit_encoding(mass: &[f64]) -> (Vec<TokenProb>, BTreeMap<String, Vec<TokenProb>>) {
    let max = mass.len() - 1;
    let mut first = Vec::new();
    let mut followups = BTreeMap::new();
    for d in 0..=9usize.min(max) {
        let two_digit: Vec<(usize, f64)> = (0..=9)
            .map(|e| (e, 10 * d + e))
            .filter(|&(_, s)| d >= 1 && s <= max)
            .map(|(e, s)| (e, mass[s]))
            .collect();
        let p_first = mass[d] + two_digit.iter().map(|(_, p)| p).sum::<f64>();
        if p_first == 0.0 {
            continue;
        }
        first.push(tp(d.to_string(), p_first));
        if d >= 1 && 10 * d <= max {
            let mut next: Vec<TokenProb> = two_digit
                .iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|&(e, p)| tp(e.to_string(), p / p_first))
                .collect();
            if mass[d] > 0.0 {
                next.push(tp("\n", mass[d] / p_first));
            }
            followups.insert(d.to_string(), next);
        }
    }
    (first, followups)
}

fn multi_digit_encoding(mass: &[f64]) -> Vec<TokenProb> {
    mass.iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| tp(s.to_string(), p))
        .collect()
}

pub fn run() {
    let mut rng = rng(2);
    for i in 0..200 {
        let mass = random_mass(&mut rng, PHQ9_MAX);
        let (first, followups) = single_digit_encoding(&mass);
        let single = extract_score_distribution(
            &first,
            &followups,
            TokenizationScheme::SingleDigit,
            PHQ9_MAX as u32,
            TerminatorPolicy::NonDigitContinuation,
        )
        .unwrap()
        .renormalize()
        .unwrap();
        let multi = extract_score_distribution(
            &multi_digit_encoding(&mass),
            &BTreeMap::new(),
            TokenizationScheme::MultiDigit,
            PHQ9_MAX as u32,
            TerminatorPolicy::NonDigitContinuation,
        )
        .unwrap()
        .renormalize()
        .unwrap();

        for (s, (a, b)) in single.mass().iter().zip(multi.mass()).enumerate() {
            assert!(close(*a, *b, TOL), "#{i}: mass[{s}] {a} vs {b}");
        }
        for cutoff in CUTOFFS {
            let a = single.classify(cutoff).unwrap();
            let b = multi.classify(cutoff).unwrap();
            assert!(close(a.p_depression, b.p_depression, TOL), "#{i} d={cutoff}: p");
            assert!(close(a.confidence, b.confidence, TOL), "#{i} d={cutoff}: confidence");
            assert_eq!(a.label, b.label, "#{i} d={cutoff}: label");
            assert_eq!(a.cutoff_used, b.cutoff_used);
        }
    }
}
