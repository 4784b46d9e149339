use std::collections::BTreeMap;

use rand::Rng;
use stops_core::stops::{extract_score_distribution, TerminatorPolicy};
use stops_core::{Label, ScoreDistribution, TokenProb, TokenizationScheme};

use crate::common::*;

const TOL: f64 = 1e-12;

struct Oracle {
    p: f64,
    confidence: f64,
    label: Label,
}

/// Brute-force summation over an explicit probability vector.
fn oracle(mass: &[f64], cutoff: u32) -> Oracle {
    let total: f64 = mass.iter().sum();
    let mut above = 0.0;
    for (s, m) in mass.iter().enumerate() {
        if s as u32 >= cutoff {
            above += m;
        }
    }
    let p = above / total;
    Oracle {
        p,
        confidence: (2.0 * p - 1.0).abs(),
        label: if p >= 0.5 { Label::Depression } else { Label::Normal },
    }
}

fn argmax_smallest(mass: &[f64]) -> u32 {
    let best = mass.iter().cloned().fold(f64::MIN, f64::max);
    mass.iter().position(|&m| m == best).unwrap() as u32
}

fn check(dist: &ScoreDistribution, mass: &[f64], context: &str) {
    for cutoff in CUTOFFS {
        let got = dist.classify(cutoff).unwrap();
        let want = oracle(mass, cutoff);
        assert!(close(got.p_depression, want.p, TOL), "{context} d={cutoff}: p {} vs {}", got.p_depression, want.p);
        assert!(
            close(got.confidence, want.confidence, TOL),
            "{context} d={cutoff}: confidence {} vs {}",
            got.confidence,
            want.confidence
        );
        assert_eq!(got.label, want.label, "{context} d={cutoff}: label");
        assert_eq!(got.cutoff_used, cutoff);
    }
}

pub fn run() {
    let mut rng = rng(1);

    // Distributions given directly as probability vectors.
    for i in 0..1000 {
        let mass = random_mass(&mut rng, PHQ9_MAX);
        let dist = ScoreDistribution::from_probabilities(mass.clone()).unwrap();
        check(&dist, &mass, &format!("direct #{i}"));
        assert_eq!(dist.point_score(), argmax_smallest(&mass), "direct #{i}: point score");
    }

    // Distributions decoded from top-k candidate lists with partial
    // coverage and distractor tokens, then renormalized.
    let distractors = ["the", "-", "28", "30", "100", "\n", "score"];
    for i in 0..1000 {
        let k = rng.random_range(1..=20);
        let mut budget: f64 = 1.0;
        let mut candidates = Vec::new();
        let mut mass = vec![0.0; PHQ9_MAX + 1];
        for j in 0..k {
            let p = budget * rng.random_range(0.05..0.9);
            budget -= p;
            let is_score = j == 0 || rng.random_bool(0.8);
            let token = if is_score {
                let s = rng.random_range(0..=PHQ9_MAX);
                mass[s] += p;
                if rng.random_bool(0.2) {
                    format!(" {s}")
                } else {
                    s.to_string()
                }
            } else {
                distractors[rng.random_range(0..distractors.len())].to_string()
            };
            candidates.push(TokenProb::new(token, p.ln()).unwrap());
        }
        let raw = extract_score_distribution(
            &candidates,
            &BTreeMap::new(),
            TokenizationScheme::MultiDigit,
            PHQ9_MAX as u32,
            TerminatorPolicy::default(),
        )
        .unwrap();
        assert!(!raw.is_renormalized());
        let coverage: f64 = mass.iter().sum();
        assert!(close(raw.coverage(), coverage, TOL), "candidates #{i}: coverage");
        let dist = raw.renormalize().unwrap();
        assert!(close(dist.mass().iter().sum::<f64>(), 1.0, 1e-9));
        check(&dist, &mass, &format!("candidates #{i}"));
    }
}
