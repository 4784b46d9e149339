use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CUTOFFS: [u32; 4] = [1, 5, 10, 27];
pub const PHQ9_MAX: usize = 27;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn updating_goldens() -> bool {
    std::env::var_os("UPDATE_GOLDENS").is_some_and(|v| v != "0")
}

/// Compares `actual` with a committed golden file byte-for-byte, or
/// rewrites it under `UPDATE_GOLDENS`.
pub fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if updating_goldens() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    if expected != actual {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .map_or_else(|| "length".to_string(), |i| format!("line {}", i + 1));
        panic!("{name} differs from the committed golden ({line})");
    }
}

/// Random probability vector over `0..=max`: dense, sparse or a point
/// mass, chosen at random.
pub fn random_mass(rng: &mut ChaCha8Rng, max: usize) -> Vec<f64> {
    let k = max + 1;
    let mut w = vec![0.0; k];
    match rng.random_range(0..4) {
        0 => {
            w[rng.random_range(0..k)] = 1.0;
        }
        1 => {
            for _ in 0..rng.random_range(1..=5) {
                w[rng.random_range(0..k)] += rng.random::<f64>();
            }
        }
        _ => {
            for x in w.iter_mut() {
                *x = rng.random::<f64>().powi(3);
            }
        }
    }
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        w[0] = 1.0;
        return w;
    }
    w.iter().map(|x| x / total).collect()
}

/// Exhaustive pairwise Mann-Whitney count with ties as one half.
pub fn pairwise_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positives[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positives[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Textbook MCC with the zero-denominator convention.
pub fn direct_mcc(tp: u64, fp: u64, tn: u64, fn_: u64) -> f64 {
    let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
