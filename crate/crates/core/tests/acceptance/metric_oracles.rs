use rand::Rng;
use stops_core::metrics::{mcc, roc_auc};
use stops_core::ConfusionMatrix;

use crate::common::*;

const TOL: f64 = 1e-12;

pub fn run() {
    let mut rng = rng(3);

    for i in 0..500 {
        let n = rng.random_range(2..=50);
        // A small value pool forces ties within and across classes.
        let pool: Vec<f64> = (0..rng.random_range(1..=n)).map(|_| rng.random::<f64>()).collect();
        let scores: Vec<f64> = (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        let mut positives: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        positives[0] = true;
        positives[1] = false;
        let got = roc_auc(&scores, &positives).unwrap();
        let want = pairwise_auc(&scores, &positives);
        assert!(close(got, want, TOL), "AUC set #{i}: {got} vs {want}");
    }
    assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(roc_auc(&[0.1, 0.2], &[false, false]).is_err());

    let mut matrices = Vec::new();
    // Every pattern of zero cells, including the degenerate ones.
    for mask in 0u8..16 {
        let cell = |bit: u8| if mask & (1 << bit) == 0 { 0 } else { 7 + bit as u64 };
        matrices.push((cell(0), cell(1), cell(2), cell(3)));
    }
    while matrices.len() < 500 {
        let mut draw = || if rng.random_bool(0.15) { 0 } else { rng.random_range(0..1000u64) };
        matrices.push((draw(), draw(), draw(), draw()));
    }
    for (i, &(tp, fp, tn, fn_)) in matrices.iter().enumerate() {
        let got = mcc(&ConfusionMatrix::new(tp, fp, tn, fn_));
        let want = direct_mcc(tp, fp, tn, fn_);
        assert!(close(got, want, TOL), "MCC matrix #{i} ({tp},{fp},{tn},{fn_}): {got} vs {want}");
        assert!((-1.0..=1.0).contains(&got));
    }
}
