use rand::seq::SliceRandom;
use rand::Rng;
use stops_core::confidence::{
    binary_logit, entropy_confidence, margin_confidence, maxprob_confidence, self_reported, self_reported_value,
};
use stops_core::ScoreDistribution;

use crate::common::*;

const TOL: f64 = 1e-12;

fn in_unit(v: f64, what: &str) {
    assert!((0.0..=1.0).contains(&v), "{what} = {v} outside [0, 1]");
}

pub fn run() {
    let mut rng = rng(4);
    for i in 0..1000 {
        let mass = random_mass(&mut rng, PHQ9_MAX);
        let dist = ScoreDistribution::from_probabilities(mass.clone()).unwrap();
        let e = entropy_confidence(&dist).unwrap().value;
        let m = maxprob_confidence(&dist).unwrap().value;
        let g = margin_confidence(&dist).unwrap().value;
        in_unit(e, "entropy");
        in_unit(m, "maxprob");
        in_unit(g, "margin");
        for cutoff in CUTOFFS {
            in_unit(dist.classify(cutoff).unwrap().confidence, "stops");
        }

        let mut shuffled = mass.clone();
        shuffled.shuffle(&mut rng);
        let permuted = ScoreDistribution::from_probabilities(shuffled).unwrap();
        assert!(close(entropy_confidence(&permuted).unwrap().value, e, TOL), "#{i}: entropy not permutation invariant");
        assert!(close(maxprob_confidence(&permuted).unwrap().value, m, TOL), "#{i}: maxprob not permutation invariant");
        assert!(close(margin_confidence(&permuted).unwrap().value, g, TOL), "#{i}: margin not permutation invariant");

        let z0 = rng.random_range(-20.0..20.0);
        let z1 = rng.random_range(-20.0..20.0);
        let c = rng.random_range(-50.0..50.0);
        let (p, conf) = binary_logit(z0, z1).unwrap();
        let (p_shift, conf_shift) = binary_logit(z0 + c, z1 + c).unwrap();
        in_unit(p, "binary p");
        in_unit(conf.value, "binary_logit");
        assert!(close(p, p_shift, TOL), "#{i}: binary p not shift invariant");
        assert!(close(conf.value, conf_shift.value, TOL), "#{i}: binary_logit not shift invariant");

        let reported = rng.random_range(-2.0..3.0);
        in_unit(self_reported_value(Some(reported)).unwrap().value, "self_reported");
    }

    // Extremes.
    let point = ScoreDistribution::point_mass(27, 13);
    assert_eq!(entropy_confidence(&point).unwrap().value, 1.0);
    assert_eq!(maxprob_confidence(&point).unwrap().value, 1.0);
    assert_eq!(margin_confidence(&point).unwrap().value, 1.0);
    let uniform = ScoreDistribution::uniform(27);
    assert!(entropy_confidence(&uniform).unwrap().value.abs() <= TOL);
    assert!(margin_confidence(&uniform).unwrap().value.abs() <= TOL);
    assert!(binary_logit(f64::INFINITY, 0.0).is_err());
    assert!(self_reported("score: 4\nexplanation: fine").is_err());
    assert_eq!(
        self_reported("score: 4\nexplanation: fine\nconfidence: 1.7").unwrap().value,
        1.0
    );
}
