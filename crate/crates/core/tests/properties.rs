use std::collections::BTreeSet;

use proptest::prelude::*;

use cpmu_core::conformal::calibrate;
use cpmu_core::data::{
    generate_mixture, kmeans, split_class_wise, split_group_wise, Dataset, SplitFractions,
};
use cpmu_core::metrics::{ecf_at_c, eucf_at_d, harmonic_mean, set_outcomes, Metric};
use cpmu_core::model::{Activation, ModelParams};

fn ids_disjoint(sets: &[&Dataset]) -> bool {
    let mut seen = BTreeSet::new();
    sets.iter().flat_map(|d| d.ids()).all(|id| seen.insert(*id))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn class_wise_bundles_are_disjoint_and_pure(
        seed in 0u64..10_000,
        classes in 3usize..8,
        forget in 0usize..3,
    ) {
        let d = generate_mixture(classes, 3, 60, 3.0, seed).unwrap();
        let labels = BTreeSet::from([forget]);
        let b = split_class_wise(&d, &labels, SplitFractions::default(), seed).unwrap();
        prop_assert!(ids_disjoint(&[
            &b.train_forget, &b.train_retain, &b.unlearn_forget, &b.unlearn_retain,
            &b.unlearn_calib, &b.test_calib, &b.test_forget, &b.test_retain,
        ]));
        for f in [&b.train_forget, &b.unlearn_forget, &b.test_forget] {
            prop_assert!(f.labels().iter().all(|y| labels.contains(y)));
        }
        for r in [&b.train_retain, &b.unlearn_retain, &b.test_retain] {
            prop_assert!(r.labels().iter().all(|y| !labels.contains(y)));
        }
        let total: usize = [&b.train, &b.unlearn_forget, &b.unlearn_retain, &b.unlearn_calib,
            &b.test_calib, &b.test_forget, &b.test_retain].iter().map(|s| s.len()).sum();
        prop_assert_eq!(total, d.len());
    }

    #[test]
    fn group_wise_bundles_are_disjoint(seed in 0u64..10_000, clusters in 3usize..8) {
        let d = generate_mixture(4, 3, 60, 3.0, seed).unwrap();
        let km = kmeans(d.features(), clusters, 50, seed).unwrap();
        let forget = km.assignments[0];
        let b = split_group_wise(&d, d.features(), clusters, &BTreeSet::from([forget]), SplitFractions::default(), seed);
        // a tiny cluster can leave a subset empty, which is an error by contract
        if let Ok(b) = b {
            prop_assert!(ids_disjoint(&[
                &b.train_forget, &b.train_retain, &b.unlearn_forget, &b.unlearn_retain,
                &b.unlearn_calib, &b.test_calib, &b.test_forget, &b.test_retain,
            ]));
        }
    }

    #[test]
    fn efficient_frequencies_are_complementary(seed in 0u64..10_000, alpha in 0.05f64..0.9, scale in 0.5f64..8.0) {
        let k = 5;
        let mut m = ModelParams::init(&[3, 6, k], Activation::Tanh, seed).unwrap();
        m.scale(scale);
        let data = generate_mixture(k, 3, 12, 1.0, seed).unwrap();
        let cal = calibrate(&m, &data, alpha, Some(seed)).unwrap();
        let out = set_outcomes(&m, &data, &cal).unwrap();
        for c in 0..=k {
            match (ecf_at_c(&out, c), eucf_at_d(&out, c)) {
                (Metric::Value(a), Metric::Value(b)) => {
                    prop_assert!((0.0..=1.0).contains(&a));
                    prop_assert!((a + b - 1.0).abs() < 1e-12);
                }
                (Metric::Undefined, Metric::Undefined) => {}
                other => prop_assert!(false, "{:?}", other),
            }
        }
    }

    #[test]
    fn harmonic_mean_is_bounded(values in prop::collection::vec(0.01f64..1.0, 1..7)) {
        let ms: Vec<Metric> = values.iter().map(|&v| Metric::Value(v)).collect();
        let h = harmonic_mean(&ms).unwrap();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!(min - 1e-12 <= h && h <= mean + 1e-12);
        let mut with_zero = ms.clone();
        with_zero.push(Metric::Undefined);
        prop_assert_eq!(harmonic_mean(&with_zero).unwrap(), 0.0);
    }
}

#[test]
fn calibration_and_unlearn_pools_see_the_same_forget_share() {
    let (mut calib, mut pool) = (0.0, 0.0);
    let runs = 200;
    for seed in 0..runs {
        let d = generate_mixture(5, 2, 60, 3.0, seed).unwrap();
        let b =
            split_class_wise(&d, &BTreeSet::from([2]), SplitFractions::default(), seed).unwrap();
        let share = |n: usize, of: usize| n as f64 / of as f64;
        calib += share(
            b.unlearn_calib.labels().iter().filter(|&&y| y == 2).count(),
            b.unlearn_calib.len(),
        );
        pool += share(
            b.unlearn_forget.len(),
            b.unlearn_forget.len() + b.unlearn_retain.len(),
        );
    }
    let (calib, pool) = (calib / runs as f64, pool / runs as f64);
    assert!(
        (calib - 0.2).abs() < 0.02 && (pool - 0.2).abs() < 0.02,
        "{calib} {pool}"
    );
}
