use std::collections::BTreeSet;

use cpmu_core::cpmu::{unlearn, CpmuConfig};
use cpmu_core::data::{generate_mixture, split_class_wise, SplitBundle, SplitFractions};
use cpmu_core::model::{train, Architecture, ModelParams, TrainConfig};

fn setup() -> (SplitBundle, ModelParams) {
    let data = generate_mixture(4, 4, 60, 3.0, 11).unwrap();
    let bundle =
        split_class_wise(&data, &BTreeSet::from([1]), SplitFractions::default(), 11).unwrap();
    let arch = Architecture {
        hidden: vec![12],
        ..Architecture::default()
    };
    let init = arch.init(4, 4, 11).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 16,
        seed: 11,
        ..TrainConfig::default()
    };
    let theta_o = train(&init, &bundle.train, &cfg).unwrap();
    (bundle, theta_o)
}

fn cfg() -> CpmuConfig {
    CpmuConfig {
        learning_rate: 0.1,
        batch_size: 8,
        seed: 3,
        ..CpmuConfig::default()
    }
}

#[test]
fn zero_epochs_is_the_identity() {
    let (bundle, theta_o) = setup();
    let (theta_u, trace) = unlearn(
        &theta_o,
        &bundle.unlearning_data(),
        &CpmuConfig { epochs: 0, ..cfg() },
    )
    .unwrap();
    assert_eq!(theta_u, theta_o);
    assert!(trace.is_empty());
}

#[test]
fn strong_anchor_limits_displacement() {
    let (bundle, theta_o) = setup();
    let data = bundle.unlearning_data();
    let run = |lambda_reg: f64| {
        let (t, _) = unlearn(
            &theta_o,
            &data,
            &CpmuConfig {
                lambda_reg,
                epochs: 1,
                learning_rate: 1e-7,
                ..cfg()
            },
        )
        .unwrap();
        t.distance(&theta_o) / theta_o.norm()
    };
    let free = run(0.0);
    let anchored = run(1e6);
    assert!(free > 0.0);
    assert!(anchored < free, "{anchored} vs {free}");
}

#[test]
fn huge_anchor_keeps_weights_in_place() {
    let (bundle, theta_o) = setup();
    let c = CpmuConfig {
        lambda_reg: 1e8,
        learning_rate: 1e-3,
        epochs: 1,
        ..cfg()
    };
    // step size at the stability limit of the anchor term
    let c = CpmuConfig {
        learning_rate: 1.0 / (2.0 * c.lambda_reg),
        ..c
    };
    let (theta_u, _) = unlearn(&theta_o, &bundle.unlearning_data(), &c).unwrap();
    assert!(theta_u.max_abs_diff(&theta_o) <= 1e-3);
}

#[test]
fn unlearning_is_deterministic_and_traced() {
    let (bundle, theta_o) = setup();
    let data = bundle.unlearning_data();
    let (a, ta) = unlearn(&theta_o, &data, &cfg()).unwrap();
    let (b, tb) = unlearn(&theta_o, &data, &cfg()).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
    assert_eq!(ta.len(), cfg().epochs);
    for (x, y) in ta.iter().zip(&tb) {
        assert_eq!(
            (x.epoch, x.q_hat, x.eps_f, x.eps_r, x.loss),
            (y.epoch, y.q_hat, y.eps_f, y.eps_r, y.loss)
        );
    }
    assert!(ta.windows(2).all(|w| w[0].wall_ms <= w[1].wall_ms));
    assert!(ta.iter().enumerate().all(|(i, r)| r.epoch == i));
    let text = cpmu_core::cpmu::format_trace(&ta);
    assert_eq!(text.lines().count(), ta.len() + 1);
    assert!(text.lines().skip(1).all(|l| l.split('\t').count() == 6));
}

#[test]
fn different_seeds_differ() {
    let (bundle, theta_o) = setup();
    let data = bundle.unlearning_data();
    let (a, _) = unlearn(&theta_o, &data, &cfg()).unwrap();
    let (b, _) = unlearn(&theta_o, &data, &CpmuConfig { seed: 4, ..cfg() }).unwrap();
    assert_ne!(a.as_slice(), b.as_slice());
}

#[test]
fn empty_forget_set_is_rejected() {
    let (mut bundle, theta_o) = setup();
    bundle.unlearn_forget = bundle.unlearn_forget.subset(&[]);
    assert!(unlearn(&theta_o, &bundle.unlearning_data(), &cfg()).is_err());
}
