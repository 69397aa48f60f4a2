//! Reference unlearners: retraining from scratch, random relabeling (AMN)
//! and the loss-gap method (nabla-tau).
//!
//! AMN and nabla-tau only receive [`UnlearningData`], so they cannot read
//! the test-time calibration or evaluation subsets.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{Dataset, SplitBundle, UnlearningData};
use crate::error::{Error, Result};
use crate::model::{
    loss_and_grad, retrain_from_scratch, train, Architecture, LossTag, ModelParams, Sgd,
    TrainConfig,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Rt,
    Amn,
    NablaTau,
}

impl BaselineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::Rt => "rt",
            BaselineMethod::Amn => "amn",
            BaselineMethod::NablaTau => "nabla_tau",
        }
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rt" => Ok(BaselineMethod::Rt),
            "amn" => Ok(BaselineMethod::Amn),
            "nabla_tau" => Ok(BaselineMethod::NablaTau),
            _ => Err(Error::arg(format!("unknown baseline `{s}`"))),
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Weight of the hinge term in nabla-tau.
    pub alpha_mix: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            method: BaselineMethod::Amn,
            alpha_mix: 0.5,
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 64,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_mix) {
            return Err(Error::arg(format!(
                "alpha_mix must lie in [0, 1], got {}",
                self.alpha_mix
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!(
                "baseline learning rate is invalid: {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("baseline batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("baseline momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn require(name: &str, set: &Dataset) -> Result<()> {
    if set.is_empty() {
        Err(Error::EmptySubset {
            subset: name.into(),
        })
    } else {
        Ok(())
    }
}

/// Replace every label by a uniform draw from the other classes.
pub fn relabel_uniform(labels: &[usize], n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::arg("relabeling needs at least two classes"));
    }
    let mut r = rng::stream(seed, rng::RELABEL);
    Ok(labels
        .iter()
        .map(|&y| {
            let k = r.gen_range(0..n_classes - 1);
            if k >= y {
                k + 1
            } else {
                k
            }
        })
        .collect())
}

/// Fine-tune on randomly relabeled forget points together with the retain set.
pub fn amn_unlearn(
    theta_o: &ModelParams,
    data: &UnlearningData<'_>,
    cfg: &BaselineConfig,
) -> Result<ModelParams> {
    cfg.validate()?;
    require("unlearn_forget", data.forget)?;
    require("unlearn_retain", data.retain)?;
    let labels = relabel_uniform(data.forget.labels(), data.forget.n_classes(), cfg.seed)?;
    let relabeled = data.forget.with_labels(labels)?;
    let combined = Dataset::concat(&[&relabeled, data.retain])?;
    let tc = TrainConfig {
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        weight_decay: 0.0,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: rng::derive(cfg.seed, 0xA3),
    };
    train(theta_o, &combined, &tc)
}

/// `a * max(0, L_v - L_f) + (1 - a) * L_r` with mean cross-entropies, and
/// its gradient.
pub fn nabla_tau_loss_and_grad(
    params: &ModelParams,
    validation: &Dataset,
    forget: &Dataset,
    retain: &Dataset,
    alpha_mix: f64,
) -> Result<(f64, ModelParams)> {
    let ce = LossTag::CrossEntropy;
    let (lr, gr) = loss_and_grad(params, retain, &ce)?;
    let mut grad = params.zeros_like();
    grad.axpy(1.0 - alpha_mix, &gr);
    let mut loss = (1.0 - alpha_mix) * lr;
    if alpha_mix > 0.0 {
        let (lv, gv) = loss_and_grad(params, validation, &ce)?;
        let (lf, gf) = loss_and_grad(params, forget, &ce)?;
        if lv > lf {
            loss += alpha_mix * (lv - lf);
            grad.axpy(alpha_mix, &gv);
            grad.axpy(-alpha_mix, &gf);
        }
    }
    Ok((loss, grad))
}

/// Raise the forget loss to the level of unseen data while fitting the
/// retain set; one batch of each set per step, shorter sets cycling.
pub fn nabla_tau_unlearn(
    theta_o: &ModelParams,
    data: &UnlearningData<'_>,
    validation: &Dataset,
    cfg: &BaselineConfig,
) -> Result<ModelParams> {
    cfg.validate()?;
    require("unlearn_forget", data.forget)?;
    require("unlearn_retain", data.retain)?;
    require("validation", validation)?;
    let sets = [validation, data.forget, data.retain];
    let mut orders: Vec<Vec<usize>> = sets.iter().map(|s| (0..s.len()).collect()).collect();
    let b = cfg.batch_size;
    let steps = sets.iter().map(|s| s.len().div_ceil(b)).max().unwrap_or(0);
    let mut r = rng::stream(cfg.seed, rng::UNLEARN);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, 0.0);
    let mut theta = theta_o.clone();
    for epoch in 0..cfg.epochs {
        for o in orders.iter_mut() {
            o.shuffle(&mut r);
        }
        let chunks: Vec<Vec<&[usize]>> = orders.iter().map(|o| o.chunks(b).collect()).collect();
        for step in 0..steps {
            let batch = |i: usize| sets[i].subset(chunks[i][step % chunks[i].len()]);
            let (loss, grad) =
                nabla_tau_loss_and_grad(&theta, &batch(0), &batch(1), &batch(2), cfg.alpha_mix)
                    .map_err(|e| {
                        if e.is_numeric() {
                            Error::NonFiniteLoss { epoch, batch: step }
                        } else {
                            e
                        }
                    })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: step });
            }
            opt.step(&mut theta, &grad);
        }
    }
    Ok(theta)
}

/// Dispatch on `cfg.method`. Retraining uses `arch` and `train_cfg`; the
/// other methods start from `theta_o` and see only the unlearning subsets.
pub fn run_baseline(
    theta_o: &ModelParams,
    bundle: &SplitBundle,
    arch: &Architecture,
    train_cfg: &TrainConfig,
    cfg: &BaselineConfig,
) -> Result<ModelParams> {
    let data = bundle.unlearning_data();
    match cfg.method {
        BaselineMethod::Rt => retrain_from_scratch(bundle, arch, train_cfg),
        BaselineMethod::Amn => amn_unlearn(theta_o, &data, cfg),
        BaselineMethod::NablaTau => {
            nabla_tau_unlearn(theta_o, &data, &data.validation_forget(), cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_mixture;
    use crate::model::{mean_loss, Activation};
    use crate::testutil::max_rel_error;

    #[test]
    fn relabels_always_change_the_label() {
        let labels: Vec<usize> = (0..5000).map(|i| i % 7).collect();
        let new = relabel_uniform(&labels, 7, 3).unwrap();
        assert!(labels.iter().zip(&new).all(|(a, b)| a != b && *b < 7));
        // roughly uniform over the six alternatives
        let from_zero: Vec<usize> = labels
            .iter()
            .zip(&new)
            .filter(|(a, _)| **a == 0)
            .map(|(_, b)| *b)
            .collect();
        for k in 1..7 {
            let share =
                from_zero.iter().filter(|&&b| b == k).count() as f64 / from_zero.len() as f64;
            assert!((share - 1.0 / 6.0).abs() < 0.05, "{k}: {share}");
        }
        assert_eq!(relabel_uniform(&[0, 1], 2, 0).unwrap(), vec![1, 0]);
        assert!(relabel_uniform(&[0], 1, 0).is_err());
    }

    fn fixture(seed: u64) -> (ModelParams, Dataset, Dataset, Dataset) {
        let d = generate_mixture(3, 3, 3, 1.0, seed).unwrap();
        let p = ModelParams::init(&[3, 5, 3], Activation::Tanh, seed).unwrap();
        (
            p,
            d.subset(&[0, 1, 2]),
            d.subset(&[3, 4]),
            d.subset(&[5, 6, 7, 8]),
        )
    }

    #[test]
    fn hinge_dead_zone_leaves_the_retain_term() {
        let (p, v, f, r) = fixture(1);
        let ce = LossTag::CrossEntropy;
        let lv = mean_loss(&p, &v, &ce).unwrap();
        let lf = mean_loss(&p, &f, &ce).unwrap();
        let lr = mean_loss(&p, &r, &ce).unwrap();
        let (dead_v, dead_f) = if lv <= lf { (&v, &f) } else { (&f, &v) };
        let (loss, _) = nabla_tau_loss_and_grad(&p, dead_v, dead_f, &r, 0.3).unwrap();
        assert!((loss - 0.7 * lr).abs() < 1e-14);
        let (loss0, g0) = nabla_tau_loss_and_grad(&p, &v, &f, &r, 0.0).unwrap();
        let (_, gr) = loss_and_grad(&p, &r, &ce).unwrap();
        assert_eq!(loss0, lr);
        assert_eq!(g0, gr);
    }

    #[test]
    fn nabla_tau_gradient_matches_finite_differences() {
        let mut checked_active = false;
        for seed in 0..50 {
            let (p, v, f, r) = fixture(seed);
            let (mut v, mut f) = (v, f);
            let ce = LossTag::CrossEntropy;
            if mean_loss(&p, &v, &ce).unwrap() < mean_loss(&p, &f, &ce).unwrap() && seed % 2 == 0 {
                std::mem::swap(&mut v, &mut f);
            }
            let gap = mean_loss(&p, &v, &ce).unwrap() - mean_loss(&p, &f, &ce).unwrap();
            if gap.abs() < 1e-3 {
                continue;
            }
            checked_active |= gap > 0.0;
            let (_, g) = nabla_tau_loss_and_grad(&p, &v, &f, &r, 0.6).unwrap();
            let obj = |q: &ModelParams| nabla_tau_loss_and_grad(q, &v, &f, &r, 0.6).unwrap().0;
            let coords: Vec<usize> = (0..p.len()).collect();
            let err = max_rel_error(&p, &obj, &g, &coords);
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
        assert!(checked_active);
    }

    fn small_bundle() -> (crate::data::SplitBundle, ModelParams) {
        let data = generate_mixture(3, 2, 40, 4.0, 5).unwrap();
        let bundle = crate::data::split_class_wise(
            &data,
            &std::collections::BTreeSet::from([0]),
            crate::data::SplitFractions::default(),
            5,
        )
        .unwrap();
        let init = ModelParams::init(&[2, 8, 3], Activation::Tanh, 5).unwrap();
        let tc = TrainConfig {
            epochs: 10,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let theta_o = train(&init, &bundle.train, &tc).unwrap();
        (bundle, theta_o)
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let (bundle, theta_o) = small_bundle();
        let data = bundle.unlearning_data();
        let cfg = BaselineConfig {
            epochs: 0,
            ..BaselineConfig::default()
        };
        assert_eq!(amn_unlearn(&theta_o, &data, &cfg).unwrap(), theta_o);
        assert_eq!(
            nabla_tau_unlearn(&theta_o, &data, &data.validation_forget(), &cfg).unwrap(),
            theta_o
        );
    }

    #[test]
    fn baselines_are_deterministic() {
        let (bundle, theta_o) = small_bundle();
        let arch = Architecture {
            hidden: vec![8],
            ..Architecture::default()
        };
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        for method in [
            BaselineMethod::Rt,
            BaselineMethod::Amn,
            BaselineMethod::NablaTau,
        ] {
            let cfg = BaselineConfig {
                method,
                epochs: 2,
                batch_size: 8,
                seed: 9,
                ..BaselineConfig::default()
            };
            let a = run_baseline(&theta_o, &bundle, &arch, &tc, &cfg).unwrap();
            let b = run_baseline(&theta_o, &bundle, &arch, &tc, &cfg).unwrap();
            assert_eq!(a.as_slice(), b.as_slice(), "{method}");
        }
    }

    #[test]
    fn empty_validation_is_rejected() {
        let (bundle, theta_o) = small_bundle();
        let data = bundle.unlearning_data();
        let empty = data.forget.subset(&[]);
        assert!(nabla_tau_unlearn(&theta_o, &data, &empty, &BaselineConfig::default()).is_err());
        assert!(BaselineConfig {
            alpha_mix: 1.5,
            ..BaselineConfig::default()
        }
        .validate()
        .is_err());
    }
}
