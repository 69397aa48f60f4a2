use rand::seq::SliceRandom;

use super::{loss_and_grad, Architecture, LossTag, ModelParams};
use crate::data::{Dataset, SplitBundle};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 20,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::arg("weight decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Sgd {
        Sgd::new(self.learning_rate, self.momentum, self.weight_decay)
    }
}

/// SGD with heavy-ball momentum and L2 weight decay added to the gradient.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    /// Plain gradient descent.
    pub fn vanilla(learning_rate: f64) -> Self {
        Self::new(learning_rate, 0.0, 0.0)
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        let wd = self.weight_decay;
        let mu = self.momentum;
        let lr = self.learning_rate;
        if mu == 0.0 {
            for (p, g) in params.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *p -= lr * (g + wd * *p);
            }
            return;
        }
        let v = self.velocity.get_or_insert_with(|| vec![0.0; grad.len()]);
        for ((p, g), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(v.iter_mut())
        {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
}

/// Mini-batch cross-entropy training; `init` is left untouched.
pub fn train(init: &ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    let mut params = init.clone();
    let mut opt = cfg.optimizer();
    let mut rng = rng::stream(cfg.seed, rng::TRAIN);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk);
            let (_, grad) = loss_and_grad(&params, &batch, &LossTag::CrossEntropy)?;
            opt.step(&mut params, &grad);
        }
    }
    Ok(params)
}

/// Fresh seeded model trained only on the retained training points.
pub fn retrain_from_scratch(
    bundle: &SplitBundle,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    let retain = &bundle.train_retain;
    if retain.is_empty() {
        return Err(Error::EmptySubset {
            subset: "train_retain".into(),
        });
    }
    let init = arch.init(retain.n_dims(), retain.n_classes(), cfg.seed)?;
    train(&init, retain, cfg)
}
