//! Conformal unlearning by surrogate-risk maximization.
//!
//! Every epoch the split-conformal threshold is recomputed on the
//! unlearning calibration set and the calibration point whose score lies
//! nearest to it supplies the reference probability `p_q`. Retain points are
//! pushed to beat `p_q` by a relative margin `delta`, forget points to fall
//! below it, and the weights are tied to the original model by an L2 or L1
//! anchor penalty.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::conformal::calibrate;
use crate::data::{Dataset, UnlearningData};
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, LossTag, ModelParams, Sgd};
use crate::rng;

/// `1 / (1 + exp(-gamma u))` without overflow.
pub fn sigmoid_surrogate(u: f64, gamma: f64) -> f64 {
    let t = gamma * u;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Argument order of the two surrogate risks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossDirection {
    /// Retain: `p_u - (1+delta) p_q`; forget: `p_q - (1+delta) p_u`.
    #[default]
    Corrected,
    /// Retain: `(1+delta) p_q - p_u`; forget: `(1+delta) p_u - p_q`.
    AsWritten,
}

impl LossDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            LossDirection::Corrected => "corrected",
            LossDirection::AsWritten => "as_written",
        }
    }
}

impl FromStr for LossDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(LossDirection::Corrected),
            "as_written" => Ok(LossDirection::AsWritten),
            _ => Err(Error::arg(format!("unknown loss direction `{s}`"))),
        }
    }
}

impl fmt::Display for LossDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Penalty on `theta - theta_o`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegNorm {
    /// Squared Euclidean norm.
    #[default]
    L2Squared,
    L1,
}

impl RegNorm {
    pub fn as_str(self) -> &'static str {
        match self {
            RegNorm::L2Squared => "l2_squared",
            RegNorm::L1 => "l1",
        }
    }

    /// Penalty value and its gradient with respect to `params`.
    pub fn penalty(self, params: &ModelParams, anchor: &ModelParams) -> (f64, ModelParams) {
        let mut grad = params.zeros_like();
        let mut value = 0.0;
        let pairs = params.as_slice().iter().zip(anchor.as_slice());
        for (g, (p, a)) in grad.as_mut_slice().iter_mut().zip(pairs) {
            let diff = p - a;
            match self {
                RegNorm::L2Squared => {
                    value += diff * diff;
                    *g = 2.0 * diff;
                }
                RegNorm::L1 => {
                    value += diff.abs();
                    *g = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
        }
        (value, grad)
    }
}

impl FromStr for RegNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2_squared" | "l2" => Ok(RegNorm::L2Squared),
            "l1" => Ok(RegNorm::L1),
            _ => Err(Error::arg(format!("unknown regularization norm `{s}`"))),
        }
    }
}

impl fmt::Display for RegNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateRole {
    Forget,
    Retain,
}

/// Per-sample CPMU loss term as a function of the true-label probability.
///
/// `value` is the negated surrogate risk, so minimizing it maximizes the risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateTerm {
    pub role: SurrogateRole,
    pub p_q: f64,
    pub gamma: f64,
    pub delta: f64,
    pub direction: LossDirection,
}

impl SurrogateTerm {
    /// Sigmoid argument and its derivative in `p`.
    fn argument(&self, p: f64) -> (f64, f64) {
        let m = 1.0 + self.delta;
        match (self.direction, self.role) {
            (LossDirection::Corrected, SurrogateRole::Retain) => (p - m * self.p_q, 1.0),
            (LossDirection::Corrected, SurrogateRole::Forget) => (self.p_q - m * p, -m),
            (LossDirection::AsWritten, SurrogateRole::Retain) => (m * self.p_q - p, -1.0),
            (LossDirection::AsWritten, SurrogateRole::Forget) => (m * p - self.p_q, m),
        }
    }

    /// Surrogate risk of one point.
    pub fn risk(&self, p: f64) -> f64 {
        sigmoid_surrogate(self.argument(p).0, self.gamma)
    }

    pub fn value(&self, p: f64) -> f64 {
        -self.risk(p)
    }

    pub fn derivative(&self, p: f64) -> f64 {
        let (u, du) = self.argument(p);
        let s = sigmoid_surrogate(u, self.gamma);
        -self.gamma * s * (1.0 - s) * du
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpmuConfig {
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
    pub lambda_reg: f64,
    pub reg_norm: RegNorm,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss_direction: LossDirection,
    /// Base-optimizer settings; both zero gives plain gradient steps.
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for CpmuConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            delta: 1e-4,
            gamma: 10.0,
            lambda_reg: 1e-3,
            reg_norm: RegNorm::L2Squared,
            epochs: 6,
            learning_rate: 0.01,
            batch_size: 64,
            loss_direction: LossDirection::Corrected,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl CpmuConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::arg(format!("cpmu {what} is invalid: {v}")));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", self.alpha);
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma", self.gamma);
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad("delta", self.delta);
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad("lambda", self.lambda_reg);
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate", self.learning_rate);
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::arg(
                "cpmu momentum must lie in [0, 1) and weight decay be non-negative",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("cpmu batch size must be positive"));
        }
        Ok(())
    }

    fn term(&self, role: SurrogateRole, p_q: f64) -> SurrogateTerm {
        SurrogateTerm {
            role,
            p_q,
            gamma: self.gamma,
            delta: self.delta,
            direction: self.loss_direction,
        }
    }
}

/// Reference quantities held fixed during one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateContext {
    pub p_q: f64,
    pub q_hat: f64,
    pub epoch: usize,
}

/// Mean surrogate risks `(eps_f, eps_r)` of the two batches.
pub fn surrogate_risks(
    params: &ModelParams,
    forget: &Dataset,
    retain: &Dataset,
    ctx: &SurrogateContext,
    cfg: &CpmuConfig,
) -> Result<(f64, f64)> {
    let f = crate::model::mean_loss(
        params,
        forget,
        &LossTag::Surrogate(cfg.term(SurrogateRole::Forget, ctx.p_q)),
    )?;
    let r = crate::model::mean_loss(
        params,
        retain,
        &LossTag::Surrogate(cfg.term(SurrogateRole::Retain, ctx.p_q)),
    )?;
    Ok((-f, -r))
}

/// Loss and gradient of one paired step, with the risks it is built from.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub loss: f64,
    pub eps_f: f64,
    pub eps_r: f64,
    pub grad: ModelParams,
}

pub fn cpmu_step(
    params: &ModelParams,
    anchor: &ModelParams,
    forget: &Dataset,
    retain: &Dataset,
    ctx: &SurrogateContext,
    cfg: &CpmuConfig,
) -> Result<StepEval> {
    if !params.same_shape(anchor) {
        return Err(Error::arg("parameters and anchor differ in shape"));
    }
    let forget_tag = LossTag::Surrogate(cfg.term(SurrogateRole::Forget, ctx.p_q));
    let retain_tag = LossTag::Surrogate(cfg.term(SurrogateRole::Retain, ctx.p_q));
    let (lf, mut grad) = loss_and_grad(params, forget, &forget_tag)?;
    let (lr, gr) = loss_and_grad(params, retain, &retain_tag)?;
    grad.axpy(1.0, &gr);
    let mut loss = lf + lr;
    if cfg.lambda_reg != 0.0 {
        let (pen, gpen) = cfg.reg_norm.penalty(params, anchor);
        loss += cfg.lambda_reg * pen;
        grad.axpy(cfg.lambda_reg, &gpen);
    }
    Ok(StepEval {
        loss,
        eps_f: -lf,
        eps_r: -lr,
        grad,
    })
}

/// `-eps_f - eps_r + lambda R(params - anchor)` and its gradient.
pub fn cpmu_loss_and_grad(
    params: &ModelParams,
    anchor: &ModelParams,
    forget: &Dataset,
    retain: &Dataset,
    ctx: &SurrogateContext,
    cfg: &CpmuConfig,
) -> Result<(f64, ModelParams)> {
    let s = cpmu_step(params, anchor, forget, retain, ctx, cfg)?;
    Ok((s.loss, s.grad))
}

/// One line of the unlearning trace; risks and loss are batch means.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub q_hat: f64,
    pub p_q: f64,
    pub eps_f: f64,
    pub eps_r: f64,
    pub loss: f64,
    /// Milliseconds since the start of the run at the end of the epoch.
    pub wall_ms: f64,
}

/// Tab-separated trace with a header line.
pub fn format_trace(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\tq_hat\teps_f\teps_r\tloss\twall_ms\n");
    for r in trace {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.3}\n",
            r.epoch,
            crate::harness::fmt_float(r.q_hat),
            r.eps_f,
            r.eps_r,
            r.loss,
            r.wall_ms
        ));
    }
    out
}

fn numeric_at(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| {
        if e.is_numeric() {
            Error::NonFiniteLoss { epoch, batch }
        } else {
            e
        }
    }
}

/// Run CPMU from `theta_o`, returning the unlearned weights and the
/// per-epoch trace.
pub fn unlearn(
    theta_o: &ModelParams,
    data: &UnlearningData<'_>,
    cfg: &CpmuConfig,
) -> Result<(ModelParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    for (name, set) in [
        ("unlearn_forget", data.forget),
        ("unlearn_retain", data.retain),
        ("unlearn_calib", data.calib),
    ] {
        if set.is_empty() {
            return Err(Error::EmptySubset {
                subset: name.into(),
            });
        }
    }
    let clock = crate::clock::Clock::start();
    let mut theta = theta_o.clone();
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let mut rng = rng::stream(cfg.seed, rng::UNLEARN);
    let mut forget_order: Vec<usize> = (0..data.forget.len()).collect();
    let mut retain_order: Vec<usize> = (0..data.retain.len()).collect();
    let b = cfg.batch_size;
    let steps = data
        .forget
        .len()
        .div_ceil(b)
        .max(data.retain.len().div_ceil(b));
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let noise = rng::derive(cfg.seed, 0xC0DE_0000 + epoch as u64);
        let cal =
            calibrate(&theta, data.calib, cfg.alpha, Some(noise)).map_err(numeric_at(epoch, 0))?;
        let ctx = SurrogateContext {
            p_q: cal.nearest_prob(),
            q_hat: cal.q_hat,
            epoch,
        };
        forget_order.shuffle(&mut rng);
        retain_order.shuffle(&mut rng);
        let forget_chunks: Vec<&[usize]> = forget_order.chunks(b).collect();
        let retain_chunks: Vec<&[usize]> = retain_order.chunks(b).collect();
        let (mut eps_f, mut eps_r, mut loss) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let fb = data
                .forget
                .subset(forget_chunks[step % forget_chunks.len()]);
            let rb = data
                .retain
                .subset(retain_chunks[step % retain_chunks.len()]);
            let s =
                cpmu_step(&theta, theta_o, &fb, &rb, &ctx, cfg).map_err(numeric_at(epoch, step))?;
            if !s.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: step });
            }
            opt.step(&mut theta, &s.grad);
            eps_f += s.eps_f;
            eps_r += s.eps_r;
            loss += s.loss;
        }
        let n = steps as f64;
        trace.push(EpochRecord {
            epoch,
            q_hat: cal.q_hat,
            p_q: ctx.p_q,
            eps_f: eps_f / n,
            eps_r: eps_r / n,
            loss: loss / n,
            wall_ms: clock.elapsed_ms(),
        });
    }
    if !theta.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs.saturating_sub(1),
            batch: steps.saturating_sub(1),
        });
    }
    Ok((theta, trace))
}
