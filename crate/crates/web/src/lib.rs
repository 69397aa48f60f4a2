//! Browser demo: a three-class Gaussian mixture in the plane, the conformal
//! prediction sets of a small network over it, and CPMU unlearning of one
//! class.
//!
//! The exported [`Demo`] wraps plain methods that also run natively, which is
//! how the tests drive it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use wasm_bindgen::prelude::*;

use cpmu_core::conformal::set_from_probs;
use cpmu_core::cpmu::{unlearn, EpochRecord};
use cpmu_core::harness::{cpmu_config, prepare, ExperimentConfig, ForgetRule, Prepared};
use cpmu_core::metrics::{evaluate_all, evaluation_calibration};
use cpmu_core::model::{forward_probs, ModelParams};
use cpmu_core::Result;

pub const CLASSES: usize = 3;

fn demo_config(forget: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.classes = CLASSES;
    cfg.data.dims = 2;
    cfg.data.per_class = 600;
    cfg.data.separation = 2.5;
    cfg.data.forget_keep = 0.2;
    cfg.scenario.forget = ForgetRule::Fixed(BTreeSet::from([forget as u64]));
    cfg.arch.hidden = vec![16];
    cfg.train.epochs = 30;
    cfg.cpmu.batch_size = 32;
    cfg
}

/// JSON number, or `null` for infinities and NaN.
fn json_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "null".into()
    }
}

fn trace_json(trace: &[EpochRecord]) -> String {
    let rows: Vec<String> = trace
        .iter()
        .map(|r| {
            format!(
                "{{\"epoch\":{},\"q_hat\":{},\"p_q\":{},\"eps_f\":{},\"eps_r\":{},\"loss\":{}}}",
                r.epoch,
                json_num(r.q_hat),
                json_num(r.p_q),
                json_num(r.eps_f),
                json_num(r.eps_r),
                json_num(r.loss)
            )
        })
        .collect();
    format!("[{}]", rows.join(","))
}

#[wasm_bindgen]
pub struct Demo {
    cfg: ExperimentConfig,
    prepared: Prepared,
    theta_u: Option<ModelParams>,
    bounds: [f64; 4],
}

impl Demo {
    pub fn build(seed: u64, forget: usize) -> Result<Demo> {
        if forget >= CLASSES {
            return Err(cpmu_core::Error::config(
                "forget",
                format!("class {forget} outside 0..{CLASSES}"),
            ));
        }
        let cfg = demo_config(forget);
        let prepared = prepare(&cfg, seed, None)?;
        let mut bounds = [
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ];
        for (_, d) in prepared.bundle.named_subsets() {
            for row in d.features().iter_rows() {
                bounds[0] = bounds[0].min(row[0]);
                bounds[1] = bounds[1].max(row[0]);
                bounds[2] = bounds[2].min(row[1]);
                bounds[3] = bounds[3].max(row[1]);
            }
        }
        Ok(Demo {
            cfg,
            prepared,
            theta_u: None,
            bounds: [
                bounds[0] - 0.5,
                bounds[1] + 0.5,
                bounds[2] - 0.5,
                bounds[3] + 0.5,
            ],
        })
    }

    fn model(&self) -> &ModelParams {
        self.theta_u.as_ref().unwrap_or(&self.prepared.theta_o)
    }

    /// Label bitmask of the prediction set at the centre of each cell, row
    /// by row from the top.
    pub fn set_masks(&self, alpha: f64, width: usize, height: usize) -> Result<Vec<u8>> {
        let cal = evaluation_calibration(self.model(), &self.prepared.bundle, alpha)?;
        let [x0, x1, y0, y1] = self.bounds;
        let mut out = Vec::with_capacity(width * height);
        for j in 0..height {
            let y = y1 - (j as f64 + 0.5) / height as f64 * (y1 - y0);
            for i in 0..width {
                let x = x0 + (i as f64 + 0.5) / width as f64 * (x1 - x0);
                let probs = forward_probs(self.model(), &[x, y])?;
                out.push(
                    set_from_probs(&probs, cal.q_hat)
                        .iter()
                        .fold(0u8, |m, &l| m | (1 << l)),
                );
            }
        }
        Ok(out)
    }

    /// Run CPMU from the original model and switch to the result.
    pub fn run_unlearning(&mut self, learning_rate: f64, epochs: usize) -> Result<String> {
        let mut cfg = cpmu_config(&self.cfg, self.prepared.seed);
        cfg.learning_rate = learning_rate;
        cfg.epochs = epochs;
        let (theta_u, trace) = unlearn(
            &self.prepared.theta_o,
            &self.prepared.bundle.unlearning_data(),
            &cfg,
        )?;
        self.theta_u = Some(theta_u);
        Ok(trace_json(&trace))
    }

    /// Report of the current model as a flat JSON object.
    pub fn metrics_json(&self, alpha: f64, c: usize) -> Result<String> {
        let report = evaluate_all(self.model(), &self.prepared.bundle, alpha, c, c)?;
        let mut out = String::from("{");
        for (i, (k, v)) in report.entries(false).iter().enumerate() {
            let v = v.parse::<f64>().map_or("null".into(), json_num);
            let _ = write!(out, "{}\"{k}\":{v}", if i > 0 { "," } else { "" });
        }
        out.push('}');
        Ok(out)
    }
}

fn js(e: cpmu_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, forget: u32) -> std::result::Result<Demo, JsError> {
        Demo::build(seed as u64, forget as usize).map_err(js)
    }

    /// `[x_min, x_max, y_min, y_max]` of the plotted region.
    pub fn bounds(&self) -> Vec<f64> {
        self.bounds.to_vec()
    }

    /// Test points as `x, y, label, forget` quadruples.
    pub fn points(&self) -> Vec<f64> {
        let b = &self.prepared.bundle;
        let mut out = Vec::new();
        for (d, forget) in [(&b.test_retain, 0.0), (&b.test_forget, 1.0)] {
            for i in 0..d.len() {
                out.extend_from_slice(&[d.x(i)[0], d.x(i)[1], d.y(i) as f64, forget]);
            }
        }
        out
    }

    pub fn grid(
        &self,
        alpha: f64,
        width: usize,
        height: usize,
    ) -> std::result::Result<Vec<u8>, JsError> {
        self.set_masks(alpha, width, height).map_err(js)
    }

    pub fn unlearn(
        &mut self,
        learning_rate: f64,
        epochs: usize,
    ) -> std::result::Result<String, JsError> {
        self.run_unlearning(learning_rate, epochs).map_err(js)
    }

    pub fn reset(&mut self) {
        self.theta_u = None;
    }

    #[wasm_bindgen(js_name = isUnlearned)]
    pub fn is_unlearned(&self) -> bool {
        self.theta_u.is_some()
    }

    pub fn metrics(&self, alpha: f64, c: usize) -> std::result::Result<String, JsError> {
        self.metrics_json(alpha, c).map_err(js)
    }
}
