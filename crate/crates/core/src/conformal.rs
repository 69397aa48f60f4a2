//! Split conformal prediction for classifiers.
//!
//! The nonconformity score of `(x, y)` is `1 - p(y | x)`. Calibration sorts
//! the scores of a held-out set and takes the `ceil((1 - alpha)(n + 1))`-th
//! smallest as the threshold `q_hat`; the prediction set of `x` holds every
//! label whose score is at most `q_hat`. When the rank exceeds `n` the
//! threshold is `+inf` and every set is the full label space.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward_probs, predict_probs, ModelParams};
use crate::rng;

/// Upper end (exclusive) of the uniform tie-breaking noise.
pub const TIE_NOISE: f64 = 1e-9;

pub fn nonconformity(params: &ModelParams, x: &[f64], y: usize) -> Result<f64> {
    if y >= params.n_classes() {
        return Err(Error::arg(format!(
            "label {y} outside [0, {})",
            params.n_classes()
        )));
    }
    Ok(1.0 - forward_probs(params, x)?[y])
}

/// Scores of every point at its own label.
pub fn nonconformity_scores(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>> {
    let probs = predict_probs(params, data.features())?;
    Ok(probs
        .iter_rows()
        .zip(data.labels())
        .map(|(p, &y)| 1.0 - p[y])
        .collect())
}

/// The one comparison that decides set membership.
#[inline]
pub fn covers(score: f64, q_hat: f64) -> bool {
    score <= q_hat
}

/// `ceil((1 - alpha)(n + 1))`, clamped at 0.
///
/// A relative slack of 1e-12 absorbs the rounding error of decimal alphas
/// such as 0.1, whose product with `n + 1` should be an integer.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let target = (1.0 - alpha) * (n as f64 + 1.0);
    (target - 1e-12 * (n as f64 + 1.0)).ceil().max(0.0) as usize
}

/// Threshold for already-sorted scores: `+inf` past the end, `-inf` for a
/// zero rank (alpha = 1, every set empty).
pub fn quantile_from_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let rank = quantile_rank(sorted.len(), alpha);
    if rank == 0 {
        f64::NEG_INFINITY
    } else if rank > sorted.len() {
        f64::INFINITY
    } else {
        sorted[rank - 1]
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::arg(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub alpha: f64,
    pub n: usize,
    /// Scores used for the rank, ascending (noisy when tie-breaking is on).
    pub sorted_scores: Vec<f64>,
    pub q_hat: f64,
    pub n_classes: usize,
    /// Calibration point whose raw score is closest to `q_hat`.
    pub nearest_index: usize,
    pub nearest_id: u64,
    pub nearest_point: (Vec<f64>, usize),
    pub nearest_score: f64,
}

impl CalibrationResult {
    pub fn rank(&self) -> usize {
        quantile_rank(self.n, self.alpha)
    }

    pub fn is_trivial(&self) -> bool {
        self.q_hat == f64::INFINITY
    }

    /// Probability the current model gives the nearest-quantile point at its
    /// own label.
    pub fn nearest_prob(&self) -> f64 {
        1.0 - self.nearest_score
    }

    pub fn record(&self) -> CalibrationRecord {
        CalibrationRecord {
            alpha: self.alpha,
            n: self.n,
            q_hat: self.q_hat,
            nearest_id: self.nearest_id,
        }
    }
}

/// Calibrate on `calib` at miscoverage `alpha`.
///
/// With `tie_noise_seed`, uniform noise in `[0, TIE_NOISE)` is added to the
/// scores before ranking; set membership and the nearest point always use
/// the raw scores.
pub fn calibrate(
    params: &ModelParams,
    calib: &Dataset,
    alpha: f64,
    tie_noise_seed: Option<u64>,
) -> Result<CalibrationResult> {
    check_alpha(alpha)?;
    if calib.is_empty() {
        return Err(Error::arg("empty calibration set"));
    }
    let raw = nonconformity_scores(params, calib)?;
    let mut sorted = raw.clone();
    if let Some(seed) = tie_noise_seed {
        let mut r = rng::stream(seed, rng::TIE_NOISE);
        for s in sorted.iter_mut() {
            *s += r.gen::<f64>() * TIE_NOISE;
        }
    }
    sorted.sort_by(f64::total_cmp);
    let q_hat = quantile_from_sorted(&sorted, alpha);
    let nearest_index = nearest_to(&raw, q_hat);
    Ok(CalibrationResult {
        alpha,
        n: raw.len(),
        sorted_scores: sorted,
        q_hat,
        n_classes: params.n_classes(),
        nearest_index,
        nearest_id: calib.ids()[nearest_index],
        nearest_point: (calib.x(nearest_index).to_vec(), calib.y(nearest_index)),
        nearest_score: raw[nearest_index],
    })
}

/// Index minimizing `|score - q|`, lowest index on ties; for an infinite
/// threshold the extreme score on that side.
fn nearest_to(raw: &[f64], q: f64) -> usize {
    let key = |s: f64| {
        if q == f64::INFINITY {
            -s
        } else if q == f64::NEG_INFINITY {
            s
        } else {
            (s - q).abs()
        }
    };
    let mut best = 0;
    for (i, &s) in raw.iter().enumerate().skip(1) {
        if key(s) < key(raw[best]) {
            best = i;
        }
    }
    best
}

/// Labels `y` with `1 - p(y | x) <= q_hat`, ascending.
pub fn prediction_set(
    params: &ModelParams,
    x: &[f64],
    calib: &CalibrationResult,
) -> Result<Vec<usize>> {
    let probs = forward_probs(params, x)?;
    Ok(set_from_probs(&probs, calib.q_hat))
}

pub fn set_from_probs(probs: &[f64], q_hat: f64) -> Vec<usize> {
    (0..probs.len())
        .filter(|&y| covers(1.0 - probs[y], q_hat))
        .collect()
}

/// Prediction set of every point.
pub fn prediction_sets(
    params: &ModelParams,
    data: &Dataset,
    calib: &CalibrationResult,
) -> Result<Vec<Vec<usize>>> {
    let probs = predict_probs(params, data.features())?;
    Ok(probs
        .iter_rows()
        .map(|p| set_from_probs(p, calib.q_hat))
        .collect())
}

/// Fraction of points whose label lies in its prediction set.
pub fn empirical_coverage(
    params: &ModelParams,
    calib: &CalibrationResult,
    data: &Dataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("coverage of an empty dataset"));
    }
    let scores = nonconformity_scores(params, data)?;
    let hits = scores.iter().filter(|&&s| covers(s, calib.q_hat)).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Exported calibration summary: alpha, n, q_hat and the nearest point id.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub alpha: f64,
    pub n: usize,
    pub q_hat: f64,
    pub nearest_id: u64,
}

fn fmt_threshold(q: f64) -> String {
    if q == f64::INFINITY {
        "inf".into()
    } else if q == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{q}")
    }
}

impl CalibrationRecord {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "alpha={}", self.alpha).unwrap();
        writeln!(out, "n={}", self.n).unwrap();
        writeln!(out, "q_hat={}", fmt_threshold(self.q_hat)).unwrap();
        writeln!(out, "nearest_id={}", self.nearest_id).unwrap();
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut alpha = None;
        let mut n = None;
        let mut q_hat = None;
        let mut nearest_id = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad calibration line `{line}`")))?;
            let bad = || Error::Format(format!("bad value for `{k}`: `{v}`"));
            match k {
                "alpha" => alpha = Some(v.parse().map_err(|_| bad())?),
                "n" => n = Some(v.parse().map_err(|_| bad())?),
                "q_hat" => {
                    q_hat = Some(match v {
                        "inf" => f64::INFINITY,
                        "-inf" => f64::NEG_INFINITY,
                        _ => v.parse().map_err(|_| bad())?,
                    })
                }
                "nearest_id" => nearest_id = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(Error::Format(format!("unknown calibration key `{k}`"))),
            }
        }
        let missing = |k: &str| Error::Format(format!("calibration record lacks `{k}`"));
        Ok(Self {
            alpha: alpha.ok_or_else(|| missing("alpha"))?,
            n: n.ok_or_else(|| missing("n"))?,
            q_hat: q_hat.ok_or_else(|| missing("q_hat"))?,
            nearest_id: nearest_id.ok_or_else(|| missing("nearest_id"))?,
        })
    }
}
