//! Forward and backward passes.

use super::{Activation, ModelParams};
use crate::cpmu::SurrogateTerm;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-sample loss applied to the model output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossTag {
    CrossEntropy,
    /// Negated sigmoid surrogate risk of the true-label probability.
    Surrogate(SurrogateTerm),
}

/// Numerically stable softmax (max-logit subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn activate(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Tanh => x.tanh(),
    }
}

/// Derivative expressed through the activation output.
fn activate_grad(act: Activation, y: f64) -> f64 {
    match act {
        Activation::Tanh => 1.0 - y * y,
    }
}

/// Layer outputs for a batch: `acts[0]` is the input, `acts[l]` the output of
/// layer `l` (activated for hidden layers, raw logits for the last).
fn forward_all(params: &ModelParams, x: &[f64], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut acts = Vec::with_capacity(params.n_layers() + 1);
    acts.push(x.to_vec());
    for l in 0..params.n_layers() {
        let (n_in, n_out) = (params.sizes[l], params.sizes[l + 1]);
        let (w, b) = params.layer(l);
        let input = &acts[l];
        let mut out = vec![0.0; batch * n_out];
        let hidden = l + 1 < params.n_layers();
        for s in 0..batch {
            let xin = &input[s * n_in..(s + 1) * n_in];
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z = b[j] + row.iter().zip(xin).map(|(a, c)| a * c).sum::<f64>();
                out[s * n_out + j] = if hidden {
                    activate(params.activation, z)
                } else {
                    z
                };
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: l });
        }
        acts.push(out);
    }
    Ok(acts)
}

fn check_dims(params: &ModelParams, n_dims: usize) -> Result<()> {
    if n_dims != params.n_dims() {
        return Err(Error::arg(format!(
            "input has {n_dims} features, model expects {}",
            params.n_dims()
        )));
    }
    Ok(())
}

pub fn logits(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    check_dims(params, x.len())?;
    Ok(forward_all(params, x, 1)?.pop().unwrap())
}

/// Class probabilities `p(y | x)`.
pub fn forward_probs(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&logits(params, x)?))
}

/// Row-wise class probabilities for every point.
pub fn predict_probs(params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    check_dims(params, features.cols())?;
    let logits = forward_all(params, features.as_slice(), features.rows())?
        .pop()
        .unwrap();
    let c = params.n_classes();
    let mut probs = Vec::with_capacity(logits.len());
    for row in logits.chunks(c) {
        probs.extend(softmax(row));
    }
    Matrix::new(features.rows(), c, probs)
}

/// Penultimate-layer activations, the representation fed to the output layer.
pub fn embed(params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    check_dims(params, features.cols())?;
    let mut acts = forward_all(params, features.as_slice(), features.rows())?;
    acts.pop();
    let width = params.sizes[params.n_layers() - 1];
    Matrix::new(features.rows(), width, acts.pop().unwrap())
}

pub fn accuracy(params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("accuracy of an empty dataset"));
    }
    let probs = predict_probs(params, data.features())?;
    let hits = probs
        .iter_rows()
        .zip(data.labels())
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Loss of one sample and its derivative with respect to the logits.
fn sample_loss(tag: &LossTag, logits: &[f64], y: usize, dlogits: &mut [f64]) -> f64 {
    let p = softmax(logits);
    match tag {
        LossTag::CrossEntropy => {
            for (k, d) in dlogits.iter_mut().enumerate() {
                *d = p[k] - if k == y { 1.0 } else { 0.0 };
            }
            log_sum_exp(logits) - logits[y]
        }
        LossTag::Surrogate(term) => {
            let py = p[y];
            let dl_dp = term.derivative(py);
            // d p_y / d z_k = p_y (1{k=y} - p_k)
            for (k, d) in dlogits.iter_mut().enumerate() {
                *d = dl_dp * py * (if k == y { 1.0 } else { 0.0 } - p[k]);
            }
            term.value(py)
        }
    }
}

fn check_batch(params: &ModelParams, batch: &Dataset) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    check_dims(params, batch.n_dims())?;
    if batch.n_classes() != params.n_classes() {
        return Err(Error::arg(format!(
            "batch has {} classes, model has {}",
            batch.n_classes(),
            params.n_classes()
        )));
    }
    Ok(())
}

/// Mean loss over the batch.
pub fn mean_loss(params: &ModelParams, batch: &Dataset, tag: &LossTag) -> Result<f64> {
    check_batch(params, batch)?;
    let n = batch.len();
    let logits = forward_all(params, batch.features().as_slice(), n)?
        .pop()
        .unwrap();
    let c = params.n_classes();
    let mut scratch = vec![0.0; c];
    let total: f64 = logits
        .chunks(c)
        .zip(batch.labels())
        .map(|(z, &y)| sample_loss(tag, z, y, &mut scratch))
        .sum();
    finite_loss(total / n as f64, params)
}

fn finite_loss(loss: f64, params: &ModelParams) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            layer: params.n_layers(),
        })
    }
}

/// Mean loss over the batch and its gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &Dataset,
    tag: &LossTag,
) -> Result<(f64, ModelParams)> {
    check_batch(params, batch)?;
    let n = batch.len();
    let acts = forward_all(params, batch.features().as_slice(), n)?;
    let c = params.n_classes();
    let scale = 1.0 / n as f64;

    let mut delta = vec![0.0; n * c];
    let mut total = 0.0;
    for (s, &y) in batch.labels().iter().enumerate() {
        let z = &acts[params.n_layers()][s * c..(s + 1) * c];
        total += sample_loss(tag, z, y, &mut delta[s * c..(s + 1) * c]);
    }
    delta.iter_mut().for_each(|d| *d *= scale);
    let loss = finite_loss(total * scale, params)?;

    let mut grad = params.zeros_like();
    for l in (0..params.n_layers()).rev() {
        let (n_in, n_out) = (params.sizes[l], params.sizes[l + 1]);
        let input = &acts[l];
        {
            let (gw, gb) = grad.layer_mut(l);
            for s in 0..n {
                let d = &delta[s * n_out..(s + 1) * n_out];
                let xin = &input[s * n_in..(s + 1) * n_in];
                for j in 0..n_out {
                    if d[j] == 0.0 {
                        continue;
                    }
                    gb[j] += d[j];
                    for (g, x) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(xin) {
                        *g += d[j] * x;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let (w, _) = params.layer(l);
        let mut prev = vec![0.0; n * n_in];
        for s in 0..n {
            let d = &delta[s * n_out..(s + 1) * n_out];
            let p = &mut prev[s * n_in..(s + 1) * n_in];
            for j in 0..n_out {
                for (pi, wji) in p.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *pi += d[j] * wji;
                }
            }
            for (pi, a) in p.iter_mut().zip(&input[s * n_in..(s + 1) * n_in]) {
                *pi *= activate_grad(params.activation, *a);
            }
        }
        delta = prev;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpmu::{LossDirection, SurrogateRole};
    use crate::data::generate_mixture;
    use crate::rng;
    use crate::testutil::max_rel_error;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn identity_model() -> ModelParams {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        ModelParams::from_layers(&[w], &[vec![0.0, 0.0]], Activation::Tanh).unwrap()
    }

    #[test]
    fn symmetric_logits_give_uniform_probs() {
        let p = forward_probs(&identity_model(), &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn logistic_value_for_logits_two_zero() {
        let p = forward_probs(&identity_model(), &[2.0, 0.0]).unwrap();
        // 1 / (1 + e^-2)
        let oracle = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((p[0] - 0.880797).abs() < 1e-5);
        assert!((p[0] - oracle).abs() < 1e-15);
        assert!((p[1] - 0.119203).abs() < 1e-5);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.4).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        assert!(matches!(
            forward_probs(&identity_model(), &[1.0]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn accuracy_counts_hits() {
        // class = sign of the first coordinate
        let w = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let p = ModelParams::from_layers(&[w], &[vec![0.0, 0.0]], Activation::Tanh).unwrap();
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![if i < 7 { 1.0 } else { -1.0 }])
            .collect();
        let truth = Dataset::new(
            Matrix::from_rows(&xs).unwrap(),
            vec![1; 10],
            (0..10).collect(),
            2,
        )
        .unwrap();
        assert!((accuracy(&p, &truth).unwrap() - 0.7).abs() < 1e-15);
        let all_right: Vec<usize> = (0..10).map(|i| if i < 7 { 1 } else { 0 }).collect();
        assert_eq!(
            accuracy(&p, &truth.with_labels(all_right.clone()).unwrap()).unwrap(),
            1.0
        );
        let all_wrong: Vec<usize> = all_right.iter().map(|y| 1 - y).collect();
        assert_eq!(
            accuracy(&p, &truth.with_labels(all_wrong).unwrap()).unwrap(),
            0.0
        );
        assert!(accuracy(&p, &Dataset::empty(1, 2)).is_err());
    }

    #[test]
    fn zero_model_cross_entropy_is_ln2() {
        let p = ModelParams::zeros(&[3, 2], Activation::Tanh).unwrap();
        let d = generate_mixture(2, 3, 4, 1.0, 0).unwrap();
        let (loss, _) = loss_and_grad(&p, &d, &LossTag::CrossEntropy).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_gradient() {
        let d = generate_mixture(3, 2, 3, 1.0, 1).unwrap();
        let p = ModelParams::init(&[2, 5, 3], Activation::Tanh, 3).unwrap();
        let dup = Dataset::new(
            {
                let mut m = d.features().clone();
                for i in 0..d.len() {
                    m.push_row(d.x(i));
                }
                m
            },
            d.labels().iter().chain(d.labels()).copied().collect(),
            (0..2 * d.len() as u64).collect(),
            3,
        )
        .unwrap();
        let (l1, g1) = loss_and_grad(&p, &d, &LossTag::CrossEntropy).unwrap();
        let (l2, g2) = loss_and_grad(&p, &dup, &LossTag::CrossEntropy).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        assert!(g1.max_abs_diff(&g2) < 1e-14);
    }

    #[test]
    fn non_finite_weights_are_reported_with_layer() {
        let mut p = ModelParams::init(&[2, 3, 2], Activation::Tanh, 0).unwrap();
        p.layer_mut(1).0[0] = f64::NAN;
        let d = generate_mixture(2, 2, 2, 1.0, 0).unwrap();
        assert!(matches!(
            loss_and_grad(&p, &d, &LossTag::CrossEntropy),
            Err(Error::NonFinite { layer: 1 })
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let d = generate_mixture(3, 4, 2, 1.0, 2)
            .unwrap()
            .subset(&[0, 1, 2, 3, 4]);
        let p = ModelParams::init(&[4, 6, 3], Activation::Tanh, 9).unwrap();
        let (_, g) = loss_and_grad(&p, &d, &LossTag::CrossEntropy).unwrap();
        let mut r = rng::stream(1, 0);
        let coords: Vec<usize> = (0..20).map(|_| r.gen_range(0..p.len())).collect();
        let f = |q: &ModelParams| mean_loss(q, &d, &LossTag::CrossEntropy).unwrap();
        assert!(max_rel_error(&p, &f, &g, &coords) <= 1e-4);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let d = generate_mixture(3, 3, 2, 1.0, 5).unwrap();
        let p = ModelParams::init(&[3, 5, 4, 3], Activation::Tanh, 2).unwrap();
        for role in [SurrogateRole::Forget, SurrogateRole::Retain] {
            let tag = LossTag::Surrogate(SurrogateTerm {
                role,
                p_q: 0.4,
                gamma: 10.0,
                delta: 1e-4,
                direction: LossDirection::Corrected,
            });
            let (_, g) = loss_and_grad(&p, &d, &tag).unwrap();
            let f = |q: &ModelParams| mean_loss(q, &d, &tag).unwrap();
            let coords: Vec<usize> = (0..p.len()).collect();
            assert!(max_rel_error(&p, &f, &g, &coords) <= 1e-4);
        }
    }

    #[test]
    fn embedding_is_the_penultimate_layer() {
        let p = ModelParams::init(&[2, 7, 3], Activation::Tanh, 1).unwrap();
        let d = generate_mixture(3, 2, 2, 1.0, 0).unwrap();
        let e = embed(&p, d.features()).unwrap();
        assert_eq!((e.rows(), e.cols()), (6, 7));
        assert!(e.as_slice().iter().all(|v| v.abs() <= 1.0));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(seed in 0u64..10_000, scale in 0.1f64..50.0) {
            let p = ModelParams::init(&[3, 8, 5], Activation::Tanh, seed).unwrap();
            let mut q = p.clone();
            q.scale(scale);
            let mut r = rng::stream(seed, 1);
            let x: Vec<f64> = (0..3).map(|_| r.gen_range(-10.0..10.0)).collect();
            let probs = forward_probs(&q, &x).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
