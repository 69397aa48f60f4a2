use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Class means at distance `separation` from the origin.
///
/// The first `n_dims` classes sit on the positive coordinate axes, the next
/// `n_dims` on the negative ones; any further classes get random unit
/// directions drawn from `rng`.
pub fn mixture_means(
    n_classes: usize,
    n_dims: usize,
    separation: f64,
    rng: &mut rng::Rng,
) -> Matrix {
    let mut means = Matrix::zeros(n_classes, n_dims);
    for k in 0..n_classes {
        let row = means.row_mut(k);
        if k < n_dims {
            row[k] = separation;
        } else if k < 2 * n_dims {
            row[k - n_dims] = -separation;
        } else {
            let mut norm = 0.0;
            while norm < 1e-12 {
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            for v in row.iter_mut() {
                *v *= separation / norm;
            }
        }
    }
    means
}

/// Isotropic unit-variance Gaussian mixture, `n_per_class` points per class.
///
/// Points are ordered class by class and carry ids `0..n`.
pub fn generate_mixture(
    n_classes: usize,
    n_dims: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes == 0 || n_dims == 0 || n_per_class == 0 {
        return Err(Error::arg(
            "n_classes, n_dims and n_per_class must be positive",
        ));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::arg(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mut rng = rng::stream(seed, rng::DATA);
    let means = mixture_means(n_classes, n_dims, separation, &mut rng);
    let n = n_classes * n_per_class;
    let mut data = Vec::with_capacity(n * n_dims);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n_classes {
        let mean = means.row(k);
        for _ in 0..n_per_class {
            for m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + z);
            }
            labels.push(k);
        }
    }
    let ids = (0..n as u64).collect();
    Dataset::new(Matrix::new(n, n_dims, data)?, labels, ids, n_classes)
}
