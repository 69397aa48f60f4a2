//! Lloyd's k-means with distance-weighted seeding.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Cluster index of every point, nearest to the final centroids.
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster squared distance after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self
            .inertia_history
            .last()
            .expect("at least one assignment step")
    }
}

pub fn kmeans(points: &Matrix, k: usize, max_iters: usize, seed: u64) -> Result<KMeans> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::arg(format!("k = {k} must be in [1, {n}]")));
    }
    if max_iters == 0 {
        return Err(Error::arg("max_iters must be positive"));
    }
    let mut centroids = seed_centroids(points, k, seed);
    let (mut assignments, inertia) = assign(points, &centroids);
    let mut inertia_history = vec![inertia];
    for _ in 0..max_iters {
        update(points, &assignments, &mut centroids);
        let (next, inertia) = assign(points, &centroids);
        inertia_history.push(inertia);
        let converged = next == assignments;
        assignments = next;
        if converged {
            break;
        }
    }
    Ok(KMeans {
        assignments,
        centroids,
        inertia_history,
    })
}

/// k-means++ seeding. When every remaining point coincides with a chosen
/// centroid the lowest-index unchosen point is taken.
fn seed_centroids(points: &Matrix, k: usize, seed: u64) -> Matrix {
    let n = points.rows();
    let mut rng = rng::stream(seed, rng::KMEANS);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = Matrix::zeros(0, points.cols());
    centroids.push_row(points.row(first));
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();
    while centroids.rows() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        centroids.push_row(points.row(pick));
        for (i, p) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, points.row(pick)));
        }
    }
    centroids
}

fn assign(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assignments = points
        .iter_rows()
        .map(|p| {
            let (best, dist) = nearest(p, centroids);
            inertia += dist;
            best
        })
        .collect();
    (assignments, inertia)
}

/// Nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(p: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Cluster means; an empty cluster keeps its previous centroid.
fn update(points: &Matrix, assignments: &[usize], centroids: &mut Matrix) {
    let k = centroids.rows();
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter_rows().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(p) {
            *s += v;
        }
    }
    for (j, &n) in counts.iter().enumerate() {
        if n > 0 {
            let c = n as f64;
            for (dst, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                *dst = s / c;
            }
        }
    }
}
