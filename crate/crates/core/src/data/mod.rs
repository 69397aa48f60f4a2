//! Datasets, synthetic generators and the forget/retain split protocol.

mod generate;
mod io;
mod kmeans;
mod split;

use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use generate::{generate_mixture, mixture_means};
pub use io::{format_dataset, parse_dataset, read_dataset, write_dataset};
pub use kmeans::{kmeans, KMeans};
pub use split::{
    auxiliary_train_pool, pool_sizes, split_class_wise, split_group_wise, split_instance_wise,
    ScenarioKind, ScenarioSpec, SplitBundle, SplitFractions, UnlearningData,
};

/// Labelled points with stable ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    ids: Vec<u64>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        ids: Vec<u64>,
        n_classes: usize,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::arg("n_classes must be positive"));
        }
        if features.rows() != labels.len() || labels.len() != ids.len() {
            return Err(Error::arg(format!(
                "row count mismatch: {} feature rows, {} labels, {} ids",
                features.rows(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::arg(format!("label {bad} outside [0, {n_classes})")));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::arg(format!("duplicate point id {dup}")));
        }
        Ok(Self {
            features,
            labels,
            ids,
            n_classes,
        })
    }

    pub fn empty(n_dims: usize, n_classes: usize) -> Self {
        Self {
            features: Matrix::zeros(0, n_dims),
            labels: Vec::new(),
            ids: Vec::new(),
            n_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_dims(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn label_set(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    pub fn id_set(&self) -> BTreeSet<u64> {
        self.ids.iter().copied().collect()
    }

    /// Points at the given positions, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Same points with replaced labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            self.features.clone(),
            labels,
            self.ids.clone(),
            self.n_classes,
        )
    }

    /// Concatenation; ids must stay unique.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("nothing to concatenate"))?;
        let mut features = Matrix::zeros(0, first.n_dims());
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for p in parts {
            if p.n_dims() != first.n_dims() || p.n_classes != first.n_classes {
                return Err(Error::arg("concatenating datasets of different shape"));
            }
            for i in 0..p.len() {
                features.push_row(p.x(i));
            }
            labels.extend_from_slice(&p.labels);
            ids.extend_from_slice(&p.ids);
        }
        Dataset::new(features, labels, ids, first.n_classes)
    }
}
