//! The forget/retain split protocol.
//!
//! One uniform shuffle of the data is carved into five pools: the training
//! pool, the test calibration set, the unseen test holdout, the unlearning
//! calibration set and the unlearning pool. The holdout, unlearning pool
//! and training pool are then divided into forget and retain parts by the
//! scenario's auxiliary variable (label or cluster). Because the
//! unlearning calibration set and the unlearning pool are contiguous
//! segments of one shuffle, they are exchangeable by construction.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::{kmeans, Dataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    ClassWise,
    GroupWise,
    InstanceWise,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::ClassWise => "class_wise",
            ScenarioKind::GroupWise => "group_wise",
            ScenarioKind::InstanceWise => "instance_wise",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_wise" => Ok(ScenarioKind::ClassWise),
            "group_wise" => Ok(ScenarioKind::GroupWise),
            "instance_wise" => Ok(ScenarioKind::InstanceWise),
            other => Err(Error::arg(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Fraction of the whole dataset assigned to each pool.
///
/// Non-training pools are sized with floor rounding; the training pool
/// absorbs the rounding remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub test_calib: f64,
    pub test_holdout: f64,
    pub unlearn_calib: f64,
    pub unlearn: f64,
}

impl SplitFractions {
    /// 45000 / 4000 / 1000 / 8000 / 2000 out of 60000.
    pub fn cifar_ratios() -> Self {
        Self {
            train: 45_000.0 / 60_000.0,
            test_calib: 4_000.0 / 60_000.0,
            test_holdout: 1_000.0 / 60_000.0,
            unlearn_calib: 8_000.0 / 60_000.0,
            unlearn: 2_000.0 / 60_000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.train,
            self.test_calib,
            self.test_holdout,
            self.unlearn_calib,
            self.unlearn,
        ];
        if all.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::arg(format!(
                "split fractions must lie in [0, 1]: {self:?}"
            )));
        }
        if all.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::arg(format!("split fractions sum above 1: {self:?}")));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.5,
            test_calib: 0.15,
            test_holdout: 0.1,
            unlearn_calib: 0.15,
            unlearn: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSizes {
    pub train: usize,
    pub test_calib: usize,
    pub test_holdout: usize,
    pub unlearn_calib: usize,
    pub unlearn: usize,
}

pub fn pool_sizes(n: usize, fr: &SplitFractions) -> Result<PoolSizes> {
    fr.validate()?;
    let floor = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
    let test_calib = floor(fr.test_calib);
    let test_holdout = floor(fr.test_holdout);
    let unlearn_calib = floor(fr.unlearn_calib);
    let unlearn = floor(fr.unlearn);
    let unused = floor(
        (1.0 - fr.train - fr.test_calib - fr.test_holdout - fr.unlearn_calib - fr.unlearn).max(0.0),
    );
    let taken = test_calib + test_holdout + unlearn_calib + unlearn + unused;
    let train = n.saturating_sub(taken);
    Ok(PoolSizes {
        train,
        test_calib,
        test_holdout,
        unlearn_calib,
        unlearn,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Forget labels, forget cluster ids or forget point ids.
    pub forget_values: BTreeSet<u64>,
    pub fractions: SplitFractions,
    pub seed: u64,
}

/// The subsets of one forgetting experiment.
#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: Dataset,
    pub train_forget: Dataset,
    pub train_retain: Dataset,
    pub unlearn_forget: Dataset,
    pub unlearn_retain: Dataset,
    pub unlearn_calib: Dataset,
    /// Marks the unlearning-calibration points that carry the forget
    /// attribute; these form the validation forget set of the baselines.
    pub unlearn_calib_forget: Vec<bool>,
    pub test_calib: Dataset,
    pub test_forget: Dataset,
    pub test_retain: Dataset,
    pub scenario: ScenarioSpec,
}

/// The only subsets an unlearning method may read.
#[derive(Debug, Clone, Copy)]
pub struct UnlearningData<'a> {
    pub forget: &'a Dataset,
    pub retain: &'a Dataset,
    pub calib: &'a Dataset,
    pub calib_forget_mask: &'a [bool],
}

impl UnlearningData<'_> {
    fn calib_where(&self, flag: bool) -> Dataset {
        let idx: Vec<usize> = (0..self.calib.len())
            .filter(|&i| self.calib_forget_mask[i] == flag)
            .collect();
        self.calib.subset(&idx)
    }

    /// Calibration points carrying the forget attribute.
    pub fn validation_forget(&self) -> Dataset {
        self.calib_where(true)
    }

    pub fn validation_retain(&self) -> Dataset {
        self.calib_where(false)
    }
}

impl SplitBundle {
    pub fn unlearning_data(&self) -> UnlearningData<'_> {
        UnlearningData {
            forget: &self.unlearn_forget,
            retain: &self.unlearn_retain,
            calib: &self.unlearn_calib,
            calib_forget_mask: &self.unlearn_calib_forget,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.train.n_classes()
    }

    /// All named subsets with their names.
    pub fn named_subsets(&self) -> [(&'static str, &Dataset); 9] {
        [
            ("train", &self.train),
            ("train_forget", &self.train_forget),
            ("train_retain", &self.train_retain),
            ("unlearn_forget", &self.unlearn_forget),
            ("unlearn_retain", &self.unlearn_retain),
            ("unlearn_calib", &self.unlearn_calib),
            ("test_calib", &self.test_calib),
            ("test_forget", &self.test_forget),
            ("test_retain", &self.test_retain),
        ]
    }
}

fn shuffled(indices: impl Iterator<Item = usize>, rng: &mut rng::Rng) -> Vec<usize> {
    let mut v: Vec<usize> = indices.collect();
    v.shuffle(rng);
    v
}

fn partition(idx: &[usize], is_forget: &[bool]) -> (Vec<usize>, Vec<usize>) {
    idx.iter().partition(|&&i| is_forget[i])
}

fn require_non_empty(bundle: &SplitBundle) -> Result<()> {
    for (name, d) in bundle.named_subsets() {
        if d.is_empty() {
            return Err(Error::EmptySubset {
                subset: name.into(),
            });
        }
    }
    Ok(())
}

/// Index pools of the auxiliary carve: train, test calibration, test
/// holdout, unlearning calibration, unlearning pool.
fn auxiliary_pools(n: usize, fractions: &SplitFractions, seed: u64) -> Result<[Vec<usize>; 5]> {
    let sizes = pool_sizes(n, fractions)?;
    let mut rng = rng::stream(seed, rng::SPLIT);
    let perm = shuffled(0..n, &mut rng);
    let mut rest = perm.as_slice();
    let mut take = |k: usize| {
        let (head, tail) = rest.split_at(k.min(rest.len()));
        rest = tail;
        head.to_vec()
    };
    Ok([
        take(sizes.train),
        take(sizes.test_calib),
        take(sizes.test_holdout),
        take(sizes.unlearn_calib),
        take(sizes.unlearn),
    ])
}

/// The training pool every auxiliary split of `data` with these fractions
/// and seed shares, whatever the forget attribute.
pub fn auxiliary_train_pool(
    data: &Dataset,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<Dataset> {
    let [train, ..] = auxiliary_pools(data.len(), fractions, seed)?;
    Ok(data.subset(&train))
}

/// Shared carve for the auxiliary scenarios.
fn split_auxiliary(data: &Dataset, is_forget: &[bool], spec: ScenarioSpec) -> Result<SplitBundle> {
    let [train, test_calib, holdout, unlearn_calib, unlearn] =
        auxiliary_pools(data.len(), &spec.fractions, spec.seed)?;

    let (tf, tr) = partition(&train, is_forget);
    let (vf, vr) = partition(&holdout, is_forget);
    let (df, dr) = partition(&unlearn, is_forget);
    let bundle = SplitBundle {
        train: data.subset(&train),
        train_forget: data.subset(&tf),
        train_retain: data.subset(&tr),
        unlearn_forget: data.subset(&df),
        unlearn_retain: data.subset(&dr),
        unlearn_calib_forget: unlearn_calib.iter().map(|&i| is_forget[i]).collect(),
        unlearn_calib: data.subset(&unlearn_calib),
        test_calib: data.subset(&test_calib),
        test_forget: data.subset(&vf),
        test_retain: data.subset(&vr),
        scenario: spec,
    };
    require_non_empty(&bundle)?;
    Ok(bundle)
}

/// Class-wise auxiliary forgetting: the forget attribute is the label.
pub fn split_class_wise(
    data: &Dataset,
    forget_labels: &BTreeSet<usize>,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitBundle> {
    if forget_labels.is_empty() {
        return Err(Error::arg("forget label set is empty"));
    }
    let present = data.label_set();
    for &y in forget_labels {
        if y >= data.n_classes() || !present.contains(&y) {
            return Err(Error::arg(format!(
                "forget label {y} does not occur in the data"
            )));
        }
    }
    let is_forget: Vec<bool> = data
        .labels()
        .iter()
        .map(|y| forget_labels.contains(y))
        .collect();
    let spec = ScenarioSpec {
        kind: ScenarioKind::ClassWise,
        forget_values: forget_labels.iter().map(|&y| y as u64).collect(),
        fractions,
        seed,
    };
    split_auxiliary(data, &is_forget, spec)
}

/// Group-wise auxiliary forgetting: the forget attribute is the k-means
/// cluster of each point's embedding.
pub fn split_group_wise(
    data: &Dataset,
    embeddings: &Matrix,
    n_clusters: usize,
    forget_clusters: &BTreeSet<usize>,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitBundle> {
    if embeddings.rows() != data.len() {
        return Err(Error::arg(format!(
            "{} embedding rows for {} points",
            embeddings.rows(),
            data.len()
        )));
    }
    if forget_clusters.is_empty() {
        return Err(Error::arg("forget cluster set is empty"));
    }
    if let Some(&c) = forget_clusters.iter().find(|&&c| c >= n_clusters) {
        return Err(Error::arg(format!(
            "forget cluster {c} outside [0, {n_clusters})"
        )));
    }
    let km = kmeans(embeddings, n_clusters, 100, seed)?;
    for &c in forget_clusters {
        if !km.assignments.contains(&c) {
            return Err(Error::EmptySubset {
                subset: format!("forget cluster {c}"),
            });
        }
    }
    let is_forget: Vec<bool> = km
        .assignments
        .iter()
        .map(|a| forget_clusters.contains(a))
        .collect();
    let spec = ScenarioSpec {
        kind: ScenarioKind::GroupWise,
        forget_values: forget_clusters.iter().map(|&c| c as u64).collect(),
        fractions,
        seed,
    };
    split_auxiliary(data, &is_forget, spec)
}

/// Instance forgetting: the forget points are part of the training pool.
///
/// The unseen pools (test calibration, test retain holdout) are carved
/// from a shuffle of the non-forget points. The unlearning retain set is a
/// random draw from the retained training points of the same size as the
/// forget set. The unlearning calibration set mixes retained training
/// points and unseen points half and half. There is no unseen forget
/// population, so `test_forget` is empty.
pub fn split_instance_wise(
    data: &Dataset,
    forget_ids: &BTreeSet<u64>,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitBundle> {
    let ids = data.id_set();
    if let Some(bad) = forget_ids.iter().find(|id| !ids.contains(id)) {
        return Err(Error::arg(format!("unknown point id {bad}")));
    }
    let sizes = pool_sizes(data.len(), &fractions)?;
    let is_forget: Vec<bool> = data
        .ids()
        .iter()
        .map(|id| forget_ids.contains(id))
        .collect();
    let forget_idx: Vec<usize> = (0..data.len()).filter(|&i| is_forget[i]).collect();
    let mut rng = rng::stream(seed, rng::SPLIT);
    let others = shuffled((0..data.len()).filter(|&i| !is_forget[i]), &mut rng);

    let calib_trained = sizes.unlearn_calib / 2;
    let calib_unseen = sizes.unlearn_calib - calib_trained;
    let unseen = sizes.test_calib + sizes.test_holdout + calib_unseen;
    if unseen > others.len() {
        return Err(Error::arg(format!(
            "{} non-forget points cannot fill {unseen} unseen evaluation slots",
            others.len()
        )));
    }
    let (test_calib, rest) = others.split_at(sizes.test_calib);
    let (holdout, rest) = rest.split_at(sizes.test_holdout);
    let (calib_fresh, train_retain) = rest.split_at(calib_unseen);

    let k = forget_idx.len().min(train_retain.len());
    let (unlearn_retain, rest) = train_retain.split_at(k);
    let calib_old = &rest[..calib_trained.min(rest.len())];

    let mut unlearn_calib: Vec<usize> = calib_old.to_vec();
    unlearn_calib.extend_from_slice(calib_fresh);
    let mut calib_forget_mask = vec![false; calib_old.len()];
    calib_forget_mask.resize(calib_old.len() + calib_fresh.len(), true);

    let mut train = forget_idx.clone();
    train.extend_from_slice(train_retain);

    let spec = ScenarioSpec {
        kind: ScenarioKind::InstanceWise,
        forget_values: forget_ids.clone(),
        fractions,
        seed,
    };
    Ok(SplitBundle {
        train: data.subset(&train),
        train_forget: data.subset(&forget_idx),
        train_retain: data.subset(train_retain),
        unlearn_forget: data.subset(&forget_idx),
        unlearn_retain: data.subset(unlearn_retain),
        unlearn_calib: data.subset(&unlearn_calib),
        unlearn_calib_forget: calib_forget_mask,
        test_calib: data.subset(test_calib),
        test_forget: Dataset::empty(data.n_dims(), data.n_classes()),
        test_retain: data.subset(holdout),
        scenario: spec,
    })
}
