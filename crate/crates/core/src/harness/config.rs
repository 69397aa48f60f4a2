//! Flat `key=value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! data.classes=10
//! scenario.forget=rotate
//! method=cpmu
//! cpmu.lr=0.5
//! eval.c=1,5
//! seeds=0..6
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::{BaselineConfig, BaselineMethod};
use crate::cpmu::CpmuConfig;
use crate::data::{ScenarioKind, SplitFractions};
use crate::error::{Error, Result};
use crate::model::{Architecture, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    None,
    Cpmu,
    Baseline(BaselineMethod),
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Cpmu => "cpmu",
            Method::Baseline(b) => b.as_str(),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "cpmu" => Ok(Method::Cpmu),
            other => other.parse().map(Method::Baseline),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which labels, clusters or points to forget.
#[derive(Debug, Clone, PartialEq)]
pub enum ForgetRule {
    /// Label or cluster `seed mod count`.
    Rotate,
    Fixed(BTreeSet<u64>),
    /// Instance scenario: a seeded random share of all points.
    Fraction(f64),
}

impl fmt::Display for ForgetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForgetRule::Rotate => f.write_str("rotate"),
            ForgetRule::Fixed(v) => f.write_str(&join(v.iter())),
            ForgetRule::Fraction(x) => write!(f, "fraction:{x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Embedding {
    /// Penultimate activations of the original model.
    Model,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    pub separation: f64,
    /// Share of each forget class kept after generation (class-wise only).
    pub forget_keep: f64,
    /// Read this file instead of generating data.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub forget: ForgetRule,
    pub clusters: usize,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub alpha: f64,
    pub c_values: Vec<usize>,
    /// Empty means "pair each c with d = c".
    pub d_values: Vec<usize>,
}

impl EvalConfig {
    /// The (c, d) pairs to evaluate.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        if self.d_values.is_empty() {
            self.c_values.iter().map(|&c| (c, c)).collect()
        } else {
            self.c_values
                .iter()
                .flat_map(|&c| self.d_values.iter().map(move |&d| (c, d)))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub scenario: ScenarioConfig,
    pub fractions: SplitFractions,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub method: Method,
    pub cpmu: CpmuConfig,
    pub baseline: BaselineConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig {
                classes: 10,
                dims: 5,
                per_class: 600,
                separation: 3.5,
                forget_keep: 1.0,
                file: None,
            },
            scenario: ScenarioConfig {
                kind: ScenarioKind::ClassWise,
                forget: ForgetRule::Rotate,
                clusters: 20,
                embedding: Embedding::Model,
            },
            fractions: SplitFractions::default(),
            arch: Architecture {
                hidden: vec![128],
                ..Architecture::default()
            },
            train: TrainConfig::default(),
            method: Method::Cpmu,
            cpmu: CpmuConfig {
                learning_rate: 0.5,
                ..CpmuConfig::default()
            },
            baseline: BaselineConfig::default(),
            eval: EvalConfig {
                alpha: 0.1,
                c_values: vec![5],
                d_values: vec![],
            },
            seeds: vec![0],
            output_dir: PathBuf::from("results"),
        }
    }
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

/// `a..b` (half-open) or a comma list.
fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse_num(key, a.trim())?, parse_num(key, b.trim())?);
        return Ok((a..b).collect());
    }
    parse_list(key, value)
}

fn with_key<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(key, other.to_string()),
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected key=value"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Set one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data.classes" => self.data.classes = parse_num(key, v)?,
            "data.dims" => self.data.dims = parse_num(key, v)?,
            "data.per_class" => self.data.per_class = parse_num(key, v)?,
            "data.separation" => self.data.separation = parse_num(key, v)?,
            "data.forget_keep" => self.data.forget_keep = parse_num(key, v)?,
            "data.file" => self.data.file = Some(PathBuf::from(v)),
            "scenario.kind" => self.scenario.kind = with_key(key, v.parse())?,
            "scenario.forget" => {
                self.scenario.forget = if v == "rotate" {
                    ForgetRule::Rotate
                } else if let Some(x) = v.strip_prefix("fraction:") {
                    ForgetRule::Fraction(parse_num(key, x)?)
                } else {
                    ForgetRule::Fixed(parse_list(key, v)?.into_iter().collect())
                }
            }
            "scenario.clusters" => self.scenario.clusters = parse_num(key, v)?,
            "scenario.embedding" => {
                self.scenario.embedding = match v {
                    "model" => Embedding::Model,
                    "raw" => Embedding::Raw,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected model or raw, got `{v}`"),
                        ))
                    }
                }
            }
            "split.train" => self.fractions.train = parse_num(key, v)?,
            "split.test_calib" => self.fractions.test_calib = parse_num(key, v)?,
            "split.test_holdout" => self.fractions.test_holdout = parse_num(key, v)?,
            "split.unlearn_calib" => self.fractions.unlearn_calib = parse_num(key, v)?,
            "split.unlearn" => self.fractions.unlearn = parse_num(key, v)?,
            "model.hidden" => self.arch.hidden = parse_list(key, v)?,
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.lr" => self.train.learning_rate = parse_num(key, v)?,
            "train.momentum" => self.train.momentum = parse_num(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "method" => {
                self.method = with_key(key, v.parse())?;
                if let Method::Baseline(b) = self.method {
                    self.baseline.method = b;
                }
            }
            "cpmu.alpha" => self.cpmu.alpha = parse_num(key, v)?,
            "cpmu.delta" => self.cpmu.delta = parse_num(key, v)?,
            "cpmu.gamma" => self.cpmu.gamma = parse_num(key, v)?,
            "cpmu.lambda" => self.cpmu.lambda_reg = parse_num(key, v)?,
            "cpmu.reg_norm" => self.cpmu.reg_norm = with_key(key, v.parse())?,
            "cpmu.epochs" => self.cpmu.epochs = parse_num(key, v)?,
            "cpmu.lr" => self.cpmu.learning_rate = parse_num(key, v)?,
            "cpmu.batch_size" => self.cpmu.batch_size = parse_num(key, v)?,
            "cpmu.direction" => self.cpmu.loss_direction = with_key(key, v.parse())?,
            "cpmu.momentum" => self.cpmu.momentum = parse_num(key, v)?,
            "cpmu.weight_decay" => self.cpmu.weight_decay = parse_num(key, v)?,
            "baseline.alpha_mix" => self.baseline.alpha_mix = parse_num(key, v)?,
            "baseline.epochs" => self.baseline.epochs = parse_num(key, v)?,
            "baseline.lr" => self.baseline.learning_rate = parse_num(key, v)?,
            "baseline.batch_size" => self.baseline.batch_size = parse_num(key, v)?,
            "baseline.momentum" => self.baseline.momentum = parse_num(key, v)?,
            "eval.alpha" => self.eval.alpha = parse_num(key, v)?,
            "eval.c" => self.eval.c_values = parse_list(key, v)?,
            "eval.d" => self.eval.d_values = parse_list(key, v)?,
            "seeds" => self.seeds = parse_seeds(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Number of labels, known without loading a data file.
    fn n_classes_hint(&self) -> Option<usize> {
        self.data.file.is_none().then_some(self.data.classes)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.data.file.is_none() {
            if self.data.classes < 2 {
                return fail("data.classes", "need at least two classes".into());
            }
            if self.data.dims == 0 || self.data.per_class == 0 {
                return fail("data.dims", "dims and per_class must be positive".into());
            }
            if !(self.data.separation > 0.0) {
                return fail("data.separation", "must be positive".into());
            }
        }
        if !(self.data.forget_keep > 0.0 && self.data.forget_keep <= 1.0) {
            return fail("data.forget_keep", "must lie in (0, 1]".into());
        }
        if self.data.forget_keep < 1.0 && self.scenario.kind != ScenarioKind::ClassWise {
            return fail(
                "data.forget_keep",
                "only applies to class_wise scenarios".into(),
            );
        }
        match (&self.scenario.forget, self.scenario.kind) {
            (ForgetRule::Fraction(x), ScenarioKind::InstanceWise) if !(*x > 0.0 && *x < 1.0) => {
                return fail("scenario.forget", "fraction must lie in (0, 1)".into())
            }
            (ForgetRule::Fraction(_), k) if k != ScenarioKind::InstanceWise => {
                return fail(
                    "scenario.forget",
                    "fraction:<x> only applies to instance_wise".into(),
                )
            }
            (ForgetRule::Rotate, ScenarioKind::InstanceWise) => {
                return fail(
                    "scenario.forget",
                    "instance_wise needs ids or fraction:<x>".into(),
                )
            }
            (ForgetRule::Fixed(v), _) if v.is_empty() => {
                return fail("scenario.forget", "empty forget set".into())
            }
            _ => {}
        }
        if self.scenario.kind == ScenarioKind::GroupWise && self.scenario.clusters == 0 {
            return fail("scenario.clusters", "must be positive".into());
        }
        with_key("split", self.fractions.validate())?;
        if self.arch.hidden.contains(&0) {
            return fail("model.hidden", "layer widths must be positive".into());
        }
        with_key("train", self.train.validate())?;
        with_key("cpmu", self.cpmu.validate())?;
        with_key("baseline", self.baseline.validate())?;
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return fail("eval.alpha", "must lie in (0, 1)".into());
        }
        if self.eval.c_values.is_empty() {
            return fail("eval.c", "need at least one value".into());
        }
        if let Some(k) = self.n_classes_hint() {
            for (key, vals) in [
                ("eval.c", &self.eval.c_values),
                ("eval.d", &self.eval.d_values),
            ] {
                if let Some(v) = vals.iter().find(|&&v| v > k) {
                    return fail(key, format!("{v} exceeds {k} classes"));
                }
            }
        }
        if self.seeds.is_empty() {
            return fail("seeds", "need at least one seed".into());
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let f = &self.fractions;
        let mut lines = vec![
            format!("data.classes={}", self.data.classes),
            format!("data.dims={}", self.data.dims),
            format!("data.per_class={}", self.data.per_class),
            format!("data.separation={}", self.data.separation),
            format!("data.forget_keep={}", self.data.forget_keep),
        ];
        if let Some(p) = &self.data.file {
            lines.push(format!("data.file={}", p.display()));
        }
        lines.extend([
            format!("scenario.kind={}", self.scenario.kind),
            format!("scenario.forget={}", self.scenario.forget),
            format!("scenario.clusters={}", self.scenario.clusters),
            format!(
                "scenario.embedding={}",
                match self.scenario.embedding {
                    Embedding::Model => "model",
                    Embedding::Raw => "raw",
                }
            ),
            format!("split.train={}", f.train),
            format!("split.test_calib={}", f.test_calib),
            format!("split.test_holdout={}", f.test_holdout),
            format!("split.unlearn_calib={}", f.unlearn_calib),
            format!("split.unlearn={}", f.unlearn),
            format!("model.hidden={}", join(self.arch.hidden.iter())),
            format!("train.epochs={}", self.train.epochs),
            format!("train.lr={}", self.train.learning_rate),
            format!("train.momentum={}", self.train.momentum),
            format!("train.weight_decay={}", self.train.weight_decay),
            format!("train.batch_size={}", self.train.batch_size),
            format!("method={}", self.method),
            format!("cpmu.alpha={}", self.cpmu.alpha),
            format!("cpmu.delta={}", self.cpmu.delta),
            format!("cpmu.gamma={}", self.cpmu.gamma),
            format!("cpmu.lambda={}", self.cpmu.lambda_reg),
            format!("cpmu.reg_norm={}", self.cpmu.reg_norm),
            format!("cpmu.epochs={}", self.cpmu.epochs),
            format!("cpmu.lr={}", self.cpmu.learning_rate),
            format!("cpmu.batch_size={}", self.cpmu.batch_size),
            format!("cpmu.direction={}", self.cpmu.loss_direction),
            format!("cpmu.momentum={}", self.cpmu.momentum),
            format!("cpmu.weight_decay={}", self.cpmu.weight_decay),
            format!("baseline.alpha_mix={}", self.baseline.alpha_mix),
            format!("baseline.epochs={}", self.baseline.epochs),
            format!("baseline.lr={}", self.baseline.learning_rate),
            format!("baseline.batch_size={}", self.baseline.batch_size),
            format!("baseline.momentum={}", self.baseline.momentum),
            format!("eval.alpha={}", self.eval.alpha),
            format!("eval.c={}", join(self.eval.c_values.iter())),
        ]);
        if !self.eval.d_values.is_empty() {
            lines.push(format!("eval.d={}", join(self.eval.d_values.iter())));
        }
        lines.push(format!("seeds={}", join(self.seeds.iter())));
        lines.push(format!("output_dir={}", self.output_dir.display()));
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
