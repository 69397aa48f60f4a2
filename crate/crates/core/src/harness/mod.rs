//! Seeded experiment runs, ablation sweeps and result files.
//!
//! For every seed the pipeline is: data, split, original model, unlearning
//! method, then [`evaluate_all`] for each requested `(c, d)` pair. Output
//! files written to the configured directory:
//!
//! - `seed<s>_c<c>_d<d>.csv`: one report as `key,value` rows
//! - `seed<s>_trace.tsv`: the CPMU trace (CPMU runs only)
//! - `aggregate.csv`, `aggregate.json`: mean and sample standard deviation
//!   across seeds of every metric, over the seeds where it is defined
//! - `timing.csv`: unlearning wall time per seed
//! - `config.txt`: the canonical configuration

mod config;

pub use config::{
    DataConfig, Embedding, EvalConfig, ExperimentConfig, ForgetRule, Method, ScenarioConfig,
};

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::baselines::{run_baseline, BaselineConfig};
use crate::clock::Clock;
use crate::cpmu::{format_trace, unlearn, CpmuConfig, EpochRecord, RegNorm};
use crate::data::{
    auxiliary_train_pool, generate_mixture, read_dataset, split_class_wise, split_group_wise,
    split_instance_wise, Dataset, ScenarioKind, SplitBundle,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_all, MetricsReport, Subset};
use crate::model::{embed, train, ModelParams, TrainConfig};
use crate::rng;

/// `inf`, `-inf` or the shortest round-trip decimal.
pub fn fmt_float(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.train.clone()
    }
}

/// Forget labels (class-wise) or clusters (group-wise) for this seed.
fn forget_groups(rule: &ForgetRule, seed: u64, count: usize) -> Result<BTreeSet<usize>> {
    match rule {
        ForgetRule::Rotate => Ok(BTreeSet::from([(seed % count as u64) as usize])),
        ForgetRule::Fixed(v) => Ok(v.iter().map(|&x| x as usize).collect()),
        ForgetRule::Fraction(_) => Err(Error::config(
            "scenario.forget",
            "fraction needs instance_wise",
        )),
    }
}

/// Keep a seeded share of every forget-class point.
fn thin_classes(data: &Dataset, classes: &BTreeSet<usize>, keep: f64, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, rng::SUBSAMPLE);
    let mut dropped = BTreeSet::new();
    for &c in classes {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.y(i) == c).collect();
        idx.shuffle(&mut r);
        let kept = ((keep * idx.len() as f64).round() as usize).max(1);
        dropped.extend(idx.into_iter().skip(kept));
    }
    let idx: Vec<usize> = (0..data.len()).filter(|i| !dropped.contains(i)).collect();
    data.subset(&idx)
}

/// The dataset of one seed: read or generated, with forget classes thinned
/// when `data.forget_keep < 1`.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let d = &cfg.data;
    let data = match &d.file {
        Some(path) => read_dataset(path)?,
        None => generate_mixture(d.classes, d.dims, d.per_class, d.separation, seed)?,
    };
    if d.forget_keep < 1.0 {
        let classes = forget_groups(&cfg.scenario.forget, seed, data.n_classes())?;
        return Ok(thin_classes(&data, &classes, d.forget_keep, seed));
    }
    Ok(data)
}

fn instance_forget_ids(rule: &ForgetRule, data: &Dataset, seed: u64) -> BTreeSet<u64> {
    match rule {
        ForgetRule::Fixed(v) => v.clone(),
        ForgetRule::Fraction(x) => {
            let mut ids = data.ids().to_vec();
            ids.shuffle(&mut rng::stream(seed, rng::SUBSAMPLE));
            let k = ((x * ids.len() as f64).round() as usize).max(1);
            ids.into_iter().take(k).collect()
        }
        ForgetRule::Rotate => BTreeSet::new(),
    }
}

/// Split of one seed together with the original model.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub bundle: SplitBundle,
    pub theta_o: ModelParams,
}

/// Build the split for `seed` and train the original model, or reuse
/// `theta_o` when given.
pub fn prepare(
    cfg: &ExperimentConfig,
    seed: u64,
    theta_o: Option<&ModelParams>,
) -> Result<Prepared> {
    let data = load_data(cfg, seed)?;
    let tc = train_config(cfg, seed);
    let fit = |pool: &Dataset| -> Result<ModelParams> {
        match theta_o {
            Some(t) => Ok(t.clone()),
            None => train(
                &cfg.arch.init(pool.n_dims(), pool.n_classes(), seed)?,
                pool,
                &tc,
            ),
        }
    };
    let sc = &cfg.scenario;
    let (bundle, theta_o) = match sc.kind {
        ScenarioKind::ClassWise => {
            let labels = forget_groups(&sc.forget, seed, data.n_classes())?;
            let bundle = split_class_wise(&data, &labels, cfg.fractions, seed)?;
            let theta = fit(&bundle.train)?;
            (bundle, theta)
        }
        ScenarioKind::GroupWise => {
            let pool = auxiliary_train_pool(&data, &cfg.fractions, seed)?;
            let theta = fit(&pool)?;
            let emb = match sc.embedding {
                Embedding::Model => embed(&theta, data.features())?,
                Embedding::Raw => data.features().clone(),
            };
            let clusters = forget_groups(&sc.forget, seed, sc.clusters)?;
            let bundle =
                split_group_wise(&data, &emb, sc.clusters, &clusters, cfg.fractions, seed)?;
            (bundle, theta)
        }
        ScenarioKind::InstanceWise => {
            let ids = instance_forget_ids(&sc.forget, &data, seed);
            let bundle = split_instance_wise(&data, &ids, cfg.fractions, seed)?;
            let theta = fit(&bundle.train)?;
            (bundle, theta)
        }
    };
    if theta_o.n_classes() != bundle.n_classes() || theta_o.n_dims() != bundle.train.n_dims() {
        return Err(Error::arg("model shape does not match the data"));
    }
    Ok(Prepared {
        seed,
        bundle,
        theta_o,
    })
}

/// Result of applying the configured method to one prepared seed.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub theta_u: ModelParams,
    pub tt_seconds: f64,
    pub trace: Option<Vec<EpochRecord>>,
}

pub fn cpmu_config(cfg: &ExperimentConfig, seed: u64) -> CpmuConfig {
    CpmuConfig {
        seed,
        ..cfg.cpmu.clone()
    }
}

pub fn baseline_config(cfg: &ExperimentConfig, seed: u64) -> BaselineConfig {
    BaselineConfig {
        seed,
        ..cfg.baseline.clone()
    }
}

pub fn apply_method(cfg: &ExperimentConfig, p: &Prepared) -> Result<MethodRun> {
    let clock = Clock::start();
    let (theta_u, trace) = match cfg.method {
        Method::None => (p.theta_o.clone(), None),
        Method::Cpmu => {
            let (t, trace) = unlearn(
                &p.theta_o,
                &p.bundle.unlearning_data(),
                &cpmu_config(cfg, p.seed),
            )?;
            (t, Some(trace))
        }
        Method::Baseline(_) => {
            let t = run_baseline(
                &p.theta_o,
                &p.bundle,
                &cfg.arch,
                &train_config(cfg, p.seed),
                &baseline_config(cfg, p.seed),
            )?;
            (t, None)
        }
    };
    Ok(MethodRun {
        theta_u,
        tt_seconds: clock.elapsed_ms() / 1e3,
        trace,
    })
}

/// Reports of one seed, one per `(c, d)` pair.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub reports: Vec<MetricsReport>,
    pub tt_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub output_dir: PathBuf,
    pub seeds: Vec<SeedResult>,
}

/// `key,value` rows of one report, without timing.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("key,value\n");
    for (k, v) in report.entries(false) {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

pub fn report_file_name(seed: u64, c: usize, d: usize) -> String {
    format!("seed{seed}_c{c}_d{d}.csv")
}

fn check_pairs(cfg: &ExperimentConfig, n_classes: usize) -> Result<()> {
    for (c, d) in cfg.eval.pairs() {
        if c > n_classes || d > n_classes {
            return Err(Error::config(
                "eval.c",
                format!("({c}, {d}) exceeds {n_classes} classes"),
            ));
        }
    }
    Ok(())
}

/// Run one seed end to end and write its files.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let p = prepare(cfg, seed, None)?;
    check_pairs(cfg, p.bundle.n_classes())?;
    let run = apply_method(cfg, &p)?;
    let mut reports = Vec::new();
    for (c, d) in cfg.eval.pairs() {
        let mut r = evaluate_all(&run.theta_u, &p.bundle, cfg.eval.alpha, c, d)?;
        r.tt_seconds = Some(run.tt_seconds);
        fs::write(
            cfg.output_dir.join(report_file_name(seed, c, d)),
            report_csv(&r),
        )?;
        reports.push(r);
    }
    if let Some(trace) = &run.trace {
        fs::write(
            cfg.output_dir.join(format!("seed{seed}_trace.tsv")),
            format_trace(trace),
        )?;
    }
    Ok(SeedResult {
        seed,
        reports,
        tt_seconds: run.tt_seconds,
    })
}

/// Mean and sample standard deviation (n - 1) of the defined values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            n,
            mean: None,
            std: None,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Summary {
        n,
        mean: Some(mean),
        std,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x}"))
}

/// Summaries of one `(c, d)` pair, keyed by metric name.
pub type PairSummary = ((usize, usize), Vec<(String, Summary)>);

/// Per-pair, per-key summaries across seeds, in report key order, without
/// timing.
pub fn aggregate(seeds: &[SeedResult]) -> Vec<PairSummary> {
    let Some(first) = seeds.first() else {
        return Vec::new();
    };
    let skip = ["alpha", "c", "d"];
    first
        .reports
        .iter()
        .enumerate()
        .map(|(i, r0)| {
            let columns: Vec<Vec<(String, String)>> =
                seeds.iter().map(|s| s.reports[i].entries(false)).collect();
            let rows = columns[0]
                .iter()
                .enumerate()
                .filter(|(_, (k, _))| !skip.contains(&k.as_str()))
                .map(|(j, (key, _))| {
                    let vals: Vec<f64> = columns
                        .iter()
                        .filter_map(|e| e[j].1.parse::<f64>().ok().filter(|x| x.is_finite()))
                        .collect();
                    (key.clone(), summarize(&vals))
                })
                .collect();
            ((r0.c, r0.d), rows)
        })
        .collect()
}

fn write_aggregates(cfg: &ExperimentConfig, seeds: &[SeedResult]) -> Result<()> {
    let agg = aggregate(seeds);
    let mut csv = String::from("c,d,metric,mean,std,n\n");
    let mut json = format!(
        "{{\n  \"method\": \"{}\",\n  \"alpha\": {},\n  \"seeds\": [{}],\n  \"pairs\": [\n",
        cfg.method,
        cfg.eval.alpha,
        seeds
            .iter()
            .map(|s| s.seed.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    for (pi, ((c, d), rows)) in agg.iter().enumerate() {
        json.push_str(&format!(
            "    {{\n      \"c\": {c},\n      \"d\": {d},\n      \"metrics\": {{\n"
        ));
        for (ri, (key, s)) in rows.iter().enumerate() {
            csv.push_str(&format!(
                "{c},{d},{key},{},{},{}\n",
                opt(s.mean),
                opt(s.std),
                s.n
            ));
            let q = |v: Option<f64>| {
                v.filter(|x| x.is_finite())
                    .map_or("\"undefined\"".into(), |x| format!("{x}"))
            };
            let sep = if ri + 1 == rows.len() { "" } else { "," };
            json.push_str(&format!(
                "        \"{key}\": {{\"mean\": {}, \"std\": {}, \"n\": {}}}{sep}\n",
                q(s.mean),
                q(s.std),
                s.n
            ));
        }
        let sep = if pi + 1 == agg.len() { "" } else { "," };
        json.push_str(&format!("      }}\n    }}{sep}\n"));
    }
    json.push_str("  ]\n}\n");
    fs::write(cfg.output_dir.join("aggregate.csv"), csv)?;
    fs::write(cfg.output_dir.join("aggregate.json"), json)?;
    Ok(())
}

fn write_timing(cfg: &ExperimentConfig, seeds: &[SeedResult]) -> Result<()> {
    let mut out = String::from("seed,method,tt_s\n");
    for s in seeds {
        out.push_str(&format!("{},{},{:.2}\n", s.seed, cfg.method, s.tt_seconds));
    }
    let t = summarize(&seeds.iter().map(|s| s.tt_seconds).collect::<Vec<_>>());
    let two = |v: Option<f64>| v.map_or("undefined".into(), |x| format!("{x:.2}"));
    out.push_str(&format!(
        "mean,{},{}\nstd,{},{}\n",
        cfg.method,
        two(t.mean),
        cfg.method,
        two(t.std)
    ));
    fs::write(cfg.output_dir.join("timing.csv"), out)?;
    Ok(())
}

/// Run every seed, writing each seed's files as soon as it finishes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.txt"), cfg.to_text())?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let r = run_seed(cfg, seed);
        match r {
            Ok(r) => seeds.push(r),
            Err(e) => {
                write_timing(cfg, &seeds)?;
                return Err(e);
            }
        }
        write_timing(cfg, &seeds)?;
    }
    write_aggregates(cfg, &seeds)?;
    Ok(ExperimentResult {
        output_dir: cfg.output_dir.clone(),
        seeds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    C,
    Alpha,
    Lambda,
    RegNorm,
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Sweep::C => "c",
            Sweep::Alpha => "alpha",
            Sweep::Lambda => "lambda",
            Sweep::RegNorm => "reg_norm",
        }
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c" => Ok(Sweep::C),
            "alpha" => Ok(Sweep::Alpha),
            "lambda" => Ok(Sweep::Lambda),
            "reg_norm" => Ok(Sweep::RegNorm),
            _ => Err(Error::config("sweep", format!("unknown sweep `{s}`"))),
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub value: String,
    pub seed: u64,
    pub report: MetricsReport,
    /// `|theta_u - theta_o| / |theta_o|`.
    pub displacement: f64,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub path: PathBuf,
    pub rows: Vec<AblationRow>,
}

/// Sweep values with their per-value configuration.
fn sweep_configs(
    cfg: &ExperimentConfig,
    sweep: Sweep,
    grid: &[String],
    n_classes: usize,
) -> Result<Vec<(String, ExperimentConfig)>> {
    if grid.is_empty() {
        return Err(Error::config("grid", "empty grid"));
    }
    if matches!(sweep, Sweep::Lambda | Sweep::RegNorm) && cfg.method != Method::Cpmu {
        return Err(Error::config(
            "method",
            format!("sweep `{sweep}` needs method=cpmu"),
        ));
    }
    grid.iter()
        .map(|v| {
            let mut c = cfg.clone();
            let label = match sweep {
                Sweep::C => {
                    let raw: usize = v
                        .parse()
                        .map_err(|_| Error::config("grid", format!("bad c `{v}`")))?;
                    let capped = raw.min(n_classes);
                    c.eval.c_values = vec![capped];
                    c.eval.d_values = vec![];
                    capped.to_string()
                }
                Sweep::Alpha => {
                    c.set("eval.alpha", v)?;
                    c.set("cpmu.alpha", v)?;
                    v.clone()
                }
                Sweep::Lambda => {
                    c.set("cpmu.lambda", v)?;
                    v.clone()
                }
                Sweep::RegNorm => {
                    c.cpmu.reg_norm = v
                        .parse::<RegNorm>()
                        .map_err(|e| Error::config("grid", e.to_string()))?;
                    c.cpmu.reg_norm.to_string()
                }
            };
            c.validate()?;
            Ok((label, c))
        })
        .collect()
}

fn ablation_csv(sweep: Sweep, rows: &[AblationRow]) -> String {
    let mut out = String::from("sweep,value,seed,c,d,h_ce");
    for s in Subset::ALL {
        out.push_str(&if s.is_forget() {
            format!(",eucf_{}", s.key())
        } else {
            format!(",ecf_{}", s.key())
        });
    }
    out.push_str(",beta_hat,displacement\n");
    for r in rows {
        let rep = &r.report;
        out.push_str(&format!(
            "{sweep},{},{},{},{},{}",
            r.value, r.seed, rep.c, rep.d, rep.h_ce
        ));
        for s in Subset::ALL {
            out.push_str(&format!(",{}", rep.efficiency[&s]));
        }
        out.push_str(&format!(",{},{}\n", rep.beta_hat, r.displacement));
    }
    out
}

/// Re-run the method for each grid value, reusing each seed's original
/// model, and write `ablation_<sweep>.csv`.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    sweep: Sweep,
    grid: &[String],
) -> Result<AblationResult> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let p = prepare(cfg, seed, None)?;
        let variants = sweep_configs(cfg, sweep, grid, p.bundle.n_classes())?;
        // a c sweep shares one method run
        let shared = if sweep == Sweep::C {
            Some(apply_method(cfg, &p)?)
        } else {
            None
        };
        for (label, vc) in &variants {
            let run = match &shared {
                Some(r) => r.clone(),
                None => apply_method(vc, &p)?,
            };
            let displacement = run.theta_u.distance(&p.theta_o) / p.theta_o.norm();
            for (c, d) in vc.eval.pairs() {
                let report = evaluate_all(&run.theta_u, &p.bundle, vc.eval.alpha, c, d)?;
                rows.push(AblationRow {
                    value: label.clone(),
                    seed,
                    report,
                    displacement,
                });
            }
        }
    }
    let path = cfg.output_dir.join(format!("ablation_{sweep}.csv"));
    fs::write(&path, ablation_csv(sweep, &rows))?;
    Ok(AblationResult { path, rows })
}
