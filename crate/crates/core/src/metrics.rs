//! Conformal unlearning metrics.
//!
//! ECF@c is the covered fraction among points whose prediction set has at
//! most `c` labels; EuCF@d is the uncovered fraction among points whose set
//! has at most `d` labels. Either is undefined when no set is small enough.
//! H(CE) is the harmonic mean of ECF on the three retain subsets and EuCF on
//! the three forget subsets.

use std::collections::BTreeMap;
use std::fmt;

use crate::conformal::{calibrate, covers, nonconformity_scores, CalibrationResult};
use crate::data::{Dataset, SplitBundle};
use crate::error::{Error, Result};
use crate::model::{accuracy, predict_probs, ModelParams};
use crate::rng;

/// A frequency that may be undefined because its conditioning set is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    Undefined,
}

impl Metric {
    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Metric::Value(_))
    }

    fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Value(num as f64 / den as f64)
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{v}"),
            Metric::Undefined => f.write_str("undefined"),
        }
    }
}

/// Size of a prediction set and whether it holds the true label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetOutcome {
    pub size: usize,
    pub covered: bool,
}

impl SetOutcome {
    pub fn from_set(set: &[usize], label: usize) -> Self {
        Self {
            size: set.len(),
            covered: set.contains(&label),
        }
    }
}

/// Outcomes of every point of `data` under the calibrated threshold.
pub fn set_outcomes(
    params: &ModelParams,
    data: &Dataset,
    calib: &CalibrationResult,
) -> Result<Vec<SetOutcome>> {
    let probs = predict_probs(params, data.features())?;
    Ok(probs
        .iter_rows()
        .zip(data.labels())
        .map(|(p, &y)| SetOutcome {
            size: p
                .iter()
                .filter(|&&pk| covers(1.0 - pk, calib.q_hat))
                .count(),
            covered: covers(1.0 - p[y], calib.q_hat),
        })
        .collect())
}

pub fn ecf_at_c(outcomes: &[SetOutcome], c: usize) -> Metric {
    let small = outcomes.iter().filter(|o| o.size <= c);
    let (n, hits) = small.fold((0, 0), |(n, h), o| (n + 1, h + o.covered as usize));
    Metric::ratio(hits, n)
}

pub fn eucf_at_d(outcomes: &[SetOutcome], d: usize) -> Metric {
    let small = outcomes.iter().filter(|o| o.size <= d);
    let (n, misses) = small.fold((0, 0), |(n, m), o| (n + 1, m + !o.covered as usize));
    Metric::ratio(misses, n)
}

pub fn coverage(outcomes: &[SetOutcome]) -> Metric {
    Metric::ratio(
        outcomes.iter().filter(|o| o.covered).count(),
        outcomes.len(),
    )
}

/// Fraction of sets larger than `threshold`; 0 for no sets.
pub fn inefficiency_rate(outcomes: &[SetOutcome], threshold: usize) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.size > threshold).count() as f64 / outcomes.len() as f64
}

/// `n / sum(1 / x_i)`; zero if any entry is zero or undefined.
pub fn harmonic_mean(values: &[Metric]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("harmonic mean of nothing"));
    }
    let mut inv = 0.0;
    for v in values {
        match v {
            Metric::Value(x) if *x > 0.0 => inv += 1.0 / x,
            _ => return Ok(0.0),
        }
    }
    Ok(values.len() as f64 / inv)
}

/// The six evaluation subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subset {
    Tf,
    Tr,
    Df,
    Dr,
    Vf,
    Vr,
}

impl Subset {
    pub const ALL: [Subset; 6] = [
        Subset::Tf,
        Subset::Tr,
        Subset::Df,
        Subset::Dr,
        Subset::Vf,
        Subset::Vr,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Subset::Tf => "Tf",
            Subset::Tr => "Tr",
            Subset::Df => "Df",
            Subset::Dr => "Dr",
            Subset::Vf => "Vf",
            Subset::Vr => "Vr",
        }
    }

    pub fn is_forget(self) -> bool {
        matches!(self, Subset::Tf | Subset::Df | Subset::Vf)
    }

    pub fn of(self, bundle: &SplitBundle) -> &Dataset {
        match self {
            Subset::Tf => &bundle.train_forget,
            Subset::Tr => &bundle.train_retain,
            Subset::Df => &bundle.unlearn_forget,
            Subset::Dr => &bundle.unlearn_retain,
            Subset::Vf => &bundle.test_forget,
            Subset::Vr => &bundle.test_retain,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub alpha: f64,
    pub c: usize,
    pub d: usize,
    pub q_hat: f64,
    pub accuracy: BTreeMap<Subset, Metric>,
    /// ECF@c on retain subsets, EuCF@d on forget subsets.
    pub efficiency: BTreeMap<Subset, Metric>,
    /// Share of sets above the subset's threshold (zeta_c, eta_d).
    pub inefficiency: BTreeMap<Subset, Metric>,
    pub h_ce: f64,
    /// Uncovered fraction of the unlearning forget set.
    pub beta_hat: Metric,
    /// Unlearning wall time, filled in by the caller.
    pub tt_seconds: Option<f64>,
}

impl MetricsReport {
    pub fn ecf(&self, s: Subset) -> Metric {
        debug_assert!(!s.is_forget());
        self.efficiency[&s]
    }

    pub fn eucf(&self, s: Subset) -> Metric {
        debug_assert!(s.is_forget());
        self.efficiency[&s]
    }

    pub fn acc(&self, s: Subset) -> Metric {
        self.accuracy[&s]
    }

    /// Metric entries in their fixed order; timing only on request.
    pub fn entries(&self, with_timing: bool) -> Vec<(String, String)> {
        let mut out = vec![
            ("alpha".to_string(), format!("{}", self.alpha)),
            ("c".to_string(), self.c.to_string()),
            ("d".to_string(), self.d.to_string()),
            ("q_hat".to_string(), crate::harness::fmt_float(self.q_hat)),
        ];
        for s in Subset::ALL {
            out.push((format!("acc.{}", s.key()), self.accuracy[&s].to_string()));
        }
        for s in Subset::ALL {
            let key = if s.is_forget() {
                format!("eucf.{}.d", s.key())
            } else {
                format!("ecf.{}.c", s.key())
            };
            out.push((key, self.efficiency[&s].to_string()));
        }
        for s in Subset::ALL {
            let t = if s.is_forget() { "d" } else { "c" };
            out.push((
                format!("ineff.{}.{t}", s.key()),
                self.inefficiency[&s].to_string(),
            ));
        }
        out.push(("h_ce".into(), format!("{}", self.h_ce)));
        out.push(("beta_hat".into(), self.beta_hat.to_string()));
        if with_timing {
            let tt = self
                .tt_seconds
                .map_or("undefined".into(), |t| format!("{t:.2}"));
            out.push(("tt_s".into(), tt));
        }
        out
    }

    /// Flat key-value text in JSON style; undefined values appear as the
    /// bare word `undefined`.
    pub fn to_kv_text(&self, with_timing: bool) -> String {
        let entries = self.entries(with_timing);
        let mut out = String::from("{\n");
        for (i, (k, v)) in entries.iter().enumerate() {
            let sep = if i + 1 == entries.len() { "" } else { "," };
            out.push_str(&format!("  \"{k}\": {v}{sep}\n"));
        }
        out.push_str("}\n");
        out
    }
}

/// Threshold used for evaluation: calibrated on the test calibration set
/// with tie noise seeded from the scenario.
pub fn evaluation_calibration(
    params: &ModelParams,
    bundle: &SplitBundle,
    alpha: f64,
) -> Result<CalibrationResult> {
    calibrate(
        params,
        &bundle.test_calib,
        alpha,
        Some(rng::derive(bundle.scenario.seed, 0xE7A1)),
    )
}

/// Calibrate on the test calibration set, then score all six subsets.
///
/// Subsets that are empty by construction (the unseen forget set of the
/// instance scenario) report undefined values and are left out of H(CE);
/// an undefined ECF/EuCF on a non-empty subset counts as zero.
pub fn evaluate_all(
    params: &ModelParams,
    bundle: &SplitBundle,
    alpha: f64,
    c: usize,
    d: usize,
) -> Result<MetricsReport> {
    let k = bundle.n_classes();
    if c > k || d > k {
        return Err(Error::arg(format!(
            "c = {c} and d = {d} must not exceed {k} classes"
        )));
    }
    let cal = evaluation_calibration(params, bundle, alpha)?;
    let mut report = MetricsReport {
        alpha,
        c,
        d,
        q_hat: cal.q_hat,
        accuracy: BTreeMap::new(),
        efficiency: BTreeMap::new(),
        inefficiency: BTreeMap::new(),
        h_ce: 0.0,
        beta_hat: Metric::Undefined,
        tt_seconds: None,
    };
    let mut hce_terms = Vec::new();
    for s in Subset::ALL {
        let data = s.of(bundle);
        if data.is_empty() {
            report.accuracy.insert(s, Metric::Undefined);
            report.efficiency.insert(s, Metric::Undefined);
            report.inefficiency.insert(s, Metric::Undefined);
            continue;
        }
        let outcomes = set_outcomes(params, data, &cal)?;
        let (eff, threshold) = if s.is_forget() {
            (eucf_at_d(&outcomes, d), d)
        } else {
            (ecf_at_c(&outcomes, c), c)
        };
        report
            .accuracy
            .insert(s, Metric::Value(accuracy(params, data)?));
        report.efficiency.insert(s, eff);
        report
            .inefficiency
            .insert(s, Metric::Value(inefficiency_rate(&outcomes, threshold)));
        hce_terms.push(eff);
        if s == Subset::Df {
            report.beta_hat = eucf_at_d(&outcomes, k);
        }
    }
    report.h_ce = if hce_terms.is_empty() {
        0.0
    } else {
        harmonic_mean(&hce_terms)?
    };
    Ok(report)
}

/// Empirical check of (alpha, beta)-conformal unlearning and its
/// (c, d)-efficient relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct DefinitionCheck {
    /// P(Y in C(X) | retain).
    pub retain_coverage: Metric,
    /// P(Y not in C(X) | forget), the measured beta.
    pub forget_uncoverage: Metric,
    /// P(Y in C(X) | retain, |C(X)| <= c).
    pub efficient_retain_coverage: Metric,
    /// P(Y not in C(X) | forget, |C(X)| <= d).
    pub efficient_forget_uncoverage: Metric,
    /// Share of forget points among the unlearning points.
    pub p_forget: f64,
    /// Estimates of zeta_c and eta_d.
    pub zeta_c: f64,
    pub eta_d: f64,
    pub def1_holds: bool,
    pub def2_holds: bool,
    /// Names of estimates whose conditioning event was empty.
    pub undefined: Vec<&'static str>,
}

impl DefinitionCheck {
    /// `P(forget) * beta_hat`, bounded by alpha for a valid unlearner.
    pub fn tradeoff_lhs(&self) -> Option<f64> {
        self.forget_uncoverage.value().map(|b| self.p_forget * b)
    }
}

/// Frequency estimates from already computed set outcomes.
pub fn check_definition_outcomes(
    retain: &[SetOutcome],
    forget: &[SetOutcome],
    alpha: f64,
    beta: f64,
    c: usize,
    d: usize,
) -> Result<DefinitionCheck> {
    if !(0.0 <= alpha && alpha <= beta && beta <= 1.0) {
        return Err(Error::arg(format!(
            "need 0 <= alpha <= beta <= 1, got alpha={alpha}, beta={beta}"
        )));
    }
    let retain_coverage = coverage(retain);
    let forget_uncoverage = coverage(forget)
        .value()
        .map_or(Metric::Undefined, |c| Metric::Value(1.0 - c));
    let efficient_retain_coverage = ecf_at_c(retain, c);
    let efficient_forget_uncoverage = eucf_at_d(forget, d);
    let mut undefined = Vec::new();
    for (name, m) in [
        ("retain_coverage", retain_coverage),
        ("forget_uncoverage", forget_uncoverage),
        ("efficient_retain_coverage", efficient_retain_coverage),
        ("efficient_forget_uncoverage", efficient_forget_uncoverage),
    ] {
        if !m.is_defined() {
            undefined.push(name);
        }
    }
    let at_least = |m: Metric, bound: f64| m.value().is_some_and(|v| v >= bound);
    let total = retain.len() + forget.len();
    Ok(DefinitionCheck {
        def1_holds: at_least(retain_coverage, 1.0 - alpha) && at_least(forget_uncoverage, beta),
        def2_holds: at_least(efficient_retain_coverage, 1.0 - alpha)
            && at_least(efficient_forget_uncoverage, beta),
        retain_coverage,
        forget_uncoverage,
        efficient_retain_coverage,
        efficient_forget_uncoverage,
        p_forget: if total == 0 {
            0.0
        } else {
            forget.len() as f64 / total as f64
        },
        zeta_c: inefficiency_rate(retain, c),
        eta_d: inefficiency_rate(forget, d),
        undefined,
    })
}

/// Definition check on the unlearning forget/retain sets, with the threshold
/// calibrated on the test calibration set.
pub fn check_conformal_definition(
    params: &ModelParams,
    bundle: &SplitBundle,
    alpha: f64,
    beta: f64,
    c: usize,
    d: usize,
) -> Result<DefinitionCheck> {
    let cal = evaluation_calibration(params, bundle, alpha)?;
    let retain = set_outcomes(params, &bundle.unlearn_retain, &cal)?;
    let forget = set_outcomes(params, &bundle.unlearn_forget, &cal)?;
    check_definition_outcomes(&retain, &forget, alpha, beta, c, d)
}

/// Fraction of (forget, retain) pairs where the forget score is at least
/// the retain score, counted exactly by sorting.
pub fn pairwise_worse_fraction(forget_scores: &[f64], retain_scores: &[f64]) -> Result<f64> {
    if forget_scores.is_empty() || retain_scores.is_empty() {
        return Err(Error::arg("score comparison needs both sets non-empty"));
    }
    let mut sorted = retain_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pairs: usize = forget_scores
        .iter()
        .map(|&f| sorted.partition_point(|&r| r <= f))
        .sum();
    Ok(pairs as f64 / (forget_scores.len() as f64 * retain_scores.len() as f64))
}

/// Empirical `P(score(forget) >= score(retain))`.
pub fn estimate_proposition1(
    params: &ModelParams,
    forget: &Dataset,
    retain: &Dataset,
) -> Result<f64> {
    if forget.is_empty() || retain.is_empty() {
        return Err(Error::arg("forget and retain sets must be non-empty"));
    }
    pairwise_worse_fraction(
        &nonconformity_scores(params, forget)?,
        &nonconformity_scores(params, retain)?,
    )
}
