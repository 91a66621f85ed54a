//! Monte Carlo and exact verification suites.
//!
//! Each suite runs a fixed list of named checks and returns a [`Report`].
//! A check compares an estimate against a bound:
//!
//! ```text
//! frequency checks   est <= alpha + 3 se,   se = sqrt(alpha (1 - alpha) / N)
//! mean checks        est <= bound + 3 se,   se = empirical standard error
//! exact checks       count of violations == 0
//! ```
//!
//! Every suite contains controls: checks run on a deliberately broken
//! instrument that are expected to fail. A control's verdict is PASS when its
//! property fails. Results are a deterministic function of the seed; path `i`
//! of a sub-experiment with seed `s` is driven by stream `i` of `s`, so the
//! thread count does not matter.
//!
//! Tail pruning. Runs that could last very long stop a path once its
//! martingale falls below `delta`. By the conditional Ville inequality the
//! chance that a pruned path would still have crossed `1/alpha` is at most
//! `alpha * delta`, and the bound is folded into the check.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{ks_uniformity, randomize, Calibrator, Cdf};
use crate::error::{Error, Result};
use crate::gaussian::{mixture_cs_intervals, mixture_cs_radius, mixture_sum_boundary, GaussianMartingale, MixtureMartingale};
use crate::instruments::{e_to_p, EProcess, MeasureFamily};
use crate::model::{evaluate_stopping, Crossing, Extremum, NullModel, SamplePath, StoppingRule, VarianceRule};
use crate::montecarlo::{self, binomial_se, Moments, Tally};
use crate::rng::{derive_seed, path_rng, PathRng};
use crate::symmetry::{
    exp_nsm_factor, mirror, DyadicPValueState, ExponentialNsm, FactorShape, OddEValue, OddFn, OddIncrementFactor,
    SignWalkState, Wrapper,
};
use crate::tree::{self, rat, FiniteTree, Payload, Rational};

/// Standard errors allowed by a Monte Carlo check.
pub const SE_MULTIPLIER: f64 = 3.0;
/// Minimum number of paths for a frequency check.
pub const MIN_PATHS: u64 = 1000;
/// Slack on log-space threshold comparisons, so that a process landing
/// exactly on `1/alpha` is not lost to rounding. It only adds crossings.
const LOG_SLACK: f64 = 1e-12;

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Sizes of the acceptance criteria.
    #[default]
    Full,
    /// Reduced sizes for smoke runs; bounds are recomputed for the sizes.
    Quick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

/// Where a property was seen to fail: regenerate with
/// `path_rng(seed, path)` and read time `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub model: String,
    pub seed: u64,
    pub path: Option<u64>,
    pub time: Option<usize>,
    pub detail: String,
}

impl Witness {
    fn path(model: &impl fmt::Display, seed: u64, hit: Option<(u64, usize)>, detail: &str) -> Option<Witness> {
        hit.map(|(p, t)| Witness { model: model.to_string(), seed, path: Some(p), time: Some(t), detail: detail.into() })
    }

    fn detail(model: &impl fmt::Display, seed: u64, detail: impl Into<String>) -> Witness {
        Witness { model: model.to_string(), seed, path: None, time: None, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub model: String,
    pub n: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Whether `lower <= estimate <= upper`.
    pub holds: bool,
    /// False for controls.
    pub expected_to_hold: bool,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub note: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, model: impl fmt::Display) -> Self {
        CheckResult {
            name: name.into(),
            model: model.to_string(),
            n: 0,
            estimate: 0.0,
            std_error: 0.0,
            lower: None,
            upper: None,
            holds: true,
            expected_to_hold: true,
            verdict: Verdict::Pass,
            witness: None,
            note: String::new(),
        }
    }

    pub fn estimate(mut self, estimate: f64, std_error: f64, n: u64) -> Self {
        self.estimate = estimate;
        self.std_error = std_error;
        self.n = n;
        self
    }

    pub fn at_most(mut self, bound: f64) -> Self {
        self.upper = Some(bound);
        self
    }

    pub fn at_least(mut self, bound: f64) -> Self {
        self.lower = Some(bound);
        self
    }

    /// Exact check that a violation count is zero.
    pub fn count(self, violations: u64, n: u64) -> Self {
        self.estimate(violations as f64, 0.0, n).at_most(0.0)
    }

    pub fn witness(mut self, witness: Option<Witness>) -> Self {
        self.witness = witness;
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    /// Marks the check as a control: its property is expected to fail.
    pub fn control(mut self) -> Self {
        self.expected_to_hold = false;
        self
    }

    /// Computes `holds` and the verdict. A failing verdict always carries a
    /// witness; `seed` is used when the check did not supply one.
    pub fn finish(mut self, seed: u64) -> Self {
        let e = self.estimate;
        self.holds = !e.is_nan() && self.lower.is_none_or(|l| e >= l) && self.upper.is_none_or(|u| e <= u);
        self.verdict = if self.holds == self.expected_to_hold { Verdict::Pass } else { Verdict::Fail };
        if self.holds {
            if self.expected_to_hold {
                self.witness = None;
            } else {
                self.witness = Some(Witness::detail(&self.model, seed, "control did not break"));
            }
        } else if self.witness.is_none() {
            let detail = format!("estimate {e} outside [{:?}, {:?}]", self.lower, self.upper);
            self.witness = Some(Witness::detail(&self.model, seed, detail));
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// One human-readable line.
    pub fn line(&self) -> String {
        let bound = match (self.lower, self.upper) {
            (Some(l), Some(u)) => format!("[{l:.6}, {u:.6}]"),
            (Some(l), None) => format!(">= {l:.6}"),
            (None, Some(u)) => format!("<= {u:.6}"),
            (None, None) => "-".into(),
        };
        let control = if self.expected_to_hold { "" } else { " (control)" };
        format!(
            "{} {}{control}: estimate {:.6} (se {:.6}, n {}) bound {bound} under {}",
            self.verdict, self.name, self.estimate, self.std_error, self.n, self.model
        )
    }
}

/// Checks plus scalar diagnostics produced by one operation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub checks: Vec<CheckResult>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl Outcome {
    fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
    }

    fn diag(&mut self, key: impl Into<String>, value: f64) {
        self.diagnostics.insert(key.into(), value);
    }

    fn absorb(&mut self, other: Outcome) {
        self.checks.extend(other.checks);
        self.diagnostics.extend(other.diagnostics);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub suite: Suite,
    pub seed: u64,
    pub scale: Scale,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// CSV header of [`Report::to_csv`].
pub const CSV_COLUMNS: [&str; 15] = [
    "suite",
    "check",
    "model",
    "n",
    "estimate",
    "std_error",
    "lower",
    "upper",
    "holds",
    "expected_to_hold",
    "verdict",
    "witness_seed",
    "witness_path",
    "witness_time",
    "note",
];

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(CSV_COLUMNS).map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.checks {
            let wit = c.witness.as_ref();
            w.write_record([
                self.suite.to_string(),
                c.name.clone(),
                c.model.clone(),
                c.n.to_string(),
                c.estimate.to_string(),
                c.std_error.to_string(),
                opt(c.lower),
                opt(c.upper),
                c.holds.to_string(),
                c.expected_to_hold.to_string(),
                c.verdict.to_string(),
                wit.map(|w| w.seed.to_string()).unwrap_or_default(),
                wit.and_then(|w| w.path).map(|p| p.to_string()).unwrap_or_default(),
                wit.and_then(|w| w.time).map(|t| t.to_string()).unwrap_or_default(),
                c.note.clone(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// One line per check followed by a summary line.
    pub fn summary(&self) -> String {
        let mut s: String = self.checks.iter().map(|c| c.line() + "\n").collect();
        let failed = self.failures().count();
        s += &format!(
            "suite {}: {} checks, {} failed -> {}\n",
            self.suite,
            self.checks.len(),
            failed,
            if self.passed { "PASS" } else { "FAIL" }
        );
        s
    }
}

// ------------------------------------------------------------------ suites

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Ville,
    Anticoncentration,
    Uniformity,
    Domination,
    StoppingMatrix,
    TreeExact,
    AppendixC,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Ville,
        Suite::Anticoncentration,
        Suite::Uniformity,
        Suite::Domination,
        Suite::StoppingMatrix,
        Suite::TreeExact,
        Suite::AppendixC,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Ville => "ville",
            Suite::Anticoncentration => "anticoncentration",
            Suite::Uniformity => "uniformity",
            Suite::Domination => "domination",
            Suite::StoppingMatrix => "stopping-matrix",
            Suite::TreeExact => "tree-exact",
            Suite::AppendixC => "appendix-c",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<_> = Suite::ALL.iter().map(Suite::name).collect();
            Error::InvalidInput(format!("unknown suite `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// Settings shared by all suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub scale: Scale,
    /// Record wall time in the report (off by default so that reports are
    /// byte-identical across runs).
    pub wall_time: bool,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig { seed, threads: None, scale: Scale::Full, wall_time: false }
    }

    pub fn quick(mut self) -> Self {
        self.scale = Scale::Quick;
        self
    }

    fn pick<T>(&self, full: T, quick: T) -> T {
        match self.scale {
            Scale::Full => full,
            Scale::Quick => quick,
        }
    }

    fn sub(&self, label: u64) -> u64 {
        derive_seed(self.seed, label)
    }
}

pub fn run_suite(suite: Suite, cfg: &RunConfig) -> Result<Report> {
    let start = Instant::now();
    let out = match suite {
        Suite::Ville => suite_ville(cfg)?,
        Suite::Anticoncentration => suite_anticoncentration(cfg)?,
        Suite::Uniformity => suite_uniformity(cfg)?,
        Suite::Domination => suite_domination(cfg)?,
        Suite::StoppingMatrix => suite_stopping_matrix(cfg)?,
        Suite::TreeExact => suite_tree_exact(cfg)?,
        Suite::AppendixC => suite_appendix_c(cfg)?,
    };
    Ok(Report {
        suite,
        seed: cfg.seed,
        scale: cfg.scale,
        passed: out.passed(),
        checks: out.checks,
        diagnostics: out.diagnostics,
        wall_time_s: cfg.wall_time.then(|| start.elapsed().as_secs_f64()),
    })
}

fn suite_ville(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let (t, n) = (cfg.pick(10_000, 1_000), cfg.pick(100_000, 2_000));
    let gauss = NullModel::GaussianIid { mean: 0.0, sigma: 1.0 };
    let exp = |model: NullModel, horizon, n_paths, alpha, label| -> Result<Experiment> {
        Ok(Experiment::new(MeasureFamily::single(model)?, horizon, n_paths, alpha, cfg.sub(label)).threads(cfg.threads))
    };
    let nm = EInstrument::GaussianNm { mean: 0.0, lambda: 1.0, rule: VarianceRule::UNIT };
    out.absorb(run_ville(&exp(gauss.clone(), t, n, 0.05, 1)?, &nm)?);

    let rule = VarianceRule::Abs { base: 0.5, scale: 0.5 };
    let predictable = NullModel::GaussianPredictableVar { mean: 0.0, rule };
    let pnm = EInstrument::GaussianNm { mean: 0.0, lambda: 0.7, rule };
    out.absorb(run_ville(&exp(predictable, cfg.pick(1_000, 200), cfg.pick(20_000, 2_000), 0.05, 2)?, &pnm)?);

    let mix = EInstrument::Mixture { mean: 0.0, rho_sq: 1.0, rule: VarianceRule::UNIT };
    out.absorb(run_ville(&exp(gauss.clone(), cfg.pick(1_000, 200), cfg.pick(20_000, 2_000), 0.05, 3)?, &mix)?);

    let nsm = EInstrument::ExponentialNsm { center: 0.0 };
    let heavy = NullModel::SymmetricHeavyTail { center: 0.0, family: crate::model::HeavyTail::Cauchy };
    out.absorb(run_ville(&exp(heavy, cfg.pick(1_000, 200), cfg.pick(20_000, 2_000), 0.1, 4)?, &nsm)?);

    out.absorb(run_ville(&exp(gauss.clone(), 10, MIN_PATHS, 1.0, 5)?, &nm)?);

    let mut broken = run_ville(&exp(gauss.clone(), 1_000, MIN_PATHS, 0.05, 6)?, &EInstrument::Geometric { factor: 1.01 })?;
    for c in &mut broken.checks {
        *c = c.clone().control().finish(cfg.seed);
    }
    out.absorb(broken);

    out.absorb(run_sign_walk(cfg.pick(100_000, 5_000), cfg.pick(10_000, 2_000), 0.05, cfg.sub(7), cfg.threads)?);
    out.absorb(run_mixture_coverage(cfg.pick(10_000, 1_000), cfg.pick(1_000, 200), 0.05, cfg.sub(8), cfg.threads)?);
    out.push(mixture_radius_consistency().finish(cfg.seed));
    Ok(out)
}

fn suite_anticoncentration(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let ladder = Ladder {
        etas: vec![0.5, 0.1, 0.02],
        alpha: 0.1,
        n_paths: cfg.pick(20_000, 2_000),
        seed: cfg.sub(11),
        threads: cfg.threads,
        ..Ladder::default()
    };
    out.absorb(run_anticoncentration(&ladder, &FactorShape::arctan())?);

    let flat = flat_factor();
    let rejected = matches!(
        run_anticoncentration(&Ladder { etas: vec![0.5], ..ladder.clone() }, &flat),
        Err(Error::FactorCondition { .. })
    );
    out.push(
        CheckResult::new("flat_factor_rejected", "two-point(0.5)")
            .count(u64::from(!rejected), 1)
            .note("a factor with f(eta) = 1 must fail the strict-monotonicity precondition")
            .finish(cfg.seed),
    );

    let broken = Ladder { etas: vec![0.5], inflate: 1.1, seed: cfg.sub(12), ..ladder };
    let mut control = run_anticoncentration(&broken, &FactorShape::arctan())?;
    control.checks.retain(|c| c.name.starts_with("crossing"));
    for c in control.checks {
        let name = format!("{} [inflated x1.1]", c.name);
        out.push(CheckResult { name, ..c }.control().finish(cfg.seed));
    }
    Ok(out)
}

fn suite_uniformity(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let n = cfg.pick(100_000, 10_000);
    out.absorb(run_uniformity(
        &NullModel::RademacherShifted { center: 0.0 },
        &PInstrument::Dyadic,
        40,
        n,
        cfg.sub(21),
        cfg.threads,
        Some(uniformity_bound(n, 40)),
    )?);
    out.absorb(dyadic_exact_law(cfg.pick(12, 8))?);
    out.absorb(run_uniformity(
        &NullModel::GaussianIid { mean: 0.0, sigma: 1.0 },
        &PInstrument::Randomizer,
        1,
        n,
        cfg.sub(22),
        cfg.threads,
        Some(dkw_bound(n, 1e-3)),
    )?);
    out.absorb(run_randomized_bernoulli(n, cfg.sub(23), cfg.threads)?);

    let atom = run_uniformity(
        &NullModel::RademacherShifted { center: 0.0 },
        &PInstrument::OddFactor(FactorShape::arctan()),
        cfg.pick(1_000, 200),
        cfg.pick(20_000, 2_000),
        cfg.sub(24),
        cfg.threads,
        Some(dkw_bound(cfg.pick(20_000, 2_000), 1e-3)),
    )?;
    for c in atom.checks {
        let c = if c.name.starts_with("ks") { c.control() } else { c };
        out.push(c.finish(cfg.seed));
    }
    out.diagnostics.extend(atom.diagnostics);
    Ok(out)
}

fn suite_domination(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let rademacher = NullModel::RademacherShifted { center: 0.0 };
    let (n, t) = (cfg.pick(10_000, 2_000), 100);
    let mirrored = mirror(exp_nsm_factor)?;
    let a = |xs: &[f64]| log_product(xs, |x| mirrored.eval(x));
    let b = |xs: &[f64]| log_product(xs, exp_nsm_factor);
    let has_negative = |xs: &[f64]| xs.iter().any(|&x| x < 0.0);
    let seed = cfg.sub(31);
    let d = run_domination(&rademacher, t, n, seed, cfg.threads, Better::Larger, a, b, has_negative)?;
    out.absorb(domination_checks("mirrored_nm_vs_exp_nsm", &rademacher, seed, &d, true));
    out.diag("mirrored_vs_nsm.paths_without_negative", (d.paths - d.eligible) as f64);

    let d = run_domination(&rademacher, t, n, seed, cfg.threads, Better::Larger, b, a, has_negative)?;
    let mut reverse = domination_checks("exp_nsm_vs_mirrored_nm", &rademacher, seed, &d, false);
    reverse.checks.retain(|c| c.name.ends_with("violations"));
    for c in reverse.checks {
        out.push(c.control().finish(cfg.seed));
    }

    let d = run_domination(&rademacher, t, n, seed, cfg.threads, Better::Larger, b, b, has_negative)?;
    out.push(
        CheckResult::new("self_vs_self_equal", &rademacher)
            .count(d.a_worse + d.a_better, d.paths)
            .note(format!("verdict {:?}", d.verdict))
            .finish(cfg.seed),
    );

    out.absorb(appendix_c_domination(cfg.pick(20_000, 2_000), cfg.sub(32), cfg.threads)?);
    out.absorb(appendix_c_validity(cfg, ApxVariant::Modified)?);
    Ok(out)
}

fn suite_stopping_matrix(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    out.absorb(run_calibrated_stopping(40, cfg.pick(100_000, 10_000), cfg.sub(41), cfg.threads)?);
    out.absorb(run_gaussian_stopping(cfg.pick(10_000, 1_000), cfg.pick(100_000, 2_000), 20.0, cfg.sub(42), cfg.threads)?);
    let (t, n) = (cfg.pick(1_000, 200), cfg.pick(20_000, 2_000));
    out.absorb(run_stopping_matrix(PathKind::RunningInf, t, n, 0.05, cfg.sub(43), cfg.threads)?);
    let control = run_stopping_matrix(PathKind::Pointwise, t, n, 0.05, cfg.sub(43), cfg.threads)?;
    for c in control.checks {
        let c = if c.name.starts_with("p_rule_agreement") { c.control() } else { c };
        out.push(c.finish(cfg.seed));
    }

    let rule = StoppingRule::Adversarial { extremum: Extremum::Max };
    let refused = matches!(e_stopping_mean(&rule, 10, MIN_PATHS, cfg.seed, cfg.threads), Err(Error::NotAStoppingTime(_)));
    out.push(
        CheckResult::new("adversarial_max_refused_for_e_safety", "N(0,1)")
            .count(u64::from(!refused), 1)
            .note("e-safety assertions only accept stopping times")
            .finish(cfg.seed),
    );
    Ok(out)
}

fn suite_tree_exact(cfg: &RunConfig) -> Result<Outcome> {
    let (count, max_depth) = (cfg.pick(200, 40), cfg.pick(8, 5));
    let mut out = run_tree_exact(count, max_depth, cfg.sub(51))?;
    out.absorb(tree_closed_mm_checks(cfg.pick(10, 6))?);
    Ok(out)
}

fn suite_appendix_c(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = appendix_c_validity(cfg, ApxVariant::Modified)?;
    out.absorb(appendix_c_domination(cfg.pick(20_000, 2_000), cfg.sub(61), cfg.threads)?);
    let broken = appendix_c_validity(cfg, ApxVariant::Broken)?;
    for c in broken.checks {
        out.push(c.control().finish(cfg.seed));
    }
    let mut bad = 0;
    for depth in 1..=cfg.pick(8, 5) {
        let (t, p) = tree::atomic_pvalue_tree(depth)?;
        if tree::admissibilize_p(&t, &p)? != p || !tree::is_fixed_point_p(&t, &p)? {
            bad += 1;
        }
    }
    out.push(
        CheckResult::new("atomic_pvalue_is_admissible_fixed_point", "atomic tree")
            .count(bad, cfg.pick(8, 5))
            .note("the atomic p-value is left unchanged by admissibilize_p")
            .finish(cfg.seed),
    );
    Ok(out)
}

// ------------------------------------------------------------- experiments

/// A Monte Carlo experiment over a family of null models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub family: MeasureFamily,
    pub horizon: usize,
    pub n_paths: u64,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Experiment {
    pub fn new(family: MeasureFamily, horizon: usize, n_paths: u64, alpha: f64, seed: u64) -> Self {
        Experiment { family, horizon, n_paths, alpha, seed, threads: None }
    }

    pub fn threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    /// Seed of the sub-experiment for family member `k`.
    pub fn member_seed(&self, k: usize) -> u64 {
        derive_seed(self.seed, k as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < MIN_PATHS {
            return Err(Error::param("n_paths", format!("{} paths; frequency checks need at least {MIN_PATHS}", self.n_paths)));
        }
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha", format!("{} is not in (0,1]", self.alpha)));
        }
        for m in self.family.members() {
            m.validate()?;
        }
        Ok(())
    }
}

/// Runs `per_path(acc, i, u, rng)` over `n` paths; `u` is the path's
/// randomizer, drawn before any observation.
fn simulate<A, I, F, M>(n: u64, threads: Option<usize>, seed: u64, init: I, per_path: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64, f64, &mut PathRng) + Sync,
    M: Fn(&mut A, A),
{
    montecarlo::run(
        n,
        threads,
        init,
        |acc, i| {
            let mut rng = path_rng(seed, i);
            let u: f64 = rng.random();
            per_path(acc, i, u, &mut rng)
        },
        merge,
    )
}

fn draw(model: &NullModel, rng: &mut PathRng, u: f64, horizon: usize) -> Result<SamplePath> {
    SamplePath::new(u, model.observations(rng).take(horizon).collect())
}

fn earliest(a: Option<(u64, usize)>, b: Option<(u64, usize)>) -> Option<(u64, usize)> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if x.0 <= y.0 { x } else { y }),
        (x, y) => x.or(y),
    }
}

fn dkw_bound(n: u64, level: f64) -> f64 {
    ((2.0 / level).ln() / (2.0 * n as f64)).sqrt()
}

/// KS bound for the dyadic p-value: `max(0.01, 2^-T + DKW(N, 0.001))`.
pub fn uniformity_bound(n: u64, horizon: usize) -> f64 {
    (0.5f64.powi(horizon as i32) + dkw_bound(n, 1e-3)).max(0.01)
}

// ----------------------------------------------------------- e-instruments

/// Streaming e-process used by Ville-type checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EInstrument {
    GaussianNm { mean: f64, lambda: f64, rule: VarianceRule },
    Mixture { mean: f64, rho_sq: f64, rule: VarianceRule },
    ExponentialNsm { center: f64 },
    OddFactor { shape: FactorShape, center: f64 },
    SignWalk { alpha: f64 },
    /// `factor^t`, ignoring the data. Not a supermartingale when
    /// `factor > 1`; used as a control.
    Geometric { factor: f64 },
}

impl EInstrument {
    pub fn start(&self) -> Result<EState> {
        Ok(match self {
            EInstrument::GaussianNm { mean, lambda, rule } => EState::Gaussian(GaussianMartingale::new(*mean, *lambda, *rule)?),
            EInstrument::Mixture { mean, rho_sq, rule } => EState::Mixture(MixtureMartingale::new(*mean, *rho_sq, *rule)?),
            EInstrument::ExponentialNsm { center } => EState::Nsm(ExponentialNsm::new(*center)),
            EInstrument::OddFactor { shape, center } => {
                EState::Odd(OddEValue::new(OddIncrementFactor::new(shape.clone(), *center)?))
            }
            EInstrument::SignWalk { alpha } => EState::Walk(SignWalkState::new(*alpha)?),
            EInstrument::Geometric { factor } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return Err(Error::param("factor", "must be positive"));
                }
                EState::Geometric { log_factor: factor.ln(), log_value: 0.0 }
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            EInstrument::GaussianNm { mean, lambda, .. } => format!("gaussian-nm(m={mean},lambda={lambda})"),
            EInstrument::Mixture { mean, rho_sq, .. } => format!("mixture(m={mean},rho2={rho_sq})"),
            EInstrument::ExponentialNsm { center } => format!("exp-nsm(m={center})"),
            EInstrument::OddFactor { center, .. } => format!("odd-factor(m={center})"),
            EInstrument::SignWalk { alpha } => format!("signwalk(alpha={alpha})"),
            EInstrument::Geometric { factor } => format!("geometric({factor})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EState {
    Gaussian(GaussianMartingale),
    Mixture(MixtureMartingale),
    Nsm(ExponentialNsm),
    Odd(OddEValue),
    Walk(SignWalkState),
    Geometric { log_factor: f64, log_value: f64 },
}

impl EProcess for EState {
    #[inline]
    fn observe(&mut self, x: f64) {
        match self {
            EState::Gaussian(e) => e.observe(x),
            EState::Mixture(e) => e.observe(x),
            EState::Nsm(e) => e.observe(x),
            EState::Odd(e) => e.observe(x),
            EState::Walk(e) => e.observe(x),
            EState::Geometric { log_factor, log_value } => *log_value += *log_factor,
        }
    }

    #[inline]
    fn log_value(&self) -> f64 {
        match self {
            EState::Gaussian(e) => e.log_value(),
            EState::Mixture(e) => e.log_value(),
            EState::Nsm(e) => e.log_value(),
            EState::Odd(e) => e.log_value(),
            EState::Walk(e) => e.log_value(),
            EState::Geometric { log_value, .. } => *log_value,
        }
    }
}

/// `ln prod_{s<=t} f(x_s)` for `t = 1..T`.
fn log_product(xs: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut acc = 0.0;
    xs.iter()
        .map(|&x| {
            acc += f(x).ln();
            acc
        })
        .collect()
}

// ------------------------------------------------------------------- ville

/// `P(sup_{t<=T} M_t >= 1/alpha)` per family member; PASS iff the
/// frequency is at most `alpha + 3 se`.
pub fn run_ville(exp: &Experiment, instrument: &EInstrument) -> Result<Outcome> {
    exp.validate()?;
    let proto = instrument.start()?;
    let threshold = -exp.alpha.ln() - LOG_SLACK;
    let se = binomial_se(exp.alpha, exp.n_paths);
    let mut out = Outcome::default();
    for (k, model) in exp.family.members().iter().enumerate() {
        let seed = exp.member_seed(k);
        let tally = simulate(
            exp.n_paths,
            exp.threads,
            seed,
            Tally::default,
            |acc: &mut Tally, i, _u, rng| {
                let mut e = proto.clone();
                let mut hit = (e.log_value() >= threshold).then_some(0);
                if hit.is_none() {
                    for (s, x) in model.observations(rng).take(exp.horizon).enumerate() {
                        e.observe(x);
                        if e.log_value() >= threshold {
                            hit = Some(s + 1);
                            break;
                        }
                    }
                }
                acc.record(i, hit);
            },
            |a, b| a.merge(b),
        );
        out.push(
            CheckResult::new(format!("ville[{}]", instrument.label()), model)
                .estimate(tally.frequency(), se, tally.n)
                .at_most(exp.alpha + SE_MULTIPLIER * se)
                .witness(Witness::path(model, seed, tally.first_hit, "first crossing of 1/alpha"))
                .note(format!("alpha {}, T {}", exp.alpha, exp.horizon))
                .finish(exp.seed),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
struct WalkAcc {
    rejected: Tally,
    unabsorbed: u64,
    overshoot: u64,
    first_overshoot: Option<(u64, usize)>,
}

/// Sign-walk test under Rademacher: rejection frequency against the
/// gambler's-ruin value `alpha`, unabsorbed fraction at `T`, and overshoot.
pub fn run_sign_walk(n_paths: u64, horizon: usize, alpha: f64, seed: u64, threads: Option<usize>) -> Result<Outcome> {
    let model = NullModel::RademacherShifted { center: 0.0 };
    let proto = SignWalkState::new(alpha)?;
    let acc = simulate(
        n_paths,
        threads,
        seed,
        WalkAcc::default,
        |acc: &mut WalkAcc, i, _u, rng| {
            let mut s = proto;
            let mut hit = s.rejected.then_some(0);
            if hit.is_none() {
                for (t, x) in model.observations(rng).take(horizon).enumerate() {
                    if s.step(x) {
                        hit = Some(t + 1);
                        if s.value != s.threshold {
                            acc.overshoot += 1;
                            acc.first_overshoot = earliest(acc.first_overshoot, Some((i, t + 1)));
                        }
                        break;
                    }
                    if s.absorbed_zero {
                        break;
                    }
                }
            }
            if !s.is_absorbed() {
                acc.unabsorbed += 1;
            }
            acc.rejected.record(i, hit);
        },
        |a, b| {
            a.rejected.merge(b.rejected);
            a.unabsorbed += b.unabsorbed;
            a.overshoot += b.overshoot;
            a.first_overshoot = earliest(a.first_overshoot, b.first_overshoot);
        },
    );
    let se = binomial_se(alpha, n_paths);
    let unabsorbed = acc.unabsorbed as f64 / n_paths as f64;
    let mut out = Outcome::default();
    out.push(
        CheckResult::new("sign_walk_rejection_rate", &model)
            .estimate(acc.rejected.frequency(), se, n_paths)
            .at_least(alpha - SE_MULTIPLIER * se)
            .at_most(alpha + SE_MULTIPLIER * se)
            .note(format!("threshold {}, gambler's ruin gives exactly alpha", proto.threshold))
            .finish(seed),
    );
    out.push(
        CheckResult::new("sign_walk_unabsorbed_fraction", &model)
            .estimate(unabsorbed, 0.0, n_paths)
            .at_most(1e-3)
            .note(format!("T {horizon}"))
            .finish(seed),
    );
    out.push(
        CheckResult::new("sign_walk_overshoot_events", &model)
            .count(acc.overshoot, n_paths)
            .witness(Witness::path(&model, seed, acc.first_overshoot, "rejected above the threshold"))
            .finish(seed),
    );
    out.diag("sign_walk.unabsorbed_fraction", unabsorbed);
    Ok(out)
}

/// Coverage of `m = 0` by the running-intersection mixture CS under N(0,1).
pub fn run_mixture_coverage(n_paths: u64, horizon: usize, alpha: f64, seed: u64, threads: Option<usize>) -> Result<Outcome> {
    let model = NullModel::GaussianIid { mean: 0.0, sigma: 1.0 };
    mixture_cs_radius(1, alpha)?;
    let tally = simulate(
        n_paths,
        threads,
        seed,
        Tally::default,
        |acc: &mut Tally, i, u, rng| {
            let path = draw(&model, rng, u, horizon).expect("finite path");
            let intervals = mixture_cs_intervals(&path, VarianceRule::UNIT, alpha, 1.0).expect("validated alpha");
            let miss = intervals.iter().find(|iv| !(iv.lower <= 0.0 && 0.0 <= iv.upper)).map(|iv| iv.t);
            acc.record(i, miss);
        },
        |a, b| a.merge(b),
    );
    let coverage = 1.0 - tally.frequency();
    let se = binomial_se(alpha, n_paths);
    let mut out = Outcome::default();
    out.push(
        CheckResult::new("mixture_cs_coverage", &model)
            .estimate(coverage, se, n_paths)
            .at_least(1.0 - alpha - SE_MULTIPLIER * se)
            .witness(Witness::path(&model, seed, tally.first_hit, "m = 0 excluded"))
            .note(format!("rho^2 = 1, T {horizon}"))
            .finish(seed),
    );
    Ok(out)
}

/// The closed-form radius against the sum boundary divided by `t`.
fn mixture_radius_consistency() -> CheckResult {
    let mut worst: f64 = 0.0;
    for &alpha in &[0.01, 0.05, 0.1] {
        for &t in &[1usize, 10, 100, 1000] {
            let r = mixture_cs_radius(t, alpha).expect("valid");
            let b = mixture_sum_boundary(t as f64, alpha, 1.0) / t as f64;
            worst = worst.max((r - b).abs());
        }
    }
    CheckResult::new("mixture_cs_radius_vs_sum_boundary", "N(0,1)")
        .estimate(worst, 0.0, 12)
        .at_most(1e-9)
}

// -------------------------------------------------------- anticoncentration

/// An eta-ladder of two-point models `(delta_eta + delta_-eta) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    /// Strictly decreasing, positive.
    pub etas: Vec<f64>,
    pub alpha: f64,
    pub n_paths: u64,
    /// Step budget per path is `budget / eta^2`.
    pub budget: f64,
    /// Paths are pruned once the martingale is below `prune`.
    pub prune: f64,
    /// Multiplies every factor; `1` for the real instrument.
    pub inflate: f64,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for Ladder {
    fn default() -> Self {
        Ladder {
            etas: vec![0.5, 0.1, 0.02],
            alpha: 0.1,
            n_paths: 20_000,
            budget: 1e6,
            prune: 1e-4,
            inflate: 1.0,
            seed: 0,
            threads: None,
        }
    }
}

/// `max_{|x| <= eta} |f(x) - 1|` on a grid of 4001 points.
pub fn factor_epsilon(factor: &OddIncrementFactor, eta: f64) -> f64 {
    (0..=4000).map(|k| factor.eval(eta * (k as f64 / 2000.0 - 1.0)) - 1.0).fold(0.0, |m: f64, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, Default)]
struct LadderAcc {
    crossed: Tally,
    pruned: u64,
    unresolved: u64,
    steps: u64,
}

/// Crossing frequency of `1/alpha` per rung; each must lie in
/// `[alpha / (1 + eps(eta)) - 3 se, alpha + 3 se]`, and the estimates must
/// not decrease along the ladder by more than `2 se`.
pub fn run_anticoncentration(ladder: &Ladder, shape: &FactorShape) -> Result<Outcome> {
    let factor = OddIncrementFactor::new(shape.clone(), 0.0)?;
    if ladder.etas.is_empty() || ladder.etas.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::param("etas", "need a nonempty ladder of positive offsets"));
    }
    if ladder.etas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::param("etas", "ladder must be strictly decreasing"));
    }
    if ladder.n_paths < MIN_PATHS {
        return Err(Error::param("n_paths", format!("need at least {MIN_PATHS}")));
    }
    if !(ladder.alpha > 0.0 && ladder.alpha < 1.0) || !(ladder.prune > 0.0 && ladder.prune < 1.0) {
        return Err(Error::param("alpha", "alpha and prune must lie in (0,1)"));
    }
    for &eta in &ladder.etas {
        if !(factor.eval(eta) > 1.0) {
            return Err(Error::FactorCondition {
                x: eta,
                reason: format!("f({eta}) = {} is not above 1: f is flat at 0, so the aggregate empirical variance stays finite", factor.eval(eta)),
            });
        }
    }
    let threshold = -ladder.alpha.ln() - LOG_SLACK;
    let prune = ladder.prune.ln();
    let se = binomial_se(ladder.alpha, ladder.n_paths);
    let mut out = Outcome::default();
    let mut estimates = vec![];
    for (k, &eta) in ladder.etas.iter().enumerate() {
        let model = NullModel::TwoPointSymmetric { center: 0.0, offset: eta };
        let seed = derive_seed(ladder.seed, k as u64);
        let up = (ladder.inflate * factor.eval(eta)).ln();
        let down = (ladder.inflate * factor.eval(-eta)).ln();
        let budget = (ladder.budget / (eta * eta)).ceil() as usize;
        let acc = simulate(
            ladder.n_paths,
            ladder.threads,
            seed,
            LadderAcc::default,
            |acc: &mut LadderAcc, i, _u, rng| {
                let mut l = 0.0;
                let mut hit = None;
                let mut resolved = false;
                for (t, x) in model.observations(rng).take(budget).enumerate() {
                    l += if x > 0.0 { up } else { down };
                    if l >= threshold {
                        hit = Some(t + 1);
                    } else if l < prune {
                        acc.pruned += 1;
                    } else {
                        continue;
                    }
                    acc.steps += t as u64 + 1;
                    resolved = true;
                    break;
                }
                if !resolved {
                    acc.unresolved += 1;
                    acc.steps += budget as u64;
                }
                acc.crossed.record(i, hit);
            },
            |a, b| {
                a.crossed.merge(b.crossed);
                a.pruned += b.pruned;
                a.unresolved += b.unresolved;
                a.steps += b.steps;
            },
        );
        let n = ladder.n_paths as f64;
        let eps = factor_epsilon(&factor, eta);
        let est = acc.crossed.frequency();
        // paths that were pruned or ran out of budget might still have crossed
        let bias = ladder.alpha * ladder.prune * acc.pruned as f64 / n + acc.unresolved as f64 / n;
        out.push(
            CheckResult::new(format!("crossing[eta={eta}]"), &model)
                .estimate(est, se, ladder.n_paths)
                .at_least(ladder.alpha / (1.0 + eps) - SE_MULTIPLIER * se - bias)
                .at_most(ladder.alpha + SE_MULTIPLIER * se)
                .witness(Witness::path(&model, seed, acc.crossed.first_hit, "first crossing"))
                .note(format!("eps {eps:.6}, pruning bias <= {bias:.2e}"))
                .finish(ladder.seed),
        );
        out.diag(format!("eta={eta}.epsilon"), eps);
        out.diag(format!("eta={eta}.pruned_fraction"), acc.pruned as f64 / n);
        out.diag(format!("eta={eta}.unresolved_fraction"), acc.unresolved as f64 / n);
        out.diag(format!("eta={eta}.mean_steps"), acc.steps as f64 / n);
        estimates.push(est);
    }
    if estimates.len() > 1 {
        let worst = estimates.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        out.push(
            CheckResult::new("ladder_nondecreasing", "two-point ladder")
                .estimate(worst, se, ladder.n_paths)
                .at_least(-2.0 * se)
                .note("smallest step between consecutive rungs")
                .finish(ladder.seed),
        );
    }
    Ok(out)
}

/// `f - 1` odd, piecewise linear, flat on `[-1, 1]`.
fn flat_factor() -> FactorShape {
    FactorShape::new(
        OddFn::Identity,
        Wrapper::CustomTable { knots: vec![(-2.0, 0.0), (-1.0, 1.0), (1.0, 1.0), (2.0, 2.0)] },
    )
}

// -------------------------------------------------------------- uniformity

/// A p-process whose terminal running infimum is tested for uniformity.
#[derive(Debug, Clone, PartialEq)]
pub enum PInstrument {
    /// The dyadic max-martingale p-value.
    Dyadic,
    /// `1 ∧ inf 1/M` for an odd-increment NM.
    OddFactor(FactorShape),
    /// The randomizer `U` itself.
    Randomizer,
}

/// KS distance of `inf_{t<=T} p_t` to the uniform law; with
/// `bound = Some(b)` a check `KS <= b` is emitted. Also reports the mass
/// at one.
pub fn run_uniformity(
    model: &NullModel,
    instrument: &PInstrument,
    horizon: usize,
    n_paths: u64,
    seed: u64,
    threads: Option<usize>,
    bound: Option<f64>,
) -> Result<Outcome> {
    model.validate()?;
    let factor = match instrument {
        PInstrument::OddFactor(shape) => Some(OddIncrementFactor::new(shape.clone(), 0.0)?),
        _ => None,
    };
    let prune = 1e-9f64.ln();
    let samples: Vec<f64> = simulate(
        n_paths,
        threads,
        seed,
        Vec::new,
        |acc: &mut Vec<f64>, _i, u, rng| {
            let obs = model.observations(rng).take(horizon);
            let p = match (instrument, &factor) {
                (PInstrument::Dyadic, _) => {
                    let mut s = DyadicPValueState::new();
                    obs.fold(1.0, |_, x| s.step(x))
                }
                (PInstrument::OddFactor(_), Some(f)) => {
                    let (mut l, mut best) = (0.0f64, 0.0f64);
                    for x in obs {
                        l += f.eval(x).ln();
                        best = best.max(l);
                        if l < prune {
                            break;
                        }
                    }
                    (-best).exp().min(1.0)
                }
                _ => u,
            };
            acc.push(p);
        },
        |a, b| a.extend(b),
    );
    let ks = ks_uniformity(&samples)?;
    let at_one = samples.iter().filter(|&&p| p >= 1.0).count() as u64;
    let mass = at_one as f64 / n_paths as f64;
    let name = match instrument {
        PInstrument::Dyadic => "dyadic-p",
        PInstrument::OddFactor(_) => "odd-nm-p",
        PInstrument::Randomizer => "randomizer",
    };
    let mut out = Outcome::default();
    if let Some(b) = bound {
        out.push(
            CheckResult::new(format!("ks_uniform[{name}]"), model)
                .estimate(ks, 0.0, n_paths)
                .at_most(b)
                .note(format!("T {horizon}"))
                .finish(seed),
        );
    }
    if matches!(instrument, PInstrument::OddFactor(_)) {
        let se = (mass * (1.0 - mass) / n_paths as f64).sqrt();
        out.push(
            CheckResult::new(format!("atom_at_one_detected[{name}]"), model)
                .estimate(mass, se, n_paths)
                .at_least(SE_MULTIPLIER * se.max(1.0 / n_paths as f64))
                .note("inf 1/M has an atom at one when sup M stays at most 1 with positive probability")
                .finish(seed),
        );
    }
    out.diag(format!("{name}.ks"), ks);
    out.diag(format!("{name}.mass_at_one"), mass);
    Ok(out)
}

/// Exact law of the dyadic p-value at `T = 1..=max_t`: streaming fixed-point
/// enumeration of all `2^T` sign paths against the rational tree and the
/// closed form `Q(p_T = j / 2^T) = 2^-T`.
pub fn dyadic_exact_law(max_t: usize) -> Result<Outcome> {
    if max_t > tree::MAX_DEPTH {
        return Err(Error::DepthTooLarge { depth: max_t, max: tree::MAX_DEPTH });
    }
    let mut mismatches = 0u64;
    for t in 1..=max_t {
        let mut counts = vec![0u64; 1 << t];
        for bits in 0u64..(1 << t) {
            let mut s = DyadicPValueState::new();
            for k in 0..t {
                s.step(if bits >> k & 1 == 1 { 1.0 } else { -1.0 });
            }
            // numerator over 2^64, all multiples of 2^(64 - t)
            let j = (s.numerator() >> (64 - t)) as usize;
            counts[j - 1] += 1;
        }
        let closed_form = counts.iter().all(|&c| c == 1);
        let tr = tree::sign_tree(t);
        let p = tree::dyadic_p_payload(&tr);
        let law = tr.terminal_law(&p)?;
        let denom = Rational::from_integer((1u64 << t).into());
        let tree_matches = law.len() == counts.len()
            && law.iter().enumerate().all(|(j, (v, q))| {
                *v == Rational::from_integer((j as u64 + 1).into()) / &denom && *q == Rational::one() / &denom
            });
        if !(closed_form && tree_matches) {
            mismatches += 1;
        }
    }
    let mut out = Outcome::default();
    out.push(
        CheckResult::new("dyadic_exact_law", "rademacher")
            .count(mismatches, max_t as u64)
            .note(format!("T = 1..={max_t}; enumeration, tree law and closed form agree exactly"))
            .finish(0),
    );
    Ok(out)
}

/// Randomization device on Bernoulli(1/2): `u F(y) + (1 - u) F(y-)` is
/// uniform.
pub fn run_randomized_bernoulli(n_paths: u64, seed: u64, threads: Option<usize>) -> Result<Outcome> {
    let model = NullModel::BernoulliFirstCoordinate { q: 0.5 };
    let cdf = Cdf::bernoulli(0.5)?;
    let samples: Vec<f64> = simulate(
        n_paths,
        threads,
        seed,
        Vec::new,
        |acc: &mut Vec<f64>, _i, u, rng| {
            let y = model.observations(rng).next().expect("infinite stream");
            acc.push(randomize(y, &cdf, u).expect("u in [0,1]"));
        },
        |a, b| a.extend(b),
    );
    let ks = ks_uniformity(&samples)?;
    let mut out = Outcome::default();
    out.push(
        CheckResult::new("ks_uniform[randomized-bernoulli]", &model)
            .estimate(ks, 0.0, n_paths)
            .at_most(dkw_bound(n_paths, 1e-3).max(0.01))
            .finish(seed),
    );
    Ok(out)
}

// -------------------------------------------------------------- domination

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Better {
    /// e-values: larger is better.
    Larger,
    /// p-values: smaller is better.
    Smaller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DominationVerdict {
    ADominates,
    BDominates,
    #[default]
    Equal,
    Incomparable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DominationOutcome {
    pub paths: u64,
    /// Paths where A is strictly worse than B at some time.
    pub a_worse: u64,
    /// Paths where A is strictly better than B at some time.
    pub a_better: u64,
    /// Paths satisfying the eligibility predicate.
    pub eligible: u64,
    /// Eligible paths where A is strictly better at some time.
    pub eligible_a_better: u64,
    pub first_a_worse: Option<(u64, usize)>,
    pub first_eligible_tie: Option<(u64, usize)>,
    pub verdict: DominationVerdict,
}

/// Pathwise comparison of two instruments on the same paths. `a` and `b`
/// map a path to its values at `t = 1..T`; values within `1e-9` relative are
/// ties.
#[allow(clippy::too_many_arguments)]
pub fn run_domination<FA, FB, FE>(
    model: &NullModel,
    horizon: usize,
    n_paths: u64,
    seed: u64,
    threads: Option<usize>,
    better: Better,
    a: FA,
    b: FB,
    eligible: FE,
) -> Result<DominationOutcome>
where
    FA: Fn(&[f64]) -> Vec<f64> + Sync,
    FB: Fn(&[f64]) -> Vec<f64> + Sync,
    FE: Fn(&[f64]) -> bool + Sync,
{
    model.validate()?;
    if horizon == 0 {
        return Err(Error::param("horizon", "must be at least 1"));
    }
    let mut d = simulate(
        n_paths,
        threads,
        seed,
        DominationOutcome::default,
        |acc: &mut DominationOutcome, i, u, rng| {
            let path = draw(model, rng, u, horizon).expect("finite path");
            let (va, vb) = (a(path.xs()), b(path.xs()));
            let (mut worse, mut strictly) = (None, false);
            for (t, (&x, &y)) in va.iter().zip(&vb).enumerate() {
                let tol = 1e-9 * x.abs().max(y.abs()).max(1.0);
                let gain = match better {
                    Better::Larger => x - y,
                    Better::Smaller => y - x,
                };
                if gain < -tol && worse.is_none() {
                    worse = Some(t + 1);
                }
                strictly |= gain > tol;
            }
            acc.paths += 1;
            if let Some(t) = worse {
                acc.a_worse += 1;
                acc.first_a_worse = earliest(acc.first_a_worse, Some((i, t)));
            }
            acc.a_better += u64::from(strictly);
            if eligible(path.xs()) {
                acc.eligible += 1;
                acc.eligible_a_better += u64::from(strictly);
                if !strictly {
                    acc.first_eligible_tie = earliest(acc.first_eligible_tie, Some((i, horizon)));
                }
            }
        },
        |x, y| {
            x.paths += y.paths;
            x.a_worse += y.a_worse;
            x.a_better += y.a_better;
            x.eligible += y.eligible;
            x.eligible_a_better += y.eligible_a_better;
            x.first_a_worse = earliest(x.first_a_worse, y.first_a_worse);
            x.first_eligible_tie = earliest(x.first_eligible_tie, y.first_eligible_tie);
        },
    );
    d.verdict = match (d.a_worse, d.a_better) {
        (0, 0) => DominationVerdict::Equal,
        (0, _) => DominationVerdict::ADominates,
        (_, 0) => DominationVerdict::BDominates,
        _ => DominationVerdict::Incomparable,
    };
    Ok(d)
}

/// `<name>.violations` (A worse than B somewhere, must be zero) and, when
/// `strict` is set, `<name>.strict_on_eligible` (fraction of eligible paths
/// with a strict improvement, must be one).
fn domination_checks(name: &str, model: &NullModel, seed: u64, d: &DominationOutcome, strict: bool) -> Outcome {
    let mut out = Outcome::default();
    out.push(
        CheckResult::new(format!("{name}.violations"), model)
            .count(d.a_worse, d.paths)
            .witness(Witness::path(model, seed, d.first_a_worse, "A worse than B"))
            .note(format!("verdict {:?}", d.verdict))
            .finish(seed),
    );
    if strict {
        let frac = if d.eligible == 0 { 0.0 } else { d.eligible_a_better as f64 / d.eligible as f64 };
        out.push(
            CheckResult::new(format!("{name}.strict_on_eligible"), model)
                .estimate(frac, 0.0, d.eligible)
                .at_least(1.0)
                .witness(Witness::path(model, seed, d.first_eligible_tie, "no strict improvement"))
                .note("eligible: paths with a negative observation")
                .finish(seed),
        );
    }
    out
}

// -------------------------------------------------------------- appendix C

/// `f(x) = ((1 + x) ∧ 2)^+`.
pub fn appendix_c_factor(x: f64) -> f64 {
    (1.0 + x).clamp(0.0, 2.0)
}

/// `p_t = 1 ∧ inf_{s<=t} 1/M_s` with `M_t = prod f(X_s)`, for `t = 1..T`.
pub fn appendix_c_p(xs: &[f64]) -> Vec<f64> {
    let mut m = 1.0;
    let mut p: f64 = 1.0;
    xs.iter()
        .map(|&x| {
            m *= appendix_c_factor(x);
            p = p.min(1.0 / m);
            p
        })
        .collect()
}

/// `p'_t = p_t - 1/4 1{X_1 ∨ X_2 <= -1}` for `t >= 2`.
pub fn appendix_c_p_modified(xs: &[f64]) -> Vec<f64> {
    let event = xs.len() >= 2 && xs[0].max(xs[1]) <= -1.0;
    appendix_c_p(xs)
        .into_iter()
        .enumerate()
        .map(|(i, p)| if i >= 1 && event { p - 0.25 } else { p })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApxVariant {
    /// `p'`, valid.
    Modified,
    /// `p - 1/2 1{X_1 <= -1}` from `t = 1`: invalid under two-point(1).
    Broken,
}

#[derive(Debug, Clone, Copy, Default)]
struct ApxAcc {
    crossed: Tally,
    pruned: u64,
    unresolved: u64,
}

/// Crossing frequency with the bound on the downward bias from pruned and
/// unresolved paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEstimate {
    pub frequency: f64,
    pub bias_bound: f64,
    /// `(path, time)` of the first crossing, if any.
    pub first_hit: Option<(u64, usize)>,
}

/// `Q(inf_t p'_t <= alpha)` under a two-point model, with pruning once
/// `M < 1e-6` after time 2.
pub fn appendix_c_crossing(
    eta: f64,
    alpha: f64,
    variant: ApxVariant,
    horizon: usize,
    n_paths: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<CrossingEstimate> {
    let model = NullModel::TwoPointSymmetric { center: 0.0, offset: eta };
    model.validate()?;
    let prune = 1e-6;
    let acc = simulate(
        n_paths,
        threads,
        seed,
        ApxAcc::default,
        |acc: &mut ApxAcc, i, _u, rng| {
            let (mut m, mut p) = (1.0f64, 1.0f64);
            let (mut x1, mut x2) = (0.0, 0.0);
            let (mut hit, mut resolved) = (None, false);
            for (k, x) in model.observations(rng).take(horizon).enumerate() {
                let t = k + 1;
                m *= appendix_c_factor(x);
                p = p.min(1.0 / m);
                match t {
                    1 => x1 = x,
                    2 => x2 = x,
                    _ => {}
                }
                let shift = match variant {
                    ApxVariant::Modified if t >= 2 && x1.max(x2) <= -1.0 => 0.25,
                    ApxVariant::Broken if x1 <= -1.0 => 0.5,
                    _ => 0.0,
                };
                if p - shift <= alpha {
                    hit = Some(t);
                    resolved = true;
                    break;
                }
                // from time 2 on the shift is fixed, and M = 0 freezes p
                if t >= 2 && m == 0.0 {
                    resolved = true;
                    break;
                }
                if t >= 2 && m < prune {
                    acc.pruned += 1;
                    resolved = true;
                    break;
                }
            }
            if !resolved {
                acc.unresolved += 1;
            }
            acc.crossed.record(i, hit);
        },
        |a, b| {
            a.crossed.merge(b.crossed);
            a.pruned += b.pruned;
            a.unresolved += b.unresolved;
        },
    );
    let n = n_paths as f64;
    let bias = prune * acc.pruned as f64 / n + acc.unresolved as f64 / n;
    Ok(CrossingEstimate { frequency: acc.crossed.frequency(), bias_bound: bias, first_hit: acc.crossed.first_hit })
}

fn appendix_c_validity(cfg: &RunConfig, variant: ApxVariant) -> Result<Outcome> {
    let mut out = Outcome::default();
    let n = cfg.pick(20_000, 2_000);
    let cases: &[(f64, f64)] = match variant {
        ApxVariant::Modified => &[(0.5, 0.5), (0.5, 0.8), (1.0, 0.5), (1.0, 0.8), (2.0, 0.5), (2.0, 0.8)],
        ApxVariant::Broken => &[(1.0, 0.5)],
    };
    let label = match variant {
        ApxVariant::Modified => "p_modified",
        ApxVariant::Broken => "p_broken",
    };
    for (k, &(eta, alpha)) in cases.iter().enumerate() {
        let seed = cfg.sub(70 + k as u64);
        let model = NullModel::TwoPointSymmetric { center: 0.0, offset: eta };
        let CrossingEstimate { frequency: est, bias_bound: bias, first_hit: first } =
            appendix_c_crossing(eta, alpha, variant, 2_000, n, seed, cfg.threads)?;
        let se = binomial_se(alpha, n);
        out.push(
            CheckResult::new(format!("appendix_c_validity[{label},eta={eta},alpha={alpha}]"), &model)
                .estimate(est, se, n)
                .at_most(alpha + SE_MULTIPLIER * se - bias)
                .witness(Witness::path(&model, seed, first, "inf p <= alpha"))
                .note(format!("pruning bias <= {bias:.2e}"))
                .finish(cfg.seed),
        );
    }
    Ok(out)
}

/// `p' <= p` pathwise, strictly on `{X_1 ∨ X_2 <= -1}` (probability 1/4
/// under two-point(1)).
fn appendix_c_domination(n_paths: u64, seed: u64, threads: Option<usize>) -> Result<Outcome> {
    let model = NullModel::TwoPointSymmetric { center: 0.0, offset: 1.0 };
    let event = |xs: &[f64]| xs[0].max(xs[1]) <= -1.0;
    let d = run_domination(&model, 10, n_paths, seed, threads, Better::Smaller, appendix_c_p_modified, appendix_c_p, event)?;
    let mut out = domination_checks("appendix_c_modified_vs_p", &model, seed, &d, true);
    let frac = d.a_better as f64 / d.paths as f64;
    let se = binomial_se(0.25, d.paths);
    out.push(
        CheckResult::new("appendix_c_strict_fraction", &model)
            .estimate(frac, se, d.paths)
            .at_least(0.25 - SE_MULTIPLIER * se)
            .at_most(0.25 + SE_MULTIPLIER * se)
            .note("strict improvement exactly on X_1 ∨ X_2 <= -1")
            .finish(seed),
    );
    Ok(out)
}

// --------------------------------------------------------- stopping matrix

/// `E[f(p_tau)]` for the dyadic p-value with the sqrt calibrator over the
/// rules fixed(T), first(p <= 0.05), uniform randomized time and
/// adversarial-min.
pub fn run_calibrated_stopping(horizon: usize, n_paths: u64, seed: u64, threads: Option<usize>) -> Result<Outcome> {
    let model = NullModel::RademacherShifted { center: 0.0 };
    let calibrator = Calibrator::Sqrt;
    let rules = [
        StoppingRule::FixedTime { t: horizon },
        StoppingRule::FirstCrossing { threshold: 0.05, direction: Crossing::AtMost },
        StoppingRule::RandomizedTime { weights: vec![1.0 / horizon as f64; horizon] },
        StoppingRule::Adversarial { extremum: Extremum::Min },
    ];
    let acc = simulate(
        n_paths,
        threads,
        seed,
        || vec![Moments::default(); rules.len()],
        |acc: &mut Vec<Moments>, i, u, rng| {
            let path = draw(&model, rng, u, horizon).expect("finite path");
            let p = crate::symmetry::dyadic_p_path(path.xs());
            for (r, rule) in rules.iter().enumerate() {
                let tau = evaluate_stopping(rule, &path, &p).expect("valid rule");
                let v = p[tau.index_or_terminal(horizon) - 1];
                acc[r].record(i, calibrator.apply(v).expect("p in [0,1]"));
            }
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y)),
    );
    let mut out = Outcome::default();
    for (rule, m) in rules.iter().zip(&acc) {
        out.push(
            CheckResult::new(format!("calibrated_e[{}]", rule.label()), &model)
                .estimate(m.mean(), m.std_error(), m.n)
                .at_most(1.0 + SE_MULTIPLIER * m.std_error())
                .note(format!("dyadic p, sqrt calibrator, T {horizon}"))
                .finish(seed),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
struct GaussAcc {
    sup_sqrt: Moments,
    stopped: Moments,
    fixed: Moments,
    sup: Moments,
}

/// Gaussian NM under N(0,1): `E[1 ∨ sup sqrt(e)] <= 2`, `E[e_tau] <= 1` for
/// `tau = first(e >= level) ∧ T` and at `T`; `E[sup e]` is reported only.
pub fn run_gaussian_stopping(horizon: usize, n_paths: u64, level: f64, seed: u64, threads: Option<usize>) -> Result<Outcome> {
    let model = NullModel::GaussianIid { mean: 0.0, sigma: 1.0 };
    let rule = StoppingRule::FirstCrossing { threshold: level, direction: Crossing::AtLeast };
    let log_level = level.ln();
    let acc = simulate(
        n_paths,
        threads,
        seed,
        GaussAcc::default,
        |acc: &mut GaussAcc, i, _u, rng| {
            let mut e = GaussianMartingale::standard(0.0);
            let (mut sup, mut stopped) = (0.0f64, None);
            for x in model.observations(rng).take(horizon) {
                e.observe(x);
                let l = e.log_value();
                sup = sup.max(l);
                if stopped.is_none() && l >= log_level {
                    stopped = Some(l);
                }
            }
            let last = e.log_value();
            acc.sup_sqrt.record(i, (0.5 * sup).exp());
            acc.stopped.record(i, stopped.unwrap_or(last).exp());
            acc.fixed.record(i, last.exp());
            acc.sup.record(i, sup.exp());
        },
        |a, b| {
            a.sup_sqrt.merge(b.sup_sqrt);
            a.stopped.merge(b.stopped);
            a.fixed.merge(b.fixed);
            a.sup.merge(b.sup);
        },
    );
    let mut out = Outcome::default();
    let checks = [
        ("gaussian_nm.sup_sqrt", &acc.sup_sqrt, 2.0, "E[1 ∨ sup sqrt(e)] <= 2".to_string()),
        ("gaussian_nm.stopped", &acc.stopped, 1.0, format!("optional stopping at {} ∧ T", rule.label())),
        ("gaussian_nm.fixed", &acc.fixed, 1.0, format!("fixed({horizon})")),
    ];
    for (name, m, bound, note) in checks {
        out.push(
            CheckResult::new(name, &model)
                .estimate(m.mean(), m.std_error(), m.n)
                .at_most(bound + SE_MULTIPLIER * m.std_error())
                .note(note)
                .finish(seed),
        );
    }
    out.diag("gaussian_nm.mean_sup_e", acc.sup.mean());
    out.diag("gaussian_nm.mean_sup_e_se", acc.sup.std_error());
    Ok(out)
}

/// `E[e_tau]` of the Gaussian NM under N(0,1) for a stopping time `rule`.
pub fn e_stopping_mean(rule: &StoppingRule, horizon: usize, n_paths: u64, seed: u64, threads: Option<usize>) -> Result<(f64, f64)> {
    rule.require_stopping_time()?;
    rule.stopper(0.5)?;
    if let StoppingRule::FixedTime { t } = rule {
        if *t > horizon {
            return Err(Error::param("t", format!("fixed time {t} exceeds horizon {horizon}")));
        }
    }
    let model = NullModel::GaussianIid { mean: 0.0, sigma: 1.0 };
    let m = simulate(
        n_paths,
        threads,
        seed,
        Moments::default,
        |acc: &mut Moments, i, u, rng| {
            let mut e = GaussianMartingale::standard(0.0);
            let mut stopper = rule.stopper(u).expect("checked");
            let mut value = 1.0;
            for x in model.observations(rng).take(horizon) {
                e.observe(x);
                value = e.value();
                if stopper.observe(value) {
                    break;
                }
            }
            acc.record(i, value);
        },
        |a, b| a.merge(b),
    );
    Ok((m.mean(), m.std_error()))
}

/// How a p-process is formed from the Gaussian NM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// `1 ∧ inf_{s<=t} 1/M_s`: an anytime p-value.
    RunningInf,
    /// `1 ∧ 1/M_t`: valid only at fixed times.
    Pointwise,
}

/// Error frequencies `Q(p_tau <= alpha)` for fixed(T), first(p <= alpha)
/// and adversarial-min; they must agree within `2 se`.
pub fn run_stopping_matrix(kind: PathKind, horizon: usize, n_paths: u64, alpha: f64, seed: u64, threads: Option<usize>) -> Result<Outcome> {
    let model = NullModel::GaussianIid { mean: 0.0, sigma: 1.0 };
    let rules = [
        StoppingRule::FixedTime { t: horizon },
        StoppingRule::FirstCrossing { threshold: alpha, direction: Crossing::AtMost },
        StoppingRule::Adversarial { extremum: Extremum::Min },
    ];
    let tallies = simulate(
        n_paths,
        threads,
        seed,
        || vec![Tally::default(); rules.len()],
        |acc: &mut Vec<Tally>, i, u, rng| {
            let path = draw(&model, rng, u, horizon).expect("finite path");
            let e = crate::instruments::e_path(GaussianMartingale::standard(0.0), path.xs());
            let p = match kind {
                PathKind::RunningInf => e_to_p(&e).expect("nonnegative"),
                PathKind::Pointwise => e.iter().map(|v| (1.0 / v).min(1.0)).collect(),
            };
            for (r, rule) in rules.iter().enumerate() {
                let tau = evaluate_stopping(rule, &path, &p).expect("valid rule");
                let t = tau.index_or_terminal(horizon);
                acc[r].record(i, (p[t - 1] <= alpha).then_some(t));
            }
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y)),
    );
    let se = binomial_se(alpha, n_paths);
    let label = match kind {
        PathKind::RunningInf => "running-inf",
        PathKind::Pointwise => "pointwise",
    };
    let mut out = Outcome::default();
    let freqs: Vec<f64> = tallies.iter().map(Tally::frequency).collect();
    for (rule, t) in rules.iter().zip(&tallies) {
        out.diag(format!("p_rule[{label}].{}", rule.label()), t.frequency());
    }
    let spread = freqs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - freqs.iter().cloned().fold(f64::INFINITY, f64::min);
    out.push(
        CheckResult::new(format!("p_rule_agreement[{label}]"), &model)
            .estimate(spread, se, n_paths)
            .at_most(2.0 * se)
            .note(format!("max - min of {freqs:?}"))
            .finish(seed),
    );
    if kind == PathKind::RunningInf {
        for (rule, t) in rules.iter().zip(&tallies) {
            out.push(
                CheckResult::new(format!("p_validity[{}]", rule.label()), &model)
                    .estimate(t.frequency(), se, n_paths)
                    .at_most(alpha + SE_MULTIPLIER * se)
                    .witness(Witness::path(&model, seed, t.first_hit, "p_tau <= alpha"))
                    .finish(seed),
            );
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- trees

#[derive(Debug, Clone, Copy, Default)]
struct TreeCounts {
    snell: u64,
    doob: u64,
    admissible: u64,
    implied: u64,
    ville: u64,
    equivalence: u64,
    p_admissible: u64,
    corrupted_passing: u64,
    enumerated: u64,
    certified: u64,
}

/// Exact checks on `count` random trees of depth `1..=max_depth` (cycled).
/// Each check counts trees where the identity fails.
pub fn run_tree_exact(count: u64, max_depth: usize, seed: u64) -> Result<Outcome> {
    if max_depth == 0 || max_depth > tree::MAX_DEPTH {
        return Err(Error::DepthTooLarge { depth: max_depth, max: tree::MAX_DEPTH });
    }
    let alphas = [rat(1, 2), rat(1, 5), rat(1, 20)];
    let mut c = TreeCounts::default();
    let mut first: BTreeMap<&'static str, u64> = BTreeMap::new();
    for k in 0..count {
        let mut rng = path_rng(seed, k);
        let depth = 1 + (k as usize % max_depth);
        let tr = tree::random_tree(&mut rng, depth);
        let payload = tree::random_payload(&mut rng, &tr, 3, 7);
        let mut fail = |name: &'static str, counter: &mut u64| {
            *counter += 1;
            first.entry(name).or_insert(k);
        };

        let report = tree::brute_force_safety(&tr, &payload, tree::EnumerationMode::Auto)?;
        match report.method {
            tree::SafetyMethod::Enumeration { .. } => c.enumerated += 1,
            tree::SafetyMethod::Certificate => c.certified += 1,
        }
        if report.max_value != report.snell_root || tree::stopped_value(&tr, &payload, &report.witness)? != report.max_value {
            fail("snell", &mut c.snell);
        }

        let snell = tree::snell_doob(&tr, &payload)?;
        if !doob_ok(&tr, &payload, &snell) {
            fail("doob", &mut c.doob);
        }

        let scale = if report.snell_root > Rational::one() { report.snell_root.clone() } else { Rational::one() };
        let safe: Payload = payload.iter().map(|v| v / &scale).collect();
        let nm = tree::admissibilize_e(&tr, &safe)?;
        let dominates = nm.iter().zip(&safe).all(|(m, e)| m >= e);
        if tr.require_nm(&nm).is_err() || tr.martingale_defect(&nm).is_some() || !nm[0].is_one() || !dominates {
            fail("admissible", &mut c.admissible);
        }

        let alt = tree::implied_alternative(&tr, &nm)?;
        let sums_ok = (0..alt.len()).filter(|&n| !alt.children(n).is_empty()).all(|n| {
            alt.children(n).iter().map(|&ch| alt.node(ch).prob.clone()).sum::<Rational>().is_one()
        });
        let lr_ok = (0..tr.len()).all(|n| *alt.reach(n) == &nm[n] * tr.reach(n));
        if !(sums_ok && lr_ok) {
            fail("implied", &mut c.implied);
        }

        if !tree::conditional_ville_check(&tr, &nm, &alphas[k as usize % 3])?.passed() {
            fail("ville", &mut c.ville);
        }

        let events: Vec<bool> = (0..tr.len()).map(|_| rng.random_bool(0.25)).collect();
        if !tree::equivalence_check(&tr, &events)?.all_equal() {
            fail("equivalence", &mut c.equivalence);
        }

        let p_nm = tree::nm_to_p(&tr, &nm)?;
        let p_adm = tree::admissibilize_p(&tr, &p_nm)?;
        let closed = tr.cond_supremum(&tr.running_min(&p_adm)?, tr.depth())? == p_adm;
        if !(p_adm.iter().zip(&p_nm).all(|(a, b)| a <= b) && tree::is_fixed_point_p(&tr, &p_adm)? && closed) {
            fail("p_admissible", &mut c.p_admissible);
        }

        let mut corrupted = nm.clone();
        if let Some(n) = (1..tr.len()).find(|&n| tr.node(n).prob.is_positive()) {
            corrupted[n] += Rational::one();
        }
        if tree::conditional_ville_check(&tr, &corrupted, &alphas[k as usize % 3])?.passed() {
            c.corrupted_passing += 1;
        }
    }
    let model = format!("random trees, depth 1..={max_depth}");
    let wit = |name: &str| first.get(name).map(|&k| Witness::detail(&model, seed, format!("tree index {k}")));
    let mut out = Outcome::default();
    let rows: [(&str, u64, &str); 7] = [
        ("snell", c.snell, "Snell root equals the best stopping value"),
        ("doob", c.doob, "L = M - A, A predictable nondecreasing from 0, M a martingale"),
        ("admissible", c.admissible, "admissibilize_e gives an NM with root 1 dominating the input"),
        ("implied", c.implied, "implied alternative is a probability tree with likelihood ratio M"),
        ("ville", c.ville, "conditional Ville at every node with M > 0"),
        ("equivalence", c.equivalence, "union = random time = stopping time = first hit"),
        ("p_admissible", c.p_admissible, "admissibilize_p is a closed fixed point dominating 1 ∧ inf 1/M"),
    ];
    for (name, n, note) in rows {
        out.push(CheckResult::new(format!("tree.{name}"), &model).count(n, count).witness(wit(name)).note(note).finish(seed));
    }
    out.push(
        CheckResult::new("tree.corrupted_nm_ville", &model)
            .count(count - c.corrupted_passing, count)
            .control()
            .note("one node raised by 1: conditional Ville must fail")
            .finish(seed),
    );
    out.diag("tree.enumerated", c.enumerated as f64);
    out.diag("tree.certified", c.certified as f64);
    Ok(out)
}

fn doob_ok(tr: &FiniteTree, payload: &[Rational], s: &tree::SnellResult) -> bool {
    let zero = Rational::zero();
    let reconstruct = (0..tr.len()).all(|n| s.envelope[n] == &s.martingale[n] - &s.compensator[n]);
    let nondecreasing = (1..tr.len()).all(|n| {
        let p = tr.node(n).parent.expect("non-root");
        s.compensator[n] >= s.compensator[p]
    });
    // A is predictable: siblings share it
    let predictable = (0..tr.len()).all(|n| tr.children(n).windows(2).all(|w| s.compensator[w[0]] == s.compensator[w[1]]));
    let dominates = (0..tr.len()).all(|n| s.envelope[n] >= payload[n]);
    reconstruct
        && s.compensator[0] == zero
        && nondecreasing
        && predictable
        && dominates
        && tr.martingale_defect(&s.martingale).is_none()
}

/// The dyadic p-value on the sign tree is a closed max-martingale with a
/// uniform terminal law.
pub fn tree_closed_mm_checks(depth: usize) -> Result<Outcome> {
    let tr = tree::sign_tree(depth);
    let p = tree::dyadic_p_payload(&tr);
    let closed = tr.cond_supremum(&tr.running_min(&p)?, tr.depth())? == p;
    let fixed = tree::is_fixed_point_p(&tr, &p)? && tree::admissibilize_p(&tr, &p)? == p;
    let mut out = Outcome::default();
    out.push(
        CheckResult::new("tree.dyadic_closed_max_martingale", format!("sign tree depth {depth}"))
            .count(u64::from(!closed) + u64::from(!fixed), 2)
            .finish(0),
    );
    Ok(out)
}
