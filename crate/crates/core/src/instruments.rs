//! The four instruments of anytime-valid inference and the reductions between
//! them.
//!
//! | instrument | validity under a null `Q` |
//! |---|---|
//! | e-process `(e_t)` | `E_Q[e_tau] <= 1` for every stopping time `tau` |
//! | p-process `(p_t)` | `Q(p_tau <= a) <= a` for every `tau` and `a` |
//! | sequential test `(psi_t)` | `Q(exists t: psi_t = 1) <= alpha` |
//! | confidence sequence `(C_t)` | `P(exists t: phi(P) not in C_t) <= alpha` |
//!
//! Reductions implemented here:
//!
//! ```text
//! e -> p      p_t = 1 ∧ inf_{s<=t} 1/e_s
//! e -> test   reject once e_t >= 1/alpha
//! p -> test   reject once p_t <= alpha
//! tests -> p  p_t = inf{alpha : psi_t(alpha) = 1}
//! p -> e      e_t = f(p_t) for a calibrator f
//! tests -> CS C_t = {gamma : psi_t^gamma = 0}
//! CS -> test  reject once phi(Q) ∩ C_t = ∅
//! ```
//!
//! Threshold comparisons are inclusive. e-values are carried in log space
//! by the streaming processes; the sequence-level reductions take linear
//! values.

use serde::{Deserialize, Serialize};

use crate::calibrate::Calibrator;
use crate::error::{Error, Result};
use crate::model::{NullModel, SamplePath, StopTime};
use crate::montecarlo::{self, Moments};
use crate::rng::path_rng;

/// A streaming e-process: consumes one observation at a time and keeps its
/// value in log space (`-∞` encodes the value 0).
pub trait EProcess: Clone + Send + Sync {
    fn observe(&mut self, x: f64);

    fn log_value(&self) -> f64;

    fn value(&self) -> f64 {
        self.log_value().exp()
    }
}

/// Runs `process` along `xs` and returns `e_1..e_T`.
pub fn e_path<E: EProcess>(mut process: E, xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            process.observe(x);
            process.value()
        })
        .collect()
}

/// Same as [`e_path`] but in log space.
pub fn log_e_path<E: EProcess>(mut process: E, xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            process.observe(x);
            process.log_value()
        })
        .collect()
}

/// Anytime p-value carried as a running value in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PProcess {
    current: f64,
    monotone: bool,
}

impl Default for PProcess {
    fn default() -> Self {
        Self { current: 1.0, monotone: true }
    }
}

impl PProcess {
    pub fn new(monotone: bool) -> Self {
        Self { current: 1.0, monotone }
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    /// Feeds a raw p-value; with the monotone flag the running infimum is kept.
    pub fn update(&mut self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        self.current = if self.monotone { self.current.min(p) } else { p };
        self.current
    }

    /// Feeds an e-value given in log space (`p = 1/e`).
    pub fn update_from_log_e(&mut self, log_e: f64) -> f64 {
        self.update((-log_e).exp())
    }
}

/// Where a sequential test gets its decisions from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSource {
    FromE,
    FromP,
    FromCs,
    Direct,
}

/// An absorbing level-`alpha` sequential test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequentialTest {
    alpha: f64,
    source: TestSource,
    t: usize,
    rejected_at: Option<usize>,
}

impl SequentialTest {
    pub fn new(alpha: f64, source: TestSource) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha, source, t: 0, rejected_at: None })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn source(&self) -> TestSource {
        self.source
    }

    pub fn rejected(&self) -> bool {
        self.rejected_at.is_some()
    }

    pub fn rejection_time(&self) -> StopTime {
        self.rejected_at.map_or(StopTime::Never, StopTime::At)
    }

    /// Records the raw decision at the next time; rejection is absorbing.
    pub fn step(&mut self, reject_now: bool) -> bool {
        self.t += 1;
        if reject_now && self.rejected_at.is_none() {
            self.rejected_at = Some(self.t);
        }
        self.rejected()
    }

    pub fn step_e(&mut self, e: f64) -> bool {
        let alpha = self.alpha;
        self.step(e >= 1.0 / alpha)
    }

    pub fn step_log_e(&mut self, log_e: f64) -> bool {
        let alpha = self.alpha;
        self.step(log_e >= -alpha.ln())
    }

    pub fn step_p(&mut self, p: f64) -> bool {
        let alpha = self.alpha;
        self.step(p <= alpha)
    }
}

/// Per-time inclusion masks over a finite grid of candidate values of the
/// functional. Times are 1-based: `mask(t)` is `C_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSequence {
    grid: Vec<f64>,
    masks: Vec<Vec<bool>>,
    alpha: f64,
    running_intersection: bool,
}

impl ConfidenceSequence {
    pub fn new(grid: Vec<f64>, alpha: f64, running_intersection: bool) -> Result<Self> {
        check_alpha(alpha)?;
        if grid.is_empty() {
            return Err(Error::InvalidInput("confidence sequence grid is empty".into()));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("grid must be strictly increasing".into()));
        }
        Ok(Self { grid, masks: Vec::new(), alpha, running_intersection })
    }

    /// Appends `C_{t+1}`; intersected with `C_t` when the flag is set.
    pub fn push(&mut self, mut mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.grid.len() {
            return Err(Error::LengthMismatch { expected: self.grid.len(), got: mask.len() });
        }
        if self.running_intersection {
            if let Some(prev) = self.masks.last() {
                for (m, &p) in mask.iter_mut().zip(prev) {
                    *m &= p;
                }
            }
        }
        self.masks.push(mask);
        Ok(())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn running_intersection(&self) -> bool {
        self.running_intersection
    }

    pub fn horizon(&self) -> usize {
        self.masks.len()
    }

    /// `C_t` as a mask over the grid (`1 <= t <= horizon`).
    pub fn mask(&self, t: usize) -> &[bool] {
        &self.masks[t - 1]
    }

    /// Grid values included at time `t`.
    pub fn included(&self, t: usize) -> Vec<f64> {
        self.grid.iter().zip(self.mask(t)).filter(|(_, &m)| m).map(|(&g, _)| g).collect()
    }

    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.grid.iter().position(|&g| g == value)
    }

    /// First time grid point `index` is excluded.
    pub fn exclusion_time(&self, index: usize) -> StopTime {
        self.masks
            .iter()
            .position(|m| !m[index])
            .map_or(StopTime::Never, |i| StopTime::At(i + 1))
    }

    /// Whether `value` (a grid point) stays in every `C_t`.
    pub fn covers(&self, value: f64) -> bool {
        self.index_of(value)
            .is_some_and(|i| self.masks.iter().all(|m| m[i]))
    }
}

/// Finite family of models standing in for a composite null (or
/// alternative). `reference` marks a designated sub-family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureFamily {
    members: Vec<NullModel>,
    reference: Vec<usize>,
}

impl MeasureFamily {
    pub fn new(members: Vec<NullModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyFamily);
        }
        for m in &members {
            m.validate()?;
        }
        let reference = (0..members.len()).collect();
        Ok(Self { members, reference })
    }

    pub fn single(model: NullModel) -> Result<Self> {
        Self::new(vec![model])
    }

    pub fn with_reference(mut self, reference: Vec<usize>) -> Result<Self> {
        if reference.is_empty() || reference.iter().any(|&i| i >= self.members.len()) {
            return Err(Error::InvalidInput("reference sub-family must be a nonempty index subset".into()));
        }
        self.reference = reference;
        Ok(self)
    }

    pub fn members(&self) -> &[NullModel] {
        &self.members
    }

    pub fn reference(&self) -> impl Iterator<Item = &NullModel> {
        self.reference.iter().map(|&i| &self.members[i])
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("{alpha} is not in (0,1]")))
    }
}

fn check_e(e: f64) -> Result<()> {
    if e.is_nan() || e < 0.0 {
        Err(Error::InvalidInput(format!("e-value {e} is negative or NaN")))
    } else {
        Ok(())
    }
}

/// `p_t = 1 ∧ inf_{s<=t} 1/e_s`, with `1/0 := ∞`.
pub fn e_to_p(e_path: &[f64]) -> Result<Vec<f64>> {
    let mut p = 1.0f64;
    e_path
        .iter()
        .map(|&e| {
            check_e(e)?;
            if e > 0.0 {
                p = p.min(1.0 / e);
            }
            Ok(p)
        })
        .collect()
}

/// First time `e_t >= 1/alpha`.
pub fn e_to_test(e_path: &[f64], alpha: f64) -> Result<StopTime> {
    check_alpha(alpha)?;
    let mut test = SequentialTest::new(alpha, TestSource::FromE)?;
    for &e in e_path {
        check_e(e)?;
        if test.step_e(e) {
            break;
        }
    }
    Ok(test.rejection_time())
}

/// First time `p_t <= alpha`.
pub fn p_to_test(p_path: &[f64], alpha: f64) -> Result<StopTime> {
    let mut test = SequentialTest::new(alpha, TestSource::FromP)?;
    for &p in p_path {
        if p.is_nan() {
            return Err(Error::InvalidInput("NaN p-value".into()));
        }
        if test.step_p(p) {
            break;
        }
    }
    Ok(test.rejection_time())
}

/// `p_t` = smallest grid level whose test has rejected by `t`, else 1.
///
/// `alpha_grid` must be strictly increasing and `rejection_times[i]` is the
/// rejection time of the level-`alpha_grid[i]` test.
pub fn test_family_to_p(alpha_grid: &[f64], rejection_times: &[StopTime], horizon: usize) -> Result<Vec<f64>> {
    if alpha_grid.len() != rejection_times.len() {
        return Err(Error::LengthMismatch { expected: alpha_grid.len(), got: rejection_times.len() });
    }
    for &a in alpha_grid {
        check_alpha(a)?;
    }
    if alpha_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("alpha grid must be strictly increasing".into()));
    }
    for i in 1..rejection_times.len() {
        if rejection_times[i] > rejection_times[i - 1] {
            return Err(Error::NotNested { prev: i - 1, index: i });
        }
    }
    Ok((1..=horizon)
        .map(|t| {
            alpha_grid
                .iter()
                .zip(rejection_times)
                .find(|(_, r)| r.by(t))
                .map_or(1.0, |(&a, _)| a)
        })
        .collect())
}

/// `e_t = f(p_t)`.
pub fn p_to_e_calibrated(p_path: &[f64], calibrator: &Calibrator) -> Result<Vec<f64>> {
    calibrator.validate()?;
    p_path.iter().map(|&p| calibrator.apply(p)).collect()
}

/// `C_t = {gamma : psi^gamma has not rejected by t}`.
pub fn invert_tests_to_cs(
    grid: Vec<f64>,
    rejection_times: &[StopTime],
    alpha: f64,
    horizon: usize,
) -> Result<ConfidenceSequence> {
    if grid.len() != rejection_times.len() {
        return Err(Error::LengthMismatch { expected: grid.len(), got: rejection_times.len() });
    }
    let mut cs = ConfidenceSequence::new(grid, alpha, true)?;
    for t in 1..=horizon {
        cs.push(rejection_times.iter().map(|r| !r.by(t)).collect())?;
    }
    Ok(cs)
}

/// First time every null value is outside `C_t`.
pub fn cs_to_test(cs: &ConfidenceSequence, null_values: &[f64]) -> Result<StopTime> {
    if null_values.is_empty() {
        return Err(Error::InvalidInput("null value set is empty".into()));
    }
    let idx: Vec<usize> = null_values
        .iter()
        .map(|&v| {
            cs.index_of(v)
                .ok_or_else(|| Error::InvalidInput(format!("null value {v} is not on the grid")))
        })
        .collect::<Result<_>>()?;
    let mut test = SequentialTest::new(cs.alpha(), TestSource::FromCs)?;
    for t in 1..=cs.horizon() {
        let mask = cs.mask(t);
        if test.step(idx.iter().all(|&i| !mask[i])) {
            break;
        }
    }
    Ok(test.rejection_time())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    PValue,
    EValue,
    /// Test paths encoded as 0.0 / 1.0.
    Test,
}

/// Composite instrument from per-member instruments on one sample path:
/// the maximum of the p-values, the minimum of the e-values, and the
/// minimum of the tests (reject only when every member rejects).
pub fn aggregate_composite(kind: InstrumentKind, member_paths: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = member_paths.first().ok_or(Error::EmptyFamily)?;
    for p in member_paths {
        if p.len() != first.len() {
            return Err(Error::LengthMismatch { expected: first.len(), got: p.len() });
        }
    }
    let pick: fn(f64, f64) -> f64 = match kind {
        InstrumentKind::PValue => f64::max,
        InstrumentKind::EValue | InstrumentKind::Test => f64::min,
    };
    Ok((0..first.len())
        .map(|t| member_paths.iter().map(|p| p[t]).reduce(pick).expect("nonempty"))
        .collect())
}

/// The quantity a mixture check estimates and how it is judged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidityCriterion {
    /// Mean of the statistic at most `bound` (e.g. an e-value's mean).
    MeanAtMost { bound: f64 },
    /// Mean of an indicator at least `bound` (e.g. CS coverage).
    MeanAtLeast { bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

impl From<Moments> for Estimate {
    fn from(m: Moments) -> Self {
        Estimate { mean: m.mean(), std_error: m.std_error(), n: m.n }
    }
}

impl ValidityCriterion {
    /// Within bound up to three standard errors.
    pub fn holds(&self, est: &Estimate) -> bool {
        match *self {
            ValidityCriterion::MeanAtMost { bound } => est.mean <= bound + 3.0 * est.std_error,
            ValidityCriterion::MeanAtLeast { bound } => est.mean >= bound - 3.0 * est.std_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub members: Vec<Estimate>,
    pub mixture: Estimate,
    pub criterion: ValidityCriterion,
    pub members_pass: Vec<bool>,
    pub mixture_pass: bool,
}

/// Monte Carlo check of an instrument's validity under each member of a
/// family and under the mixture `sum_k w_k Q_k` (member drawn once per path).
///
/// `statistic` maps a whole path to the quantity whose mean is judged, e.g.
/// the e-value at a fixed time or the coverage indicator of a CS.
#[allow(clippy::too_many_arguments)]
pub fn convex_mixture_check<F>(
    family: &MeasureFamily,
    weights: &[f64],
    horizon: usize,
    n_paths: u64,
    seed: u64,
    threads: Option<usize>,
    statistic: F,
    criterion: ValidityCriterion,
) -> Result<MixtureReport>
where
    F: Fn(&SamplePath) -> f64 + Sync,
{
    if weights.len() != family.len() {
        return Err(Error::LengthMismatch { expected: family.len(), got: weights.len() });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param("weights", "must be nonnegative and sum to one"));
    }
    if horizon == 0 || n_paths < 2 {
        return Err(Error::param("n_paths", "need a positive horizon and at least two paths"));
    }
    let estimate = |w: &[f64]| -> Estimate {
        montecarlo::run(
            n_paths,
            threads,
            Moments::default,
            |acc, i| {
                let mut rng = path_rng(seed, i);
                let v: f64 = rand::Rng::random(&mut rng);
                let mut cum = 0.0;
                let mut k = w.len() - 1;
                for (j, wj) in w.iter().enumerate() {
                    cum += wj;
                    if v < cum {
                        k = j;
                        break;
                    }
                }
                let path = family.members()[k].draw_path(&mut rng, horizon).expect("validated family");
                acc.record(i, statistic(&path));
            },
            |a, b| a.merge(b),
        )
        .into()
    };
    let members: Vec<Estimate> = (0..family.len())
        .map(|k| {
            let mut unit = vec![0.0; family.len()];
            unit[k] = 1.0;
            estimate(&unit)
        })
        .collect();
    let mixture = estimate(weights);
    Ok(MixtureReport {
        members_pass: members.iter().map(|e| criterion.holds(e)).collect(),
        mixture_pass: criterion.holds(&mixture),
        members,
        mixture,
        criterion,
    })
}
