//! Observation generators, sample paths and stopping rules.
//!
//! A [`SamplePath`] is one realization `(U, X_1, ..., X_T)`: the initial
//! randomizer `U ~ Unif[0,1]` (the whole of `F_0`) followed by real-valued
//! observations. The filtration is implicit: `F_t` is generated by the prefix
//! `(U, X_1, ..., X_t)`.
//!
//! A [`NullModel`] describes the conditional law of `X_t` given the past and
//! knows how to stream observations from a [`PathRng`]. Horizons are always
//! finite; a time "at infinity" is the distinguished [`StopTime::Never`] and
//! quantities indexed by it are read off at the horizon.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::path_rng;

/// One realization of the randomizer and the observation sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    u: f64,
    xs: Vec<f64>,
}

impl SamplePath {
    pub fn new(u: f64, xs: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::param("u", format!("{u} is not in [0,1]")));
        }
        if xs.is_empty() {
            return Err(Error::param("horizon", "a path needs at least one observation"));
        }
        if let Some(x) = xs.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite observation {x}")));
        }
        Ok(Self { u, xs })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn horizon(&self) -> usize {
        self.xs.len()
    }

    /// The observations visible at time `t` (`X_1..X_t`).
    pub fn prefix(&self, t: usize) -> &[f64] {
        &self.xs[..t.min(self.xs.len())]
    }
}

/// Heavy-tailed symmetric families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum HeavyTail {
    Cauchy,
    StudentT { df: f64 },
}

/// Predictable variance schedules `sigma_t^2 = g(x_{t-1})`, with `x_0 := 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum VarianceRule {
    /// `sigma_t^2 = variance`.
    Constant { variance: f64 },
    /// `sigma_t^2 = base + scale * |x_{t-1}|`.
    Abs { base: f64, scale: f64 },
    /// `sigma_t^2 = base + scale * x_{t-1}^2`.
    Square { base: f64, scale: f64 },
    /// `sigma_t^2 = max(floor, intercept + slope * x_{t-1})`.
    Affine { intercept: f64, slope: f64, floor: f64 },
}

impl VarianceRule {
    pub const UNIT: VarianceRule = VarianceRule::Constant { variance: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, name| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, "must be finite"))
            }
        };
        match *self {
            VarianceRule::Constant { variance } => {
                finite(variance, "variance")?;
                if variance <= 0.0 {
                    return Err(Error::param("variance", format!("{variance} must be positive")));
                }
            }
            VarianceRule::Abs { base, scale } | VarianceRule::Square { base, scale } => {
                finite(base, "base")?;
                finite(scale, "scale")?;
                if base <= 0.0 || scale < 0.0 {
                    return Err(Error::param("base", "need base > 0 and scale >= 0"));
                }
            }
            VarianceRule::Affine { intercept, slope, floor } => {
                finite(intercept, "intercept")?;
                finite(slope, "slope")?;
                finite(floor, "floor")?;
                if floor <= 0.0 {
                    return Err(Error::param("floor", format!("{floor} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Variance of the next observation given the previous one.
    #[inline]
    pub fn variance(&self, prev: f64) -> f64 {
        match *self {
            VarianceRule::Constant { variance } => variance,
            VarianceRule::Abs { base, scale } => base + scale * prev.abs(),
            VarianceRule::Square { base, scale } => base + scale * prev * prev,
            VarianceRule::Affine { intercept, slope, floor } => (intercept + slope * prev).max(floor),
        }
    }

    /// The full schedule `sigma_1^2..sigma_T^2` for a realized path.
    pub fn schedule(&self, xs: &[f64]) -> Vec<f64> {
        let mut prev = 0.0;
        xs.iter()
            .map(|&x| {
                let v = self.variance(prev);
                prev = x;
                v
            })
            .collect()
    }
}

/// Law of the observation process under a single null or alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullModel {
    /// i.i.d. `N(mean, sigma^2)`.
    GaussianIid { mean: f64, sigma: f64 },
    /// `X_t | F_{t-1} ~ N(mean, g(X_{t-1}))`.
    GaussianPredictableVar { mean: f64, rule: VarianceRule },
    /// `X_t = center ± offset` with probability one half each.
    TwoPointSymmetric { center: f64, offset: f64 },
    /// `X_t = center ± 1`.
    RademacherShifted { center: f64 },
    /// `X_t = center + Z_t`, `Z_t` Cauchy or Student-t.
    SymmetricHeavyTail { center: f64, family: HeavyTail },
    /// `X_1 ~ Bernoulli(q)`, `X_2 = X_3 = ... = 0`.
    BernoulliFirstCoordinate { q: f64 },
}

impl NullModel {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, name| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, "must be finite"))
            }
        };
        match self {
            NullModel::GaussianIid { mean, sigma } => {
                finite(*mean, "mean")?;
                finite(*sigma, "sigma")?;
                if *sigma <= 0.0 {
                    return Err(Error::param("sigma", format!("{sigma} must be positive")));
                }
            }
            NullModel::GaussianPredictableVar { mean, rule } => {
                finite(*mean, "mean")?;
                rule.validate()?;
            }
            NullModel::TwoPointSymmetric { center, offset } => {
                finite(*center, "center")?;
                finite(*offset, "offset")?;
                if *offset <= 0.0 {
                    return Err(Error::param("offset", format!("{offset} must be positive")));
                }
            }
            NullModel::RademacherShifted { center } => finite(*center, "center")?,
            NullModel::SymmetricHeavyTail { center, family } => {
                finite(*center, "center")?;
                if let HeavyTail::StudentT { df } = family {
                    if !(df.is_finite() && *df > 0.0) {
                        return Err(Error::param("df", format!("{df} must be positive")));
                    }
                }
            }
            NullModel::BernoulliFirstCoordinate { q } => {
                if !(0.0..=1.0).contains(q) {
                    return Err(Error::param("q", format!("{q} is not in [0,1]")));
                }
            }
        }
        Ok(())
    }

    /// Center of symmetry, for models whose increments are conditionally
    /// symmetric.
    pub fn center(&self) -> Option<f64> {
        match *self {
            NullModel::GaussianIid { mean, .. } | NullModel::GaussianPredictableVar { mean, .. } => Some(mean),
            NullModel::TwoPointSymmetric { center, .. }
            | NullModel::RademacherShifted { center }
            | NullModel::SymmetricHeavyTail { center, .. } => Some(center),
            NullModel::BernoulliFirstCoordinate { .. } => None,
        }
    }

    /// Stream of observations. The caller draws `U` first if it needs one.
    pub fn observations<'a, R: Rng>(&'a self, rng: &'a mut R) -> Observations<'a, R> {
        Observations { model: self, rng, t: 0, prev: 0.0, bits: 0, nbits: 0 }
    }

    /// Draws a full path (randomizer first, then observations).
    pub fn draw_path<R: Rng>(&self, rng: &mut R, horizon: usize) -> Result<SamplePath> {
        self.validate()?;
        let u: f64 = rng.random();
        let xs: Vec<f64> = self.observations(rng).take(horizon).collect();
        SamplePath::new(u, xs)
    }
}

impl fmt::Display for NullModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NullModel::GaussianIid { mean, sigma } => write!(f, "gauss:{mean},{sigma}"),
            NullModel::GaussianPredictableVar { mean, rule } => match rule {
                VarianceRule::Constant { variance } => write!(f, "gauss:{mean},{}", variance.sqrt()),
                VarianceRule::Abs { base, scale } => write!(f, "gauss-abs:{mean},{base},{scale}"),
                VarianceRule::Square { base, scale } => write!(f, "gauss-sq:{mean},{base},{scale}"),
                VarianceRule::Affine { intercept, slope, floor } => {
                    write!(f, "gauss-affine:{mean},{intercept},{slope},{floor}")
                }
            },
            NullModel::TwoPointSymmetric { center, offset } => write!(f, "twopoint:{center},{offset}"),
            NullModel::RademacherShifted { center } => write!(f, "rademacher:{center}"),
            NullModel::SymmetricHeavyTail { center, family } => match family {
                HeavyTail::Cauchy => write!(f, "cauchy:{center}"),
                HeavyTail::StudentT { df } => write!(f, "student:{center},{df}"),
            },
            NullModel::BernoulliFirstCoordinate { q } => write!(f, "bernoulli:{q}"),
        }
    }
}

impl FromStr for NullModel {
    type Err = Error;

    /// Parses the compact model syntax used on the command line, e.g.
    /// `rademacher`, `gauss:0,1`, `twopoint:0,0.5`, `student:0,3`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), a),
            None => (s.trim(), ""),
        };
        let nums: Vec<f64> = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidInput(format!("bad number `{a}` in model `{s}`")))
                })
                .collect::<Result<_>>()?
        };
        let arity = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("model `{name}` takes {n} argument(s), got {}", nums.len())))
            }
        };
        let model = match name {
            "rademacher" => {
                if nums.is_empty() {
                    NullModel::RademacherShifted { center: 0.0 }
                } else {
                    arity(1)?;
                    NullModel::RademacherShifted { center: nums[0] }
                }
            }
            "gauss" | "gaussian" => {
                arity(2)?;
                NullModel::GaussianIid { mean: nums[0], sigma: nums[1] }
            }
            "gauss-abs" => {
                arity(3)?;
                NullModel::GaussianPredictableVar {
                    mean: nums[0],
                    rule: VarianceRule::Abs { base: nums[1], scale: nums[2] },
                }
            }
            "gauss-sq" => {
                arity(3)?;
                NullModel::GaussianPredictableVar {
                    mean: nums[0],
                    rule: VarianceRule::Square { base: nums[1], scale: nums[2] },
                }
            }
            "gauss-affine" => {
                arity(4)?;
                NullModel::GaussianPredictableVar {
                    mean: nums[0],
                    rule: VarianceRule::Affine { intercept: nums[1], slope: nums[2], floor: nums[3] },
                }
            }
            "twopoint" => {
                arity(2)?;
                NullModel::TwoPointSymmetric { center: nums[0], offset: nums[1] }
            }
            "cauchy" => {
                arity(1)?;
                NullModel::SymmetricHeavyTail { center: nums[0], family: HeavyTail::Cauchy }
            }
            "student" => {
                arity(2)?;
                NullModel::SymmetricHeavyTail { center: nums[0], family: HeavyTail::StudentT { df: nums[1] } }
            }
            "bernoulli" => {
                arity(1)?;
                NullModel::BernoulliFirstCoordinate { q: nums[0] }
            }
            other => return Err(Error::InvalidInput(format!("unknown model `{other}`"))),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Streaming observation iterator. Infinite; callers `take` the horizon.
pub struct Observations<'a, R: Rng> {
    model: &'a NullModel,
    rng: &'a mut R,
    t: usize,
    prev: f64,
    bits: u64,
    nbits: u32,
}

impl<R: Rng> Observations<'_, R> {
    #[inline]
    fn coin(&mut self) -> bool {
        if self.nbits == 0 {
            self.bits = self.rng.random();
            self.nbits = 64;
        }
        let b = self.bits & 1 == 1;
        self.bits >>= 1;
        self.nbits -= 1;
        b
    }
}

impl<R: Rng> Iterator for Observations<'_, R> {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        self.t += 1;
        let x = match *self.model {
            NullModel::GaussianIid { mean, sigma } => {
                let z: f64 = self.rng.sample(StandardNormal);
                mean + sigma * z
            }
            NullModel::GaussianPredictableVar { mean, rule } => {
                let z: f64 = self.rng.sample(StandardNormal);
                mean + rule.variance(self.prev).sqrt() * z
            }
            NullModel::TwoPointSymmetric { center, offset } => {
                if self.coin() {
                    center + offset
                } else {
                    center - offset
                }
            }
            NullModel::RademacherShifted { center } => {
                if self.coin() {
                    center + 1.0
                } else {
                    center - 1.0
                }
            }
            NullModel::SymmetricHeavyTail { center, family } => {
                let z = match family {
                    HeavyTail::Cauchy => Cauchy::new(0.0, 1.0).expect("valid").sample(self.rng),
                    HeavyTail::StudentT { df } => StudentT::new(df).expect("validated df").sample(self.rng),
                };
                center + z
            }
            NullModel::BernoulliFirstCoordinate { q } => {
                if self.t == 1 {
                    let v: f64 = self.rng.random();
                    if v < q {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.0
                }
            }
        };
        self.prev = x;
        Some(x)
    }
}

/// Draws a path of length `horizon` for `model` from stream 0 of `seed`.
pub fn sample_path(model: &NullModel, horizon: usize, seed: u64) -> Result<SamplePath> {
    if horizon == 0 {
        return Err(Error::param("horizon", "must be at least 1"));
    }
    model.draw_path(&mut path_rng(seed, 0), horizon)
}

/// A time in `{0, 1, ..., T} ∪ {∞}`. Time 0 means "before any observation".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StopTime {
    At(usize),
    Never,
}

impl StopTime {
    pub fn is_finite(&self) -> bool {
        matches!(self, StopTime::At(_))
    }

    /// Whether the event has happened by time `t`.
    pub fn by(&self, t: usize) -> bool {
        matches!(*self, StopTime::At(s) if s <= t)
    }

    /// Index into a value sequence indexed `1..=horizon`, with `∞` read at the
    /// horizon and time 0 read at time 1.
    pub fn index_or_terminal(&self, horizon: usize) -> usize {
        match *self {
            StopTime::At(t) => t.clamp(1, horizon),
            StopTime::Never => horizon,
        }
    }
}

impl fmt::Display for StopTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopTime::At(t) => write!(f, "{t}"),
            StopTime::Never => write!(f, "inf"),
        }
    }
}

/// Direction of a threshold crossing. Both are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    AtLeast,
    AtMost,
}

impl Crossing {
    #[inline]
    pub fn crossed(&self, value: f64, threshold: f64) -> bool {
        match self {
            Crossing::AtLeast => value >= threshold,
            Crossing::AtMost => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremum {
    Max,
    Min,
}

/// Rules deciding when to look at a monitored process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StoppingRule {
    FixedTime { t: usize },
    FirstCrossing { threshold: f64, direction: Crossing },
    /// `P(tau = k) = weights[k-1]`; the leftover mass is `tau = ∞`. Drawn
    /// from the randomizer `U` by inversion, so `tau` is `F_0`-measurable.
    RandomizedTime { weights: Vec<f64> },
    /// The (first) time of the path-wise extremum of the monitored process.
    /// Looks into the future: not a stopping time.
    Adversarial { extremum: Extremum },
}

impl StoppingRule {
    pub fn is_stopping_time(&self) -> bool {
        !matches!(self, StoppingRule::Adversarial { .. })
    }

    /// Rejects rules that are not stopping times.
    pub fn require_stopping_time(&self) -> Result<()> {
        if self.is_stopping_time() {
            Ok(())
        } else {
            Err(Error::NotAStoppingTime(format!("{self:?} peeks at the whole path")))
        }
    }

    pub fn label(&self) -> String {
        match self {
            StoppingRule::FixedTime { t } => format!("fixed({t})"),
            StoppingRule::FirstCrossing { threshold, direction } => match direction {
                Crossing::AtLeast => format!("first(>={threshold})"),
                Crossing::AtMost => format!("first(<={threshold})"),
            },
            StoppingRule::RandomizedTime { weights } => format!("randomized({} atoms)", weights.len()),
            StoppingRule::Adversarial { extremum } => match extremum {
                Extremum::Max => "adversarial-max".into(),
                Extremum::Min => "adversarial-min".into(),
            },
        }
    }

    /// Streaming form of the rule. `u` is the path's randomizer.
    pub fn stopper(&self, u: f64) -> Result<Stopper<'_>> {
        match self {
            StoppingRule::Adversarial { .. } => Err(Error::NotAStoppingTime(
                "adversarial times cannot be evaluated online".into(),
            )),
            StoppingRule::RandomizedTime { weights } => {
                validate_weights(weights)?;
                let mut acc = 0.0;
                let mut fixed = None;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        fixed = Some(i + 1);
                        break;
                    }
                }
                Ok(Stopper { rule: self, t: 0, target: fixed })
            }
            StoppingRule::FixedTime { t } => {
                if *t == 0 {
                    return Err(Error::param("t", "fixed time must be at least 1"));
                }
                Ok(Stopper { rule: self, t: 0, target: Some(*t) })
            }
            StoppingRule::FirstCrossing { threshold, .. } => {
                if threshold.is_nan() {
                    return Err(Error::param("threshold", "NaN"));
                }
                Ok(Stopper { rule: self, t: 0, target: None })
            }
        }
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::param("weights", "must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::param("weights", format!("sum {total} exceeds one")));
    }
    Ok(())
}

/// Online evaluation of a stopping rule. It only ever sees the prefix.
#[derive(Debug, Clone)]
pub struct Stopper<'a> {
    rule: &'a StoppingRule,
    t: usize,
    target: Option<usize>,
}

impl Stopper<'_> {
    /// Feeds the monitored value at the next time; returns true when the rule
    /// stops at this time.
    pub fn observe(&mut self, value: f64) -> bool {
        self.t += 1;
        match self.rule {
            StoppingRule::FirstCrossing { threshold, direction } => direction.crossed(value, *threshold),
            _ => self.target == Some(self.t),
        }
    }
}

/// Stop time of `rule` on `path`, monitoring `monitored` (`monitored[t-1]`
/// is the process value at time `t`).
pub fn evaluate_stopping(rule: &StoppingRule, path: &SamplePath, monitored: &[f64]) -> Result<StopTime> {
    let horizon = path.horizon();
    let needs_process = matches!(rule, StoppingRule::FirstCrossing { .. } | StoppingRule::Adversarial { .. });
    if needs_process && monitored.len() != horizon {
        return Err(Error::LengthMismatch { expected: horizon, got: monitored.len() });
    }
    match rule {
        StoppingRule::FixedTime { t } if *t > horizon => {
            return Err(Error::param("t", format!("fixed time {t} exceeds horizon {horizon}")))
        }
        StoppingRule::Adversarial { extremum } => {
            let better = |a: f64, b: f64| match extremum {
                Extremum::Max => a > b,
                Extremum::Min => a < b,
            };
            let mut best = 0;
            for (i, &v) in monitored.iter().enumerate() {
                if better(v, monitored[best]) {
                    best = i;
                }
            }
            return Ok(StopTime::At(best + 1));
        }
        _ => {}
    }
    let mut stopper = rule.stopper(path.u())?;
    for t in 1..=horizon {
        let value = monitored.get(t - 1).copied().unwrap_or(0.0);
        if stopper.observe(value) {
            return Ok(StopTime::At(t));
        }
    }
    Ok(StopTime::Never)
}
