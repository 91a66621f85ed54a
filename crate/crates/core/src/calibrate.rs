//! p-to-e calibrators, the uniform randomization device, and KS distances.
//!
//! A calibrator is a nonincreasing `f: [0,1] -> [0,∞]` with `∫_0^1 f = 1`;
//! if `p` is stochastically larger than a uniform then `E[f(p)] <= 1`.
//!
//! The randomization device maps `y ~ F` and an independent `u ~ Unif[0,1]`
//! to `u F(y) + (1-u) F(y-)`, which is exactly uniform and never exceeds
//! `F(y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INTEGRAL_TOL: f64 = 1e-6;

/// One step of a table calibrator: value `value` on `(previous upper, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub upper: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibrator {
    /// `f(u) = 1 / (2 sqrt(u))`.
    #[default]
    Sqrt,
    /// `f(u) = kappa * u^(kappa - 1)`, `kappa in (0,1)`.
    Power { kappa: f64 },
    /// Nonincreasing step function; the last step must end at 1.
    Table { steps: Vec<Step> },
}

impl Calibrator {
    pub fn power(kappa: f64) -> Result<Self> {
        let c = Calibrator::Power { kappa };
        c.validate()?;
        Ok(c)
    }

    pub fn table(steps: Vec<Step>) -> Result<Self> {
        let c = Calibrator::Table { steps };
        c.validate()?;
        Ok(c)
    }

    /// Checks monotonicity and the unit integral.
    pub fn validate(&self) -> Result<()> {
        match self {
            Calibrator::Sqrt => Ok(()),
            Calibrator::Power { kappa } => {
                if *kappa > 0.0 && *kappa < 1.0 {
                    Ok(())
                } else {
                    Err(Error::param("kappa", format!("{kappa} is not in (0,1)")))
                }
            }
            Calibrator::Table { steps } => {
                if steps.is_empty() {
                    return Err(Error::param("steps", "empty table"));
                }
                let mut lower = 0.0;
                let mut prev_value = f64::INFINITY;
                for s in steps {
                    if !(s.upper > lower && s.upper <= 1.0) {
                        return Err(Error::param("steps", format!("edge {} out of order", s.upper)));
                    }
                    if !(s.value.is_finite() && s.value >= 0.0) || s.value > prev_value {
                        return Err(Error::param("steps", "values must be finite, nonnegative and nonincreasing"));
                    }
                    lower = s.upper;
                    prev_value = s.value;
                }
                if lower != 1.0 {
                    return Err(Error::param("steps", "last step must end at 1"));
                }
                let integral = self.integral();
                if (integral - 1.0).abs() > INTEGRAL_TOL {
                    return Err(Error::CalibratorIntegral { integral });
                }
                Ok(())
            }
        }
    }

    /// `∫_0^1 f`. Exact for the analytic families and by step integration
    /// for tables.
    pub fn integral(&self) -> f64 {
        match self {
            Calibrator::Sqrt | Calibrator::Power { .. } => 1.0,
            Calibrator::Table { steps } => {
                let mut lower = 0.0;
                steps
                    .iter()
                    .map(|s| {
                        let a = (s.upper - lower) * s.value;
                        lower = s.upper;
                        a
                    })
                    .sum()
            }
        }
    }

    /// `f(p)`; `p = 0` maps to `+∞` for the unbounded families.
    pub fn apply(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("p-value {p} is not in [0,1]")));
        }
        Ok(self.apply_unchecked(p))
    }

    #[inline]
    pub(crate) fn apply_unchecked(&self, p: f64) -> f64 {
        match self {
            Calibrator::Sqrt => 0.5 / p.sqrt(),
            Calibrator::Power { kappa } => {
                if p == 0.0 {
                    f64::INFINITY
                } else {
                    kappa * p.powf(kappa - 1.0)
                }
            }
            Calibrator::Table { steps } => steps
                .iter()
                .find(|s| p <= s.upper)
                .or(steps.last())
                .map(|s| s.value)
                .unwrap_or(0.0),
        }
    }
}

/// Distribution functions supporting `F(y)` and the left limit `F(y-)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cdf {
    /// Empirical distribution of the (sorted) samples.
    Empirical { sorted: Vec<f64> },
    /// Discrete law with jumps `masses[i]` at `points[i]` (sorted, distinct).
    Step { points: Vec<f64>, masses: Vec<f64> },
    /// Continuous uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl Cdf {
    pub fn empirical(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidInput("empirical cdf needs non-NaN samples".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Cdf::Empirical { sorted: samples })
    }

    pub fn step(points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() || points.is_empty() {
            return Err(Error::InvalidInput("step cdf needs matching, nonempty points and masses".into()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("step cdf points must be strictly increasing".into()));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) || (masses.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("step cdf masses must be nonnegative and sum to one".into()));
        }
        Ok(Cdf::Step { points, masses })
    }

    pub fn bernoulli(q: f64) -> Result<Self> {
        Cdf::step(vec![0.0, 1.0], vec![1.0 - q, q])
    }

    /// `F(y) = P(Y <= y)`.
    pub fn at(&self, y: f64) -> f64 {
        match self {
            Cdf::Empirical { sorted } => sorted.partition_point(|&s| s <= y) as f64 / sorted.len() as f64,
            Cdf::Step { points, masses } => {
                let k = points.partition_point(|&p| p <= y);
                masses[..k].iter().sum::<f64>().min(1.0)
            }
            Cdf::Uniform { lo, hi } => ((y - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// `F(y-) = P(Y < y)`.
    pub fn left_limit(&self, y: f64) -> f64 {
        match self {
            Cdf::Empirical { sorted } => sorted.partition_point(|&s| s < y) as f64 / sorted.len() as f64,
            Cdf::Step { points, masses } => {
                let k = points.partition_point(|&p| p < y);
                masses[..k].iter().sum::<f64>().min(1.0)
            }
            Cdf::Uniform { .. } => self.at(y),
        }
    }
}

/// `u F(y) + (1 - u) F(y-)`.
pub fn randomize(y: f64, cdf: &Cdf, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::param("u", format!("{u} is not in [0,1]")));
    }
    let hi = cdf.at(y);
    let lo = cdf.left_limit(y);
    Ok((lo + u * (hi - lo)).clamp(lo, hi))
}

/// Minimum sample size accepted by [`ks_uniformity`].
pub const KS_MIN_SAMPLES: usize = 100;

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and
/// `Unif[0,1]`.
pub fn ks_uniformity(samples: &[f64]) -> Result<f64> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "need at least {KS_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("NaN sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - x).max(x - i as f64 / n);
    }
    Ok(d)
}

/// Two-sample KS distance `sup_y |F_a(y) - F_b(y)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("two-sample KS needs nonempty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let y = a[i].min(b[j]);
        while i < a.len() && a[i] <= y {
            i += 1;
        }
        while j < b.len() && b[j] <= y {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}
