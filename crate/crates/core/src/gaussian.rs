//! Gaussian test martingales and the normal-mixture confidence sequence.
//!
//! Under `X_t | F_{t-1} ~ N(m, sigma_t^2)` with predictable `sigma_t^2`,
//!
//! ```text
//! G_t(lambda) = exp( lambda * S_t - lambda^2 / 2 * V_t ),
//! S_t = sum_{s<=t} (X_s - m),   V_t = sum_{s<=t} sigma_s^2
//! ```
//!
//! is a nonnegative martingale for every `lambda`. Mixing `lambda` over
//! `N(0, rho^2)` gives the closed form
//!
//! ```text
//! log M_t = -1/2 log(1 + rho^2 V_t) + rho^2 S_t^2 / (2 (1 + rho^2 V_t))
//! ```
//!
//! and `{m : M_t(m) < 1/alpha}` is an interval around the running mean. For
//! unit variance and `rho = 1` its half-width at time `t` is
//! `sqrt((1 + 1/t) log((t + 1) / alpha^2) / t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruments::{check_alpha, ConfidenceSequence, EProcess};
use crate::model::{SamplePath, VarianceRule};

/// `G_t^m(lambda)`; `lambda = 1` is the plain Gaussian NM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMartingale {
    mean: f64,
    lambda: f64,
    rule: VarianceRule,
    prev_x: f64,
    sum_dev: f64,
    sum_var: f64,
    log_value: f64,
}

impl GaussianMartingale {
    pub fn new(mean: f64, lambda: f64, rule: VarianceRule) -> Result<Self> {
        if !mean.is_finite() || !lambda.is_finite() {
            return Err(Error::param("lambda", "mean and lambda must be finite"));
        }
        rule.validate()?;
        Ok(Self { mean, lambda, rule, prev_x: 0.0, sum_dev: 0.0, sum_var: 0.0, log_value: 0.0 })
    }

    /// Unit-variance plain NM at `mean`.
    pub fn standard(mean: f64) -> Self {
        Self::new(mean, 1.0, VarianceRule::UNIT).expect("valid")
    }

    /// One update with an explicitly supplied predictable variance.
    pub fn step(&mut self, y: f64, sigma_sq: f64) -> Result<()> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::param("sigma_sq", format!("{sigma_sq} must be positive")));
        }
        self.advance(y, sigma_sq);
        Ok(())
    }

    #[inline]
    fn advance(&mut self, y: f64, sigma_sq: f64) {
        let dev = y - self.mean;
        self.sum_dev += dev;
        self.sum_var += sigma_sq;
        self.log_value += self.lambda * dev - 0.5 * self.lambda * self.lambda * sigma_sq;
        self.prev_x = y;
    }

    pub fn sum_dev(&self) -> f64 {
        self.sum_dev
    }

    pub fn sum_var(&self) -> f64 {
        self.sum_var
    }

    /// `lambda S_t - lambda^2 V_t / 2` recomputed from the accumulators.
    pub fn reconstructed_log_value(&self) -> f64 {
        self.lambda * self.sum_dev - 0.5 * self.lambda * self.lambda * self.sum_var
    }
}

impl EProcess for GaussianMartingale {
    #[inline]
    fn observe(&mut self, x: f64) {
        let v = self.rule.variance(self.prev_x);
        self.advance(x, v);
    }

    fn log_value(&self) -> f64 {
        self.log_value
    }
}

/// Normal-mixture martingale with mixing law `N(0, rho^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMartingale {
    mean: f64,
    rho_sq: f64,
    rule: VarianceRule,
    prev_x: f64,
    sum_dev: f64,
    sum_var: f64,
}

impl MixtureMartingale {
    pub fn new(mean: f64, rho_sq: f64, rule: VarianceRule) -> Result<Self> {
        if !(rho_sq > 0.0 && rho_sq.is_finite()) {
            return Err(Error::param("rho_sq", format!("{rho_sq} must be positive")));
        }
        if !mean.is_finite() {
            return Err(Error::param("mean", "must be finite"));
        }
        rule.validate()?;
        Ok(Self { mean, rho_sq, rule, prev_x: 0.0, sum_dev: 0.0, sum_var: 0.0 })
    }

    /// Standard-normal mixing, unit variance.
    pub fn standard(mean: f64) -> Self {
        Self::new(mean, 1.0, VarianceRule::UNIT).expect("valid")
    }

    pub fn step(&mut self, y: f64, sigma_sq: f64) -> Result<()> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::param("sigma_sq", format!("{sigma_sq} must be positive")));
        }
        self.sum_dev += y - self.mean;
        self.sum_var += sigma_sq;
        self.prev_x = y;
        Ok(())
    }

    pub fn sum_dev(&self) -> f64 {
        self.sum_dev
    }

    pub fn sum_var(&self) -> f64 {
        self.sum_var
    }
}

/// Closed-form log value of the `N(0, rho^2)` mixture at `(S, V)`.
#[inline]
pub fn mixture_log_value(sum_dev: f64, sum_var: f64, rho_sq: f64) -> f64 {
    let denom = 1.0 + rho_sq * sum_var;
    -0.5 * denom.ln() + rho_sq * sum_dev * sum_dev / (2.0 * denom)
}

impl EProcess for MixtureMartingale {
    #[inline]
    fn observe(&mut self, x: f64) {
        let v = self.rule.variance(self.prev_x);
        self.sum_dev += x - self.mean;
        self.sum_var += v;
        self.prev_x = x;
    }

    fn log_value(&self) -> f64 {
        mixture_log_value(self.sum_dev, self.sum_var, self.rho_sq)
    }
}

/// Half-width of the standard mixture CS for unit-variance data at time `t`.
pub fn mixture_cs_radius(t: usize, alpha: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::param("t", "must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", format!("{alpha} is not in (0,1)")));
    }
    let t = t as f64;
    Ok(((1.0 + 1.0 / t) * ((t + 1.0) / (alpha * alpha)).ln() / t).sqrt())
}

/// Largest `|S|` with mixture value below `1/alpha` at cumulative variance
/// `V`: `sqrt(2 (1/rho^2 + V) (log(1/alpha) + log(1 + rho^2 V) / 2))`.
pub fn mixture_sum_boundary(sum_var: f64, alpha: f64, rho_sq: f64) -> f64 {
    (2.0 * (1.0 / rho_sq + sum_var) * (-alpha.ln() + 0.5 * (rho_sq * sum_var).ln_1p())).sqrt()
}

/// Which martingale family a Gaussian CS inverts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum GaussianCsEngine {
    Plain { lambda: f64 },
    Mixture { rho_sq: f64 },
}

/// Grid CS for the conditional mean: `m` stays in while its martingale has
/// never reached `1/alpha` (running intersection).
pub fn gaussian_cs(
    path: &SamplePath,
    rule: VarianceRule,
    alpha: f64,
    grid: Vec<f64>,
    engine: GaussianCsEngine,
) -> Result<ConfidenceSequence> {
    check_alpha(alpha)?;
    let threshold = -alpha.ln();
    let mut cs = ConfidenceSequence::new(grid, alpha, true)?;
    let mut states: Vec<Box<dyn FnMut(f64) -> f64>> = Vec::with_capacity(cs.grid().len());
    for &m in cs.grid() {
        match engine {
            GaussianCsEngine::Plain { lambda } => {
                let mut g = GaussianMartingale::new(m, lambda, rule)?;
                states.push(Box::new(move |x| {
                    g.observe(x);
                    g.log_value()
                }));
            }
            GaussianCsEngine::Mixture { rho_sq } => {
                let mut g = MixtureMartingale::new(m, rho_sq, rule)?;
                states.push(Box::new(move |x| {
                    g.observe(x);
                    g.log_value()
                }));
            }
        }
    }
    for &x in path.xs() {
        let mask = states.iter_mut().map(|s| s(x) < threshold).collect();
        cs.push(mask)?;
    }
    Ok(cs)
}

/// One time step of the exact-interval mixture CS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanInterval {
    pub t: usize,
    /// Running mean `sum x / t`.
    pub center: f64,
    /// Half-width of the time-`t` interval (before intersection).
    pub radius: f64,
    /// Running intersection of all intervals so far.
    pub lower: f64,
    pub upper: f64,
}

/// Exact-interval mode of the mixture CS. The excluded set at each `t` is
/// `{m : (sum x - t m)^2 >= boundary^2}`, an open interval's complement.
pub fn mixture_cs_intervals(
    path: &SamplePath,
    rule: VarianceRule,
    alpha: f64,
    rho_sq: f64,
) -> Result<Vec<MeanInterval>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", format!("{alpha} is not in (0,1)")));
    }
    if !(rho_sq > 0.0) {
        return Err(Error::param("rho_sq", "must be positive"));
    }
    rule.validate()?;
    let mut sum_x = 0.0;
    let mut sum_var = 0.0;
    let mut prev = 0.0;
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    Ok(path
        .xs()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let t = i + 1;
            sum_var += rule.variance(prev);
            prev = x;
            sum_x += x;
            let center = sum_x / t as f64;
            let radius = mixture_sum_boundary(sum_var, alpha, rho_sq) / t as f64;
            lower = lower.max(center - radius);
            upper = upper.min(center + radius);
            MeanInterval { t, center, radius, lower, upper }
        })
        .collect())
}
