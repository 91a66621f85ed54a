//! Inference for conditionally symmetric nulls.
//!
//! Under `S^m`, each `X_t - m` is symmetric given the past. A product
//! `prod f_s(X_s - m)` with predictable nonnegative factors is
//!
//! ```text
//! an S^m-NSM  iff  f(x) + f(-x) <= 2
//! an S^m-NM   iff  f(x) + f(-x)  = 2   (f - 1 odd)
//! ```
//!
//! Mirroring turns a supermartingale factor into a martingale one:
//!
//! ```text
//! f~(x) = g(x)          if g(x) >= g(-x)
//!         2 - g(-x)     otherwise
//! ```
//!
//! The integer sign walk `M_0 = 1, M_t = M_{t-1} + sign(X_t)` stopped at
//! `{0, 1/alpha}` gives an admissible level-`alpha` test, and the dyadic
//! max-martingale `p_t = p_{t-1} - 2^{-N_t} 1{X_t > 0}` (with `N_t` the number
//! of nonzero observations so far) an admissible p-value.

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruments::{check_alpha, ConfidenceSequence, EProcess};
use crate::model::{SamplePath, StopTime};

/// Tolerance for the functional identities checked on the probe grid.
pub const PROBE_TOL: f64 = 1e-12;

/// `0` and `±` 500 log-spaced points in `[1e-4, 1e2]`.
pub fn probe_grid() -> Vec<f64> {
    let n = 500;
    let (lo, hi) = (1e-4f64.ln(), 1e2f64.ln());
    let mut out = Vec::with_capacity(2 * n + 1);
    out.push(0.0);
    for i in 0..n {
        let y = (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp();
        out.push(y);
        out.push(-y);
    }
    out
}

/// `exp(x - x^2 / 2)`.
#[inline]
pub fn exp_nsm_factor(y: f64) -> f64 {
    (y - 0.5 * y * y).exp()
}

/// The exponential S^m-NSM `prod exp((X_s - m) - (X_s - m)^2 / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialNsm {
    center: f64,
    log_value: f64,
}

impl ExponentialNsm {
    pub fn new(center: f64) -> Self {
        Self { center, log_value: 0.0 }
    }
}

impl EProcess for ExponentialNsm {
    #[inline]
    fn observe(&mut self, x: f64) {
        let y = x - self.center;
        self.log_value += y - 0.5 * y * y;
    }

    fn log_value(&self) -> f64 {
        self.log_value
    }
}

/// Odd inner functions `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OddFn {
    Identity,
    Cube,
    Sinh,
    /// `clamp(x, -c, c)`.
    ClippedLinear { c: f64 },
}

impl OddFn {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            OddFn::Identity => x,
            OddFn::Cube => x * x * x,
            OddFn::Sinh => x.sinh(),
            OddFn::ClippedLinear { c } => x.clamp(-c, c),
        }
    }
}

/// Outer wrapper turning `h(x)` into a factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Wrapper {
    /// `1 + arctan(h)`.
    Arctan,
    /// `1 + cos(h)`. Even in `h`, so it never yields an odd increment; kept
    /// so that validation can reject it.
    Cos,
    /// Mirror of `exp(h - h^2 / 2)`.
    MirroredExponential,
    /// Piecewise-linear interpolation through `(h, f)` knots sorted by `h`,
    /// constant beyond the end knots.
    CustomTable { knots: Vec<(f64, f64)> },
}

/// A factor `f(x) = wrapper(h(x))`, before any validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorShape {
    pub h: OddFn,
    pub wrapper: Wrapper,
}

impl FactorShape {
    pub fn new(h: OddFn, wrapper: Wrapper) -> Self {
        Self { h, wrapper }
    }

    /// `1 + arctan(clamp(x, -tan 1, tan 1))`. Without the clip the factor
    /// drops below zero for `x < -tan 1`.
    pub fn arctan() -> Self {
        Self::new(OddFn::ClippedLinear { c: 1f64.tan() }, Wrapper::Arctan)
    }

    pub fn mirrored_exponential() -> Self {
        Self::new(OddFn::Identity, Wrapper::MirroredExponential)
    }

    /// Direct evaluation, no symmetrization.
    pub fn eval(&self, x: f64) -> f64 {
        let y = self.h.eval(x);
        match &self.wrapper {
            Wrapper::Arctan => 1.0 + y.atan(),
            Wrapper::Cos => 1.0 + y.cos(),
            // g(y) >= g(-y) iff y >= 0
            Wrapper::MirroredExponential => {
                if y >= 0.0 {
                    exp_nsm_factor(y)
                } else {
                    2.0 - exp_nsm_factor(-y)
                }
            }
            Wrapper::CustomTable { knots } => interpolate(knots, y),
        }
    }

    fn validate_table(&self) -> Result<()> {
        if let Wrapper::CustomTable { knots } = &self.wrapper {
            if knots.is_empty() {
                return Err(Error::param("knots", "table is empty"));
            }
            if knots.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
                return Err(Error::param("knots", "knots must be finite"));
            }
            if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::param("knots", "knot abscissae must be strictly increasing"));
            }
        }
        if let OddFn::ClippedLinear { c } = self.h {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::param("c", format!("{c} must be positive")));
            }
        }
        Ok(())
    }
}

fn interpolate(knots: &[(f64, f64)], y: f64) -> f64 {
    let i = knots.partition_point(|k| k.0 <= y);
    if i == 0 {
        return knots[0].1;
    }
    if i == knots.len() {
        return knots[i - 1].1;
    }
    let (x0, f0) = knots[i - 1];
    let (x1, f1) = knots[i];
    f0 + (f1 - f0) * (y - x0) / (x1 - x0)
}

/// Evaluates a factor known to satisfy `f(y) + f(-y) = 2` so that the
/// identity also holds exactly in floating point: the side with value at
/// least one is computed directly and the other as `2 - ` that value, which
/// is exact for arguments in `[1, 2]`.
#[inline]
fn antisymmetric_eval(raw: impl Fn(f64) -> f64, y: f64) -> f64 {
    if y == 0.0 {
        return 1.0;
    }
    let u = raw(y);
    let w = raw(-y);
    if u >= w {
        u.clamp(1.0, 2.0)
    } else {
        2.0 - w.clamp(1.0, 2.0)
    }
}

/// Validated S^m-NM factor `x -> f(x - m)` with `f - 1` odd and `f >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddIncrementFactor {
    shape: FactorShape,
    center: f64,
}

impl OddIncrementFactor {
    /// Checks `|f(y) + f(-y) - 2| <= 1e-12` and `f(y) >= 0` on the probe grid.
    pub fn new(shape: FactorShape, center: f64) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::param("center", "must be finite"));
        }
        shape.validate_table()?;
        for y in probe_grid() {
            let (a, b) = (shape.eval(y), shape.eval(-y));
            if !(a >= -PROBE_TOL) {
                return Err(Error::FactorCondition { x: y, reason: format!("f = {a} is negative") });
            }
            if !((a + b - 2.0).abs() <= PROBE_TOL) {
                return Err(Error::FactorCondition {
                    x: y,
                    reason: format!("f(x) + f(-x) = {} differs from 2", a + b),
                });
            }
        }
        Ok(Self { shape, center })
    }

    pub fn arctan(center: f64) -> Self {
        Self::new(FactorShape::arctan(), center).expect("valid")
    }

    pub fn mirrored_exponential(center: f64) -> Self {
        Self::new(FactorShape::mirrored_exponential(), center).expect("valid")
    }

    pub fn shape(&self) -> &FactorShape {
        &self.shape
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn with_center(&self, center: f64) -> Self {
        Self { shape: self.shape.clone(), center }
    }

    /// `f(x - m)`; `f(y) + f(-y) == 2` holds exactly for the returned floats.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        antisymmetric_eval(|y| self.shape.eval(y), x - self.center)
    }
}

/// `prod_{s<=t} f(X_s - m)` for a validated odd-increment factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddEValue {
    factor: OddIncrementFactor,
    log_value: f64,
}

impl OddEValue {
    pub fn new(factor: OddIncrementFactor) -> Self {
        Self { factor, log_value: 0.0 }
    }

    pub fn factor(&self) -> &OddIncrementFactor {
        &self.factor
    }
}

impl EProcess for OddEValue {
    #[inline]
    fn observe(&mut self, x: f64) {
        self.log_value += self.factor.eval(x).ln();
    }

    fn log_value(&self) -> f64 {
        self.log_value
    }
}

/// The mirror `f~` of a supermartingale factor `g`.
#[derive(Debug, Clone, Copy)]
pub struct Mirrored<G> {
    g: G,
}

/// Mirrors `g` after checking `g >= 0` and `g(x) + g(-x) <= 2` on the probe
/// grid; the error names the first violating `x`.
pub fn mirror<G: Fn(f64) -> f64>(g: G) -> Result<Mirrored<G>> {
    for y in probe_grid() {
        let (a, b) = (g(y), g(-y));
        if !(a >= 0.0) {
            return Err(Error::FactorCondition { x: y, reason: format!("g = {a} is negative") });
        }
        if !(a + b <= 2.0 + PROBE_TOL) {
            return Err(Error::FactorCondition { x: y, reason: format!("g(x) + g(-x) = {} exceeds 2", a + b) });
        }
    }
    Ok(Mirrored { g })
}

impl<G: Fn(f64) -> f64> Mirrored<G> {
    pub fn eval(&self, x: f64) -> f64 {
        let naive = |y: f64| {
            let (a, b) = ((self.g)(y), (self.g)(-y));
            if a >= b {
                a
            } else {
                2.0 - b
            }
        };
        antisymmetric_eval(naive, x)
    }
}

/// The integer sign walk started at 1 and stopped at `{0, 1/alpha}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignWalkState {
    pub value: u64,
    pub threshold: u64,
    pub absorbed_zero: bool,
    pub rejected: bool,
}

/// `1/alpha` as an integer, if it is one (to 1e-9 relative).
pub fn integer_threshold(alpha: f64) -> Result<u64> {
    check_alpha(alpha)?;
    let k = 1.0 / alpha;
    let r = k.round();
    if (k - r).abs() > 1e-9 * r || r > u32::MAX as f64 {
        return Err(Error::param("alpha", format!("1/alpha = {k} is not an integer; the sign-walk test needs an integer threshold")));
    }
    Ok(r as u64)
}

impl SignWalkState {
    pub fn new(alpha: f64) -> Result<Self> {
        let threshold = integer_threshold(alpha)?;
        Ok(Self { value: 1, threshold, absorbed_zero: false, rejected: threshold <= 1 })
    }

    pub fn is_absorbed(&self) -> bool {
        self.absorbed_zero || self.rejected
    }

    /// One step on the sign of `x`; returns whether the test has rejected.
    #[inline]
    pub fn step(&mut self, x: f64) -> bool {
        if self.is_absorbed() {
            return self.rejected;
        }
        if x > 0.0 {
            self.value += 1;
        } else if x < 0.0 {
            self.value -= 1;
        }
        if self.value == 0 {
            self.absorbed_zero = true;
        } else if self.value >= self.threshold {
            self.rejected = true;
        }
        self.rejected
    }
}

impl EProcess for SignWalkState {
    #[inline]
    fn observe(&mut self, x: f64) {
        self.step(x);
    }

    fn log_value(&self) -> f64 {
        (self.value as f64).ln()
    }
}

/// Rejection time of the sign-walk test along `xs` (`At(0)` when `alpha = 1`).
pub fn sign_walk_test(xs: &[f64], alpha: f64) -> Result<StopTime> {
    let mut s = SignWalkState::new(alpha)?;
    if s.rejected {
        return Ok(StopTime::At(0));
    }
    for (i, &x) in xs.iter().enumerate() {
        if s.step(x) {
            return Ok(StopTime::At(i + 1));
        }
        if s.absorbed_zero {
            break;
        }
    }
    Ok(StopTime::Never)
}

/// Fractional bits of the dyadic p-value; decrements below `2^-64` are
/// dropped, so the stored value is at most `2^-64` above the exact one.
pub const DYADIC_BITS: u32 = 64;
const DYADIC_ONE: u128 = 1 << DYADIC_BITS;

/// The dyadic max-martingale p-value in exact fixed point:
/// `p = 1 - deficit / 2^64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DyadicPValueState {
    deficit: u128,
    n_nonzero: u64,
}

impl DyadicPValueState {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        if x != 0.0 {
            self.n_nonzero += 1;
            if x > 0.0 && self.n_nonzero <= DYADIC_BITS as u64 {
                self.deficit += DYADIC_ONE >> self.n_nonzero;
            }
        }
        self.p()
    }

    pub fn n_nonzero(&self) -> u64 {
        self.n_nonzero
    }

    /// True once decrements are being dropped.
    pub fn saturated(&self) -> bool {
        self.n_nonzero > DYADIC_BITS as u64
    }

    /// Numerator of `p` over `2^64`.
    pub fn numerator(&self) -> u128 {
        DYADIC_ONE - self.deficit
    }

    pub fn p(&self) -> f64 {
        self.numerator() as f64 / DYADIC_ONE as f64
    }

    pub fn p_exact(&self) -> BigRational {
        BigRational::new(BigInt::from(self.numerator()), BigInt::from(DYADIC_ONE))
    }
}

/// Path of the dyadic p-value.
pub fn dyadic_p_path(xs: &[f64]) -> Vec<f64> {
    let mut s = DyadicPValueState::new();
    xs.iter().map(|&x| s.step(x)).collect()
}

/// Test inverted per grid value of the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum CenterEngine {
    SignWalk,
    MirroredNm,
    OddFamily { shape: FactorShape },
}

enum CenterState {
    Walk(SignWalkState, f64),
    Product(OddEValue),
}

/// Confidence sequence for the center of symmetry: `m` is excluded from the
/// first time its level-`alpha` test rejects.
pub fn symmetry_center_cs(
    path: &SamplePath,
    alpha: f64,
    grid: Vec<f64>,
    engine: &CenterEngine,
) -> Result<ConfidenceSequence> {
    check_alpha(alpha)?;
    let mut cs = ConfidenceSequence::new(grid, alpha, true)?;
    let threshold = -alpha.ln();
    let mut states = cs
        .grid()
        .iter()
        .map(|&m| {
            Ok(match engine {
                CenterEngine::SignWalk => CenterState::Walk(SignWalkState::new(alpha)?, m),
                CenterEngine::MirroredNm => {
                    CenterState::Product(OddEValue::new(OddIncrementFactor::mirrored_exponential(m)))
                }
                CenterEngine::OddFamily { shape } => {
                    CenterState::Product(OddEValue::new(OddIncrementFactor::new(shape.clone(), m)?))
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for &x in path.xs() {
        let mask = states
            .iter_mut()
            .map(|s| match s {
                CenterState::Walk(w, m) => !w.step(x - *m),
                CenterState::Product(e) => {
                    e.observe(x);
                    e.log_value() < threshold
                }
            })
            .collect();
        cs.push(mask)?;
    }
    Ok(cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn nsm_factor_examples() {
        let step = |x: f64| {
            let mut s = ExponentialNsm::new(0.0);
            s.observe(x);
            s.value()
        };
        assert_abs_diff_eq!(step(1.0), 1.648_721_270_700_128, epsilon = 1e-12);
        assert_eq!(step(0.0), 1.0);
        assert_abs_diff_eq!(step(-1.0), 0.223_130_160_148_429_8, epsilon = 1e-12);
    }

    #[test]
    fn mirror_examples() {
        let f = mirror(exp_nsm_factor).unwrap();
        let e = 0.5f64.exp();
        assert_abs_diff_eq!(f.eval(1.0), e, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval(-1.0), 2.0 - e, epsilon = 1e-15);
        assert_eq!(f.eval(1.0) + f.eval(-1.0), 2.0);
        let one = mirror(|_| 1.0).unwrap();
        assert!(probe_grid().iter().all(|&x| one.eval(x) == 1.0));
        let shape = FactorShape::arctan();
        let at = mirror(|x| shape.eval(x)).unwrap();
        for x in probe_grid() {
            assert_abs_diff_eq!(at.eval(x), shape.eval(x), epsilon = 1e-15);
        }
    }

    #[test]
    fn mirror_rejects_non_nsm_factor() {
        match mirror(|x: f64| 1.0 + x * x).err().unwrap() {
            Error::FactorCondition { x, .. } => assert!(x != 0.0),
            e => panic!("{e}"),
        }
        assert!(mirror(|x: f64| x).is_err());
    }

    #[test]
    fn odd_factor_examples() {
        let f = OddIncrementFactor::arctan(0.0);
        assert_abs_diff_eq!(f.eval(1.0), 1.0 + PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval(-1.0), 1.0 - PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval(1.0) * f.eval(-1.0), 1.0 - PI * PI / 16.0, epsilon = 1e-15);
        let raw = FactorShape::new(OddFn::Identity, Wrapper::Arctan);
        match OddIncrementFactor::new(raw, 0.0) {
            Err(Error::FactorCondition { x, .. }) => assert!(x < -1f64.tan()),
            other => panic!("{other:?}"),
        }
        let cos = FactorShape::new(OddFn::Identity, Wrapper::Cos);
        assert_eq!(cos.eval(0.0), 2.0);
        assert!(matches!(OddIncrementFactor::new(cos, 0.0), Err(Error::FactorCondition { .. })));
    }

    #[test]
    fn validated_factors_sum_to_two_exactly() {
        let shapes = [
            FactorShape::arctan(),
            FactorShape::mirrored_exponential(),
            FactorShape::new(OddFn::ClippedLinear { c: 1.5 }, Wrapper::Arctan),
            FactorShape::new(OddFn::ClippedLinear { c: 2.0 }, Wrapper::MirroredExponential),
            FactorShape::new(
                OddFn::Identity,
                Wrapper::CustomTable { knots: vec![(-1.0, 0.5), (0.0, 1.0), (1.0, 1.5)] },
            ),
        ];
        for s in shapes {
            let f = OddIncrementFactor::new(s, 0.0).unwrap();
            let g = f.with_center(0.3);
            for y in probe_grid() {
                assert_eq!(f.eval(y) + f.eval(-y), 2.0);
                assert!(f.eval(y) >= 0.0);
                assert_abs_diff_eq!(g.eval(0.3 + y) + g.eval(0.3 - y), 2.0, epsilon = 1e-12);
            }
        }
        let bad = FactorShape::new(OddFn::Identity, Wrapper::CustomTable { knots: vec![(-1.0, 0.5), (1.0, 1.6)] });
        assert!(OddIncrementFactor::new(bad, 0.0).is_err());
    }

    #[test]
    fn sign_walk_examples() {
        assert_eq!(sign_walk_test(&[1.0], 0.5).unwrap(), StopTime::At(1));
        assert_eq!(sign_walk_test(&[-1.0, 1.0, 1.0, 1.0], 0.5).unwrap(), StopTime::Never);
        let mut s = SignWalkState::new(0.05).unwrap();
        assert_eq!(s.threshold, 20);
        s.step(-1.0);
        assert!(s.absorbed_zero);
        s.step(1.0);
        assert_eq!(s.value, 0);
        assert_eq!(sign_walk_test(&[0.0, 0.0, 2.0], 0.5).unwrap(), StopTime::At(3));
        assert!(SignWalkState::new(0.3).is_err());
        assert_eq!(sign_walk_test(&[-1.0], 1.0).unwrap(), StopTime::At(0));
        assert_eq!(SignWalkState::new(1.0 / 3.0).unwrap().threshold, 3);
    }

    #[test]
    fn dyadic_examples() {
        let p = dyadic_p_path(&[1.0, -1.0, 1.0]);
        assert_eq!(p, vec![0.5, 0.5, 0.375]);
        assert_eq!(dyadic_p_path(&[0.0, 1.0]), vec![1.0, 0.5]);
        assert!(dyadic_p_path(&[-1.0; 100]).iter().all(|&p| p == 1.0));
        let mut s = DyadicPValueState::new();
        for _ in 0..70 {
            s.step(1.0);
        }
        assert!(s.saturated());
        assert_eq!(s.numerator(), 1);
        assert_eq!(s.p_exact(), BigRational::new(1.into(), BigInt::from(1u128 << 64)));
    }

    #[test]
    fn center_cs_alpha_one_excludes_at_first_step() {
        let p = SamplePath::new(0.5, vec![1.0, -1.0]).unwrap();
        let cs = symmetry_center_cs(&p, 1.0, vec![0.0], &CenterEngine::SignWalk).unwrap();
        assert_eq!(cs.exclusion_time(0), StopTime::At(1));
        let cs = symmetry_center_cs(&p, 1.0, vec![0.0], &CenterEngine::MirroredNm).unwrap();
        assert_eq!(cs.exclusion_time(0), StopTime::At(1));
        assert!(symmetry_center_cs(&p, 0.3, vec![0.0], &CenterEngine::SignWalk).is_err());
    }
}
