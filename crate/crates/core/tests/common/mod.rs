//! Independent oracles used by the integration tests. None of them call the
//! library routine they check.

#![allow(dead_code)]

use std::collections::BTreeSet;

use avseq::tree::{FiniteTree, Rational};
use gauss_quad::hermite::GaussHermite;
use num_bigint::BigInt;
use num_traits::{One, Zero};

/// Gambler's ruin from 1 with barriers `{0, b}`, by dynamic programming over
/// `horizon` fair steps. Returns `(P(hit b by T), P(unabsorbed at T))`.
pub fn gamblers_ruin(b: usize, horizon: usize) -> (f64, f64) {
    let mut mass = vec![0.0f64; b + 1];
    mass[1] = 1.0;
    let mut top = 0.0;
    for _ in 0..horizon {
        let mut next = vec![0.0f64; b + 1];
        for k in 1..b {
            next[k - 1] += 0.5 * mass[k];
            next[k + 1] += 0.5 * mass[k];
        }
        top += next[b];
        next[b] = 0.0;
        next[0] = 0.0;
        mass = next;
    }
    (top, mass.iter().sum())
}

/// Log of the mixture e-value `int exp(theta S - theta^2 V / 2) N(theta; 0, rho^2) dtheta`
/// by 41-node Gauss-Hermite quadrature. The integrand is recentred at the
/// posterior mean and rescaled to 1.25 posterior widths, so the rule sees a
/// smooth Gaussian ratio rather than a spike.
pub fn log_mixture_by_quadrature(s: f64, v: f64, rho_sq: f64) -> f64 {
    let a = v + 1.0 / rho_sq;
    let center = s / a;
    let scale = 1.25 * (2.0 / a).sqrt();
    let log_integrand = |theta: f64| {
        theta * s - 0.5 * theta * theta * v - 0.5 * theta * theta / rho_sq
            - 0.5 * (2.0 * std::f64::consts::PI * rho_sq).ln()
    };
    // factor the peak value out so that the sum stays in range
    let peak = log_integrand(center);
    let quad = GaussHermite::new(41).expect("valid degree");
    peak + quad.integrate(|x| (log_integrand(center + scale * x) - peak + x * x).exp() * scale).ln()
}

/// The mixture CS radius at `(t, alpha)` for unit variance and `rho = 1`,
/// found by bisecting the crossing of the quadrature mixture with
/// `1/alpha` in the running mean.
pub fn bisection_radius(t: usize, alpha: f64) -> f64 {
    let tf = t as f64;
    let target = -alpha.ln();
    let excess = |r: f64| log_mixture_by_quadrature(tf * r, tf, 1.0) - target;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while excess(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// The dyadic p-value after the sign sequence `ups` (true = positive):
/// `1 - sum over positive steps k of 2^-k`, exactly.
pub fn dyadic_formula(ups: &[bool]) -> Rational {
    let mut p = Rational::one();
    for (k, &up) in ups.iter().enumerate() {
        if up {
            p -= Rational::new(BigInt::one(), BigInt::from(2u32).pow(k as u32 + 1));
        }
    }
    p
}

/// `max_tau E[payload_tau]` by listing every value attainable by some
/// stopping time. The attainable set at a node is `{payload}` together with
/// every probability-weighted combination of its children's attainable
/// values. Exponential; intended for depth <= 4.
pub fn best_stopping_value(tree: &FiniteTree, payload: &[Rational]) -> Rational {
    fn attainable(tree: &FiniteTree, payload: &[Rational], n: usize) -> BTreeSet<Rational> {
        let mut out = BTreeSet::new();
        out.insert(payload[n].clone());
        let children = tree.children(n);
        if children.is_empty() {
            return out;
        }
        let mut combos: BTreeSet<Rational> = [Rational::zero()].into_iter().collect();
        for &c in children {
            let p = &tree.node(c).prob;
            let values = attainable(tree, payload, c);
            combos = combos.iter().flat_map(|acc| values.iter().map(move |v| acc + p * v)).collect();
        }
        out.extend(combos);
        out
    }
    attainable(tree, payload, 0).into_iter().next_back().expect("nonempty")
}

/// Binomial standard error.
pub fn se(alpha: f64, n: u64) -> f64 {
    (alpha * (1.0 - alpha) / n as f64).sqrt()
}
