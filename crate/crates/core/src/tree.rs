//! Exact finite probability trees.
//!
//! A [`FiniteTree`] is a finite-horizon filtration: node `n` at depth `t` is
//! an atom of `F_t`, every leaf sits at the horizon `D`, and each edge
//! carries a conditional probability (an exact rational). Processes are
//! payloads, one rational per node. Everything here is exact: martingale
//! identities are checked with `==`, never with a tolerance.
//!
//! Core recursions, with `E_n[.]` the average over the children of `n`:
//!
//! ```text
//! Snell envelope      L_n = max(e_n, E_n[L])            (L = e at leaves)
//! Doob decomposition  A_root = 0,  A_c = A_n + L_n - E_n[L]
//!                     M_c = L_c + A_c                    (so L = M - A)
//! conditional sup     S_n = max over children c with q(c|n) > 0 of S_c
//! implied alternative P(c|n) = Q(c|n) M_c / M_n          (0/0 := 1)
//! ```
//!
//! Zero-probability branches stay in the tree but are ignored by
//! conditional suprema.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symmetry::DyadicPValueState;

pub type Rational = BigRational;
/// One value per node, indexed like the tree's arena.
pub type Payload = Vec<Rational>;

/// Deepest tree accepted by the stopping-time oracle.
pub const MAX_DEPTH: usize = 12;
/// Largest number of stopping times enumerated explicitly. A full binary tree
/// of depth 5 has 458 330; depth 6 has about 2.1e11.
pub const ENUMERATION_CAP: u64 = 2_000_000;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Exact rational value of a finite float.
pub fn from_f64(x: f64) -> Result<Rational> {
    Rational::from_float(x).ok_or_else(|| Error::InvalidInput(format!("{x} is not finite")))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Parses `num/den`, an integer, or a decimal (`-0.25`) exactly.
pub fn parse_rational(s: &str) -> std::result::Result<Rational, String> {
    let bad = || format!("`{s}` is not a rational number");
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(format!("`{s}` has a zero denominator"));
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((whole, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let negative = whole.starts_with('-');
        let digits = format!("{}{}", whole.trim_start_matches(['-', '+']), frac);
        let n: BigInt = digits.parse().map_err(|_| bad())?;
        let d = num_traits::pow(BigInt::from(10), frac.len());
        let r = Rational::new(n, d);
        return Ok(if negative { -r } else { r });
    }
    s.parse::<BigInt>().map(Rational::from_integer).map_err(|_| bad())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub depth: usize,
    /// Conditional probability given the parent (1 at the root).
    pub prob: Rational,
    /// Observation revealed on entering this node (0 at the root).
    pub x: Rational,
    pub children: Vec<usize>,
}

/// Incremental construction; parents must be added before their children.
#[derive(Debug, Clone, Default)]
pub struct TreeBuilder {
    nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self {
            nodes: vec![Node { parent: None, depth: 0, prob: Rational::one(), x: Rational::zero(), children: vec![] }],
        }
    }

    pub fn add_child(&mut self, parent: usize, prob: Rational, x: Rational) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes[parent].children.push(id);
        self.nodes.push(Node { parent: Some(parent), depth, prob, x, children: vec![] });
        id
    }

    pub fn build(self) -> Result<FiniteTree> {
        FiniteTree::from_nodes(self.nodes).map_err(|(n, reason)| Error::MalformedTree(format!("node {n}: {reason}")))
    }
}

/// Immutable finite probability tree. Node 0 is the root and every parent
/// has a smaller index than its children.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTree {
    nodes: Vec<Node>,
    depth: usize,
    reach: Vec<Rational>,
    leaves: Vec<usize>,
}

impl FiniteTree {
    fn from_nodes(nodes: Vec<Node>) -> std::result::Result<Self, (usize, String)> {
        if nodes.is_empty() {
            return Err((0, "tree has no nodes".into()));
        }
        let mut reach = Vec::with_capacity(nodes.len());
        let mut leaves = vec![];
        let mut depth = None;
        for (i, n) in nodes.iter().enumerate() {
            if n.prob.is_negative() || n.prob > Rational::one() {
                return Err((i, format!("probability {} is outside [0, 1]", n.prob)));
            }
            match n.parent {
                None if i != 0 => return Err((i, "only node 0 may be the root".into())),
                Some(p) if p >= i => return Err((i, "parent must precede child".into())),
                _ => {}
            }
            reach.push(match n.parent {
                None => Rational::one(),
                Some(p) => &reach[p] * &n.prob,
            });
            if n.children.is_empty() {
                match depth {
                    None => depth = Some(n.depth),
                    Some(d) if d != n.depth => {
                        return Err((i, format!("leaf at depth {} but other leaves are at depth {d}", n.depth)));
                    }
                    _ => {}
                }
                leaves.push(i);
            } else {
                let total: Rational = n.children.iter().map(|&c| &nodes[c].prob).sum();
                if !total.is_one() {
                    return Err((i, format!("child probabilities sum to {total}, not 1")));
                }
            }
        }
        Ok(Self { nodes, depth: depth.unwrap_or(0), reach, leaves })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Horizon `D`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node(&self, n: usize) -> &Node {
        &self.nodes[n]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn children(&self, n: usize) -> &[usize] {
        &self.nodes[n].children
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Unconditional probability of reaching `n`.
    pub fn reach(&self, n: usize) -> &Rational {
        &self.reach[n]
    }

    pub fn nodes_at_depth(&self, d: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&n| self.nodes[n].depth == d)
    }

    /// Node ids from the root to `n`.
    pub fn path(&self, n: usize) -> Vec<usize> {
        let mut out = vec![n];
        let mut cur = n;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Observations `x_1..x_t` along the path to `n`.
    pub fn observations(&self, n: usize) -> Vec<f64> {
        self.path(n).iter().skip(1).map(|&m| to_f64(&self.nodes[m].x)).collect()
    }

    /// Payload computed from the observation path of each node.
    pub fn path_payload(&self, f: impl Fn(&[f64]) -> Rational) -> Payload {
        (0..self.len()).map(|n| f(&self.observations(n))).collect()
    }

    fn check_payload(&self, payload: &[Rational]) -> Result<()> {
        if payload.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: payload.len() });
        }
        Ok(())
    }

    /// `E[v_child | n]`.
    pub fn child_mean(&self, n: usize, values: &[Rational]) -> Rational {
        self.nodes[n].children.iter().map(|&c| &self.nodes[c].prob * &values[c]).sum()
    }

    fn positive_children(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes[n].children.iter().copied().filter(|&c| self.nodes[c].prob.is_positive())
    }

    /// `E[Y | F_t]` at every node for an `F_d`-measurable `Y` given at depth
    /// `d`. Nodes deeper than `d` inherit their depth-`d` ancestor's value.
    pub fn cond_expectation(&self, payload: &[Rational], d: usize) -> Result<Payload> {
        self.check_payload(payload)?;
        let d = d.min(self.depth);
        let mut out = payload.to_vec();
        for n in (0..self.len()).rev() {
            if self.nodes[n].depth < d {
                out[n] = self.child_mean(n, &out);
            }
        }
        self.inherit_below(&mut out, d);
        Ok(out)
    }

    /// Conditional supremum: max over positive-probability descendants at
    /// depth `d`.
    pub fn cond_supremum(&self, payload: &[Rational], d: usize) -> Result<Payload> {
        self.check_payload(payload)?;
        let d = d.min(self.depth);
        let mut out = payload.to_vec();
        for n in (0..self.len()).rev() {
            if self.nodes[n].depth < d {
                out[n] = self
                    .positive_children(n)
                    .map(|c| out[c].clone())
                    .max()
                    .expect("child probabilities sum to one");
            }
        }
        self.inherit_below(&mut out, d);
        Ok(out)
    }

    fn inherit_below(&self, out: &mut [Rational], d: usize) {
        for n in 0..self.len() {
            if self.nodes[n].depth > d {
                let p = self.nodes[n].parent.expect("non-root");
                out[n] = out[p].clone();
            }
        }
    }

    /// `M_t = E[Y | F_t]` for `Y` given at the leaves.
    pub fn doob_levy_martingale(&self, terminal: &[Rational]) -> Result<Payload> {
        self.cond_expectation(terminal, self.depth)
    }

    /// First node (by index) where `E_n[M] != M_n`, if any.
    pub fn martingale_defect(&self, payload: &[Rational]) -> Option<usize> {
        (0..self.len()).find(|&n| !self.nodes[n].children.is_empty() && self.child_mean(n, payload) != payload[n])
    }

    /// Nodes where `E_n[M] > M_n`.
    pub fn supermartingale_defects(&self, payload: &[Rational]) -> Vec<usize> {
        (0..self.len())
            .filter(|&n| !self.nodes[n].children.is_empty() && self.child_mean(n, payload) > payload[n])
            .collect()
    }

    /// Errors unless `payload` is a nonnegative martingale.
    pub fn require_nm(&self, payload: &[Rational]) -> Result<()> {
        self.check_payload(payload)?;
        if let Some(n) = payload.iter().position(|v| v.is_negative()) {
            return Err(Error::NotMartingale { node: n, reason: format!("negative value {}", payload[n]) });
        }
        if let Some(n) = self.martingale_defect(payload) {
            return Err(Error::NotMartingale {
                node: n,
                reason: format!("value {} but children average {}", payload[n], self.child_mean(n, payload)),
            });
        }
        Ok(())
    }

    /// Unconditional law of a leaf payload: sorted `(value, probability)`
    /// pairs with zero-probability values dropped.
    pub fn terminal_law(&self, leaf_values: &[Rational]) -> Result<Vec<(Rational, Rational)>> {
        self.check_payload(leaf_values)?;
        let mut acc: Vec<(Rational, Rational)> = self
            .leaves
            .iter()
            .filter(|&&l| self.reach[l].is_positive())
            .map(|&l| (leaf_values[l].clone(), self.reach[l].clone()))
            .collect();
        acc.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Rational, Rational)> = vec![];
        for (v, p) in acc {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => out.push((v, p)),
            }
        }
        Ok(out)
    }

    /// Running minimum of the payload along each root path.
    pub fn running_min(&self, payload: &[Rational]) -> Result<Payload> {
        self.check_payload(payload)?;
        let mut out = payload.to_vec();
        for n in 1..self.len() {
            let p = self.nodes[n].parent.expect("non-root");
            if out[p] < out[n] {
                out[n] = out[p].clone();
            }
        }
        Ok(out)
    }

    /// Running maximum of the payload along each root path.
    pub fn running_max(&self, payload: &[Rational]) -> Result<Payload> {
        self.check_payload(payload)?;
        let mut out = payload.to_vec();
        for n in 1..self.len() {
            let p = self.nodes[n].parent.expect("non-root");
            if out[p] > out[n] {
                out[n] = out[p].clone();
            }
        }
        Ok(out)
    }

    /// Same tree with new conditional probabilities.
    pub fn with_probabilities(&self, probs: Vec<Rational>) -> Result<FiniteTree> {
        self.check_payload(&probs)?;
        let nodes = self
            .nodes
            .iter()
            .zip(probs)
            .map(|(n, p)| Node { prob: p, ..n.clone() })
            .collect();
        FiniteTree::from_nodes(nodes).map_err(|(n, reason)| Error::MalformedTree(format!("node {n}: {reason}")))
    }
}

/// Snell envelope with its Doob decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SnellResult {
    pub envelope: Payload,
    pub martingale: Payload,
    pub compensator: Payload,
    /// `e_n >= E_n[L]` (always true at leaves).
    pub stop: Vec<bool>,
}

impl SnellResult {
    pub fn root_value(&self) -> &Rational {
        &self.envelope[0]
    }
}

pub fn snell_doob(tree: &FiniteTree, payload: &[Rational]) -> Result<SnellResult> {
    tree.check_payload(payload)?;
    if let Some(n) = payload.iter().position(|v| v.is_negative()) {
        return Err(Error::InvalidInput(format!("negative payload {} at node {n}", payload[n])));
    }
    let len = tree.len();
    let mut envelope = payload.to_vec();
    let mut continuation = payload.to_vec();
    let mut stop = vec![true; len];
    for n in (0..len).rev() {
        if tree.children(n).is_empty() {
            continue;
        }
        let c = tree.child_mean(n, &envelope);
        stop[n] = payload[n] >= c;
        if !stop[n] {
            envelope[n] = c.clone();
        }
        continuation[n] = c;
    }
    let mut compensator = vec![Rational::zero(); len];
    let mut martingale = vec![Rational::zero(); len];
    martingale[0] = envelope[0].clone();
    for n in 1..len {
        let p = tree.node(n).parent.expect("non-root");
        compensator[n] = &compensator[p] + &envelope[p] - &continuation[p];
        martingale[n] = &envelope[n] + &compensator[n];
    }
    Ok(SnellResult { envelope, martingale, compensator, stop })
}

/// How [`brute_force_safety`] obtained its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SafetyMethod {
    /// Every stopping time was evaluated.
    Enumeration { stopping_times: u64 },
    /// The Snell stopping rule was evaluated forward and matched by a
    /// dominating martingale with the same root value.
    Certificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnumerationMode {
    /// Enumerate when under [`ENUMERATION_CAP`], certify otherwise.
    #[default]
    Auto,
    /// Enumerate or fail.
    Enumerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    /// `max_tau E[e_tau]`.
    pub max_value: Rational,
    /// Nodes where the maximizing stopping time stops (one per root path).
    pub witness: Vec<bool>,
    pub method: SafetyMethod,
    /// Root of the Snell envelope, computed independently.
    pub snell_root: Rational,
}

impl SafetyReport {
    pub fn is_safe(&self) -> bool {
        self.max_value <= Rational::one()
    }
}

/// Number of stopping times of the tree, or `None` past the cap.
/// `S(leaf) = 1`, `S(n) = 1 + prod S(children)`.
pub fn stopping_time_count(tree: &FiniteTree, cap: u64) -> Option<u64> {
    let mut count = vec![1u64; tree.len()];
    for n in (0..tree.len()).rev() {
        if tree.children(n).is_empty() {
            continue;
        }
        let mut prod = 1u64;
        for &c in tree.children(n) {
            prod = prod.checked_mul(count[c]).filter(|&v| v < cap)?;
        }
        count[n] = prod + 1;
    }
    (count[0] <= cap).then_some(count[0])
}

/// Expected payload at the stopping time that stops at the marked nodes.
pub fn stopped_value(tree: &FiniteTree, payload: &[Rational], stop_set: &[bool]) -> Result<Rational> {
    tree.check_payload(payload)?;
    let mut stopped_above = vec![false; tree.len()];
    let mut total = Rational::zero();
    for n in 0..tree.len() {
        let above = tree.node(n).parent.is_some_and(|p| stopped_above[p]);
        if !above && (stop_set[n] || tree.children(n).is_empty()) {
            total += tree.reach(n) * &payload[n];
        }
        stopped_above[n] = above || stop_set[n];
    }
    Ok(total)
}

fn first_hit(tree: &FiniteTree, marks: &[bool]) -> Vec<bool> {
    let mut out = vec![false; tree.len()];
    let mut above = vec![false; tree.len()];
    for n in 0..tree.len() {
        let a = tree.node(n).parent.is_some_and(|p| above[p]);
        let stop_here = !a && (marks[n] || tree.children(n).is_empty());
        out[n] = stop_here;
        above[n] = a || stop_here;
    }
    out
}

/// `max_tau E[e_tau]` over all stopping times `tau <= D`, with a witness.
pub fn brute_force_safety(tree: &FiniteTree, payload: &[Rational], mode: EnumerationMode) -> Result<SafetyReport> {
    tree.check_payload(payload)?;
    if tree.depth() > MAX_DEPTH {
        return Err(Error::DepthTooLarge { depth: tree.depth(), max: MAX_DEPTH });
    }
    let snell = snell_doob(tree, payload)?;
    let snell_root = snell.root_value().clone();
    match (stopping_time_count(tree, ENUMERATION_CAP), mode) {
        (Some(count), _) => {
            let (max_value, witness) = enumerate_stopping_times(tree, payload);
            Ok(SafetyReport { max_value, witness, method: SafetyMethod::Enumeration { stopping_times: count }, snell_root })
        }
        (None, EnumerationMode::Enumerate) => Err(Error::EnumerationTooLarge {
            count: format!("more than {ENUMERATION_CAP}"),
            cap: ENUMERATION_CAP,
        }),
        (None, EnumerationMode::Auto) => {
            let witness = first_hit(tree, &snell.stop);
            let value = stopped_value(tree, payload, &witness)?;
            let dominated = snell.martingale.iter().zip(payload).all(|(m, e)| m >= e);
            if value != snell_root || !dominated || tree.martingale_defect(&snell.martingale).is_some() {
                return Err(Error::InvalidInput("optimal-stopping certificate failed".into()));
            }
            Ok(SafetyReport { max_value: value, witness, method: SafetyMethod::Certificate, snell_root })
        }
    }
}

/// Lists, per node, `E[e_tau | n]` for every stopping time of the subtree
/// (index 0 = stop at `n`; otherwise a mixed-radix index over the children,
/// first child most significant), then returns the root maximum and decodes
/// its witness.
fn enumerate_stopping_times(tree: &FiniteTree, payload: &[Rational]) -> (Rational, Vec<bool>) {
    let mut lists: Vec<Vec<Rational>> = vec![vec![]; tree.len()];
    for n in (0..tree.len()).rev() {
        let mut list = vec![payload[n].clone()];
        if !tree.children(n).is_empty() {
            let mut acc = vec![Rational::zero()];
            for &c in tree.children(n) {
                let q = &tree.node(c).prob;
                let scaled: Vec<Rational> = lists[c].iter().map(|v| q * v).collect();
                let mut next = Vec::with_capacity(acc.len() * scaled.len());
                for a in &acc {
                    for s in &scaled {
                        next.push(a + s);
                    }
                }
                acc = next;
            }
            list.extend(acc);
        }
        lists[n] = list;
    }
    let (best, _) = lists[0]
        .iter()
        .enumerate()
        .fold((0usize, &lists[0][0]), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
    let max_value = lists[0][best].clone();
    let mut witness = vec![false; tree.len()];
    let mut stack = vec![(0usize, best)];
    while let Some((n, idx)) = stack.pop() {
        if idx == 0 {
            witness[n] = true;
            continue;
        }
        let mut r = idx - 1;
        for &c in tree.children(n).iter().rev() {
            let len = lists[c].len();
            stack.push((c, r % len));
            r /= len;
        }
    }
    (max_value, witness)
}

/// Dominating NM with root value 1 for a safe e-payload:
/// `M + 1 - M_root` from the Snell-Doob decomposition.
pub fn admissibilize_e(tree: &FiniteTree, payload: &[Rational]) -> Result<Payload> {
    let report = brute_force_safety(tree, payload, EnumerationMode::Auto)?;
    if !report.is_safe() {
        return Err(Error::Unsafe { value: report.max_value.to_string() });
    }
    let snell = snell_doob(tree, payload)?;
    let shift = Rational::one() - &snell.martingale[0];
    Ok(snell.martingale.into_iter().map(|m| m + &shift).collect())
}

/// `F(x) = Q(terminal running-inf <= x)` as a lookup over the law's support.
fn law_cdf(law: &[(Rational, Rational)], x: &Rational) -> Rational {
    law.iter().take_while(|(v, _)| v <= x).map(|(_, p)| p).sum()
}

/// Closed max-martingale p-payload dominating (`<=`) a valid p-payload:
/// `p'_n = max over positive-probability leaves below n of F(pbar)`, with
/// `pbar` the terminal running infimum and `F` its exact law.
pub fn admissibilize_p(tree: &FiniteTree, payload: &[Rational]) -> Result<Payload> {
    tree.check_payload(payload)?;
    if let Some(n) = payload.iter().position(|p| p.is_negative() || *p > Rational::one()) {
        return Err(Error::InvalidPValue(format!("value {} at node {n} is outside [0, 1]", payload[n])));
    }
    let pbar = tree.running_min(payload)?;
    let law = tree.terminal_law(&pbar)?;
    let mut cum = Rational::zero();
    for (v, p) in &law {
        cum += p;
        if cum > *v {
            return Err(Error::InvalidPValue(format!(
                "terminal running infimum has Q(pbar <= {v}) = {cum} > {v}"
            )));
        }
    }
    let mut leaf_values = pbar;
    for &l in tree.leaves() {
        leaf_values[l] = law_cdf(&law, &leaf_values[l]);
    }
    tree.cond_supremum(&leaf_values, tree.depth())
}

/// `Q(pbar <= v) == v` at every support point of the terminal running
/// infimum.
pub fn is_fixed_point_p(tree: &FiniteTree, payload: &[Rational]) -> Result<bool> {
    let law = tree.terminal_law(&tree.running_min(payload)?)?;
    let mut cum = Rational::zero();
    for (v, p) in &law {
        cum += p;
        if cum != *v {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `1 ∧ inf_{s<=t} 1/M_s` with `1/0 := ∞`.
pub fn nm_to_p(tree: &FiniteTree, payload: &[Rational]) -> Result<Payload> {
    let inv: Payload = payload
        .iter()
        .map(|m| if m > &Rational::one() { m.recip() } else { Rational::one() })
        .collect();
    tree.running_min(&inv)
}

/// Conditional probabilities of the implied alternative `dP_t = M_t dQ_t`.
pub fn implied_alternative(tree: &FiniteTree, payload: &[Rational]) -> Result<FiniteTree> {
    tree.require_nm(payload)?;
    if !payload[0].is_one() {
        return Err(Error::NotMartingale { node: 0, reason: format!("root value {} is not 1", payload[0]) });
    }
    let probs = (0..tree.len())
        .map(|n| match tree.node(n).parent {
            None => Rational::one(),
            Some(p) if payload[p].is_zero() => tree.node(n).prob.clone(),
            Some(p) => &tree.node(n).prob * &payload[n] / &payload[p],
        })
        .collect();
    tree.with_probabilities(probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VilleViolation {
    pub node: usize,
    /// `Q(exists t >= s: M_t >= M_s / alpha | node)`.
    pub crossing: Rational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VilleReport {
    pub alpha: Rational,
    /// Nodes with `M_s > 0` whose crossing probability was computed.
    pub nodes_checked: usize,
    pub max_crossing: Rational,
    /// Nodes where `E_n[M] > M_n`.
    pub supermartingale_defects: Vec<usize>,
    pub violations: Vec<VilleViolation>,
}

impl VilleReport {
    pub fn passed(&self) -> bool {
        self.supermartingale_defects.is_empty() && self.violations.is_empty()
    }

    /// First offending node.
    pub fn witness(&self) -> Option<usize> {
        self.supermartingale_defects.first().copied().or_else(|| self.violations.first().map(|v| v.node))
    }
}

/// Exact conditional Ville check at every node with `M_s > 0`.
pub fn conditional_ville_check(tree: &FiniteTree, payload: &[Rational], alpha: &Rational) -> Result<VilleReport> {
    tree.check_payload(payload)?;
    if !alpha.is_positive() || *alpha > Rational::one() {
        return Err(Error::param("alpha", format!("{alpha} is not in (0,1]")));
    }
    if let Some(n) = payload.iter().position(|v| v.is_negative()) {
        return Err(Error::InvalidInput(format!("negative payload {} at node {n}", payload[n])));
    }
    let defects = tree.supermartingale_defects(payload);
    let mut violations = vec![];
    let mut max_crossing = Rational::zero();
    let mut checked = 0;
    for s in 0..tree.len() {
        if !payload[s].is_positive() {
            continue;
        }
        checked += 1;
        let crossing = crossing_probability(tree, payload, s, &payload[s], alpha);
        if crossing > *alpha {
            violations.push(VilleViolation { node: s, crossing: crossing.clone() });
        }
        if crossing > max_crossing {
            max_crossing = crossing;
        }
    }
    Ok(VilleReport {
        alpha: alpha.clone(),
        nodes_checked: checked,
        max_crossing,
        supermartingale_defects: defects,
        violations,
    })
}

/// `Q(exists t >= depth(n): alpha M_t >= level | n)`.
fn crossing_probability(tree: &FiniteTree, payload: &[Rational], n: usize, level: &Rational, alpha: &Rational) -> Rational {
    if alpha * &payload[n] >= *level {
        return Rational::one();
    }
    tree.children(n)
        .iter()
        .map(|&c| &tree.node(c).prob * crossing_probability(tree, payload, c, level, alpha))
        .sum()
}

/// The quantities of the equivalence lemma for adapted events `A_t`
/// (one flag per node).
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// `Q(union_t A_t)`.
    pub union: Rational,
    /// `max_T Q(A_T)` over random times, chosen path by path.
    pub random_time: Rational,
    /// `max_tau Q(A_tau)` over stopping times.
    pub stopping_time: Rational,
    pub stopping_method: SafetyMethod,
    /// `Q(A_tau)` for the first-hitting time.
    pub first_hit: Rational,
}

impl EquivalenceReport {
    pub fn all_equal(&self) -> bool {
        self.union == self.random_time && self.union == self.stopping_time && self.union == self.first_hit
    }
}

pub fn equivalence_check(tree: &FiniteTree, events: &[bool]) -> Result<EquivalenceReport> {
    if events.len() != tree.len() {
        return Err(Error::LengthMismatch { expected: tree.len(), got: events.len() });
    }
    let mut union = Rational::zero();
    let mut random_time = Rational::zero();
    for &l in tree.leaves() {
        let path = tree.path(l);
        if path.iter().any(|&n| events[n]) {
            union += tree.reach(l);
        }
        // the best random time on this path picks any time where A occurs
        let best = path.iter().map(|&n| u8::from(events[n])).max().unwrap_or(0);
        random_time += tree.reach(l) * int(best as i64);
    }
    let indicator: Payload = events.iter().map(|&a| int(a as i64)).collect();
    let safety = brute_force_safety(tree, &indicator, EnumerationMode::Auto)?;
    let hit = first_hit(tree, events);
    let first = stopped_value(tree, &indicator, &hit)?;
    Ok(EquivalenceReport {
        union,
        random_time,
        stopping_time: safety.max_value,
        stopping_method: safety.method,
        first_hit: first,
    })
}

// ---------------------------------------------------------------- catalog

/// i.i.d. observations from a finite law, `depth` levels deep.
pub fn iid_tree(depth: usize, atoms: &[(Rational, Rational)]) -> Result<FiniteTree> {
    let mut b = TreeBuilder::new();
    let mut frontier = vec![0usize];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(frontier.len() * atoms.len());
        for &n in &frontier {
            for (x, p) in atoms {
                next.push(b.add_child(n, p.clone(), x.clone()));
            }
        }
        frontier = next;
    }
    b.build()
}

/// Fair `±1` coin flips; the first child of each node is `+1`.
pub fn sign_tree(depth: usize) -> FiniteTree {
    iid_tree(depth, &[(int(1), rat(1, 2)), (int(-1), rat(1, 2))]).expect("valid")
}

/// Symmetric two-point law `{-eta, +eta}`.
pub fn two_point_tree(depth: usize, eta: Rational) -> Result<FiniteTree> {
    iid_tree(depth, &[(eta.clone(), rat(1, 2)), (-eta, rat(1, 2))])
}

/// Exact dyadic p-value at every node of a tree.
pub fn dyadic_p_payload(tree: &FiniteTree) -> Payload {
    tree.path_payload(|xs| {
        let mut s = DyadicPValueState::new();
        for &x in xs {
            s.step(x);
        }
        s.p_exact()
    })
}

/// The atomic admissible p-value: `p_t = 1/2 + k / 2^{t+1}` with state `k`
/// moving to `2k - 1` or `2k`. From `k = 1` the move to `2` has probability
/// `1 / (2^{t+1} + 2)`; all other moves are fair. `x` records the new `k`.
pub fn atomic_pvalue_tree(depth: usize) -> Result<(FiniteTree, Payload)> {
    let mut b = TreeBuilder::new();
    let mut p = vec![int(1)];
    let mut frontier = vec![(0usize, 1i64)];
    for t in 0..depth {
        let scale = 1i64 << (t + 2);
        let mut next = vec![];
        for &(n, k) in &frontier {
            let up = if k == 1 { rat(1, (1 << (t + 1)) + 2) } else { rat(1, 2) };
            for (child_k, q) in [(2 * k - 1, Rational::one() - &up), (2 * k, up.clone())] {
                let id = b.add_child(n, q, int(child_k));
                p.push(rat(1, 2) + rat(child_k, scale));
                next.push((id, child_k));
            }
        }
        frontier = next;
    }
    Ok((b.build()?, p))
}

/// Random binary tree with random rational conditional probabilities
/// (denominators up to 12, endpoints 0 and 1 included).
pub fn random_tree<R: Rng>(rng: &mut R, depth: usize) -> FiniteTree {
    let mut b = TreeBuilder::new();
    let mut frontier = vec![0usize];
    for _ in 0..depth {
        let mut next = vec![];
        for &n in &frontier {
            let d = rng.random_range(1..=12i64);
            let k = rng.random_range(0..=d);
            next.push(b.add_child(n, rat(k, d), int(1)));
            next.push(b.add_child(n, rat(d - k, d), int(-1)));
        }
        frontier = next;
    }
    b.build().expect("valid")
}

/// Random nonnegative payload with values `k/den`, `k <= max * den`.
pub fn random_payload<R: Rng>(rng: &mut R, tree: &FiniteTree, max: i64, den: i64) -> Payload {
    (0..tree.len()).map(|_| rat(rng.random_range(0..=max * den), den)).collect()
}

// ------------------------------------------------------------ text format

/// A parsed tree file: the tree plus its named payload columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeFile {
    pub tree: FiniteTree,
    pub ids: Vec<String>,
    pub columns: Vec<(String, Payload)>,
}

impl TreeFile {
    pub fn column(&self, name: &str) -> Option<&Payload> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    /// The first payload column that is not `x`.
    pub fn first_payload(&self) -> Option<(&str, &Payload)> {
        self.columns.first().map(|(n, p)| (n.as_str(), p))
    }
}

/// Parses the whitespace-separated tree format:
///
/// ```text
/// # comment
/// id parent prob [x] col...
/// r  -      1    0   1
/// a  r      1/2  1   8/5
/// ```
///
/// The root has parent `-`; parents come before children. Numbers are exact
/// (`num/den`, integers, or decimals). A column named `x` holds observations.
pub fn parse_tree(text: &str) -> Result<TreeFile> {
    let perr = |line: usize, reason: String| Error::TreeParse { line, reason };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() < 3 || head[0] != "id" || head[1] != "parent" || head[2] != "prob" {
        return Err(perr(hline, "header must start with `id parent prob`".into()));
    }
    let x_col = head.iter().position(|&h| h == "x");
    let names: Vec<String> = head[3..].iter().filter(|&&h| h != "x").map(|s| s.to_string()).collect();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut ids = vec![];
    let mut line_of = vec![];
    let mut b = TreeBuilder { nodes: vec![] };
    let mut cols: Vec<Payload> = vec![vec![]; names.len()];
    for (line, row) in lines {
        let f: Vec<&str> = row.split_whitespace().collect();
        if f.len() != head.len() {
            return Err(perr(line, format!("expected {} fields, found {}", head.len(), f.len())));
        }
        if index.contains_key(f[0]) {
            return Err(perr(line, format!("duplicate node id `{}`", f[0])));
        }
        let prob = parse_rational(f[2]).map_err(|e| perr(line, e))?;
        let x = match x_col {
            Some(i) => parse_rational(f[i]).map_err(|e| perr(line, e))?,
            None => Rational::zero(),
        };
        let id = b.nodes.len();
        if f[1] == "-" {
            if id != 0 {
                return Err(perr(line, "only the first node may be the root".into()));
            }
            b.nodes.push(Node { parent: None, depth: 0, prob, x, children: vec![] });
        } else {
            if id == 0 {
                return Err(perr(line, "the first node must be the root (parent `-`)".into()));
            }
            let parent = *index
                .get(f[1])
                .ok_or_else(|| perr(line, format!("unknown parent `{}` (parents must come first)", f[1])))?;
            b.add_child(parent, prob, x);
        }
        let mut k = 0;
        for (i, v) in f.iter().enumerate().skip(3) {
            if Some(i) == x_col {
                continue;
            }
            cols[k].push(parse_rational(v).map_err(|e| perr(line, e))?);
            k += 1;
        }
        index.insert(f[0].to_string(), id);
        ids.push(f[0].to_string());
        line_of.push(line);
    }
    if b.nodes.is_empty() {
        return Err(perr(hline, "no nodes".into()));
    }
    let tree = FiniteTree::from_nodes(b.nodes).map_err(|(n, reason)| perr(line_of[n], reason))?;
    Ok(TreeFile { tree, ids, columns: names.into_iter().zip(cols).collect() })
}

/// Writes a tree in the format read by [`parse_tree`].
pub fn write_tree(tree: &FiniteTree, ids: Option<&[String]>, columns: &[(&str, &Payload)]) -> String {
    let id = |n: usize| ids.map_or_else(|| n.to_string(), |v| v[n].clone());
    let mut out = String::from("id parent prob x");
    for (name, _) in columns {
        out.push(' ');
        out.push_str(name);
    }
    out.push('\n');
    for n in 0..tree.len() {
        let node = tree.node(n);
        let parent = node.parent.map_or_else(|| "-".to_string(), id);
        let _ = write!(out, "{} {} {} {}", id(n), parent, node.prob, node.x);
        for (_, col) in columns {
            let _ = write!(out, " {}", col[n]);
        }
        out.push('\n');
    }
    out
}

/// Indicator payload (1 or 0) for a boolean node property.
pub fn indicator(flags: &[bool]) -> Payload {
    flags.iter().map(|&b| int(b as i64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn r(n: i64, d: i64) -> Rational {
        rat(n, d)
    }

    fn golden() -> (FiniteTree, Payload) {
        (sign_tree(1), vec![int(1), r(8, 5), r(1, 5)])
    }

    #[test]
    fn cond_expectation_examples() {
        let (t, _) = golden();
        let e = t.cond_expectation(&[int(0), r(8, 5), r(1, 5)], 1).unwrap();
        assert_eq!(e[0], r(9, 10));
        let c = t.cond_expectation(&vec![int(7); 3], 1).unwrap();
        assert!(c.iter().all(|v| *v == int(7)));
        let t2 = sign_tree(2);
        let mut y = vec![int(0); t2.len()];
        let leaves = t2.leaves().to_vec();
        y[leaves[0]] = int(4);
        let e = t2.cond_expectation(&y, 2).unwrap();
        let d1: Vec<_> = t2.nodes_at_depth(1).map(|n| e[n].clone()).collect();
        assert_eq!(d1, vec![int(2), int(0)]);
        assert_eq!(e[0], int(1));
    }

    #[test]
    fn cond_supremum_examples() {
        let (t, _) = golden();
        let s = t.cond_supremum(&[int(0), r(8, 5), r(1, 5)], 1).unwrap();
        assert_eq!(s[0], r(8, 5));
        let mut b = TreeBuilder::new();
        b.add_child(0, int(0), int(1));
        b.add_child(0, int(1), int(-1));
        let t = b.build().unwrap();
        let s = t.cond_supremum(&[int(0), int(100), int(1)], 1).unwrap();
        assert_eq!(s[0], int(1));
    }

    #[test]
    fn doob_levy_examples() {
        let t = sign_tree(3);
        let leaf = t.leaves()[5];
        let y: Payload = (0..t.len()).map(|n| int((n == leaf) as i64)).collect();
        let m = t.doob_levy_martingale(&y).unwrap();
        assert_eq!(m[0], r(1, 8));
        assert!(t.martingale_defect(&m).is_none());
        let m = t.doob_levy_martingale(&vec![r(3, 7); t.len()]).unwrap();
        assert!(m.iter().all(|v| *v == r(3, 7)));
    }

    #[test]
    fn snell_golden() {
        let (t, e) = golden();
        let s = snell_doob(&t, &e).unwrap();
        assert_eq!(s.envelope, vec![int(1), r(8, 5), r(1, 5)]);
        assert_eq!(s.martingale, vec![int(1), r(17, 10), r(3, 10)]);
        assert_eq!(s.compensator, vec![int(0), r(1, 10), r(1, 10)]);
        assert!(s.stop[0]);
        let m = t.doob_levy_martingale(&[int(0), r(3, 2), r(1, 2)]).unwrap();
        let s = snell_doob(&t, &m).unwrap();
        assert_eq!(s.martingale, m);
        assert!(s.compensator.iter().all(Zero::is_zero));
        let half = vec![r(1, 2); 3];
        assert_eq!(snell_doob(&t, &half).unwrap().martingale, half);
        assert!(snell_doob(&t, &[int(-1), int(0), int(0)]).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let (t, e) = golden();
        let rep = brute_force_safety(&t, &e, EnumerationMode::Enumerate).unwrap();
        assert_eq!(rep.max_value, int(1));
        assert_eq!(rep.method, SafetyMethod::Enumeration { stopping_times: 2 });
        assert!(rep.witness[0]);
        let m = vec![int(1), r(3, 2), r(1, 2)];
        assert_eq!(brute_force_safety(&t, &m, EnumerationMode::Enumerate).unwrap().max_value, int(1));
        let bad = vec![int(0), int(3), int(0)];
        let rep = brute_force_safety(&t, &bad, EnumerationMode::Enumerate).unwrap();
        assert_eq!(rep.max_value, r(3, 2));
        assert!(!rep.is_safe());
        assert!(matches!(admissibilize_e(&t, &bad), Err(Error::Unsafe { .. })));
    }

    #[test]
    fn stopping_time_counts() {
        let counts: Vec<_> = (0..=5).map(|d| stopping_time_count(&sign_tree(d), u64::MAX)).collect();
        assert_eq!(counts, vec![Some(1), Some(2), Some(5), Some(26), Some(677), Some(458_330)]);
        assert_eq!(stopping_time_count(&sign_tree(6), ENUMERATION_CAP), None);
    }

    #[test]
    fn enumeration_and_certificate_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for depth in 1..=4 {
            let t = random_tree(&mut rng, depth);
            let e = random_payload(&mut rng, &t, 3, 7);
            let a = brute_force_safety(&t, &e, EnumerationMode::Enumerate).unwrap();
            assert_eq!(a.max_value, a.snell_root);
            assert_eq!(stopped_value(&t, &e, &a.witness).unwrap(), a.max_value);
        }
        let t = sign_tree(7);
        let e = random_payload(&mut rng, &t, 2, 5);
        let rep = brute_force_safety(&t, &e, EnumerationMode::Auto).unwrap();
        assert_eq!(rep.method, SafetyMethod::Certificate);
        assert!(matches!(
            brute_force_safety(&t, &e, EnumerationMode::Enumerate),
            Err(Error::EnumerationTooLarge { .. })
        ));
        assert!(matches!(
            brute_force_safety(&sign_tree(13), &vec![int(0); sign_tree(13).len()], EnumerationMode::Auto),
            Err(Error::DepthTooLarge { .. })
        ));
    }

    #[test]
    fn admissibilize_e_examples() {
        let (t, e) = golden();
        assert_eq!(admissibilize_e(&t, &e).unwrap(), vec![int(1), r(17, 10), r(3, 10)]);
        let m = vec![int(1), r(3, 2), r(1, 2)];
        assert_eq!(admissibilize_e(&t, &m).unwrap(), m);
        assert_eq!(admissibilize_e(&t, &[r(1, 2), r(1, 2), r(1, 2)]).unwrap(), vec![int(1); 3]);
    }

    #[test]
    fn admissibilize_p_examples() {
        let t = sign_tree(3);
        let p = dyadic_p_payload(&t);
        assert!(is_fixed_point_p(&t, &p).unwrap());
        assert_eq!(admissibilize_p(&t, &p).unwrap(), p);
        let ones = vec![int(1); t.len()];
        assert_eq!(admissibilize_p(&t, &ones).unwrap(), ones);
        let (at, ap) = atomic_pvalue_tree(3).unwrap();
        assert_eq!(admissibilize_p(&at, &ap).unwrap(), ap);
        let bad = vec![r(1, 10); t.len()];
        assert!(matches!(admissibilize_p(&t, &bad), Err(Error::InvalidPValue(_))));
    }

    #[test]
    fn atomic_tree_marginals() {
        let (t, p) = atomic_pvalue_tree(4).unwrap();
        for depth in 0..=4usize {
            let mut law: HashMap<String, Rational> = HashMap::new();
            for n in t.nodes_at_depth(depth) {
                *law.entry(p[n].to_string()).or_insert_with(Rational::zero) += t.reach(n);
            }
            let scale = 1i64 << (depth + 1);
            let first = r(1, 2) + r(1, scale);
            assert_eq!(law[&first.to_string()], first);
            for k in 2..=(1i64 << depth) {
                assert_eq!(law[&(r(1, 2) + r(k, scale)).to_string()], r(1, scale));
            }
        }
        assert_eq!(t.cond_supremum(&p, 4).unwrap(), p);
    }

    #[test]
    fn implied_examples() {
        let (t, _) = golden();
        let p = implied_alternative(&t, &[int(1), r(3, 2), r(1, 2)]).unwrap();
        assert_eq!(p.node(1).prob, r(3, 4));
        let q = implied_alternative(&t, &vec![int(1); 3]).unwrap();
        assert_eq!(q, t);
        assert!(matches!(implied_alternative(&t, &[int(1), int(2), int(1)]), Err(Error::NotMartingale { .. })));
    }

    #[test]
    fn ville_examples() {
        let t = sign_tree(4);
        // stopped at 0, so still a martingale
        let stopped = t.path_payload(|xs| {
            let mut v = 1i64;
            for &x in xs {
                if v > 0 {
                    v += x as i64;
                }
            }
            int(v)
        });
        assert!(t.martingale_defect(&stopped).is_none());
        assert!(conditional_ville_check(&t, &stopped, &r(1, 2)).unwrap().passed());
        let mut bad = stopped.clone();
        bad[1] += int(5);
        let rep = conditional_ville_check(&t, &bad, &r(1, 2)).unwrap();
        assert!(!rep.passed());
        assert_eq!(rep.witness(), Some(0));
        let ones = vec![int(1); t.len()];
        let rep = conditional_ville_check(&t, &ones, &r(1, 2)).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.max_crossing, int(0));
    }

    #[test]
    fn equivalence_small() {
        let t = sign_tree(3);
        let events: Vec<bool> = (0..t.len()).map(|n| n % 3 == 1).collect();
        let rep = equivalence_check(&t, &events).unwrap();
        assert!(rep.all_equal(), "{rep:?}");
        assert!(matches!(rep.stopping_method, SafetyMethod::Enumeration { .. }));
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("8/5").unwrap(), r(8, 5));
        assert_eq!(parse_rational("1.6").unwrap(), r(8, 5));
        assert_eq!(parse_rational("-0.25").unwrap(), r(-1, 4));
        assert_eq!(parse_rational("3").unwrap(), int(3));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1.").is_err());
    }

    #[test]
    fn text_round_trip() {
        let text = "# golden tree\nid parent prob x e\nr - 1 0 1\nu r 1/2 1 1.6\nd r 1/2 -1 0.2\n";
        let f = parse_tree(text).unwrap();
        assert_eq!(f.tree, sign_tree(1));
        assert_eq!(f.column("e").unwrap(), &vec![int(1), r(8, 5), r(1, 5)]);
        let out = write_tree(&f.tree, Some(&f.ids), &[("e", f.column("e").unwrap())]);
        assert_eq!(parse_tree(&out).unwrap(), f);
    }

    #[test]
    fn text_errors_carry_lines() {
        let cases = [
            ("id parent prob e\nr - 1 1\nu r 1/2 1\nd r 1/3 1\n", 2),
            ("id parent prob e\nr - 1 1\nu q 1/2 1\n", 3),
            ("id parent prob e\nr - 1 1\nu r 1/2\n", 3),
            ("id parent prob e\nr - 1 1\nu r x 1\n", 3),
            ("nope\n", 1),
        ];
        for (text, line) in cases {
            match parse_tree(text) {
                Err(Error::TreeParse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{other:?}"),
            }
        }
    }
}
