//! Grid abstraction: safety sets are iterated on a grid of mesh `α`, which
//! keeps every set small, and the reach set is read off as the closure of
//! the complement.

use num_bigint::BigInt;
use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};

use crate::bellman::{initial_set, initial_value, step_rounded, BellmanError, CapExceeded, Objective, Rounding, ValueMap};
use crate::exact::{Outcome, Witness};
use crate::mdp::{min_probability, Mdp, ProblemInstance};
use crate::numeric::ceil_times_ln;
use crate::rational::{int, Rational};
use crate::staircase::{complement_to_reach, Point, StaircaseSet, ValueSetError};

/// Least staircase with corners on the grid `alpha·ℤ²` that contains `set`.
pub fn grid_overapprox(set: &StaircaseSet, alpha: &Rational) -> Result<StaircaseSet, ValueSetError> {
    if !alpha.is_positive() || *alpha > Rational::one() {
        return Err(ValueSetError::BadResolution);
    }
    Ok(set.snap_outward(alpha))
}

/// `abs-sval^n`: the safety iteration with every step snapped outward to
/// the grid. Stops early once nothing changes.
pub fn abstract_safety_iterate(mdp: &Mdp, alpha: &Rational, n: usize, cap: Option<usize>) -> Result<ValueMap, CapExceeded> {
    let rounding = Rounding::Outward(alpha.clone());
    let mut val = initial_value(mdp, Objective::Safe);
    let mut i = 0;
    while i < n {
        let next = step_rounded(mdp, &val, &rounding);
        i += 1;
        if let Some(cap) = cap {
            let corners = next.total_corners();
            if corners > cap {
                return Err(CapExceeded { error: BellmanError::CornerCap { cap, iteration: i, corners }, partial: vec![val] });
            }
        }
        if !next.any_changed() {
            // A fixpoint: every later iterate is the same.
            return Ok(ValueMap::from_sets(Objective::Safe, n, next.sets().cloned().collect()));
        }
        val = next;
    }
    Ok(val)
}

/// Under-approximation of the reach set at `v` derived from an abstract
/// safety set.
pub fn abstract_reach(mdp: &Mdp, abs_sval: &ValueMap, v: crate::mdp::VertexId) -> StaircaseSet {
    complement_to_reach(abs_sval.get(v), &initial_set(mdp, v, Objective::Reach)).expect("directions match")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub h: u32,
    #[serde(with = "crate::rational::text")]
    pub eps: Rational,
    /// Prescribed iteration count `n`, in decimal.
    pub iterations: String,
    /// Iterations actually run; fewer than `n` when a fixpoint was reached.
    pub performed: usize,
    #[serde(with = "crate::rational::text")]
    pub alpha: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApproxDecision {
    pub outcome: Outcome,
    pub rounds: Vec<Round>,
    pub witness: Option<Witness>,
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ApproxOptions {
    pub max_rounds: u32,
    pub corner_cap: usize,
    /// Iterations run per round at most. A round prescribing more is still
    /// decided when the abstract iteration reaches a fixpoint within this
    /// many steps, since every later iterate equals the fixpoint.
    pub max_iterations: usize,
}

impl Default for ApproxOptions {
    fn default() -> Self {
        ApproxOptions { max_rounds: 20, corner_cap: 2_000_000, max_iterations: 10_000_000 }
    }
}

/// Parameters of round `h`: `ε = 2^-h`, the iteration count
/// `n = ceil(4|V|·ln(1/ε)·δ^{-2|V|})` (at least 1) and `α = 1/ceil(n/ε)`.
pub fn round_parameters(mdp: &Mdp, h: u32) -> (Rational, BigInt, Rational) {
    let eps = Rational::new(BigInt::one(), BigInt::one() << h);
    let nv = mdp.len();
    let factor = int(4 * nv as i64) / num_traits::pow(min_probability(mdp), 2 * nv);
    let n = ceil_times_ln(&factor, &(Rational::one() / &eps)).max(BigInt::one());
    let alpha = Rational::new(BigInt::one(), (Rational::from_integer(n.clone()) / &eps).ceil().to_integer());
    (eps, n, alpha)
}

/// Runs at most `limit` abstract steps; returns the last iterate and the
/// step count, or `None` when neither `n` steps nor a fixpoint were reached.
fn abstract_bounded(mdp: &Mdp, alpha: &Rational, n: &BigInt, limit: usize, cap: usize) -> Result<Option<(ValueMap, usize)>, CapExceeded> {
    let rounding = Rounding::Outward(alpha.clone());
    let target = usize::try_from(n).ok().filter(|&n| n <= limit);
    let mut val = initial_value(mdp, Objective::Safe);
    let mut i = 0;
    loop {
        if Some(i) == target {
            return Ok(Some((val, i)));
        }
        if i == limit {
            return Ok(None);
        }
        let next = step_rounded(mdp, &val, &rounding);
        i += 1;
        let corners = next.total_corners();
        if corners > cap {
            return Err(CapExceeded { error: BellmanError::CornerCap { cap, iteration: i, corners }, partial: vec![val] });
        }
        if !next.any_changed() {
            return Ok(Some((next, i)));
        }
        val = next;
    }
}

pub fn alg_approx(mdp: &Mdp, instance: &ProblemInstance, opts: &ApproxOptions) -> ApproxDecision {
    let q = Point::new(instance.budget.clone(), instance.prob.clone());
    let v = instance.vertex;
    let mut rounds = Vec::new();
    for h in 0..=opts.max_rounds {
        let (eps, n, alpha) = round_parameters(mdp, h);
        let abs = match abstract_bounded(mdp, &alpha, &n, opts.max_iterations, opts.corner_cap) {
            Ok(Some((abs, performed))) => {
                rounds.push(Round { h, eps: eps.clone(), iterations: n.to_string(), performed, alpha: alpha.clone() });
                abs
            }
            Ok(None) => {
                rounds.push(Round { h, eps, iterations: n.to_string(), performed: opts.max_iterations, alpha });
                let diagnostic = format!("round {h} needs {n} iterations and reached no fixpoint within {}", opts.max_iterations);
                return ApproxDecision { outcome: Outcome::Unknown, rounds, witness: None, diagnostic: Some(diagnostic) };
            }
            Err(e) => return ApproxDecision { outcome: Outcome::Unknown, rounds, witness: None, diagnostic: Some(e.to_string()) },
        };
        let n_used = rounds.last().unwrap().performed;
        let reach = abstract_reach(mdp, &abs, v);
        if let Some(corner) = reach.witness_corner(&q) {
            let witness = Witness::Contained { iteration: n_used, corner: corner.clone() };
            return ApproxDecision { outcome: Outcome::ReachWins, rounds, witness: Some(witness), diagnostic: None };
        }
        if let Some(d) = reach.distance_to_point(&q) {
            let cutoff = int(2) * &eps;
            if d >= cutoff {
                let witness = Witness::Separated { iteration: n_used, distance: d, cutoff };
                return ApproxDecision { outcome: Outcome::SafetyWins, rounds, witness: Some(witness), diagnostic: None };
            }
        }
    }
    ApproxDecision { outcome: Outcome::Unknown, rounds, witness: None, diagnostic: Some(format!("no decision within {} rounds", opts.max_rounds)) }
}
