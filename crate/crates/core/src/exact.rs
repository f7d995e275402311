//! Value iteration with a certified convergence cutoff.
//!
//! At iteration `i` the query `(B, p)` at `v` is a reachability win as soon
//! as it lies in `rval^i(v)`, and a safety win as soon as its distance to
//! `rval^i(v)` exceeds `2·exp(-i·δ^{2|V|} / (4|V|))`, where `δ` is the
//! smallest transition probability.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::{initial_value, step, step_rounded, Objective, Rounding, ValueMap};
use crate::mdp::{min_probability, Mdp, ProblemInstance};
use crate::numeric::{ceil_times_ln, exp_bounds};
use crate::rational::{format_rational, int, to_f64, Rational};
use crate::staircase::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ReachWins,
    SafetyWins,
    Unknown,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::ReachWins => "reach_wins",
            Outcome::SafetyWins => "safety_wins",
            Outcome::Unknown => "unknown",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// The query lies in the quadrant of this corner of the reach set.
    Contained { iteration: usize, corner: Point },
    /// The query is farther than the cutoff from the reach set.
    Separated {
        iteration: usize,
        #[serde(with = "crate::rational::text")]
        distance: Rational,
        #[serde(with = "crate::rational::text")]
        cutoff: Rational,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactDecision {
    pub outcome: Outcome,
    pub iterations: usize,
    pub witness: Option<Witness>,
    /// Set once the sets were replaced by rounded enclosures; the value is
    /// the number of fractional bits kept.
    pub enclosure_bits: Option<u64>,
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ExactOptions {
    pub max_iterations: usize,
    pub corner_cap: usize,
    /// Switch to enclosures once a denominator exceeds this many bits.
    pub switch_bits: u64,
    /// Fractional bits kept by the enclosures.
    pub precision_bits: u64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions { max_iterations: 1_000_000, corner_cap: 2_000_000, switch_bits: 96, precision_bits: 128 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExactError {
    #[error("accuracy {0} outside (0,1]")]
    BadAccuracy(String),
}

fn contraction_factor(mdp: &Mdp) -> Rational {
    let delta = min_probability(mdp);
    let n = mdp.len() as i32;
    num_traits::pow(delta, 2 * n as usize) / int(4 * n as i64)
}

/// `ceil(4|V| · ln(2/ε) · δ^{-2|V|})`: after this many iterations every
/// reach set is within `ε` of its limit.
pub fn convergence_bound(eps: &Rational, mdp: &Mdp) -> Result<BigInt, ExactError> {
    if !eps.is_positive() || *eps > Rational::one() {
        return Err(ExactError::BadAccuracy(format_rational(eps)));
    }
    let factor = Rational::one() / contraction_factor(mdp);
    Ok(ceil_times_ln(&factor, &(int(2) / eps)))
}

/// Certified upper bound on `2·exp(-i·δ^{2|V|}/(4|V|))`, within `2^-32`.
pub fn distance_cutoff(i: u64, mdp: &Mdp) -> Rational {
    let x = -(Rational::from_integer(BigInt::from(i)) * contraction_factor(mdp));
    let (_, hi) = exp_bounds(&x, 40);
    hi * int(2)
}

/// The certified cutoff at `i` when it is strictly below `d`.
fn cutoff_below(i: u64, d: &Rational, mdp: &Mdp, factor_f: f64) -> Option<Rational> {
    let estimate = 2.0 * (-(i as f64) * factor_f).exp();
    let df = to_f64(d);
    if df.is_finite() && estimate.is_finite() && df < estimate * (1.0 - 1e-9) {
        return None;
    }
    let c = distance_cutoff(i, mdp);
    (c < *d).then_some(c)
}

pub fn alg_exact(mdp: &Mdp, instance: &ProblemInstance, opts: &ExactOptions) -> ExactDecision {
    let q = Point::new(instance.budget.clone(), instance.prob.clone());
    let v = instance.vertex;
    let factor_f = contraction_factor(mdp).to_f64().unwrap_or(0.0);
    let mut inner: ValueMap = initial_value(mdp, Objective::Reach);
    let mut outer: Option<ValueMap> = None;
    let mut enclosure_bits = None;
    let grid = Rational::new(BigInt::one(), BigInt::one() << opts.precision_bits);
    for i in 0..=opts.max_iterations {
        if let Some(corner) = inner.get(v).witness_corner(&q) {
            return ExactDecision {
                outcome: Outcome::ReachWins,
                iterations: i,
                witness: Some(Witness::Contained { iteration: i, corner: corner.clone() }),
                enclosure_bits,
                diagnostic: None,
            };
        }
        let far = outer.as_ref().unwrap_or(&inner).get(v);
        if let Some(d) = far.distance_to_point(&q) {
            if !d.is_zero() {
                if let Some(cutoff) = cutoff_below(i as u64, &d, mdp, factor_f) {
                    return ExactDecision {
                        outcome: Outcome::SafetyWins,
                        iterations: i,
                        witness: Some(Witness::Separated { iteration: i, distance: d, cutoff }),
                        enclosure_bits,
                        diagnostic: None,
                    };
                }
            }
        }
        if i == opts.max_iterations {
            break;
        }
        match outer.take() {
            None => {
                inner = step(mdp, &inner);
                let corners = inner.total_corners();
                if corners > opts.corner_cap {
                    return unknown(i + 1, enclosure_bits, format!("corner cap {} exceeded at iteration {} ({corners} corners)", opts.corner_cap, i + 1));
                }
                if inner.max_denominator_bits() > opts.switch_bits {
                    enclosure_bits = Some(opts.precision_bits);
                    outer = Some(inner.clone());
                }
            }
            Some(o) => {
                inner = step_rounded(mdp, &inner, &Rounding::Inward(grid.clone()));
                let o = step_rounded(mdp, &o, &Rounding::Outward(grid.clone()));
                if o.total_corners() > opts.corner_cap {
                    return unknown(i + 1, enclosure_bits, format!("corner cap {} exceeded at iteration {}", opts.corner_cap, i + 1));
                }
                outer = Some(o);
            }
        }
    }
    unknown(opts.max_iterations, enclosure_bits, format!("no decision within {} iterations", opts.max_iterations))
}

fn unknown(iterations: usize, enclosure_bits: Option<u64>, diagnostic: String) -> ExactDecision {
    ExactDecision { outcome: Outcome::Unknown, iterations, witness: None, enclosure_bits, diagnostic: Some(diagnostic) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::parse_mdp;
    use crate::rational::rat;

    const TWO_LOOP: &str = "control a -> b d\nrandom b -> a:1/2 c:1/2\ncontrol c -> c\ncontrol d -> d\ntarget c\n";

    #[test]
    fn convergence_bound_values() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        assert_eq!(convergence_bound(&rat(1, 2), &m).unwrap(), BigInt::from(5679));
        let single = parse_mdp("control t -> t\ntarget t\n").unwrap();
        assert_eq!(convergence_bound(&rat(1, 2), &single).unwrap(), BigInt::from(23));
        assert!(convergence_bound(&rat(0, 1), &m).is_err());
        assert!(convergence_bound(&rat(3, 2), &m).is_err());
    }

    #[test]
    fn cutoff_crosses_one_tenth_at_known_iteration() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        assert!(distance_cutoff(12270, &m) > rat(1, 10));
        assert!(distance_cutoff(12271, &m) < rat(1, 10));
        assert!(distance_cutoff(0, &m) >= int(2));
    }

    #[test]
    fn cutoff_is_an_upper_bound_within_tolerance() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        for i in [0u64, 1, 100, 4096, 20000] {
            let c = distance_cutoff(i, &m);
            let f = 2.0 * (-(i as f64) / 4096.0).exp();
            let cf = to_f64(&c);
            assert!(cf >= f * (1.0 - 1e-12) && cf - f < 2f64.powi(-32), "{i}");
        }
    }

    #[test]
    fn target_query_wins_immediately() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        let inst = ProblemInstance::new(&m, m.id("c").unwrap(), rat(1, 5), rat(1, 1)).unwrap();
        let d = alg_exact(&m, &inst, &ExactOptions::default());
        assert_eq!((d.outcome, d.iterations), (Outcome::ReachWins, 0));
    }

    #[test]
    fn two_loop_reach_query() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        let inst = ProblemInstance::new(&m, m.id("a").unwrap(), rat(3, 5), rat(2, 5)).unwrap();
        let d = alg_exact(&m, &inst, &ExactOptions::default());
        assert_eq!(d.outcome, Outcome::ReachWins);
        assert!(d.iterations <= 4);
    }

    #[test]
    fn iteration_limit_gives_unknown() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        let inst = ProblemInstance::new(&m, m.id("a").unwrap(), rat(2, 5), rat(3, 5)).unwrap();
        let opts = ExactOptions { max_iterations: 50, ..ExactOptions::default() };
        let d = alg_exact(&m, &inst, &opts);
        assert_eq!(d.outcome, Outcome::Unknown);
        assert!(d.diagnostic.is_some());
    }
}
