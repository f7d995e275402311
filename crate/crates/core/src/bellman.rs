//! One-step operators on staircase sets and value iteration over an arena.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Mdp, Transitions, VertexId};
use crate::rational::{half, Rational};
use crate::staircase::{Direction, Point, StaircaseSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Reach,
    Safe,
}

impl Objective {
    pub fn direction(self) -> Direction {
        match self {
            Objective::Reach => Direction::Down,
            Objective::Safe => Direction::Up,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Reach => "reach",
            Objective::Safe => "safe",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BellmanError {
    #[error("distribution and successor values have different keys")]
    KeyMismatch,
    #[error("no successor values given")]
    NoSuccessors,
    #[error("successor sets have different closure directions")]
    DirectionMismatch,
    #[error("corner cap {cap} exceeded at iteration {iteration} ({corners} corners)")]
    CornerCap { cap: usize, iteration: usize, corners: usize },
}

/// The staircase of every vertex after some number of iterations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueMap {
    objective: Objective,
    iteration: usize,
    sets: Vec<Arc<StaircaseSet>>,
    changed: Vec<bool>,
}

impl ValueMap {
    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn get(&self, v: VertexId) -> &StaircaseSet {
        &self.sets[v.0]
    }

    pub fn sets(&self) -> impl Iterator<Item = &StaircaseSet> {
        self.sets.iter().map(|s| s.as_ref())
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn max_denominator_bits(&self) -> u64 {
        self.sets.iter().map(|s| s.max_denominator_bits()).max().unwrap_or(0)
    }

    pub fn total_corners(&self) -> usize {
        self.sets.iter().map(|s| s.corner_count()).sum()
    }

    /// Whether the last step changed any vertex.
    pub fn any_changed(&self) -> bool {
        self.changed.iter().any(|&c| c)
    }

    /// Builds a map from explicit sets (all of the objective's direction).
    pub fn from_sets(objective: Objective, iteration: usize, sets: Vec<StaircaseSet>) -> Self {
        let n = sets.len();
        ValueMap { objective, iteration, sets: sets.into_iter().map(Arc::new).collect(), changed: vec![true; n] }
    }
}

pub fn initial_set(mdp: &Mdp, v: VertexId, objective: Objective) -> StaircaseSet {
    match (objective, mdp.is_target(v)) {
        (Objective::Reach, true) => StaircaseSet::full(Direction::Down),
        (Objective::Reach, false) => StaircaseSet::border(Direction::Down),
        (Objective::Safe, true) => StaircaseSet::border(Direction::Up),
        (Objective::Safe, false) => StaircaseSet::full(Direction::Up),
    }
}

pub fn initial_value(mdp: &Mdp, objective: Objective) -> ValueMap {
    let sets = mdp.ids().map(|v| Arc::new(initial_set(mdp, v, objective))).collect();
    ValueMap { objective, iteration: 0, sets, changed: vec![true; mdp.len()] }
}

fn common_direction(sets: &[&StaircaseSet]) -> Result<Direction, BellmanError> {
    let first = sets.first().ok_or(BellmanError::NoSuccessors)?.direction();
    if sets.iter().any(|s| s.direction() != first) {
        return Err(BellmanError::DirectionMismatch);
    }
    Ok(first)
}

/// Random vertex: at every budget the boundary probability is the
/// weighted sum of the successors' boundary probabilities.
pub fn random_step(weighted: &[(&Rational, &StaircaseSet)]) -> Result<StaircaseSet, BellmanError> {
    let sets: Vec<&StaircaseSet> = weighted.iter().map(|(_, s)| *s).collect();
    let dir = common_direction(&sets)?;
    let mut budgets: Vec<&Rational> = sets.iter().flat_map(|s| s.corners().iter().map(|c| &c.budget)).collect();
    budgets.sort();
    budgets.dedup();
    let mut cursor = vec![0usize; sets.len()];
    let mut out = Vec::with_capacity(budgets.len());
    'outer: for b in budgets {
        let mut total = Rational::zero();
        for (k, (w, s)) in weighted.iter().enumerate() {
            let cs = s.corners();
            let p = match dir {
                // Last corner with budget <= b.
                Direction::Down => {
                    while cursor[k] < cs.len() && cs[cursor[k]].budget <= *b {
                        cursor[k] += 1;
                    }
                    if cursor[k] == 0 {
                        continue 'outer;
                    }
                    &cs[cursor[k] - 1].prob
                }
                // First corner with budget >= b.
                Direction::Up => {
                    while cursor[k] < cs.len() && cs[cursor[k]].budget < *b {
                        cursor[k] += 1;
                    }
                    if cursor[k] == cs.len() {
                        break 'outer;
                    }
                    &cs[cursor[k]].prob
                }
            };
            if !p.is_zero() {
                total += *w * p;
            }
        }
        out.push(Point::new(b.clone(), total));
    }
    Ok(StaircaseSet::canonical(out, dir))
}

/// Control vertex: at every probability level the boundary budget is the
/// mean of the smallest and largest successor boundary budgets.
pub fn control_step(sets: &[&StaircaseSet]) -> Result<StaircaseSet, BellmanError> {
    let dir = common_direction(sets)?;
    if sets.len() == 1 {
        return Ok(sets[0].clone());
    }
    let mut probs: Vec<&Rational> = sets.iter().flat_map(|s| s.corners().iter().map(|c| &c.prob)).collect();
    probs.sort();
    probs.dedup();
    let mut cursor = vec![0usize; sets.len()];
    let mut out = Vec::with_capacity(probs.len());
    let h = half();
    'outer: for p in probs {
        let mut lo: Option<&Rational> = None;
        let mut hi: Option<&Rational> = None;
        for (k, s) in sets.iter().enumerate() {
            let cs = s.corners();
            let b = match dir {
                // First corner with prob >= p.
                Direction::Down => {
                    while cursor[k] < cs.len() && cs[cursor[k]].prob < *p {
                        cursor[k] += 1;
                    }
                    if cursor[k] == cs.len() {
                        break 'outer;
                    }
                    &cs[cursor[k]].budget
                }
                // Last corner with prob <= p.
                Direction::Up => {
                    while cursor[k] < cs.len() && cs[cursor[k]].prob <= *p {
                        cursor[k] += 1;
                    }
                    if cursor[k] == 0 {
                        continue 'outer;
                    }
                    &cs[cursor[k] - 1].budget
                }
            };
            lo = Some(lo.map_or(b, |x| x.min(b)));
            hi = Some(hi.map_or(b, |x| x.max(b)));
        }
        let (lo, hi) = (lo.unwrap(), hi.unwrap());
        let mean = if lo == hi { lo.clone() } else { (lo + hi) * &h };
        out.push(Point::new(mean, p.clone()));
    }
    Ok(StaircaseSet::canonical(out, dir))
}

/// Keyed form of [`random_step`].
pub fn apply_random(
    dist: &BTreeMap<VertexId, Rational>,
    succ_vals: &BTreeMap<VertexId, StaircaseSet>,
) -> Result<StaircaseSet, BellmanError> {
    if dist.len() != succ_vals.len() || dist.keys().any(|k| !succ_vals.contains_key(k)) {
        return Err(BellmanError::KeyMismatch);
    }
    let weighted: Vec<(&Rational, &StaircaseSet)> = dist.iter().map(|(k, p)| (p, &succ_vals[k])).collect();
    random_step(&weighted)
}

pub fn apply_control(succ_vals: &[StaircaseSet]) -> Result<StaircaseSet, BellmanError> {
    let refs: Vec<&StaircaseSet> = succ_vals.iter().collect();
    control_step(&refs)
}

pub(crate) fn vertex_step(mdp: &Mdp, prev: &ValueMap, v: VertexId) -> StaircaseSet {
    match mdp.transitions(v) {
        Transitions::Control(succ) => {
            let sets: Vec<&StaircaseSet> = succ.iter().map(|w| prev.get(*w)).collect();
            control_step(&sets).expect("arena sets share a direction")
        }
        Transitions::Random(dist) => {
            let weighted: Vec<(&Rational, &StaircaseSet)> = dist.iter().map(|(w, p)| (p, prev.get(*w))).collect();
            random_step(&weighted).expect("arena sets share a direction")
        }
    }
}

const PARALLEL_CORNERS: usize = 512;

/// How each computed set is rounded after a step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rounding {
    Exact,
    /// Snap outward to multiples of the step: a superset of the exact step.
    Outward(Rational),
    /// Snap inward to multiples of the step: a subset of the exact step.
    Inward(Rational),
}

/// One application of the Bellman operator to every vertex. Targets and
/// sinks keep their set; a vertex whose successors did not change in the
/// previous step keeps its set without recomputation.
pub fn step(mdp: &Mdp, prev: &ValueMap) -> ValueMap {
    step_rounded(mdp, prev, &Rounding::Exact)
}

/// [`step`] followed by rounding. Since the operator is monotone, iterating
/// with `Outward` (resp. `Inward`) rounding encloses the exact iterates
/// from outside (resp. inside).
pub fn step_rounded(mdp: &Mdp, prev: &ValueMap, rounding: &Rounding) -> ValueMap {
    let compute = |v: VertexId| -> (Arc<StaircaseSet>, bool) {
        let old = &prev.sets[v.0];
        if mdp.is_target(v) || mdp.is_sink(v) {
            return (old.clone(), false);
        }
        let succ = mdp.successors(v);
        if prev.iteration > 0 && succ.iter().all(|w| !prev.changed[w.0]) {
            return (old.clone(), false);
        }
        let new = match rounding {
            Rounding::Exact => vertex_step(mdp, prev, v),
            Rounding::Outward(q) => vertex_step(mdp, prev, v).snap_outward(q),
            Rounding::Inward(q) => vertex_step(mdp, prev, v).snap_inward(q),
        };
        if new == **old {
            (old.clone(), false)
        } else {
            (Arc::new(new), true)
        }
    };
    let results: Vec<(Arc<StaircaseSet>, bool)> = if prev.total_corners() >= PARALLEL_CORNERS {
        mdp.ids().collect::<Vec<_>>().into_par_iter().map(compute).collect()
    } else {
        mdp.ids().map(compute).collect()
    };
    let (sets, changed) = results.into_iter().unzip();
    ValueMap { objective: prev.objective, iteration: prev.iteration + 1, sets, changed }
}

/// The trace `val^0, ..., val^n`. With a cap, fails as soon as the total
/// corner count of one iteration exceeds it; the error carries the
/// iterations computed so far.
pub fn iterate(mdp: &Mdp, objective: Objective, n: usize, cap: Option<usize>) -> Result<Vec<ValueMap>, CapExceeded> {
    let mut trace = vec![initial_value(mdp, objective)];
    for _ in 0..n {
        let next = step(mdp, trace.last().unwrap());
        if let Some(cap) = cap {
            let corners = next.total_corners();
            if corners > cap {
                let error = BellmanError::CornerCap { cap, iteration: next.iteration, corners };
                return Err(CapExceeded { error, partial: trace });
            }
        }
        trace.push(next);
    }
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct CapExceeded {
    pub error: BellmanError,
    pub partial: Vec<ValueMap>,
}

impl std::fmt::Display for CapExceeded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for CapExceeded {}
