//! Acyclic arenas: the value iteration stabilizes after `|V|` steps, so the
//! limit sets are computed by one backward pass and queries are decided
//! exactly, boundary points included.

use serde::{Deserialize, Serialize};

use crate::bellman::{control_step, initial_set, random_step, Objective, ValueMap};
use crate::exact::Outcome;
use crate::mdp::{classify, topological_order, Mdp, MdpError, ProblemInstance, StructureClass, Transitions};
use crate::rational::Rational;
use crate::staircase::{Point, StaircaseSet};

#[derive(Clone, Debug)]
pub struct AcyclicSolution {
    pub rval: ValueMap,
    pub sval: ValueMap,
}

fn limit(mdp: &Mdp, order: &[crate::mdp::VertexId], objective: Objective) -> ValueMap {
    let mut sets: Vec<StaircaseSet> = mdp.ids().map(|v| initial_set(mdp, v, objective)).collect();
    for &v in order {
        if mdp.is_target(v) || mdp.is_sink(v) {
            continue;
        }
        let new = match mdp.transitions(v) {
            Transitions::Control(succ) => {
                let s: Vec<&StaircaseSet> = succ.iter().map(|w| &sets[w.0]).collect();
                control_step(&s)
            }
            Transitions::Random(dist) => {
                let s: Vec<(&Rational, &StaircaseSet)> = dist.iter().map(|(w, p)| (p, &sets[w.0])).collect();
                random_step(&s)
            }
        }
        .expect("arena sets share a direction");
        sets[v.0] = new;
    }
    ValueMap::from_sets(objective, mdp.len(), sets)
}

/// `rval^{|V|}` and `sval^{|V|}`, which are the limit sets on acyclic
/// arenas. Every vertex is evaluated once, after all its successors.
pub fn solve_acyclic(mdp: &Mdp) -> Result<AcyclicSolution, MdpError> {
    if classify(mdp) == StructureClass::General {
        return Err(MdpError::Cyclic);
    }
    let order = topological_order(mdp)?;
    Ok(AcyclicSolution { rval: limit(mdp, &order, Objective::Reach), sval: limit(mdp, &order, Objective::Safe) })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcyclicDecision {
    pub outcome: Outcome,
    /// The query lies in both limit sets.
    pub boundary_case: bool,
    /// Some `B' < 1` with `B' <= B` has `(B', p)` in the reach set.
    pub reach_condition: bool,
    /// Some `B' > B` has `(B', p)` in the safety set, or `B = 1` and
    /// `(1, p)` is in it.
    pub safety_condition: bool,
    /// Least budget with which the reach set attains `p`.
    #[serde(with = "crate::rational::text_opt")]
    pub threshold: Option<Rational>,
    pub iterations: usize,
    pub diagnostic: Option<String>,
}

/// Decides a query against precomputed limit sets.
pub fn decide_with(solution: &AcyclicSolution, instance: &ProblemInstance) -> AcyclicDecision {
    let v = instance.vertex;
    let (b, p) = (&instance.budget, &instance.prob);
    let r = solution.rval.get(v);
    let s = solution.sval.get(v);
    let threshold = r.budget_at(p).cloned();
    let one = Rational::from_integer(1.into());
    let reach_condition = threshold.as_ref().is_some_and(|t| *t < one && t <= b);
    let safety_condition = s.budget_at(p).is_some_and(|g| g > b || (*b == one && *g == one));
    let q = Point::new(b.clone(), p.clone());
    let boundary_case = r.contains(&q) && s.contains(&q);
    let (outcome, diagnostic) = if reach_condition {
        (Outcome::ReachWins, None)
    } else if safety_condition {
        (Outcome::SafetyWins, None)
    } else {
        (Outcome::Unknown, Some("neither boundary condition holds".to_string()))
    };
    AcyclicDecision {
        outcome,
        boundary_case,
        reach_condition,
        safety_condition,
        threshold,
        iterations: solution.rval.iteration(),
        diagnostic,
    }
}

pub fn decide_acyclic(mdp: &Mdp, instance: &ProblemInstance) -> Result<AcyclicDecision, MdpError> {
    Ok(decide_with(&solve_acyclic(mdp)?, instance))
}
