//! Certificates for tree-shaped arenas.
//!
//! Fixing a discrete choice at every control vertex and at every
//! constrained leaf turns membership of a point in the limit set of the
//! root into a linear feasibility problem over one point `(B_u, p_u)` per
//! vertex. Reach system:
//!
//! - control `u` with chosen cheapest successor `u⁻`:
//!   `B_u = (B_{u⁻} + M_u)/2`, `M_u >= B_w` and `p_u <= p_w` for all `w`;
//! - random `u`: `B_u >= B_w` for all `w`, `p_u = Σ δ(u)(w)·p_w`;
//! - non-target leaf: `B = 1` or `p = 0`; target leaf: free;
//! - root: `B_v <= B`, `B_v < 1`, `p_v >= p`.
//!
//! The safety system is the dual one: control `B_u = (B_{u⁺} + m_u)/2`
//! with `m_u <= B_w` and `p_u >= p_w`; random `B_u <= B_w`; target leaf
//! `B = 0` or `p = 1`; non-target leaf free; root `p_v <= p` and `B_v > B`
//! (`B_v >= 1` when `B = 1`). All variables range over `[0, 1]`.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::Objective;
use crate::linear::{linear_feasibility, project, Constraint, Feasibility, LinearSystem};
use crate::mdp::{classify, topological_order, Mdp, ProblemInstance, StructureClass, Transitions, VertexId};
use crate::rational::{half, Rational};
use crate::staircase::Point;

pub const DEFAULT_CHOICE_CAP: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("arena is not tree-shaped")]
    NotTree,
    #[error("{count} choice vectors exceed the cap of {cap}")]
    ChoiceCap { count: u128, cap: u64 },
    #[error("assignment search failed for a feasible choice vector")]
    Internal,
}

/// Which equation a constrained leaf satisfies: `B = 1` / `p = 0` for a
/// non-target leaf in the reach system, `B = 0` / `p = 1` for a target
/// leaf in the safety system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafChoice {
    Budget,
    Prob,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub player: Objective,
    pub root: VertexId,
    pub points: BTreeMap<VertexId, Point>,
    /// Chosen successor per control vertex.
    pub choices: BTreeMap<VertexId, VertexId>,
    /// The auxiliary bound `M_u` (reach) or `m_u` (safety) per control vertex.
    pub bounds: BTreeMap<VertexId, Rational>,
    pub leaves: BTreeMap<VertexId, LeafChoice>,
}

/// [`Certificate`] keyed by vertex names, for serialization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedCertificate {
    pub player: String,
    pub root: String,
    pub vertices: BTreeMap<String, Point>,
    pub choices: BTreeMap<String, String>,
    #[serde(with = "named_bounds")]
    pub bounds: BTreeMap<String, Rational>,
    pub leaves: BTreeMap<String, LeafChoice>,
}

mod named_bounds {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::rational::{format_rational, parse_rational, Rational};

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, Rational>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|(k, v)| (k.clone(), format_rational(v))).collect::<BTreeMap<_, _>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Rational>, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        raw.into_iter().map(|(k, v)| parse_rational(&v).map(|r| (k, r)).map_err(serde::de::Error::custom)).collect()
    }
}

impl Certificate {
    pub fn named(&self, mdp: &Mdp) -> NamedCertificate {
        let n = |v: &VertexId| mdp.name(*v).to_string();
        NamedCertificate {
            player: self.player.name().to_string(),
            root: n(&self.root),
            vertices: self.points.iter().map(|(k, p)| (n(k), p.clone())).collect(),
            choices: self.choices.iter().map(|(k, w)| (n(k), n(w))).collect(),
            bounds: self.bounds.iter().map(|(k, b)| (n(k), b.clone())).collect(),
            leaves: self.leaves.iter().map(|(k, c)| (n(k), *c)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
enum Slot {
    Control { vertex: VertexId, succ: Vec<VertexId> },
    Leaf { vertex: VertexId },
}

impl Slot {
    fn options(&self) -> usize {
        match self {
            Slot::Control { succ, .. } => succ.len(),
            Slot::Leaf { .. } => 2,
        }
    }
}

/// The constraint structure of one (sub)tree and player.
#[derive(Clone, Debug)]
struct TreeSystem<'a> {
    mdp: &'a Mdp,
    player: Objective,
    root: VertexId,
    /// Vertices below the root, leaves first, root last.
    vertices: Vec<VertexId>,
    local: Vec<Option<usize>>,
    slots: Vec<Slot>,
}

fn leaf(mdp: &Mdp, v: VertexId) -> bool {
    mdp.is_target(v) || mdp.is_sink(v)
}

impl<'a> TreeSystem<'a> {
    fn new(mdp: &'a Mdp, root: VertexId, player: Objective) -> Result<Self, TreeError> {
        if classify(mdp) != StructureClass::Tree {
            return Err(TreeError::NotTree);
        }
        let mut seen = vec![false; mdp.len()];
        let mut stack = vec![root];
        seen[root.0] = true;
        while let Some(u) = stack.pop() {
            if leaf(mdp, u) {
                continue;
            }
            for w in mdp.successors(u) {
                if !seen[w.0] {
                    seen[w.0] = true;
                    stack.push(w);
                }
            }
        }
        let order = topological_order(mdp).map_err(|_| TreeError::NotTree)?;
        let vertices: Vec<VertexId> = order.into_iter().filter(|v| seen[v.0]).collect();
        let mut local = vec![None; mdp.len()];
        for (k, v) in vertices.iter().enumerate() {
            local[v.0] = Some(k);
        }
        let mut slots = Vec::new();
        for &v in &vertices {
            if leaf(mdp, v) {
                let constrained = match player {
                    Objective::Reach => !mdp.is_target(v),
                    Objective::Safe => mdp.is_target(v),
                };
                if constrained {
                    slots.push(Slot::Leaf { vertex: v });
                }
            } else if let Transitions::Control(succ) = mdp.transitions(v) {
                slots.push(Slot::Control { vertex: v, succ: succ.clone() });
            }
        }
        Ok(TreeSystem { mdp, player, root, vertices, local, slots })
    }

    fn num_choices(&self) -> u128 {
        self.slots.iter().map(|s| s.options() as u128).product()
    }

    /// Mixed-radix decoding, first slot most significant.
    fn decode(&self, mut index: u64) -> Vec<usize> {
        let mut choice = vec![0; self.slots.len()];
        for (k, s) in self.slots.iter().enumerate().rev() {
            let r = s.options() as u64;
            choice[k] = (index % r) as usize;
            index /= r;
        }
        choice
    }

    fn b(&self, v: VertexId) -> usize {
        3 * self.local[v.0].expect("vertex in tree")
    }

    fn p(&self, v: VertexId) -> usize {
        self.b(v) + 1
    }

    fn aux(&self, v: VertexId) -> usize {
        self.b(v) + 2
    }

    fn num_vars(&self) -> usize {
        3 * self.vertices.len()
    }

    /// Eliminates every vertex below the root first, then the root's
    /// auxiliary variable, leaving `B_root` and `p_root`.
    fn elimination_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.num_vars());
        for &v in &self.vertices {
            if v != self.root {
                order.extend([self.aux(v), self.b(v), self.p(v)]);
            }
        }
        order.push(self.aux(self.root));
        order
    }

    fn system(&self, choice: &[usize]) -> LinearSystem {
        let one = Rational::one;
        let zero = Rational::zero;
        let mut sys = LinearSystem::new(self.num_vars());
        for x in 0..self.num_vars() {
            sys.push(Constraint::ge(vec![(x, one())], zero()));
            sys.push(Constraint::le(vec![(x, one())], one()));
        }
        let reach = self.player == Objective::Reach;
        for (slot, &c) in self.slots.iter().zip(choice) {
            match slot {
                Slot::Leaf { vertex } => {
                    let (var, value) = match (c, reach) {
                        (0, true) => (self.b(*vertex), one()),
                        (_, true) => (self.p(*vertex), zero()),
                        (0, false) => (self.b(*vertex), zero()),
                        (_, false) => (self.p(*vertex), one()),
                    };
                    sys.push(Constraint::eq(vec![(var, one())], value));
                }
                Slot::Control { vertex, succ } => {
                    let u = *vertex;
                    let chosen = succ[c];
                    sys.push(Constraint::eq(
                        vec![(self.b(u), one()), (self.b(chosen), -half()), (self.aux(u), -half())],
                        zero(),
                    ));
                    for &w in succ {
                        let bound = vec![(self.aux(u), one()), (self.b(w), -one())];
                        let prob = vec![(self.p(u), one()), (self.p(w), -one())];
                        if reach {
                            sys.push(Constraint::ge(bound, zero()));
                            sys.push(Constraint::le(prob, zero()));
                        } else {
                            sys.push(Constraint::le(bound, zero()));
                            sys.push(Constraint::ge(prob, zero()));
                        }
                    }
                }
            }
        }
        for &u in &self.vertices {
            if leaf(self.mdp, u) {
                continue;
            }
            if let Transitions::Random(dist) = self.mdp.transitions(u) {
                let mut sum = vec![(self.p(u), one())];
                for (w, d) in dist {
                    sum.push((self.p(*w), -d.clone()));
                    let bound = vec![(self.b(u), one()), (self.b(*w), -one())];
                    sys.push(if reach { Constraint::ge(bound, zero()) } else { Constraint::le(bound, zero()) });
                }
                sys.push(Constraint::eq(sum, zero()));
            }
        }
        sys
    }

    fn query(&self, budget: &Rational, prob: &Rational) -> Vec<Constraint> {
        let (b, p) = (self.b(self.root), self.p(self.root));
        let one = Rational::one();
        match self.player {
            Objective::Reach => vec![
                Constraint::le(vec![(b, one.clone())], budget.clone()),
                Constraint::lt(vec![(b, one.clone())], one.clone()),
                Constraint::ge(vec![(p, one.clone())], prob.clone()),
            ],
            Objective::Safe => vec![
                Constraint::le(vec![(p, one.clone())], prob.clone()),
                if budget.is_one() {
                    Constraint::ge(vec![(b, one.clone())], one)
                } else {
                    Constraint::gt(vec![(b, one)], budget.clone())
                },
            ],
        }
    }

    fn certificate(&self, choice: &[usize], x: &[Rational]) -> Certificate {
        let mut cert = Certificate {
            player: self.player,
            root: self.root,
            points: BTreeMap::new(),
            choices: BTreeMap::new(),
            bounds: BTreeMap::new(),
            leaves: BTreeMap::new(),
        };
        for &v in &self.vertices {
            cert.points.insert(v, Point::new(x[self.b(v)].clone(), x[self.p(v)].clone()));
        }
        for (slot, &c) in self.slots.iter().zip(choice) {
            match slot {
                Slot::Leaf { vertex } => {
                    cert.leaves.insert(*vertex, if c == 0 { LeafChoice::Budget } else { LeafChoice::Prob });
                }
                Slot::Control { vertex, succ } => {
                    cert.choices.insert(*vertex, succ[c]);
                    cert.bounds.insert(*vertex, x[self.aux(*vertex)].clone());
                }
            }
        }
        cert
    }
}

/// Per-root cache: the projection of every feasible choice vector onto the
/// root's point, so repeated queries only solve two-variable systems.
pub struct TreeCertifier<'a> {
    tree: TreeSystem<'a>,
    projections: Vec<(Vec<usize>, Vec<Constraint>)>,
}

impl<'a> TreeCertifier<'a> {
    pub fn new(mdp: &'a Mdp, root: VertexId, player: Objective, cap: u64) -> Result<Self, TreeError> {
        let tree = TreeSystem::new(mdp, root, player)?;
        let count = tree.num_choices();
        if count > cap as u128 {
            return Err(TreeError::ChoiceCap { count, cap });
        }
        let order = tree.elimination_order();
        let projections = (0..count as u64)
            .into_par_iter()
            .filter_map(|i| {
                let choice = tree.decode(i);
                project(&tree.system(&choice), &order).map(|rows| (choice, rows))
            })
            .collect();
        Ok(TreeCertifier { tree, projections })
    }

    /// Number of choice vectors whose system is feasible before the query
    /// constraints are added.
    pub fn feasible_choices(&self) -> usize {
        self.projections.len()
    }

    /// The first choice vector (in enumeration order) admitting the query,
    /// with a satisfying assignment.
    pub fn query(&self, budget: &Rational, prob: &Rational) -> Result<Option<Certificate>, TreeError> {
        let tree = &self.tree;
        let q = tree.query(budget, prob);
        let root_vars = [tree.b(tree.root), tree.p(tree.root)];
        for (choice, rows) in &self.projections {
            let mut small = LinearSystem::new(tree.num_vars());
            small.constraints = rows.iter().cloned().chain(q.iter().cloned()).collect();
            if let Feasibility::Infeasible(_) = linear_feasibility(&small, Some(&root_vars)) {
                continue;
            }
            let mut full = tree.system(choice);
            full.constraints.extend(q.iter().cloned());
            let mut order = tree.elimination_order();
            order.extend(root_vars);
            return match linear_feasibility(&full, Some(&order)) {
                Feasibility::Feasible(x) => Ok(Some(tree.certificate(choice, &x))),
                Feasibility::Infeasible(_) => Err(TreeError::Internal),
            };
        }
        Ok(None)
    }
}

/// Searches the choice space for a certificate that `player` wins the
/// query. `None` means no choice vector is feasible.
pub fn tree_certificate(mdp: &Mdp, instance: &ProblemInstance, player: Objective) -> Result<Option<Certificate>, TreeError> {
    TreeCertifier::new(mdp, instance.vertex, player, DEFAULT_CHOICE_CAP)?.query(&instance.budget, &instance.prob)
}

/// Checks every constraint of the system selected by the certificate's
/// choices, over the vertices below the query vertex.
pub fn check_certificate(mdp: &Mdp, cert: &Certificate, instance: &ProblemInstance) -> bool {
    if cert.root != instance.vertex {
        return false;
    }
    let Ok(tree) = TreeSystem::new(mdp, cert.root, cert.player) else { return false };
    let mut choice = Vec::with_capacity(tree.slots.len());
    for slot in &tree.slots {
        let c = match slot {
            Slot::Leaf { vertex } => match cert.leaves.get(vertex) {
                Some(LeafChoice::Budget) => 0,
                Some(LeafChoice::Prob) => 1,
                None => return false,
            },
            Slot::Control { vertex, succ } => match cert.choices.get(vertex).and_then(|w| succ.iter().position(|s| s == w)) {
                Some(c) => c,
                None => return false,
            },
        };
        choice.push(c);
    }
    let mut x = vec![Rational::zero(); tree.num_vars()];
    for &v in &tree.vertices {
        let Some(pt) = cert.points.get(&v) else { return false };
        x[tree.b(v)] = pt.budget.clone();
        x[tree.p(v)] = pt.prob.clone();
        if !leaf(mdp, v) && matches!(mdp.transitions(v), Transitions::Control(_)) {
            match cert.bounds.get(&v) {
                Some(m) => x[tree.aux(v)] = m.clone(),
                None => return false,
            }
        }
    }
    let mut sys = tree.system(&choice);
    sys.constraints.extend(tree.query(&instance.budget, &instance.prob));
    sys.satisfied_by(&x)
}
