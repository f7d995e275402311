//! Simple stochastic games: parsing, the alternation normal form, the
//! reduction to a bidding arena and value brackets obtained from it.

use std::collections::{HashMap, HashSet, VecDeque};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acyclic::solve_acyclic;
use crate::approx::{alg_approx, ApproxOptions};
use crate::exact::Outcome;
use crate::mdp::{classify, parse_arena, Mdp, MdpBuilder, MdpError, ProblemInstance, StructureClass, Transitions, VertexId};
use crate::rational::{format_rational, rat, Rational};
use crate::staircase::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    /// Maximizes the probability of reaching a target.
    P0,
    /// Minimizes it.
    P1,
    Random,
}

impl Owner {
    pub fn keyword(self) -> &'static str {
        match self {
            Owner::P0 => "p0",
            Owner::P1 => "p1",
            Owner::Random => "random",
        }
    }
}

#[derive(Debug, Error)]
pub enum SsgError {
    #[error(transparent)]
    Arena(#[from] MdpError),
    #[error("the game has no initial vertex")]
    NoInit,
    #[error("owner of `{0}` does not match its transitions")]
    OwnerMismatch(String),
    #[error("the game does not alternate: {}", .0.join("; "))]
    NotAlternating(Vec<String>),
    #[error("precision must be positive")]
    Precision,
}

/// A game graph whose control vertices are split between two players.
/// Targets and sinks are terminal; alternation is checked separately.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ssg {
    graph: Mdp,
    owners: Vec<Owner>,
}

impl Ssg {
    pub fn new(graph: Mdp, owners: Vec<Owner>) -> Result<Self, SsgError> {
        if graph.init().is_none() {
            return Err(SsgError::NoInit);
        }
        if owners.len() != graph.len() {
            return Err(SsgError::OwnerMismatch(format!("{} owners for {} vertices", owners.len(), graph.len())));
        }
        for v in graph.ids() {
            let random = matches!(graph.transitions(v), Transitions::Random(_));
            if random != (owners[v.0] == Owner::Random) {
                return Err(SsgError::OwnerMismatch(graph.name(v).to_string()));
            }
        }
        Ok(Ssg { graph, owners })
    }

    pub fn graph(&self) -> &Mdp {
        &self.graph
    }

    pub fn owner(&self, v: VertexId) -> Owner {
        self.owners[v.0]
    }

    pub fn init(&self) -> VertexId {
        self.graph.init().expect("checked on construction")
    }

    pub fn is_terminal(&self, v: VertexId) -> bool {
        self.graph.is_target(v) || self.graph.is_sink(v)
    }

    pub fn count(&self, owner: Owner) -> usize {
        self.graph.ids().filter(|&v| !self.is_terminal(v) && self.owner(v) == owner).count()
    }
}

/// Parses the arena format with vertex kinds `p0`, `p1` and `random`.
pub fn parse_ssg(text: &str) -> Result<Ssg, SsgError> {
    let (graph, kinds) = parse_arena(text, &["p0", "p1"])?;
    let owners = kinds
        .into_iter()
        .map(|k| match k {
            Some(0) => Owner::P0,
            Some(_) => Owner::P1,
            None => Owner::Random,
        })
        .collect();
    Ssg::new(graph, owners)
}

pub fn serialize_ssg(ssg: &Ssg) -> String {
    let g = &ssg.graph;
    let mut out = String::new();
    for v in g.ids() {
        let body = match g.transitions(v) {
            Transitions::Control(s) => s.iter().map(|w| g.name(*w).to_string()).collect::<Vec<_>>(),
            Transitions::Random(d) => d.iter().map(|(w, p)| format!("{}:{}", g.name(*w), format_rational(p))).collect(),
        };
        out.push_str(&format!("{} {} -> {}\n", ssg.owner(v).keyword(), g.name(v), body.join(" ")));
    }
    let targets: Vec<&str> = g.targets().map(|t| g.name(t)).collect();
    if !targets.is_empty() {
        out.push_str(&format!("target {}\n", targets.join(" ")));
    }
    out.push_str(&format!("init {}\n", g.name(ssg.init())));
    out
}

/// Position in the cycle `p1, random, p0, random`.
fn phase_of(owner: Owner) -> Option<u8> {
    match owner {
        Owner::P1 => Some(0),
        Owner::P0 => Some(2),
        Owner::Random => None,
    }
}

/// Every way the game breaks the `p1 random p0 random` rhythm. Terminal
/// vertices are exempt; the initial vertex must belong to `p1` unless it
/// is terminal.
pub fn alternation_violations(ssg: &Ssg) -> Vec<String> {
    let g = &ssg.graph;
    let mut out = Vec::new();
    let init = ssg.init();
    if !ssg.is_terminal(init) && ssg.owner(init) != Owner::P1 {
        out.push(format!("initial vertex `{}` is not a p1 vertex", g.name(init)));
    }
    // Phase of each random vertex, as forced by its player predecessors.
    let mut random_phase: HashMap<VertexId, u8> = HashMap::new();
    for u in g.ids().filter(|&u| !ssg.is_terminal(u)) {
        let Some(pu) = phase_of(ssg.owner(u)) else { continue };
        for w in g.successors(u) {
            if ssg.is_terminal(w) {
                continue;
            }
            if ssg.owner(w) != Owner::Random {
                out.push(format!("edge `{}` -> `{}` joins two player vertices", g.name(u), g.name(w)));
                continue;
            }
            let want = pu + 1;
            match random_phase.insert(w, want) {
                Some(prev) if prev != want => {
                    out.push(format!("random vertex `{}` follows both p0 and p1 vertices", g.name(w)));
                }
                _ => {}
            }
        }
    }
    for r in g.ids().filter(|&r| !ssg.is_terminal(r) && ssg.owner(r) == Owner::Random) {
        let mut next: Option<Owner> = random_phase.get(&r).map(|&ph| if ph == 1 { Owner::P0 } else { Owner::P1 });
        for w in g.successors(r) {
            if ssg.is_terminal(w) {
                continue;
            }
            let ow = ssg.owner(w);
            if ow == Owner::Random {
                out.push(format!("edge `{}` -> `{}` joins two random vertices", g.name(r), g.name(w)));
            } else if *next.get_or_insert(ow) != ow {
                out.push(format!("random vertex `{}` leads to `{}` out of turn", g.name(r), g.name(w)));
            }
        }
    }
    out
}

pub fn is_alternating(ssg: &Ssg) -> bool {
    alternation_violations(ssg).is_empty()
}

fn fresh(used: &mut HashSet<String>, base: String) -> String {
    let mut name = base;
    while used.contains(&name) {
        name.push('\'');
    }
    used.insert(name.clone());
    name
}

/// The alternation normal form. An alternating game is returned unchanged;
/// otherwise each reachable vertex is paired with its phase and the pairs
/// whose owner does not fit the phase become single-successor pass-through
/// vertices, which leaves the value unchanged.
pub fn enforce_alternation(ssg: &Ssg) -> Ssg {
    if is_alternating(ssg) {
        return ssg.clone();
    }
    let g = &ssg.graph;
    let fits = |(v, ph): (VertexId, u8)| match ssg.owner(v) {
        Owner::Random => ph % 2 == 1,
        o => phase_of(o) == Some(ph),
    };
    let next = |(v, ph): (VertexId, u8)| -> Vec<(VertexId, u8)> {
        let nph = (ph + 1) % 4;
        if fits((v, ph)) {
            g.successors(v).into_iter().map(|w| (w, nph)).collect()
        } else {
            vec![(v, nph)]
        }
    };

    // Reachable pairs; terminal vertices keep a single copy.
    let mut keys: Vec<(VertexId, u8)> = Vec::new();
    let mut seen: HashSet<(VertexId, u8)> = HashSet::new();
    let mut terminals: Vec<VertexId> = Vec::new();
    let mut queue = VecDeque::from([(ssg.init(), 0u8)]);
    while let Some(key) = queue.pop_front() {
        if ssg.is_terminal(key.0) {
            if !terminals.contains(&key.0) {
                terminals.push(key.0);
            }
            continue;
        }
        if !seen.insert(key) {
            continue;
        }
        keys.push(key);
        queue.extend(next(key));
    }

    let mut used: HashSet<String> = g.ids().map(|v| g.name(v).to_string()).collect();
    let mut names: HashMap<(VertexId, u8), String> = HashMap::new();
    for &key in &keys {
        let tag = if fits(key) { "@" } else { "@pass" };
        names.insert(key, fresh(&mut used, format!("{}{tag}{}", g.name(key.0), key.1)));
    }
    let name = |key: (VertexId, u8)| -> &str {
        if ssg.is_terminal(key.0) {
            g.name(key.0)
        } else {
            &names[&key]
        }
    };

    let mut b = MdpBuilder::new();
    let mut owners = Vec::new();
    for &key in &keys {
        let (v, ph) = key;
        let own = name(key);
        let succ = next(key);
        if !fits(key) {
            let to = [name(succ[0])];
            match ph {
                0 => b.control(own, &to),
                2 => b.control(own, &to),
                _ => b.random(own, &[(to[0], Rational::one())]),
            };
            owners.push([Owner::P1, Owner::Random, Owner::P0, Owner::Random][ph as usize]);
            continue;
        }
        match g.transitions(v) {
            Transitions::Control(_) => {
                let s: Vec<&str> = succ.iter().map(|&k| name(k)).collect();
                b.control(own, &s);
            }
            Transitions::Random(d) => {
                let dist: Vec<(&str, Rational)> = d.iter().zip(&succ).map(|((_, p), &k)| (name(k), p.clone())).collect();
                b.random(own, &dist);
            }
        }
        owners.push(ssg.owner(v));
    }
    for &t in &terminals {
        let n = g.name(t);
        match g.transitions(t) {
            Transitions::Control(_) => b.control(n, &[n]),
            Transitions::Random(_) => b.random(n, &[(n, Rational::one())]),
        };
        owners.push(ssg.owner(t));
        if g.is_target(t) {
            b.target(n);
        }
    }
    b.init(name((ssg.init(), 0)));
    let graph = b.build().expect("normal form is a valid arena");
    Ssg::new(graph, owners).expect("owners follow the construction")
}

/// The bidding arena of an alternating game: every `p0` vertex gains a
/// fresh losing sink, every `p1` vertex a fresh target sink. Player
/// vertices become control vertices; the initial vertex is kept.
pub fn reduce(ssg: &Ssg) -> Result<Mdp, SsgError> {
    let violations = alternation_violations(ssg);
    if !violations.is_empty() {
        return Err(SsgError::NotAlternating(violations));
    }
    let g = &ssg.graph;
    let mut used: HashSet<String> = g.ids().map(|v| g.name(v).to_string()).collect();
    let mut b = MdpBuilder::new();
    let mut extra: Vec<(String, bool)> = Vec::new();
    for v in g.ids() {
        let name = g.name(v);
        match g.transitions(v) {
            Transitions::Random(d) => {
                let dist: Vec<(&str, Rational)> = d.iter().map(|(w, p)| (g.name(*w), p.clone())).collect();
                b.random(name, &dist);
            }
            Transitions::Control(s) => {
                let mut succ: Vec<String> = s.iter().map(|w| g.name(*w).to_string()).collect();
                if !ssg.is_terminal(v) {
                    let win = ssg.owner(v) == Owner::P1;
                    let sink = fresh(&mut used, format!("{name}.{}", if win { "win" } else { "lose" }));
                    succ.push(sink.clone());
                    extra.push((sink, win));
                }
                b.control(name, &succ);
            }
        }
    }
    for t in g.targets() {
        b.target(g.name(t));
    }
    for (sink, win) in &extra {
        b.control(sink, &[sink]);
        if *win {
            b.target(sink);
        }
    }
    b.init(g.name(ssg.init()));
    Ok(b.build()?)
}

/// Bounds on the value at the initial vertex after `iterations` rounds of
/// min-max value iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueBounds {
    #[serde(with = "crate::rational::text")]
    pub lower: Rational,
    #[serde(with = "crate::rational::text")]
    pub upper: Rational,
    pub iterations: usize,
}

fn ssg_step(ssg: &Ssg, x: &[Rational]) -> Vec<Rational> {
    let g = &ssg.graph;
    g.ids()
        .map(|v| {
            if ssg.is_terminal(v) {
                return x[v.0].clone();
            }
            match g.transitions(v) {
                Transitions::Random(d) => d.iter().map(|(w, p)| p * &x[w.0]).sum(),
                Transitions::Control(s) => {
                    let vals = s.iter().map(|w| &x[w.0]);
                    let best = if ssg.owner(v) == Owner::P0 { vals.max() } else { vals.min() };
                    best.expect("control vertices have successors").clone()
                }
            }
        })
        .collect()
}

/// Value iteration from below (targets 1, everything else 0) and from
/// above (1 wherever a target is reachable in the graph, 0 elsewhere).
/// Both sequences are monotone and enclose the value.
pub fn brute_force_ssg_value(ssg: &Ssg, iterations: usize) -> ValueBounds {
    let g = &ssg.graph;
    let mut can_reach: Vec<bool> = g.ids().map(|v| g.is_target(v)).collect();
    let preds = g.predecessors();
    let mut queue: VecDeque<VertexId> = g.targets().collect();
    while let Some(w) = queue.pop_front() {
        for &u in &preds[w.0] {
            if !can_reach[u.0] {
                can_reach[u.0] = true;
                queue.push_back(u);
            }
        }
    }
    let indicator = |b: bool| if b { Rational::one() } else { Rational::zero() };
    let mut lo: Vec<Rational> = g.ids().map(|v| indicator(g.is_target(v))).collect();
    let mut hi: Vec<Rational> = can_reach.iter().map(|&b| indicator(b)).collect();
    for _ in 0..iterations {
        lo = ssg_step(ssg, &lo);
        hi = ssg_step(ssg, &hi);
    }
    let v = ssg.init().0;
    ValueBounds { lower: lo[v].clone(), upper: hi[v].clone(), iterations }
}

#[derive(Clone, Debug)]
pub struct BracketOptions {
    pub approx: ApproxOptions,
    /// Budget gap `η` of the lower query `(1/3 - η, p)` on cyclic arenas.
    pub gap: Rational,
}

impl Default for BracketOptions {
    fn default() -> Self {
        BracketOptions { approx: ApproxOptions::default(), gap: rat(1, 1000) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    #[serde(with = "crate::rational::text")]
    pub lo: Rational,
    #[serde(with = "crate::rational::text")]
    pub hi: Rational,
    /// `acyclic` (exact limit sets) or `approx`.
    pub method: String,
    pub queries: usize,
    /// Set when a probe could not be decided and the bracket stopped short
    /// of the requested width.
    pub diagnostic: Option<String>,
}

impl Bracket {
    pub fn width(&self) -> Rational {
        &self.hi - &self.lo
    }

    pub fn contains(&self, x: &Rational) -> bool {
        &self.lo <= x && x <= &self.hi
    }
}

/// Probes tried inside `[lo, hi]`, as fractions of the width. The first is
/// the midpoint; the others step off it so that a value sitting exactly on
/// a probe does not stall the search.
const PROBES: [(i64, i64); 5] = [(1, 2), (11, 20), (9, 20), (3, 5), (2, 5)];

/// Brackets the least `p` with `(1/3, p)` in the limit safety set of the
/// reduced arena at the initial vertex, which is the value of the game.
/// Acyclic arenas are decided exactly. Otherwise `(1/3, p)` winning for
/// safety lowers `hi`, and `(1/3 - η, p)` winning for reach raises `lo`.
pub fn ssg_value_via_bidding(ssg: &Ssg, precision: &Rational, opts: &BracketOptions) -> Result<Bracket, SsgError> {
    if *precision <= Rational::zero() {
        return Err(SsgError::Precision);
    }
    let arena = reduce(ssg)?;
    let v = arena.init().expect("reduction keeps the initial vertex");
    let third = rat(1, 3);
    let exact = match classify(&arena) {
        StructureClass::General => None,
        _ => Some(solve_acyclic(&arena)?),
    };
    let mut bracket = Bracket {
        lo: Rational::zero(),
        hi: Rational::one(),
        method: if exact.is_some() { "acyclic" } else { "approx" }.to_string(),
        queries: 0,
        diagnostic: None,
    };
    // Some(true): the value is at most p; Some(false): at least p.
    let probe = |p: &Rational, queries: &mut usize| -> Result<Option<bool>, SsgError> {
        if let Some(sol) = &exact {
            *queries += 1;
            return Ok(Some(sol.sval.get(v).contains(&Point::new(third.clone(), p.clone()))));
        }
        *queries += 1;
        let upper = ProblemInstance::new(&arena, v, third.clone(), p.clone())?;
        if alg_approx(&arena, &upper, &opts.approx).outcome == Outcome::SafetyWins {
            return Ok(Some(true));
        }
        *queries += 1;
        let lower = ProblemInstance::new(&arena, v, &third - &opts.gap, p.clone())?;
        if alg_approx(&arena, &lower, &opts.approx).outcome == Outcome::ReachWins {
            return Ok(Some(false));
        }
        Ok(None)
    };
    while bracket.width() > *precision {
        let width = bracket.width();
        let mut moved = false;
        for (n, d) in PROBES {
            let p = &bracket.lo + &width * rat(n, d);
            match probe(&p, &mut bracket.queries)? {
                Some(true) => bracket.hi = p,
                Some(false) => bracket.lo = p,
                None => continue,
            }
            moved = true;
            break;
        }
        if !moved {
            bracket.diagnostic = Some(format!(
                "undecided probes in [{}, {}]; bracket left at width {}",
                format_rational(&bracket.lo),
                format_rational(&bracket.hi),
                format_rational(&width)
            ));
            break;
        }
    }
    Ok(bracket)
}
