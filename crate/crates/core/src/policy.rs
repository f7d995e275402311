//! Policies read off value traces, test opponents, the bidding referee and
//! Monte Carlo estimation.
//!
//! A policy only keeps the requested probability and the remaining horizon;
//! its budget is handed in by the referee at every decision.

use std::collections::VecDeque;
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::{Objective, ValueMap};
use crate::mdp::{classify, Mdp, ProblemInstance, StructureClass, Transitions, VertexId};
use crate::rational::{format_rational, int, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("safety policies over the limit sets need an acyclic arena")]
    Unsupported,
    #[error("value trace is empty or has the wrong objective")]
    BadTrace,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub bid: Rational,
    pub successor: VertexId,
}

/// What a policy learns after every step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Move {
    pub from: VertexId,
    pub to: VertexId,
    /// Winner of the bidding; `None` at random vertices.
    pub winner: Option<Objective>,
}

pub trait Policy: Send + Sync {
    fn role(&self) -> Objective;
    /// Starts a play at `start` with the given own budget. `key` identifies
    /// the play, for policies that randomize.
    fn reset(&mut self, start: VertexId, own_budget: &Rational, key: u64);
    fn decide(&mut self, v: VertexId, own_budget: &Rational) -> Decision;
    fn observe(&mut self, mv: &Move);
    fn boxed(&self) -> Box<dyn Policy>;
}

/// Value sets a policy consults: a finite trace `val^0..val^h`, or a limit
/// that is a fixpoint of the operator and serves every level.
#[derive(Clone, Debug)]
pub struct ValueSource {
    levels: Arc<Vec<ValueMap>>,
    stabilized: bool,
}

impl ValueSource {
    pub fn finite(levels: Vec<ValueMap>) -> Result<Self, PolicyError> {
        let first = levels.first().ok_or(PolicyError::BadTrace)?.objective();
        if levels.iter().any(|l| l.objective() != first) {
            return Err(PolicyError::BadTrace);
        }
        Ok(ValueSource { levels: Arc::new(levels), stabilized: false })
    }

    pub fn stabilized(limit: ValueMap) -> Self {
        ValueSource { levels: Arc::new(vec![limit]), stabilized: true }
    }

    pub fn objective(&self) -> Objective {
        self.levels[0].objective()
    }

    /// `None` for a limit.
    pub fn horizon(&self) -> Option<usize> {
        (!self.stabilized).then(|| self.levels.len() - 1)
    }

    pub fn is_stabilized(&self) -> bool {
        self.stabilized
    }

    fn level(&self, i: usize) -> &ValueMap {
        if self.stabilized {
            &self.levels[0]
        } else {
            &self.levels[i]
        }
    }
}

fn control_successors(mdp: &Mdp, v: VertexId) -> Option<&[VertexId]> {
    match mdp.transitions(v) {
        Transitions::Control(s) if !mdp.is_sink(v) => Some(s),
        _ => None,
    }
}

fn clamp_bid(bid: Rational, budget: &Rational) -> Rational {
    bid.max(Rational::zero()).min(budget.clone())
}

/// The reachability policy of the bounded-horizon construction: at a
/// control vertex with successor thresholds `B₋ <= ... <= B₊` it bids
/// `(B₊ - B₋)/2` for the cheapest successor; at a random vertex it splits
/// the requested probability in proportion to what each successor can
/// still guarantee.
#[derive(Clone, Debug)]
pub struct ReachPolicy {
    mdp: Arc<Mdp>,
    values: ValueSource,
    start_prob: Rational,
    start_horizon: usize,
    prob: Rational,
    horizon: usize,
}

impl ReachPolicy {
    pub fn prob(&self) -> &Rational {
        &self.prob
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn active(&self) -> bool {
        self.values.stabilized || self.horizon > 0
    }

    fn threshold(&self, i: usize, v: VertexId, p: &Rational) -> Rational {
        self.values.level(i).get(v).budget_at(p).cloned().unwrap_or_else(Rational::one)
    }
}

pub fn extract_reach_policy(mdp: &Mdp, values: ValueSource, instance: &ProblemInstance) -> Result<ReachPolicy, PolicyError> {
    if values.objective() != Objective::Reach {
        return Err(PolicyError::BadTrace);
    }
    let v = instance.vertex;
    let (b, p) = (&instance.budget, &instance.prob);
    let wins = |i: usize| -> bool {
        mdp.is_target(v)
            || values.level(i).get(v).budget_at(p).is_some_and(|t| t <= b && *t < Rational::one())
    };
    let horizon = match values.horizon() {
        None => wins(0).then_some(0),
        Some(h) => (0..=h).find(|&i| wins(i)),
    }
    .ok_or_else(|| {
        PolicyError::Precondition(format!(
            "({}, {}) is not won by the reachability player at {} within the trace",
            format_rational(b),
            format_rational(p),
            mdp.name(v)
        ))
    })?;
    Ok(ReachPolicy {
        mdp: Arc::new(mdp.clone()),
        values,
        start_prob: p.clone(),
        start_horizon: horizon,
        prob: p.clone(),
        horizon,
    })
}

impl Policy for ReachPolicy {
    fn role(&self) -> Objective {
        Objective::Reach
    }

    fn reset(&mut self, _start: VertexId, _own_budget: &Rational, _key: u64) {
        self.prob = self.start_prob.clone();
        self.horizon = self.start_horizon;
    }

    fn decide(&mut self, v: VertexId, own_budget: &Rational) -> Decision {
        let Some(succ) = control_successors(&self.mdp, v) else {
            return Decision { bid: Rational::zero(), successor: v };
        };
        if self.mdp.is_target(v) || !self.active() {
            return Decision { bid: Rational::zero(), successor: succ[0] };
        }
        let next = self.horizon.saturating_sub(1);
        let mut lo: Option<(Rational, VertexId)> = None;
        let mut hi = Rational::zero();
        for &w in succ {
            let t = self.threshold(next, w, &self.prob);
            if lo.as_ref().is_none_or(|(l, u)| t < *l || (t == *l && w < *u)) {
                lo = Some((t.clone(), w));
            }
            hi = hi.max(t);
        }
        let (lo, successor) = lo.expect("control vertex has successors");
        Decision { bid: clamp_bid((hi - lo) / int(2), own_budget), successor }
    }

    fn observe(&mut self, mv: &Move) {
        if !self.active() || self.mdp.is_target(mv.from) {
            return;
        }
        let i = self.horizon;
        let next = i.saturating_sub(1);
        if mv.winner.is_none() && !self.prob.is_zero() {
            let bar = self.threshold(i, mv.from, &self.prob);
            let total = self.values.level(i).get(mv.from).prob_at(&bar).cloned().unwrap_or_else(Rational::zero);
            let here = self.values.level(next).get(mv.to).prob_at(&bar).cloned().unwrap_or_else(Rational::zero);
            self.prob = if total.is_zero() { Rational::zero() } else { (here * &self.prob / total).min(Rational::one()) };
        }
        if !self.values.stabilized {
            self.horizon = next;
        }
    }

    fn boxed(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

/// The dual construction for the safety player: at a control vertex it
/// bids `(B₋ - B₊)/2`, where `B₋` is the largest successor threshold, and
/// escapes to that successor; at a random vertex it raises each
/// successor's minimal probability by the same fraction of its headroom.
#[derive(Clone, Debug)]
pub struct SafetyPolicy {
    mdp: Arc<Mdp>,
    values: ValueSource,
    /// `None`: choose the least defensible probability at reset.
    requested: Option<Rational>,
    prob: Rational,
    horizon: usize,
}

impl SafetyPolicy {
    pub fn prob(&self) -> &Rational {
        &self.prob
    }

    fn top(&self) -> usize {
        self.values.horizon().unwrap_or(0)
    }

    fn active(&self) -> bool {
        self.values.stabilized || self.horizon > 0
    }

    fn threshold(&self, i: usize, v: VertexId, p: &Rational) -> Rational {
        self.values.level(i).get(v).budget_at(p).cloned().unwrap_or_else(Rational::zero)
    }

    /// Least `p` whose safety threshold at `v` exceeds the reach budget
    /// `b`, or the probability at `B = 1` when `b = 1`.
    fn guided_prob(&self, v: VertexId, b: &Rational) -> Rational {
        let set = self.values.level(self.top()).get(v);
        set.corners()
            .iter()
            .find(|c| c.budget > *b)
            .or_else(|| set.corners().last())
            .map(|c| c.prob.clone())
            .unwrap_or_else(Rational::one)
    }
}

pub fn extract_safety_policy(mdp: &Mdp, values: ValueSource, instance: &ProblemInstance) -> Result<SafetyPolicy, PolicyError> {
    if values.objective() != Objective::Safe {
        return Err(PolicyError::BadTrace);
    }
    if values.is_stabilized() && classify(mdp) == StructureClass::General {
        return Err(PolicyError::Unsupported);
    }
    let v = instance.vertex;
    let (b, p) = (&instance.budget, &instance.prob);
    let top = values.horizon().unwrap_or(0);
    let holds = values.level(top).get(v).budget_at(p).is_some_and(|g| g > b || (b.is_one() && g.is_one()));
    if !holds {
        return Err(PolicyError::Precondition(format!(
            "({}, {}) is not held by the safety player at {}",
            format_rational(b),
            format_rational(p),
            mdp.name(v)
        )));
    }
    Ok(SafetyPolicy { mdp: Arc::new(mdp.clone()), values, requested: Some(p.clone()), prob: p.clone(), horizon: top })
}

impl Policy for SafetyPolicy {
    fn role(&self) -> Objective {
        Objective::Safe
    }

    fn reset(&mut self, start: VertexId, own_budget: &Rational, _key: u64) {
        self.horizon = self.top();
        self.prob = match &self.requested {
            Some(p) => p.clone(),
            None => self.guided_prob(start, &(Rational::one() - own_budget)),
        };
    }

    fn decide(&mut self, v: VertexId, own_budget: &Rational) -> Decision {
        let Some(succ) = control_successors(&self.mdp, v) else {
            return Decision { bid: Rational::zero(), successor: v };
        };
        if self.mdp.is_target(v) || !self.active() {
            return Decision { bid: Rational::zero(), successor: succ[0] };
        }
        let next = self.horizon.saturating_sub(1);
        let mut hi: Option<(Rational, VertexId)> = None;
        let mut lo = Rational::one();
        for &w in succ {
            let t = self.threshold(next, w, &self.prob);
            if hi.as_ref().is_none_or(|(h, u)| t > *h || (t == *h && w < *u)) {
                hi = Some((t.clone(), w));
            }
            lo = lo.min(t);
        }
        let (hi, successor) = hi.expect("control vertex has successors");
        Decision { bid: clamp_bid((hi - lo) / int(2), own_budget), successor }
    }

    fn observe(&mut self, mv: &Move) {
        if !self.active() || self.mdp.is_target(mv.from) {
            return;
        }
        let i = self.horizon;
        let next = i.saturating_sub(1);
        if mv.winner.is_none() {
            let one = Rational::one();
            let bar = self.threshold(i, mv.from, &self.prob);
            let low = self.values.level(i).get(mv.from).prob_at(&bar).cloned().unwrap_or_else(Rational::zero);
            let low_w = self.values.level(next).get(mv.to).prob_at(&bar).cloned().unwrap_or_else(Rational::zero);
            let lambda = if low >= one { Rational::zero() } else { ((&self.prob - &low) / (&one - &low)).max(Rational::zero()) };
            self.prob = (&low_w + lambda * (&one - &low_w)).min(one);
        }
        if !self.values.stabilized {
            self.horizon = next;
        }
    }

    fn boxed(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    AllIn,
    Zero,
    UniformRandomBid,
    ValueGuided,
}

impl AdversaryKind {
    pub const ALL: [AdversaryKind; 4] =
        [AdversaryKind::AllIn, AdversaryKind::Zero, AdversaryKind::UniformRandomBid, AdversaryKind::ValueGuided];

    pub fn name(self) -> &'static str {
        match self {
            AdversaryKind::AllIn => "all_in",
            AdversaryKind::Zero => "zero",
            AdversaryKind::UniformRandomBid => "uniform_random_bid",
            AdversaryKind::ValueGuided => "value_guided",
        }
    }
}

/// Breadth-first distance to the targets along reversed edges.
pub fn target_distances(mdp: &Mdp) -> Vec<Option<usize>> {
    let preds = mdp.predecessors();
    let mut dist = vec![None; mdp.len()];
    let mut queue: VecDeque<VertexId> = mdp.targets().collect();
    for t in &queue {
        dist[t.0] = Some(0);
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[u.0].unwrap();
        for &w in &preds[u.0] {
            if dist[w.0].is_none() {
                dist[w.0] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BidStyle {
    AllIn,
    Zero,
    Uniform,
}

/// A value-blind opponent: fixed bidding style, moves along (or away from)
/// shortest paths to the targets.
#[derive(Clone, Debug)]
pub struct SimplePolicy {
    mdp: Arc<Mdp>,
    role: Objective,
    style: BidStyle,
    dist: Arc<Vec<Option<usize>>>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl SimplePolicy {
    fn rank(&self, w: VertexId) -> usize {
        let d = self.dist[w.0].unwrap_or(usize::MAX);
        match self.role {
            Objective::Reach => d,
            Objective::Safe => usize::MAX - d,
        }
    }
}

impl Policy for SimplePolicy {
    fn role(&self) -> Objective {
        self.role
    }

    fn reset(&mut self, _start: VertexId, _own_budget: &Rational, key: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.rng.set_stream(key);
    }

    fn decide(&mut self, v: VertexId, own_budget: &Rational) -> Decision {
        let succ = self.mdp.successors(v);
        let (bid, successor) = match self.style {
            BidStyle::AllIn => (own_budget.clone(), *succ.iter().min_by_key(|w| (self.rank(**w), **w)).unwrap()),
            BidStyle::Zero => (Rational::zero(), *succ.iter().min_by_key(|w| (self.rank(**w), **w)).unwrap()),
            BidStyle::Uniform => {
                let k: i64 = self.rng.gen_range(0..=1024);
                let w = succ[self.rng.gen_range(0..succ.len())];
                (own_budget * Rational::new(BigInt::from(k), BigInt::from(1024)), w)
            }
        };
        Decision { bid, successor }
    }

    fn observe(&mut self, _mv: &Move) {}

    fn boxed(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

/// Test opponents. `ValueGuided` follows the value-based construction for
/// its role with the most ambitious probability its budget supports; it
/// needs a trace (or limit) of the role's own objective.
pub fn adversary(
    kind: AdversaryKind,
    role: Objective,
    mdp: &Mdp,
    values: Option<ValueSource>,
    seed: u64,
) -> Result<Box<dyn Policy>, PolicyError> {
    let simple = |style| -> Box<dyn Policy> {
        Box::new(SimplePolicy {
            mdp: Arc::new(mdp.clone()),
            role,
            style,
            dist: Arc::new(target_distances(mdp)),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    };
    Ok(match kind {
        AdversaryKind::AllIn => simple(BidStyle::AllIn),
        AdversaryKind::Zero => simple(BidStyle::Zero),
        AdversaryKind::UniformRandomBid => simple(BidStyle::Uniform),
        AdversaryKind::ValueGuided => {
            let values = values.ok_or(PolicyError::BadTrace)?;
            if values.objective() != role {
                return Err(PolicyError::BadTrace);
            }
            match role {
                Objective::Safe => {
                    if values.is_stabilized() && classify(mdp) == StructureClass::General {
                        return Err(PolicyError::Unsupported);
                    }
                    let horizon = values.horizon().unwrap_or(0);
                    Box::new(SafetyPolicy {
                        mdp: Arc::new(mdp.clone()),
                        values,
                        requested: None,
                        prob: Rational::one(),
                        horizon,
                    })
                }
                Objective::Reach => Box::new(GuidedReach { mdp: Arc::new(mdp.clone()), values, inner: None }),
            }
        }
    })
}

/// Reach-side `ValueGuided`: at reset, requests the largest probability
/// its budget buys anywhere in the trace.
#[derive(Clone, Debug)]
struct GuidedReach {
    mdp: Arc<Mdp>,
    values: ValueSource,
    inner: Option<ReachPolicy>,
}

impl Policy for GuidedReach {
    fn role(&self) -> Objective {
        Objective::Reach
    }

    fn reset(&mut self, start: VertexId, own_budget: &Rational, key: u64) {
        let top = self.values.horizon().unwrap_or(0);
        let p = self.values.level(top).get(start).prob_at(own_budget).cloned().unwrap_or_else(Rational::zero);
        let b = own_budget.clone().min(Rational::one());
        self.inner = ProblemInstance::new(&self.mdp, start, b, p)
            .ok()
            .and_then(|q| extract_reach_policy(&self.mdp, self.values.clone(), &q).ok());
        if let Some(inner) = self.inner.as_mut() {
            inner.reset(start, own_budget, key);
        }
    }

    fn decide(&mut self, v: VertexId, own_budget: &Rational) -> Decision {
        match self.inner.as_mut() {
            Some(p) => p.decide(v, own_budget),
            None => Decision { bid: Rational::zero(), successor: self.mdp.successors(v)[0] },
        }
    }

    fn observe(&mut self, mv: &Move) {
        if let Some(p) = self.inner.as_mut() {
            p.observe(mv);
        }
    }

    fn boxed(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

/// Replays a fixed list of decisions, one per bidding, then bids zero.
#[derive(Clone, Debug)]
pub struct ScriptedPolicy {
    role: Objective,
    script: Vec<Decision>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(role: Objective, script: Vec<Decision>) -> Self {
        ScriptedPolicy { role, script, next: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn role(&self) -> Objective {
        self.role
    }

    fn reset(&mut self, _start: VertexId, _own_budget: &Rational, _key: u64) {
        self.next = 0;
    }

    fn decide(&mut self, v: VertexId, _own_budget: &Rational) -> Decision {
        let d = self.script.get(self.next).cloned().unwrap_or(Decision { bid: Rational::zero(), successor: v });
        self.next += 1;
        d
    }

    fn observe(&mut self, _mv: &Move) {}

    fn boxed(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

/// Source of the moves at random vertices.
#[derive(Clone, Debug)]
pub enum RandomSource {
    /// Counter-based stream keyed by (seed, trial, step).
    Seeded(u64),
    /// Successors for the random vertices visited, in order; an invalid or
    /// missing entry falls back to the first successor.
    Scripted(Vec<VertexId>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayOutcome {
    ReachedTarget,
    /// Stuck in a non-target sink.
    Absorbed,
    /// Step limit hit.
    Horizon,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidRecord {
    pub step: usize,
    pub vertex: String,
    #[serde(with = "crate::rational::text")]
    pub reach_bid: Rational,
    #[serde(with = "crate::rational::text")]
    pub safe_bid: Rational,
    pub winner: Objective,
    /// Player whose bid or move was illegal and who therefore lost.
    pub forfeit: Option<Objective>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayRecord {
    pub trial: u64,
    pub path: Vec<String>,
    pub bids: Vec<BidRecord>,
    /// Reachability budget before the first and after every step.
    #[serde(with = "rational_vec")]
    pub reach_budgets: Vec<Rational>,
    #[serde(with = "rational_vec")]
    pub safe_budgets: Vec<Rational>,
    pub outcome: PlayOutcome,
}

mod rational_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::rational::{format_rational, parse_rational, Rational};

    pub fn serialize<S: Serializer>(v: &[Rational], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(format_rational).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
        Vec::<String>::deserialize(d)?.iter().map(|t| parse_rational(t).map_err(serde::de::Error::custom)).collect()
    }
}

fn legal(bid: &Rational, budget: &Rational) -> bool {
    !bid.is_negative() && bid <= budget
}

/// Exact sampling when the common denominator fits in 64 bits, otherwise
/// against a 64-bit uniform dyadic.
fn sample(dist: &[(VertexId, Rational)], rng: &mut ChaCha8Rng) -> VertexId {
    let lcm = dist.iter().fold(BigInt::one(), |acc, (_, p)| acc.lcm(p.denom()));
    if let Some(l) = lcm.to_u64() {
        let k = BigInt::from(rng.gen_range(0..l));
        let mut acc = BigInt::zero();
        for (w, p) in dist {
            acc += p.numer() * (&lcm / p.denom());
            if k < acc {
                return *w;
            }
        }
    } else {
        let u = Rational::new(BigInt::from(rng.gen::<u64>()), BigInt::one() << 64);
        let mut acc = Rational::zero();
        for (w, p) in dist {
            acc += p;
            if u < acc {
                return *w;
            }
        }
    }
    dist.last().expect("non-empty distribution").0
}

/// Referees one play. Ties go to the reachability player; the winner pays
/// its bid to the loser and moves the token. An illegal bid or successor
/// loses the bidding.
pub fn play(
    mdp: &Mdp,
    reach: &mut dyn Policy,
    safe: &mut dyn Policy,
    instance: &ProblemInstance,
    source: &RandomSource,
    trial: u64,
    max_steps: usize,
) -> PlayRecord {
    let mut v = instance.vertex;
    let mut rb = instance.budget.clone();
    let mut sb = Rational::one() - &rb;
    reach.reset(v, &rb, trial);
    safe.reset(v, &sb, trial);
    let mut rec = PlayRecord {
        trial,
        path: vec![mdp.name(v).to_string()],
        bids: Vec::new(),
        reach_budgets: vec![rb.clone()],
        safe_budgets: vec![sb.clone()],
        outcome: PlayOutcome::Horizon,
    };
    let mut scripted = 0;
    for step in 0..=max_steps {
        if mdp.is_target(v) {
            rec.outcome = PlayOutcome::ReachedTarget;
            return rec;
        }
        if mdp.is_sink(v) {
            rec.outcome = PlayOutcome::Absorbed;
            return rec;
        }
        if step == max_steps {
            break;
        }
        let (to, winner) = match mdp.transitions(v) {
            Transitions::Control(succ) => {
                let r = reach.decide(v, &rb);
                let s = safe.decide(v, &sb);
                let r_ok = legal(&r.bid, &rb) && succ.contains(&r.successor);
                let s_ok = legal(&s.bid, &sb) && succ.contains(&s.successor);
                let (winner, forfeit) = match (r_ok, s_ok) {
                    (true, true) => (if r.bid >= s.bid { Objective::Reach } else { Objective::Safe }, None),
                    (true, false) => (Objective::Reach, Some(Objective::Safe)),
                    (false, _) => (Objective::Safe, Some(Objective::Reach)),
                };
                let to = match winner {
                    Objective::Reach => {
                        rb -= &r.bid;
                        sb += &r.bid;
                        r.successor
                    }
                    Objective::Safe => {
                        let pay = if s_ok { s.bid.clone() } else { Rational::zero() };
                        sb -= &pay;
                        rb += &pay;
                        if s_ok { s.successor } else { succ[0] }
                    }
                };
                rec.bids.push(BidRecord {
                    step,
                    vertex: mdp.name(v).to_string(),
                    reach_bid: r.bid,
                    safe_bid: s.bid,
                    winner,
                    forfeit,
                });
                (to, Some(winner))
            }
            Transitions::Random(dist) => {
                let to = match source {
                    RandomSource::Seeded(seed) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                        rng.set_stream(trial);
                        rng.set_word_pos((step as u128) << 6);
                        sample(dist, &mut rng)
                    }
                    RandomSource::Scripted(script) => {
                        let pick = script.get(scripted).copied().filter(|w| dist.iter().any(|(u, _)| u == w));
                        scripted += 1;
                        pick.unwrap_or(dist[0].0)
                    }
                };
                (to, None)
            }
        };
        let mv = Move { from: v, to, winner };
        reach.observe(&mv);
        safe.observe(&mv);
        v = to;
        rec.path.push(mdp.name(v).to_string());
        rec.reach_budgets.push(rb.clone());
        rec.safe_budgets.push(sb.clone());
    }
    rec.outcome = PlayOutcome::Horizon;
    rec
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub trials: u64,
    pub successes: u64,
    #[serde(with = "crate::rational::text")]
    pub frequency: Rational,
    /// Half-width of the 99% normal-approximation interval.
    pub half_width: f64,
}

const Z99: f64 = 2.5758293035489004;

/// Runs `trials` independent plays (trial `k` uses random stream `k`) and
/// reports the frequency of reaching the targets.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo(
    mdp: &Mdp,
    reach: &dyn Policy,
    safe: &dyn Policy,
    instance: &ProblemInstance,
    trials: u64,
    seed: u64,
    max_steps: usize,
) -> MonteCarlo {
    let trials = trials.max(1);
    let source = RandomSource::Seeded(seed);
    let successes = (0..trials)
        .into_par_iter()
        .map_init(
            || (reach.boxed(), safe.boxed()),
            |(r, s), k| play(mdp, r.as_mut(), s.as_mut(), instance, &source, k, max_steps).outcome == PlayOutcome::ReachedTarget,
        )
        .filter(|&hit| hit)
        .count() as u64;
    let f = successes as f64 / trials as f64;
    MonteCarlo {
        trials,
        successes,
        frequency: Rational::new(BigInt::from(successes), BigInt::from(trials)),
        half_width: Z99 * (f * (1.0 - f) / trials as f64).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acyclic::solve_acyclic;
    use crate::bellman::iterate;
    use crate::mdp::parse_mdp;
    use crate::rational::rat;

    const BRANCHING: &str = "random a -> b:1/2 c:1/2\nrandom b -> d:1/2 l2:1/2\ncontrol c -> l1 d\ncontrol d -> e f\n\
random e -> l2:1/2 t:1/2\ncontrol f -> t l1\ncontrol t -> t\ncontrol l1 -> l1\ncontrol l2 -> l2\ntarget t\n";
    const TWO_LOOP: &str = "control a -> b d\nrandom b -> a:1/2 c:1/2\ncontrol c -> c\ncontrol d -> d\ntarget c\n";

    fn inst(m: &Mdp, v: &str, b: Rational, p: Rational) -> ProblemInstance {
        ProblemInstance::new(m, m.id(v).unwrap(), b, p).unwrap()
    }

    #[test]
    fn two_loop_reach_policy_bids_half_at_a() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        let trace = iterate(&m, Objective::Reach, 2, None).unwrap();
        let q = inst(&m, "a", rat(3, 5), rat(2, 5));
        let mut pol = extract_reach_policy(&m, ValueSource::finite(trace).unwrap(), &q).unwrap();
        assert_eq!(pol.horizon(), 2);
        pol.reset(q.vertex, &q.budget, 0);
        let d = pol.decide(m.id("a").unwrap(), &q.budget);
        assert_eq!(d, Decision { bid: rat(1, 2), successor: m.id("b").unwrap() });
    }

    #[test]
    fn ties_go_to_reach() {
        let m = parse_mdp("control v -> t z\ncontrol t -> t\ncontrol z -> z\ntarget t\n").unwrap();
        let q = inst(&m, "v", rat(1, 2), rat(1, 1));
        let (t, z) = (m.id("t").unwrap(), m.id("z").unwrap());
        let mut r = ScriptedPolicy::new(Objective::Reach, vec![Decision { bid: rat(1, 2), successor: t }]);
        let mut s = ScriptedPolicy::new(Objective::Safe, vec![Decision { bid: rat(1, 2), successor: z }]);
        let rec = play(&m, &mut r, &mut s, &q, &RandomSource::Seeded(1), 0, 10);
        assert_eq!(rec.outcome, PlayOutcome::ReachedTarget);
        assert_eq!(rec.reach_budgets, vec![rat(1, 2), rat(0, 1)]);
        assert_eq!(rec.safe_budgets, vec![rat(1, 2), rat(1, 1)]);
    }

    #[test]
    fn overbid_forfeits() {
        let m = parse_mdp("control v -> t z\ncontrol t -> t\ncontrol z -> z\ntarget t\n").unwrap();
        let q = inst(&m, "v", rat(1, 4), rat(1, 1));
        let (t, z) = (m.id("t").unwrap(), m.id("z").unwrap());
        let mut r = ScriptedPolicy::new(Objective::Reach, vec![Decision { bid: rat(1, 2), successor: t }]);
        let mut s = ScriptedPolicy::new(Objective::Safe, vec![Decision { bid: rat(0, 1), successor: z }]);
        let rec = play(&m, &mut r, &mut s, &q, &RandomSource::Seeded(1), 0, 10);
        assert_eq!(rec.outcome, PlayOutcome::Absorbed);
        assert_eq!(rec.bids[0].forfeit, Some(Objective::Reach));
    }

    #[test]
    fn start_in_target() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        let q = inst(&m, "c", rat(0, 1), rat(1, 1));
        let mut r = adversary(AdversaryKind::Zero, Objective::Reach, &m, None, 0).unwrap();
        let mut s = adversary(AdversaryKind::AllIn, Objective::Safe, &m, None, 0).unwrap();
        let rec = play(&m, r.as_mut(), s.as_mut(), &q, &RandomSource::Seeded(3), 0, 10);
        assert_eq!(rec.outcome, PlayOutcome::ReachedTarget);
        assert!(rec.bids.is_empty());
    }

    #[test]
    fn branching_reach_policy_wins_half() {
        let m = parse_mdp(BRANCHING).unwrap();
        let sol = solve_acyclic(&m).unwrap();
        let q = inst(&m, "a", rat(3, 4) + rat(1, 100), rat(1, 2));
        let pol = extract_reach_policy(&m, ValueSource::stabilized(sol.rval.clone()), &q).unwrap();
        let adv = adversary(AdversaryKind::AllIn, Objective::Safe, &m, None, 0).unwrap();
        let mc = monte_carlo(&m, &pol, adv.as_ref(), &q, 4000, 5, 20);
        assert!(to_f(&mc.frequency) >= 0.5 - 3.0 * mc.half_width, "{mc:?}");
    }

    #[test]
    fn extracted_bids_along_branching_c_branch() {
        let m = parse_mdp(BRANCHING).unwrap();
        let sol = solve_acyclic(&m).unwrap();
        let q = inst(&m, "a", rat(3, 4) + rat(1, 100), rat(1, 2));
        let mut pol = extract_reach_policy(&m, ValueSource::stabilized(sol.rval.clone()), &q).unwrap();
        let id = |n: &str| m.id(n).unwrap();
        pol.reset(id("a"), &q.budget, 0);
        pol.observe(&Move { from: id("a"), to: id("c"), winner: None });
        assert_eq!(pol.prob(), &rat(1, 2));
        let d = pol.decide(id("c"), &q.budget);
        assert_eq!(d, Decision { bid: rat(3, 8), successor: id("d") });
        pol.observe(&Move { from: id("c"), to: id("d"), winner: Some(Objective::Reach) });
        let d = pol.decide(id("d"), &(&q.budget - rat(3, 8)));
        assert_eq!(d, Decision { bid: rat(1, 4), successor: id("e") });
    }

    #[test]
    fn random_split_is_exact() {
        let m = parse_mdp(BRANCHING).unwrap();
        let sol = solve_acyclic(&m).unwrap();
        let id = |n: &str| m.id(n).unwrap();
        for p in [rat(1, 8), rat(1, 3), rat(1, 2), rat(5, 7)] {
            let q = inst(&m, "a", rat(1, 1) - rat(1, 64), p.clone());
            let base = extract_reach_policy(&m, ValueSource::stabilized(sol.rval.clone()), &q).unwrap();
            let mut total = Rational::zero();
            for (w, d) in [("b", rat(1, 2)), ("c", rat(1, 2))] {
                let mut pol = base.clone();
                pol.observe(&Move { from: id("a"), to: id(w), winner: None });
                total += d * pol.prob();
            }
            assert_eq!(total, p);
        }
    }

    #[test]
    fn value_guided_matches_extracted_safety() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        let trace = iterate(&m, Objective::Safe, 6, None).unwrap();
        let src = ValueSource::finite(trace).unwrap();
        let b = rat(2, 5);
        let mut guided = adversary(AdversaryKind::ValueGuided, Objective::Safe, &m, Some(src.clone()), 0).unwrap();
        guided.reset(m.id("a").unwrap(), &(rat(1, 1) - &b), 0);
        let probe = SafetyPolicy { mdp: Arc::new(m.clone()), values: src.clone(), requested: None, prob: rat(1, 1), horizon: 6 };
        let p = probe.guided_prob(m.id("a").unwrap(), &b);
        let q = inst(&m, "a", b, p);
        let mut exact = extract_safety_policy(&m, src, &q).unwrap();
        let mut r = adversary(AdversaryKind::UniformRandomBid, Objective::Reach, &m, None, 9).unwrap();
        for k in 0..50 {
            let a = play(&m, r.as_mut(), guided.as_mut(), &q, &RandomSource::Seeded(4), k, 12);
            let e = play(&m, r.as_mut(), &mut exact, &q, &RandomSource::Seeded(4), k, 12);
            assert_eq!(a, e);
        }
    }

    #[test]
    fn safety_on_cyclic_limit_unsupported() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        let trace = iterate(&m, Objective::Safe, 3, None).unwrap();
        let q = inst(&m, "a", rat(1, 5), rat(9, 10));
        let lim = ValueSource::stabilized(trace.last().unwrap().clone());
        assert!(matches!(extract_safety_policy(&m, lim, &q), Err(PolicyError::Unsupported)));
    }

    fn to_f(r: &Rational) -> f64 {
        crate::rational::to_f64(r)
    }
}
