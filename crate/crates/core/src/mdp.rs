//! Arenas: finite MDPs whose vertices are either controlled by bidding or
//! random, with a set of target vertices.

use std::collections::{HashMap, HashSet};
use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{format_rational, half, in_unit_interval, parse_rational, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub usize);

impl VertexId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexKind {
    Control,
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transitions {
    Control(Vec<VertexId>),
    Random(Vec<(VertexId, Rational)>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vertex {
    pub name: String,
    pub transitions: Transitions,
}

impl Vertex {
    pub fn kind(&self) -> VertexKind {
        match self.transitions {
            Transitions::Control(_) => VertexKind::Control,
            Transitions::Random(_) => VertexKind::Random,
        }
    }

    pub fn successors(&self) -> Vec<VertexId> {
        match &self.transitions {
            Transitions::Control(s) => s.clone(),
            Transitions::Random(d) => d.iter().map(|(w, _)| *w).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub vertex: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.vertex {
            Some(v) => write!(f, "vertex `{v}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MdpError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid arena: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("graph is cyclic")]
    Cyclic,
    #[error("{0}")]
    Instance(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mdp {
    vertices: Vec<Vertex>,
    targets: Vec<bool>,
    init: Option<VertexId>,
    index: HashMap<String, VertexId>,
}

impl Mdp {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.vertices.len()).map(VertexId)
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.vertices[v.0]
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn name(&self, v: VertexId) -> &str {
        &self.vertices[v.0].name
    }

    pub fn id(&self, name: &str) -> Option<VertexId> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<VertexId, MdpError> {
        self.id(name).ok_or_else(|| MdpError::UnknownVertex(name.to_string()))
    }

    pub fn kind(&self, v: VertexId) -> VertexKind {
        self.vertices[v.0].kind()
    }

    pub fn transitions(&self, v: VertexId) -> &Transitions {
        &self.vertices[v.0].transitions
    }

    pub fn successors(&self, v: VertexId) -> Vec<VertexId> {
        self.vertices[v.0].successors()
    }

    pub fn is_target(&self, v: VertexId) -> bool {
        self.targets[v.0]
    }

    pub fn targets(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.ids().filter(|v| self.targets[v.0])
    }

    /// Only successor is the vertex itself.
    pub fn is_sink(&self, v: VertexId) -> bool {
        self.successors(v).iter().all(|&w| w == v)
    }

    pub fn init(&self) -> Option<VertexId> {
        self.init
    }

    pub fn set_init(&mut self, v: Option<VertexId>) {
        self.init = v;
    }

    pub fn predecessors(&self) -> Vec<Vec<VertexId>> {
        let mut preds = vec![Vec::new(); self.len()];
        for v in self.ids() {
            for w in self.successors(v) {
                if w != v || !self.is_sink(v) {
                    preds[w.0].push(v);
                }
            }
        }
        preds
    }
}

/// Assembles an arena by name; `build` normalizes targets and validates.
#[derive(Default, Debug, Clone)]
pub struct MdpBuilder {
    decls: Vec<(String, RawTransitions)>,
    targets: Vec<String>,
    init: Option<String>,
}

#[derive(Debug, Clone)]
enum RawTransitions {
    Control(Vec<String>),
    Random(Vec<(String, Rational)>),
}

impl MdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn control<S: AsRef<str>>(&mut self, name: &str, succ: &[S]) -> &mut Self {
        let succ = succ.iter().map(|s| s.as_ref().to_string()).collect();
        self.decls.push((name.to_string(), RawTransitions::Control(succ)));
        self
    }

    pub fn random<S: AsRef<str>>(&mut self, name: &str, dist: &[(S, Rational)]) -> &mut Self {
        let dist = dist.iter().map(|(s, p)| (s.as_ref().to_string(), p.clone())).collect();
        self.decls.push((name.to_string(), RawTransitions::Random(dist)));
        self
    }

    pub fn target(&mut self, name: &str) -> &mut Self {
        self.targets.push(name.to_string());
        self
    }

    pub fn init(&mut self, name: &str) -> &mut Self {
        self.init = Some(name.to_string());
        self
    }

    /// Builds without normalizing targets or validating.
    pub fn build_raw(&self) -> Result<Mdp, MdpError> {
        let mut index = HashMap::new();
        for (i, (name, _)) in self.decls.iter().enumerate() {
            if index.insert(name.clone(), VertexId(i)).is_some() {
                return Err(MdpError::Invalid(vec![Violation {
                    vertex: Some(name.clone()),
                    message: "declared twice".into(),
                }]));
            }
        }
        let look = |n: &String| index.get(n).copied().ok_or_else(|| MdpError::UnknownVertex(n.clone()));
        let mut vertices = Vec::with_capacity(self.decls.len());
        for (name, raw) in &self.decls {
            let transitions = match raw {
                RawTransitions::Control(s) => Transitions::Control(s.iter().map(look).collect::<Result<_, _>>()?),
                RawTransitions::Random(d) => {
                    Transitions::Random(d.iter().map(|(n, p)| Ok((look(n)?, p.clone()))).collect::<Result<_, MdpError>>()?)
                }
            };
            vertices.push(Vertex { name: name.clone(), transitions });
        }
        let mut targets = vec![false; vertices.len()];
        for t in &self.targets {
            targets[look(t)?.0] = true;
        }
        let init = self.init.as_ref().map(look).transpose()?;
        Ok(Mdp { vertices, targets, init, index })
    }

    pub fn build(&self) -> Result<Mdp, MdpError> {
        let mdp = normalize_targets(&self.build_raw()?);
        let violations = validate(&mdp);
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(MdpError::Invalid(violations))
        }
    }
}

pub fn validate(mdp: &Mdp) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut report = |v: &Vertex, message: String| out.push(Violation { vertex: Some(v.name.clone()), message });
    for (i, v) in mdp.vertices.iter().enumerate() {
        let succ = v.successors();
        if succ.is_empty() {
            report(v, "has no successors".into());
            continue;
        }
        let distinct: HashSet<_> = succ.iter().collect();
        if distinct.len() != succ.len() {
            report(v, "lists a successor twice".into());
        }
        if let Transitions::Random(dist) = &v.transitions {
            if dist.iter().any(|(_, p)| !p.is_positive()) {
                report(v, "has a non-positive probability".into());
            }
            let total: Rational = dist.iter().map(|(_, p)| p).sum();
            if !total.is_one() {
                report(v, format!("distribution sums to {}", format_rational(&total)));
            }
        }
        if mdp.targets[i] && !succ.iter().all(|w| w.0 == i) {
            report(v, "target is not a sink".into());
        }
    }
    out
}

/// Turns every target into a sink, keeping its kind.
pub fn normalize_targets(mdp: &Mdp) -> Mdp {
    let mut out = mdp.clone();
    for (i, v) in out.vertices.iter_mut().enumerate() {
        if !mdp.targets[i] {
            continue;
        }
        v.transitions = match v.transitions {
            Transitions::Control(_) => Transitions::Control(vec![VertexId(i)]),
            Transitions::Random(_) => Transitions::Random(vec![(VertexId(i), Rational::one())]),
        };
    }
    out
}

/// Smallest non-trivial transition probability; `1/2` when there is none.
pub fn min_probability(mdp: &Mdp) -> Rational {
    mdp.vertices
        .iter()
        .filter_map(|v| match &v.transitions {
            Transitions::Random(d) => Some(d.iter().map(|(_, p)| p.clone()).filter(|p| !p.is_one())),
            Transitions::Control(_) => None,
        })
        .flatten()
        .min()
        .unwrap_or_else(half)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureClass {
    General,
    Acyclic,
    Tree,
}

/// Reverse topological order (sinks first), ignoring sink self-loops.
pub fn topological_order(mdp: &Mdp) -> Result<Vec<VertexId>, MdpError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut mark = vec![Mark::New; mdp.len()];
    let mut order = Vec::with_capacity(mdp.len());
    for root in mdp.ids() {
        if mark[root.0] != Mark::New {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root.0] = Mark::Open;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            let succ = if mdp.is_sink(v) { Vec::new() } else { mdp.successors(v) };
            if *next < succ.len() {
                let w = succ[*next];
                *next += 1;
                match mark[w.0] {
                    Mark::Open => return Err(MdpError::Cyclic),
                    Mark::New => {
                        mark[w.0] = Mark::Open;
                        stack.push((w, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v.0] = Mark::Done;
                order.push(v);
                stack.pop();
            }
        }
    }
    Ok(order)
}

pub fn classify(mdp: &Mdp) -> StructureClass {
    if topological_order(mdp).is_err() {
        return StructureClass::General;
    }
    let preds = mdp.predecessors();
    let roots = preds.iter().filter(|p| p.is_empty()).count();
    if roots == 1 && preds.iter().all(|p| p.len() <= 1) {
        StructureClass::Tree
    } else {
        StructureClass::Acyclic
    }
}

/// A query: can the reachability player, starting at `vertex` with budget
/// `budget`, reach the targets with probability at least `prob`?
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub vertex: VertexId,
    #[serde(with = "crate::rational::text")]
    pub budget: Rational,
    #[serde(with = "crate::rational::text")]
    pub prob: Rational,
}

impl ProblemInstance {
    pub fn new(mdp: &Mdp, vertex: VertexId, budget: Rational, prob: Rational) -> Result<Self, MdpError> {
        if vertex.0 >= mdp.len() {
            return Err(MdpError::Instance(format!("vertex index {} out of range", vertex.0)));
        }
        if !in_unit_interval(&budget) {
            return Err(MdpError::Instance(format!("budget {} outside [0,1]", format_rational(&budget))));
        }
        if !in_unit_interval(&prob) {
            return Err(MdpError::Instance(format!("probability {} outside [0,1]", format_rational(&prob))));
        }
        Ok(ProblemInstance { vertex, budget, prob })
    }
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> MdpError {
    MdpError::Syntax { line, column, message: message.into() }
}

/// Parses the line-oriented arena format:
///
/// ```text
/// control a -> b d
/// random b -> a:1/2 c:0.5
/// target c
/// init a
/// ```
pub fn parse_mdp(text: &str) -> Result<Mdp, MdpError> {
    parse_arena(text, &["control"]).map(|(m, _)| m)
}

/// Shared line parser: `control_words` name the non-random vertex kinds.
/// Also returns, per vertex, the index of the keyword that declared it
/// (`None` for random vertices).
pub(crate) fn parse_arena(text: &str, control_words: &[&str]) -> Result<(Mdp, Vec<Option<usize>>), MdpError> {
    let mut builder = MdpBuilder::new();
    let mut owners: HashMap<String, Option<usize>> = HashMap::new();
    let mut declared: HashMap<String, usize> = HashMap::new();
    let mut refs: Vec<(String, usize, usize)> = Vec::new();
    let mut targets_seen: HashSet<String> = HashSet::new();
    let mut init_seen = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens: Vec<(usize, &str)> = content
            .split_whitespace()
            .map(|t| (t.as_ptr() as usize - raw.as_ptr() as usize + 1, t))
            .collect();
        let Some(&(col, keyword)) = tokens.first() else { continue };
        match keyword {
            kw if kw == "random" || control_words.contains(&kw) => {
                let (ncol, name) = *tokens.get(1).ok_or_else(|| syntax(line, col, "expected a vertex name"))?;
                check_name(line, ncol, name)?;
                match tokens.get(2) {
                    Some(&(_, "->")) => {}
                    Some(&(c, _)) => return Err(syntax(line, c, "expected `->`")),
                    None => return Err(syntax(line, ncol + name.len(), "expected `->`")),
                }
                if declared.insert(name.to_string(), line).is_some() {
                    return Err(syntax(line, ncol, format!("vertex `{name}` declared twice")));
                }
                let rest = &tokens[3..];
                if rest.is_empty() {
                    return Err(syntax(line, col, format!("vertex `{name}` has no successors")));
                }
                owners.insert(name.to_string(), control_words.iter().position(|w| *w == keyword));
                if keyword != "random" {
                    let mut succ = Vec::new();
                    for &(c, s) in rest {
                        check_name(line, c, s)?;
                        refs.push((s.to_string(), line, c));
                        succ.push(s);
                    }
                    builder.control(name, &succ);
                } else {
                    let mut dist = Vec::new();
                    let mut total = Rational::zero();
                    for &(c, item) in rest {
                        let (s, p) = item.split_once(':').ok_or_else(|| syntax(line, c, "expected `successor:probability`"))?;
                        check_name(line, c, s)?;
                        let p = parse_rational(p).map_err(|m| syntax(line, c + s.len() + 1, m))?;
                        if !p.is_positive() || p > Rational::one() {
                            return Err(syntax(line, c + s.len() + 1, format!("probability {} outside (0,1]", format_rational(&p))));
                        }
                        total += &p;
                        refs.push((s.to_string(), line, c));
                        dist.push((s, p));
                    }
                    if !total.is_one() {
                        return Err(syntax(line, col, format!("distribution sums to {}", format_rational(&total))));
                    }
                    builder.random(name, &dist);
                }
            }
            "target" => {
                if tokens.len() < 2 {
                    return Err(syntax(line, col, "expected a vertex name"));
                }
                for &(c, t) in &tokens[1..] {
                    check_name(line, c, t)?;
                    if !targets_seen.insert(t.to_string()) {
                        return Err(syntax(line, c, format!("target `{t}` declared twice")));
                    }
                    refs.push((t.to_string(), line, c));
                    builder.target(t);
                }
            }
            "init" => {
                let &(c, name) = tokens.get(1).ok_or_else(|| syntax(line, col, "expected a vertex name"))?;
                if tokens.len() > 2 {
                    return Err(syntax(line, tokens[2].0, "unexpected token"));
                }
                if init_seen {
                    return Err(syntax(line, col, "init declared twice"));
                }
                init_seen = true;
                check_name(line, c, name)?;
                refs.push((name.to_string(), line, c));
                builder.init(name);
            }
            other => return Err(syntax(line, col, format!("unknown keyword `{other}`"))),
        }
    }
    for (name, line, col) in refs {
        if !declared.contains_key(&name) {
            return Err(syntax(line, col, format!("undeclared vertex `{name}`")));
        }
    }
    let mdp = builder.build()?;
    let kinds = mdp.ids().map(|v| owners[mdp.name(v)]).collect();
    Ok((mdp, kinds))
}

fn check_name(line: usize, col: usize, name: &str) -> Result<(), MdpError> {
    let ok = !name.is_empty()
        && name != "->"
        && name.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '\'' | '$' | '@'));
    if ok {
        Ok(())
    } else {
        Err(syntax(line, col, format!("invalid vertex name `{name}`")))
    }
}

pub fn serialize_mdp(mdp: &Mdp) -> String {
    let mut out = String::new();
    for v in &mdp.vertices {
        match &v.transitions {
            Transitions::Control(s) => {
                let names: Vec<&str> = s.iter().map(|w| mdp.name(*w)).collect();
                out.push_str(&format!("control {} -> {}\n", v.name, names.join(" ")));
            }
            Transitions::Random(d) => {
                let items: Vec<String> = d.iter().map(|(w, p)| format!("{}:{}", mdp.name(*w), format_rational(p))).collect();
                out.push_str(&format!("random {} -> {}\n", v.name, items.join(" ")));
            }
        }
    }
    let targets: Vec<&str> = mdp.targets().map(|t| mdp.name(t)).collect();
    if !targets.is_empty() {
        out.push_str(&format!("target {}\n", targets.join(" ")));
    }
    if let Some(i) = mdp.init {
        out.push_str(&format!("init {}\n", mdp.name(i)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    const TWO_LOOP: &str = "control a -> b d\nrandom b -> a:1/2 c:1/2\ncontrol c -> c\ncontrol d -> d\ntarget c\ninit a\n";

    #[test]
    fn parses_two_loop_arena() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        assert_eq!(m.len(), 4);
        let b = m.id("b").unwrap();
        assert_eq!(m.kind(b), VertexKind::Random);
        assert_eq!(
            m.transitions(b),
            &Transitions::Random(vec![(m.id("a").unwrap(), rat(1, 2)), (m.id("c").unwrap(), rat(1, 2))])
        );
        assert!(m.is_target(m.id("c").unwrap()));
        assert_eq!(m.init(), m.id("a"));
    }

    #[test]
    fn decimal_probabilities_and_comments() {
        let m = parse_mdp("# header\nrandom r -> t:0.25 z:.75  # trailing\ncontrol t -> t\ncontrol z -> z\ntarget t\n").unwrap();
        let r = m.id("r").unwrap();
        assert_eq!(m.transitions(r), &Transitions::Random(vec![(VertexId(1), rat(1, 4)), (VertexId(2), rat(3, 4))]));
    }

    #[test]
    fn bad_sum_reports_total() {
        let err = parse_mdp("random b -> a:1/2 c:2/5\ncontrol a -> a\ncontrol c -> c\n").unwrap_err();
        assert!(err.to_string().contains("distribution sums to 9/10"), "{err}");
        assert!(matches!(err, MdpError::Syntax { line: 1, .. }));
    }

    #[test]
    fn undeclared_successor_has_position() {
        let err = parse_mdp("control a -> b zz\ncontrol b -> b\n").unwrap_err();
        assert_eq!(err, MdpError::Syntax { line: 1, column: 16, message: "undeclared vertex `zz`".into() });
    }

    #[test]
    fn duplicates_are_rejected() {
        assert!(parse_mdp("control a -> a\ncontrol a -> a\n").is_err());
        assert!(parse_mdp("control a -> a\ntarget a\ntarget a\n").is_err());
        assert!(parse_mdp("control a -> a\ninit a\ninit a\n").is_err());
        assert!(parse_mdp("control a -> a a\n").is_err());
    }

    #[test]
    fn missing_arrow_and_unknown_keyword() {
        assert!(matches!(parse_mdp("control a b\n"), Err(MdpError::Syntax { line: 1, column: 11, .. })));
        assert!(matches!(parse_mdp("\n\nfoo a\n"), Err(MdpError::Syntax { line: 3, column: 1, .. })));
    }

    #[test]
    fn targets_become_sinks_on_load() {
        let m = parse_mdp("control a -> t\ncontrol t -> a\ntarget t\n").unwrap();
        let t = m.id("t").unwrap();
        assert_eq!(m.successors(t), vec![t]);
        assert!(m.is_sink(t));
    }

    #[test]
    fn round_trip() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        assert_eq!(parse_mdp(&serialize_mdp(&m)).unwrap(), m);
    }

    #[test]
    fn min_probability_defaults() {
        assert_eq!(min_probability(&parse_mdp(TWO_LOOP).unwrap()), rat(1, 2));
        assert_eq!(min_probability(&parse_mdp("control a -> a\n").unwrap()), rat(1, 2));
        let m = parse_mdp("random a -> b:1/3 c:2/3\nrandom b -> b:1\ncontrol c -> c\n").unwrap();
        assert_eq!(min_probability(&m), rat(1, 3));
    }

    #[test]
    fn classification() {
        assert_eq!(classify(&parse_mdp(TWO_LOOP).unwrap()), StructureClass::General);
        let chain = parse_mdp("control v0 -> v1\ncontrol v1 -> t\ncontrol t -> t\ntarget t\n").unwrap();
        assert_eq!(classify(&chain), StructureClass::Tree);
        let diamond = parse_mdp("control a -> b c\ncontrol b -> d\ncontrol c -> d\ncontrol d -> d\n").unwrap();
        assert_eq!(classify(&diamond), StructureClass::Acyclic);
        let self_loop = parse_mdp("control a -> a b\ncontrol b -> b\n").unwrap();
        assert_eq!(classify(&self_loop), StructureClass::General);
    }

    #[test]
    fn topological_order_sinks_first() {
        let chain = parse_mdp("control v0 -> v1\ncontrol v1 -> t\ncontrol t -> t\ntarget t\n").unwrap();
        let order: Vec<&str> = topological_order(&chain).unwrap().into_iter().map(|v| chain.name(v)).collect();
        assert_eq!(order, vec!["t", "v1", "v0"]);
        assert_eq!(topological_order(&parse_mdp(TWO_LOOP).unwrap()), Err(MdpError::Cyclic));
        assert_eq!(MdpError::Cyclic.to_string(), "graph is cyclic");
    }

    #[test]
    fn instance_ranges() {
        let m = parse_mdp(TWO_LOOP).unwrap();
        assert!(ProblemInstance::new(&m, VertexId(0), rat(1, 2), rat(1, 2)).is_ok());
        assert!(ProblemInstance::new(&m, VertexId(0), rat(3, 2), rat(1, 2)).is_err());
        assert!(ProblemInstance::new(&m, VertexId(9), rat(1, 2), rat(1, 2)).is_err());
    }
}
