//! Exact linear feasibility over the rationals by Fourier–Motzkin
//! elimination, with strict inequalities and Farkas certificates.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::rational::{format_rational, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    Le,
    Lt,
    Eq,
}

/// `Σ coeff·x (relation) rhs`, with sparse coefficients sorted by variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Constraint {
    pub coeffs: Vec<(usize, Rational)>,
    pub relation: Relation,
    pub rhs: Rational,
}

fn normalize_terms(terms: Vec<(usize, Rational)>) -> Vec<(usize, Rational)> {
    let mut acc: BTreeMap<usize, Rational> = BTreeMap::new();
    for (v, c) in terms {
        *acc.entry(v).or_insert_with(Rational::zero) += c;
    }
    acc.into_iter().filter(|(_, c)| !c.is_zero()).collect()
}

impl Constraint {
    pub fn new(terms: Vec<(usize, Rational)>, relation: Relation, rhs: Rational) -> Self {
        Constraint { coeffs: normalize_terms(terms), relation, rhs }
    }

    pub fn le(terms: Vec<(usize, Rational)>, rhs: Rational) -> Self {
        Self::new(terms, Relation::Le, rhs)
    }

    pub fn lt(terms: Vec<(usize, Rational)>, rhs: Rational) -> Self {
        Self::new(terms, Relation::Lt, rhs)
    }

    pub fn eq(terms: Vec<(usize, Rational)>, rhs: Rational) -> Self {
        Self::new(terms, Relation::Eq, rhs)
    }

    pub fn ge(terms: Vec<(usize, Rational)>, rhs: Rational) -> Self {
        Self::le(terms.into_iter().map(|(v, c)| (v, -c)).collect(), -rhs)
    }

    pub fn gt(terms: Vec<(usize, Rational)>, rhs: Rational) -> Self {
        Self::lt(terms.into_iter().map(|(v, c)| (v, -c)).collect(), -rhs)
    }

    pub fn lhs(&self, x: &[Rational]) -> Rational {
        self.coeffs.iter().map(|(v, c)| c * &x[*v]).sum()
    }

    pub fn holds(&self, x: &[Rational]) -> bool {
        let l = self.lhs(x);
        match self.relation {
            Relation::Le => l <= self.rhs,
            Relation::Lt => l < self.rhs,
            Relation::Eq => l == self.rhs,
        }
    }

    fn coeff(&self, v: usize) -> Option<&Rational> {
        self.coeffs.binary_search_by_key(&v, |(w, _)| *w).ok().map(|i| &self.coeffs[i].1)
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            f.write_str("0")?;
        }
        for (i, (v, c)) in self.coeffs.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{}*x{v}", format_rational(c))?;
        }
        let rel = match self.relation {
            Relation::Le => "<=",
            Relation::Lt => "<",
            Relation::Eq => "=",
        };
        write!(f, " {rel} {}", format_rational(&self.rhs))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinearSystem {
    pub num_vars: usize,
    pub constraints: Vec<Constraint>,
}

impl LinearSystem {
    pub fn new(num_vars: usize) -> Self {
        LinearSystem { num_vars, constraints: Vec::new() }
    }

    pub fn push(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    pub fn satisfied_by(&self, x: &[Rational]) -> bool {
        x.len() == self.num_vars && self.constraints.iter().all(|c| c.holds(x))
    }
}

/// Multipliers on the original constraints whose combination reads
/// `0 < c` with `c <= 0`, `0 <= c` with `c < 0`, or `0 = c` with `c != 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Farkas {
    pub multipliers: Vec<(usize, Rational)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Feasibility {
    Feasible(Vec<Rational>),
    Infeasible(Farkas),
}

/// Checks a certificate of infeasibility against the system.
pub fn verify_farkas(system: &LinearSystem, cert: &Farkas) -> bool {
    let mut terms = Vec::new();
    let mut rhs = Rational::zero();
    let mut strict = false;
    let mut weak = false;
    for (i, lambda) in &cert.multipliers {
        let Some(c) = system.constraints.get(*i) else { return false };
        match c.relation {
            Relation::Eq => {}
            Relation::Le | Relation::Lt if lambda.is_negative() => return false,
            Relation::Lt => strict |= lambda.is_positive(),
            Relation::Le => weak |= lambda.is_positive(),
        }
        terms.extend(c.coeffs.iter().map(|(v, a)| (*v, a * lambda)));
        rhs += &c.rhs * lambda;
    }
    if !normalize_terms(terms).is_empty() {
        return false;
    }
    if strict {
        !rhs.is_positive()
    } else if weak {
        rhs.is_negative()
    } else {
        !rhs.is_zero()
    }
}

#[derive(Clone, Debug)]
struct Row {
    c: Constraint,
    /// Multipliers on the original constraints (only when tracking).
    origin: Vec<(usize, Rational)>,
}

fn combine(a: &Row, la: &Rational, b: &Row, lb: &Rational, relation: Relation, track: bool) -> Row {
    let mut terms: Vec<(usize, Rational)> = a.c.coeffs.iter().map(|(v, c)| (*v, c * la)).collect();
    terms.extend(b.c.coeffs.iter().map(|(v, c)| (*v, c * lb)));
    let rhs = &a.c.rhs * la + &b.c.rhs * lb;
    let origin = if track {
        let mut o: Vec<(usize, Rational)> = a.origin.iter().map(|(i, m)| (*i, m * la)).collect();
        o.extend(b.origin.iter().map(|(i, m)| (*i, m * lb)));
        normalize_terms(o)
    } else {
        Vec::new()
    };
    Row { c: Constraint::new(terms, relation, rhs), origin }
}

/// Scales an inequality so its first coefficient has magnitude one.
fn scaled(mut row: Row) -> Row {
    if let Some((_, first)) = row.c.coeffs.first() {
        let s = first.abs();
        if !s.is_one() {
            let inv = Rational::one() / s;
            for (_, c) in row.c.coeffs.iter_mut() {
                *c *= &inv;
            }
            row.c.rhs *= &inv;
            for (_, m) in row.origin.iter_mut() {
                *m *= &inv;
            }
        }
    }
    row
}

/// Keeps the tightest inequality per coefficient vector.
fn prune(rows: Vec<Row>) -> Vec<Row> {
    let mut best: BTreeMap<Vec<(usize, Rational)>, Row> = BTreeMap::new();
    let mut eqs = Vec::new();
    for r in rows {
        if r.c.relation == Relation::Eq {
            eqs.push(r);
            continue;
        }
        let r = scaled(r);
        let key = r.c.coeffs.clone();
        match best.get(&key) {
            Some(old) if old.c.rhs < r.c.rhs || (old.c.rhs == r.c.rhs && old.c.relation >= r.c.relation) => {}
            _ => {
                best.insert(key, r);
            }
        }
    }
    eqs.extend(best.into_values());
    eqs
}

enum Step {
    Substituted { var: usize, row: Constraint },
    Bounded { var: usize, rows: Vec<Constraint> },
}

struct Elimination {
    rows: Vec<Row>,
    steps: Vec<Step>,
}

/// Eliminates `order` in turn. `Err` carries the contradictory row.
fn eliminate(system: &LinearSystem, order: &[usize], track: bool) -> Result<Elimination, Row> {
    let mut rows: Vec<Row> = system
        .constraints
        .iter()
        .enumerate()
        .map(|(i, c)| Row { c: c.clone(), origin: if track { vec![(i, Rational::one())] } else { Vec::new() } })
        .collect();
    let mut steps = Vec::new();
    rows = check_constants(rows)?;
    for &x in order {
        let eq_pos = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.c.relation == Relation::Eq && r.c.coeff(x).is_some())
            .min_by_key(|(_, r)| r.c.coeffs.len())
            .map(|(i, _)| i);
        if let Some(k) = eq_pos {
            let pivot = rows.swap_remove(k);
            let a = pivot.c.coeff(x).unwrap().clone();
            rows = rows
                .into_iter()
                .map(|r| match r.c.coeff(x) {
                    Some(b) => {
                        let lb = -(b / &a);
                        let rel = r.c.relation;
                        combine(&r, &Rational::one(), &pivot, &lb, rel, track)
                    }
                    None => r,
                })
                .collect();
            steps.push(Step::Substituted { var: x, row: pivot.c });
        } else {
            let (mut with, without): (Vec<Row>, Vec<Row>) = rows.into_iter().partition(|r| r.c.coeff(x).is_some());
            let mut next = without;
            let (pos, neg): (Vec<&Row>, Vec<&Row>) = with.iter().partition(|r| r.c.coeff(x).unwrap().is_positive());
            for p in &pos {
                let ap = p.c.coeff(x).unwrap();
                for n in &neg {
                    let an = n.c.coeff(x).unwrap();
                    let rel = if p.c.relation == Relation::Lt || n.c.relation == Relation::Lt { Relation::Lt } else { Relation::Le };
                    next.push(combine(p, &-an, n, ap, rel, track));
                }
            }
            steps.push(Step::Bounded { var: x, rows: with.drain(..).map(|r| r.c).collect() });
            rows = next;
        }
        rows = prune(check_constants(rows)?);
    }
    Ok(Elimination { rows, steps })
}

fn check_constants(rows: Vec<Row>) -> Result<Vec<Row>, Row> {
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        if r.c.coeffs.is_empty() {
            let ok = match r.c.relation {
                Relation::Le => !r.c.rhs.is_negative(),
                Relation::Lt => r.c.rhs.is_positive(),
                Relation::Eq => r.c.rhs.is_zero(),
            };
            if !ok {
                return Err(r);
            }
        } else {
            out.push(r);
        }
    }
    Ok(out)
}

fn back_substitute(num_vars: usize, steps: &[Step], mut x: Vec<Option<Rational>>) -> Vec<Rational> {
    let value = |x: &Vec<Option<Rational>>, c: &Constraint, skip: usize| -> Rational {
        c.coeffs.iter().filter(|(v, _)| *v != skip).map(|(v, a)| a * x[*v].clone().unwrap_or_else(Rational::zero)).sum()
    };
    for st in steps.iter().rev() {
        match st {
            Step::Substituted { var, row } => {
                let a = row.coeff(*var).unwrap();
                x[*var] = Some((&row.rhs - value(&x, row, *var)) / a);
            }
            Step::Bounded { var, rows } => {
                let mut lo: Option<(Rational, bool)> = None;
                let mut hi: Option<(Rational, bool)> = None;
                for r in rows {
                    let a = r.coeff(*var).unwrap();
                    let bound = (&r.rhs - value(&x, r, *var)) / a;
                    let strict = r.relation == Relation::Lt;
                    if a.is_positive() {
                        hi = Some(match hi {
                            Some((h, s)) if h < bound || (h == bound && s) => (h, s),
                            Some((h, s)) if h == bound => (h, s || strict),
                            _ => (bound, strict),
                        });
                    } else {
                        lo = Some(match lo {
                            Some((l, s)) if l > bound || (l == bound && s) => (l, s),
                            Some((l, s)) if l == bound => (l, s || strict),
                            _ => (bound, strict),
                        });
                    }
                }
                let v = match (lo, hi) {
                    (None, None) => Rational::zero(),
                    (Some((l, false)), _) => l,
                    (Some((l, true)), None) => l + Rational::one(),
                    (None, Some((h, false))) => h,
                    (None, Some((h, true))) => h - Rational::one(),
                    (Some((l, true)), Some((h, _))) => (l + h) / Rational::from_integer(2.into()),
                };
                x[*var] = Some(v);
            }
        }
    }
    (0..num_vars).map(|i| x[i].clone().unwrap_or_else(Rational::zero)).collect()
}

fn default_order(system: &LinearSystem) -> Vec<usize> {
    (0..system.num_vars).collect()
}

/// Decides feasibility. Variables are eliminated in `order` (all variables
/// in index order when `None`); the last eliminated variable is assigned
/// first and each variable takes its least admissible value.
pub fn linear_feasibility(system: &LinearSystem, order: Option<&[usize]>) -> Feasibility {
    let order = order.map(|o| o.to_vec()).unwrap_or_else(|| default_order(system));
    match eliminate(system, &order, true) {
        Err(row) => Feasibility::Infeasible(Farkas { multipliers: row.origin }),
        Ok(e) => {
            debug_assert!(e.rows.is_empty() || order.len() < system.num_vars);
            let x = back_substitute(system.num_vars, &e.steps, vec![None; system.num_vars]);
            Feasibility::Feasible(x)
        }
    }
}

/// The system projected onto the variables not in `order`; `None` when the
/// system is infeasible.
pub fn project(system: &LinearSystem, order: &[usize]) -> Option<Vec<Constraint>> {
    eliminate(system, order, false).ok().map(|e| e.rows.into_iter().map(|r| r.c).collect())
}
