//! Staircase subsets of the unit square `[0,1]^2`.
//!
//! Points are `(B, p)`: a budget share and a probability. The order used
//! throughout is `(B, p) ≺ (B', p')` iff `B >= B'` and `p <= p'`.
//! A [`Direction::Down`] set is ≺-downward closed (more budget or less
//! probability stays inside); it is stored by its maximal points. An
//! [`Direction::Up`] set is ≺-upward closed and stored by its minimal
//! points. In both cases the corners are sorted by strictly increasing
//! budget and strictly increasing probability.

use std::cmp::Ordering;
use std::fmt;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{format_rational, in_unit_interval, rat, Rational};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    #[serde(rename = "B", with = "crate::rational::text")]
    pub budget: Rational,
    #[serde(rename = "p", with = "crate::rational::text")]
    pub prob: Rational,
}

impl Point {
    pub fn new(budget: Rational, prob: Rational) -> Self {
        Point { budget, prob }
    }

    pub fn in_square(&self) -> bool {
        in_unit_interval(&self.budget) && in_unit_interval(&self.prob)
    }

    /// `self ≺ other`.
    pub fn precedes(&self, other: &Point) -> bool {
        self.budget >= other.budget && self.prob <= other.prob
    }
}

pub fn pt(b: (i64, i64), p: (i64, i64)) -> Point {
    Point::new(rat(b.0, b.1), rat(p.0, p.1))
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", format_rational(&self.budget), format_rational(&self.prob))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Down,
    Up,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValueSetError {
    #[error("point {0} lies outside the unit square")]
    OutOfRange(Point),
    #[error("sets have different closure directions")]
    DirectionMismatch,
    #[error("grid resolution must be positive")]
    BadResolution,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StaircaseSet {
    direction: Direction,
    corners: Vec<Point>,
}

impl StaircaseSet {
    /// Canonical set generated by `points`; dominated points are dropped.
    pub fn from_corners<I: IntoIterator<Item = Point>>(points: I, direction: Direction) -> Result<Self, ValueSetError> {
        let points: Vec<Point> = points.into_iter().collect();
        if let Some(bad) = points.iter().find(|c| !c.in_square()) {
            return Err(ValueSetError::OutOfRange(bad.clone()));
        }
        Ok(Self::canonical(points, direction))
    }

    pub(crate) fn canonical(mut points: Vec<Point>, direction: Direction) -> Self {
        let mut corners: Vec<Point> = Vec::with_capacity(points.len());
        match direction {
            Direction::Down => {
                points.sort_by(|a, b| a.budget.cmp(&b.budget).then_with(|| b.prob.cmp(&a.prob)));
                for c in points {
                    if corners.last().is_none_or(|l| c.prob > l.prob) {
                        corners.push(c);
                    }
                }
            }
            Direction::Up => {
                points.sort_by(|a, b| b.budget.cmp(&a.budget).then_with(|| a.prob.cmp(&b.prob)));
                for c in points {
                    if corners.last().is_none_or(|l| c.prob < l.prob) {
                        corners.push(c);
                    }
                }
                corners.reverse();
            }
        }
        StaircaseSet { direction, corners }
    }

    pub fn empty(direction: Direction) -> Self {
        StaircaseSet { direction, corners: Vec::new() }
    }

    pub fn full(direction: Direction) -> Self {
        let c = match direction {
            Direction::Down => Point::new(Rational::zero(), Rational::one()),
            Direction::Up => Point::new(Rational::one(), Rational::zero()),
        };
        StaircaseSet { direction, corners: vec![c] }
    }

    /// Corners `(0,0)` and `(1,1)`: for `Down` the bottom edge plus the
    /// right edge, for `Up` the left edge plus the top edge.
    pub fn border(direction: Direction) -> Self {
        StaircaseSet {
            direction,
            corners: vec![Point::new(Rational::zero(), Rational::zero()), Point::new(Rational::one(), Rational::one())],
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn corners(&self) -> &[Point] {
        &self.corners
    }

    pub fn corner_count(&self) -> usize {
        self.corners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_empty()
    }

    /// Corners other than the square's own corners `(0,0)` and `(1,1)`;
    /// these are the steps visible inside the square.
    pub fn inner_corners(&self) -> Vec<Point> {
        self.corners
            .iter()
            .filter(|c| !(c.budget.is_zero() && c.prob.is_zero()) && !(c.budget.is_one() && c.prob.is_one()))
            .cloned()
            .collect()
    }

    pub fn contains(&self, q: &Point) -> bool {
        match self.direction {
            Direction::Down => self.prob_at(&q.budget).is_some_and(|p| *p >= q.prob),
            Direction::Up => self.prob_at(&q.budget).is_some_and(|p| *p <= q.prob),
        }
    }

    /// Boundary probability at budget `b`: the largest `p` with `(b,p)` in
    /// a `Down` set, the smallest for an `Up` set. `None` when the column
    /// at `b` is empty.
    pub fn prob_at(&self, b: &Rational) -> Option<&Rational> {
        match self.direction {
            Direction::Down => {
                let i = self.corners.partition_point(|c| c.budget <= *b);
                (i > 0).then(|| &self.corners[i - 1].prob)
            }
            Direction::Up => {
                let i = self.corners.partition_point(|c| c.budget < *b);
                self.corners.get(i).map(|c| &c.prob)
            }
        }
    }

    /// Boundary budget at probability `p`: the least `B` with `(B,p)` in a
    /// `Down` set, the greatest for an `Up` set.
    pub fn budget_at(&self, p: &Rational) -> Option<&Rational> {
        match self.direction {
            Direction::Down => {
                let i = self.corners.partition_point(|c| c.prob < *p);
                self.corners.get(i).map(|c| &c.budget)
            }
            Direction::Up => {
                let i = self.corners.partition_point(|c| c.prob <= *p);
                (i > 0).then(|| &self.corners[i - 1].budget)
            }
        }
    }

    /// A corner whose quadrant contains `q`, if any.
    pub fn witness_corner(&self, q: &Point) -> Option<&Point> {
        match self.direction {
            Direction::Down => {
                let i = self.corners.partition_point(|c| c.budget <= q.budget);
                (i > 0 && self.corners[i - 1].prob >= q.prob).then(|| &self.corners[i - 1])
            }
            Direction::Up => {
                let i = self.corners.partition_point(|c| c.budget < q.budget);
                self.corners.get(i).filter(|c| c.prob <= q.prob)
            }
        }
    }

    /// L∞ distance from `q` to the set; `None` for the empty set.
    pub fn distance_to_point(&self, q: &Point) -> Option<Rational> {
        let zero = Rational::zero();
        self.corners
            .iter()
            .map(|c| {
                let (db, dp) = match self.direction {
                    Direction::Down => (&c.budget - &q.budget, &q.prob - &c.prob),
                    Direction::Up => (&q.budget - &c.budget, &c.prob - &q.prob),
                };
                db.max(dp).max(zero.clone())
            })
            .min()
    }

    /// Same-direction union.
    pub fn union(&self, other: &StaircaseSet) -> Result<StaircaseSet, ValueSetError> {
        if self.direction != other.direction {
            return Err(ValueSetError::DirectionMismatch);
        }
        let pts = self.corners.iter().chain(other.corners.iter()).cloned().collect();
        Ok(Self::canonical(pts, self.direction))
    }

    pub fn is_subset_of(&self, other: &StaircaseSet) -> bool {
        self.direction == other.direction && self.corners.iter().all(|c| other.contains(c))
    }

    /// Snaps every corner outward to the grid `step·ℤ`, giving the least
    /// grid-aligned staircase containing the set.
    pub fn snap_outward(&self, step: &Rational) -> StaircaseSet {
        use crate::rational::{ceil_to, floor_to};
        let one = Rational::one();
        let pts = self
            .corners
            .iter()
            .map(|c| match self.direction {
                Direction::Down => Point::new(floor_to(&c.budget, step), ceil_to(&c.prob, step).min(one.clone())),
                Direction::Up => Point::new(ceil_to(&c.budget, step).min(one.clone()), floor_to(&c.prob, step)),
            })
            .collect();
        Self::canonical(pts, self.direction)
    }
}

impl StaircaseSet {
    /// Snaps every corner inward to the grid `step·ℤ`; the result is a
    /// subset of the set.
    pub fn snap_inward(&self, step: &Rational) -> StaircaseSet {
        use crate::rational::{ceil_to, floor_to};
        let one = Rational::one();
        let pts = self
            .corners
            .iter()
            .map(|c| match self.direction {
                Direction::Down => Point::new(ceil_to(&c.budget, step).min(one.clone()), floor_to(&c.prob, step)),
                Direction::Up => Point::new(floor_to(&c.budget, step), ceil_to(&c.prob, step).min(one.clone())),
            })
            .collect();
        Self::canonical(pts, self.direction)
    }

    /// Largest number of bits in any corner denominator.
    pub fn max_denominator_bits(&self) -> u64 {
        self.corners.iter().map(|c| c.budget.denom().bits().max(c.prob.denom().bits())).max().unwrap_or(0)
    }
}

impl fmt::Display for StaircaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::Down => "down",
            Direction::Up => "up",
        };
        write!(f, "{dir}{{")?;
        for (i, c) in self.corners.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("}")
    }
}

/// Hausdorff distance under L∞. `Ok(None)` when exactly one set is empty.
///
/// For a `Down` target set the distance to it grows as a point moves up
/// the ≺ order, so the supremum over the other set is reached at one of
/// its corners (and symmetrically for `Up`).
pub fn hausdorff(a: &StaircaseSet, b: &StaircaseSet) -> Result<Option<Rational>, ValueSetError> {
    if a.direction != b.direction {
        return Err(ValueSetError::DirectionMismatch);
    }
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(Some(Rational::zero())),
        (true, false) | (false, true) => return Ok(None),
        _ => {}
    }
    let one_side = |x: &StaircaseSet, y: &StaircaseSet| {
        x.corners.iter().map(|c| y.distance_to_point(c).unwrap()).max().unwrap_or_else(Rational::zero)
    };
    Ok(Some(one_side(a, b).max(one_side(b, a))))
}

/// Closure of the complement of an `Up` set, joined with `base` (a `Down`
/// set). Turns an over-approximated safety set into an under-approximated
/// reachability set.
pub fn complement_to_reach(up: &StaircaseSet, base: &StaircaseSet) -> Result<StaircaseSet, ValueSetError> {
    if up.direction != Direction::Up || base.direction != Direction::Down {
        return Err(ValueSetError::DirectionMismatch);
    }
    let mut pts = base.corners.clone();
    let mut lo = Rational::zero();
    for c in &up.corners {
        // Columns with budget in (lo, c.B] miss exactly the probabilities
        // below c.p.
        if !c.prob.is_zero() {
            pts.push(Point::new(lo.clone(), c.prob.clone()));
        }
        lo = c.budget.clone();
    }
    match up.corners.last() {
        None => pts.push(Point::new(Rational::zero(), Rational::one())),
        Some(last) if !last.budget.is_one() => pts.push(Point::new(last.budget.clone(), Rational::one())),
        _ => {}
    }
    Ok(StaircaseSet::canonical(pts, Direction::Down))
}

/// Closure of the complement of a `Down` set, joined with `base` (an `Up`
/// set).
pub fn complement_to_safe(down: &StaircaseSet, base: &StaircaseSet) -> Result<StaircaseSet, ValueSetError> {
    if down.direction != Direction::Down || base.direction != Direction::Up {
        return Err(ValueSetError::DirectionMismatch);
    }
    let mut pts = base.corners.clone();
    for (i, c) in down.corners.iter().enumerate() {
        // Columns with budget in [c.B, next.B) miss the probabilities above c.p.
        if !c.prob.is_one() {
            let hi = down.corners.get(i + 1).map(|d| d.budget.clone()).unwrap_or_else(Rational::one);
            pts.push(Point::new(hi, c.prob.clone()));
        }
    }
    match down.corners.first() {
        None => pts.push(Point::new(Rational::one(), Rational::zero())),
        Some(first) if !first.budget.is_zero() => pts.push(Point::new(first.budget.clone(), Rational::zero())),
        _ => {}
    }
    Ok(StaircaseSet::canonical(pts, Direction::Up))
}

/// Whether `r ∪ s` covers the square. The grid test samples every point
/// `(i/resolution, j/resolution)`; the exact test compares the two
/// boundaries on every breakpoint and every gap between breakpoints.
pub fn union_cover_check(r: &StaircaseSet, s: &StaircaseSet, resolution: u32) -> Result<bool, ValueSetError> {
    if r.direction != Direction::Down || s.direction != Direction::Up {
        return Err(ValueSetError::DirectionMismatch);
    }
    if resolution == 0 {
        return Err(ValueSetError::BadResolution);
    }
    let n = resolution as i64;
    for i in 0..=n {
        for j in 0..=n {
            let q = Point::new(rat(i, n), rat(j, n));
            if !r.contains(&q) && !s.contains(&q) {
                return Ok(false);
            }
        }
    }
    let mut xs: Vec<Rational> = vec![Rational::zero(), Rational::one()];
    xs.extend(r.corners.iter().map(|c| c.budget.clone()));
    xs.extend(s.corners.iter().map(|c| c.budget.clone()));
    xs.sort();
    xs.dedup();
    let mut probes = xs.clone();
    for w in xs.windows(2) {
        probes.push((&w[0] + &w[1]) / rat(2, 1));
    }
    let covered = |b: &Rational| {
        let top = r.prob_at(b);
        let bottom = s.prob_at(b);
        match (top, bottom) {
            (Some(t), Some(u)) => t >= u,
            (Some(t), None) => t.is_one(),
            (None, Some(u)) => u.is_zero(),
            (None, None) => false,
        }
    };
    Ok(probes.iter().all(covered))
}

/// Orders corners by budget; used for deterministic output.
pub fn cmp_points(a: &Point, b: &Point) -> Ordering {
    a.budget.cmp(&b.budget).then_with(|| a.prob.cmp(&b.prob))
}
