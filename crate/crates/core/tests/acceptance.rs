//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion (written past the test harness's capture) and then asserts.

mod common;

use std::io::Write as _;
use std::time::Instant;

use bidgame::acyclic::{decide_acyclic, decide_with, solve_acyclic};
use bidgame::bellman::{iterate, step_rounded, Objective, Rounding, ValueMap};
use bidgame::exact::{alg_exact, ExactOptions, Outcome};
use bidgame::mdp::{classify, parse_mdp, topological_order, Mdp, ProblemInstance, StructureClass, Transitions, VertexId};
use bidgame::policy::{adversary, extract_reach_policy, monte_carlo, AdversaryKind, ValueSource};
use bidgame::rational::{format_rational, rat, Rational};
use bidgame::ssg::{brute_force_ssg_value, is_alternating, parse_ssg, ssg_value_via_bidding, BracketOptions};
use bidgame::staircase::{hausdorff, union_cover_check, Point};
use bidgame::tree::{TreeCertifier, DEFAULT_CHOICE_CAP};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn report(n: u32, title: &str, result: Result<String, String>) {
    let line = match &result {
        Ok(detail) => format!("PASS criterion {n}: {title} ({detail})\n"),
        Err(why) => format!("FAIL criterion {n}: {title} ({why})\n"),
    };
    // Straight to the process stdout so the line shows without --nocapture.
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    if let Err(why) = result {
        panic!("criterion {n} failed: {why}");
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pts(list: &[(i64, i64, i64, i64)]) -> Vec<Point> {
    list.iter().map(|&(a, b, c, d)| Point::new(rat(a, b), rat(c, d))).collect()
}

fn show(ps: &[Point]) -> String {
    let items: Vec<String> = ps.iter().map(|p| format!("({},{})", format_rational(&p.budget), format_rational(&p.prob))).collect();
    format!("[{}]", items.join(" "))
}

/// 50 random arenas with at most 6 vertices and denominators at most 8.
fn corpus() -> Vec<Mdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..50).map(|_| {
        let n = rng.gen_range(3..=6);
        common::random_mdp(&mut rng, n, 8)
    })
    .collect()
}

#[test]
fn criterion_1_two_loop_panels() {
    let start = Instant::now();
    let result = (|| {
        let m = parse_mdp(common::TWO_LOOP).unwrap();
        let trace = iterate(&m, Objective::Reach, 16, None).map_err(|e| e.to_string())?;
        let (a, b) = (m.id("a").unwrap(), m.id("b").unwrap());
        let half = (1, 2, 1, 2);
        let three_q = (3, 4, 3, 4);
        let expected_a: [Vec<Point>; 6] = [vec![], vec![], pts(&[half]), pts(&[half]), pts(&[half, three_q]), pts(&[half, three_q])];
        let b1 = (0, 1, 1, 2);
        let b2 = (1, 2, 3, 4);
        let b3 = (3, 4, 7, 8);
        let expected_b: [Vec<Point>; 6] = [vec![], pts(&[b1]), pts(&[b1]), pts(&[b1, b2]), pts(&[b1, b2]), pts(&[b1, b2, b3])];
        for i in 0..=5 {
            let got = trace[i].get(a).inner_corners();
            check(got == expected_a[i], || format!("rval^{i}(a) = {}", show(&got)))?;
            let got = trace[i].get(b).inner_corners();
            check(got == expected_b[i], || format!("rval^{i}(b) = {}", show(&got)))?;
        }
        let want_a: Vec<Point> = (1..=8).map(|n| Point::new(Rational::one() - rat(1, 1 << n), Rational::one() - rat(1, 1 << n))).collect();
        let got = trace[16].get(a).inner_corners();
        check(got == want_a, || format!("rval^16(a) = {}", show(&got)))?;
        let mut want_b = pts(&[b1]);
        want_b.extend((1..=7).map(|n| Point::new(Rational::one() - rat(1, 1 << n), Rational::one() - rat(1, 1 << (n + 1)))));
        let got = trace[16].get(b).inner_corners();
        check(got == want_b, || format!("rval^16(b) = {}", show(&got)))?;
        let elapsed = start.elapsed().as_secs_f64();
        check(elapsed < 1.0, || format!("took {elapsed:.2}s"))?;
        Ok(format!("i=0..5 and 16 exact; rval^16(a) has 8 corners; {elapsed:.3}s"))
    })();
    report(1, "two-loop arena value iteration matches the reference panels", result);
}

#[test]
fn criterion_2_branching_threshold() {
    let start = Instant::now();
    let result = (|| {
        let m = parse_mdp(common::BRANCHING).unwrap();
        let sol = solve_acyclic(&m).map_err(|e| e.to_string())?;
        let a = m.id("a").unwrap();
        let corner = Point::new(rat(3, 4), rat(1, 2));
        check(sol.rval.get(a).corners().contains(&corner), || format!("corners {}", show(sol.rval.get(a).corners())))?;
        let eps = rat(1, 1000);
        let up = ProblemInstance::new(&m, a, rat(3, 4) + &eps, rat(1, 2) - &eps).unwrap();
        let down = ProblemInstance::new(&m, a, rat(3, 4) - &eps, rat(1, 2) + &eps).unwrap();
        let d_up = decide_with(&sol, &up);
        let d_down = decide_with(&sol, &down);
        check(d_up.outcome == Outcome::ReachWins, || format!("above: {:?}", d_up.outcome))?;
        check(d_down.outcome == Outcome::SafetyWins, || format!("below: {:?}", d_down.outcome))?;
        let elapsed = start.elapsed().as_secs_f64();
        check(elapsed < 1.0, || format!("took {elapsed:.2}s"))?;
        Ok(format!("corner (3/4,1/2) present; both sides decided; {elapsed:.3}s"))
    })();
    report(2, "branching arena threshold at (3/4, 1/2)", result);
}

#[test]
fn criterion_3_exact_algorithm_on_cycle() {
    let result = (|| {
        let m = parse_mdp(common::TWO_LOOP).unwrap();
        let a = m.id("a").unwrap();
        let opts = ExactOptions::default();
        let start = Instant::now();
        let safe = alg_exact(&m, &ProblemInstance::new(&m, a, rat(2, 5), rat(3, 5)).unwrap(), &opts);
        let elapsed = start.elapsed().as_secs_f64();
        check(safe.outcome == Outcome::SafetyWins, || format!("(2/5,3/5): {:?} {:?}", safe.outcome, safe.diagnostic))?;
        check(safe.iterations <= 12271, || format!("safety decided at i={}", safe.iterations))?;
        check(elapsed <= 60.0, || format!("safety case took {elapsed:.1}s"))?;
        let reach = alg_exact(&m, &ProblemInstance::new(&m, a, rat(3, 5), rat(2, 5)).unwrap(), &opts);
        check(reach.outcome == Outcome::ReachWins, || format!("(3/5,2/5): {:?}", reach.outcome))?;
        check(reach.iterations <= 4, || format!("reach decided at i={}", reach.iterations))?;
        Ok(format!("SafetyWins at i={} in {elapsed:.1}s; ReachWins at i={}", safe.iterations, reach.iterations))
    })();
    report(3, "exact algorithm decides both sides of the two-loop arena", result);
}

fn abstract_trace(m: &Mdp, alpha: &Rational, n: usize) -> Vec<ValueMap> {
    let rounding = Rounding::Outward(alpha.clone());
    let mut out = vec![bidgame::bellman::initial_value(m, Objective::Safe)];
    for _ in 0..n {
        let next = step_rounded(m, out.last().unwrap(), &rounding);
        out.push(next);
    }
    out
}

#[test]
fn criterion_4_abstraction_bounds() {
    let start = Instant::now();
    let result = (|| {
        let alphas = [rat(1, 4), rat(1, 8), rat(1, 16)];
        let checks: Result<Vec<usize>, String> = corpus()
            .par_iter()
            .enumerate()
            .map(|(k, m)| {
                let exact = iterate(m, Objective::Safe, 10, None).map_err(|e| e.to_string())?;
                let mut count = 0;
                for alpha in &alphas {
                    let abs = abstract_trace(m, alpha, 10);
                    for i in 0..=10 {
                        for v in m.ids() {
                            let (s, e) = (abs[i].get(v), exact[i].get(v));
                            check(e.is_subset_of(s), || format!("arena {k}, v{}, i={i}, α={}: not a superset", v.index(), format_rational(alpha)))?;
                            let h = hausdorff(s, e).map_err(|e| e.to_string())?.unwrap();
                            let bound = alpha * rat(i as i64 + 1, 1);
                            check(h <= bound, || format!("arena {k}, i={i}: hausdorff {} > {}", format_rational(&h), format_rational(&bound)))?;
                            count += 1;
                        }
                    }
                }
                Ok(count)
            })
            .collect();
        let total: usize = checks?.iter().sum();
        Ok(format!("{total} (arena, α, i, v) checks; {:.1}s", start.elapsed().as_secs_f64()))
    })();
    report(4, "abstract safety sets over-approximate within α(i+1)", result);
}

#[test]
fn criterion_5_determinacy_and_shared_boundary() {
    let start = Instant::now();
    let result = (|| {
        let checks: Result<Vec<usize>, String> = corpus()
            .par_iter()
            .enumerate()
            .map(|(k, m)| {
                let reach = iterate(m, Objective::Reach, 10, None).map_err(|e| e.to_string())?;
                let safe = iterate(m, Objective::Safe, 10, None).map_err(|e| e.to_string())?;
                let mut count = 0;
                for i in 0..=10usize {
                    for v in m.ids() {
                        let (r, s) = (reach[i].get(v), safe[i].get(v));
                        let at = || format!("arena {k}, v{}, i={i}", v.index());
                        check(union_cover_check(r, s, 128).map_err(|e| e.to_string())?, || format!("{}: union does not cover", at()))?;
                        check(r.corners().iter().all(|c| s.contains(c)), || format!("{}: reach corner outside safety set", at()))?;
                        check(s.corners().iter().all(|c| r.contains(c)), || format!("{}: safety corner outside reach set", at()))?;
                        if i >= 1 {
                            let bound = 3 * m.len().pow(i as u32);
                            check(r.corner_count() <= bound, || format!("{}: {} corners", at(), r.corner_count()))?;
                        }
                        count += 1;
                    }
                }
                Ok(count)
            })
            .collect();
        let total: usize = checks?.iter().sum();
        Ok(format!("{total} (arena, i, v) checks; {:.1}s", start.elapsed().as_secs_f64()))
    })();
    report(5, "reach and safety sets cover the square and share their boundary", result);
}

/// ReachWins queries just inside the inner corners of `rval^10`.
fn reach_instances(corpus: &[Mdp], want: usize) -> Vec<(usize, ProblemInstance, Vec<ValueMap>, Vec<ValueMap>)> {
    let mut out = Vec::new();
    let nudge = rat(1, 100);
    for (k, m) in corpus.iter().enumerate() {
        let reach = iterate(m, Objective::Reach, 10, None).unwrap();
        let safe = iterate(m, Objective::Safe, 10, None).unwrap();
        let pick = m.ids().filter(|&v| !m.is_target(v) && !m.is_sink(v)).find_map(|v| {
            let corners = reach[10].get(v).inner_corners();
            let c = corners.iter().find(|c| c.prob > nudge && &c.budget + &nudge < Rational::one())?;
            Some(ProblemInstance::new(m, v, &c.budget + &nudge, &c.prob - &nudge).unwrap())
        });
        if let Some(q) = pick {
            out.push((k, q, reach, safe));
        }
        if out.len() == want {
            break;
        }
    }
    out
}

#[test]
fn criterion_6_policy_soundness() {
    let start = Instant::now();
    let result = (|| {
        let corpus = corpus();
        let instances = reach_instances(&corpus, 20);
        check(instances.len() == 20, || format!("only {} ReachWins instances in the corpus", instances.len()))?;
        let opts = ExactOptions { max_iterations: 10, ..ExactOptions::default() };
        let mut worst = f64::INFINITY;
        for (k, q, reach, safe) in &instances {
            let m = &corpus[*k];
            let d = alg_exact(m, q, &opts);
            check(d.outcome == Outcome::ReachWins, || format!("arena {k}: query not decided ReachWins"))?;
            let policy = extract_reach_policy(m, ValueSource::finite(reach.clone()).unwrap(), q).map_err(|e| e.to_string())?;
            let p = bidgame::rational::to_f64(&q.prob);
            for kind in AdversaryKind::ALL {
                let opp = adversary(kind, Objective::Safe, m, Some(ValueSource::finite(safe.clone()).unwrap()), 17).map_err(|e| e.to_string())?;
                let mc = monte_carlo(m, &policy, opp.as_ref(), q, 10_000, 17, 1_000);
                let freq = bidgame::rational::to_f64(&mc.frequency);
                let bound = p - 3.0 * mc.half_width;
                check(freq >= bound, || format!("arena {k} vs {}: frequency {freq:.4} < {bound:.4}", kind.name()))?;
                worst = worst.min(freq - bound);
            }
        }
        Ok(format!("20 instances x 4 adversaries x 10^4 plays; least slack {worst:.4}; {:.1}s", start.elapsed().as_secs_f64()))
    })();
    report(6, "extracted policies reach the target with the promised frequency", result);
}

#[test]
fn criterion_7_tree_and_acyclic_agree() {
    let start = Instant::now();
    let result = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7e55);
        let trees: Vec<(Mdp, Vec<(Rational, Rational)>)> = (0..30)
            .map(|_| {
                let m = common::random_tree(&mut rng, 10);
                let sol = solve_acyclic(&m).unwrap();
                let root = m.ids().next().unwrap();
                let mut corners = sol.rval.get(root).corners().to_vec();
                corners.extend(sol.sval.get(root).corners().iter().cloned());
                let queries = common::query_points(&mut rng, &corners, 100);
                (m, queries)
            })
            .collect();
        let counts: Result<Vec<usize>, String> = trees
            .par_iter()
            .enumerate()
            .map(|(k, (m, queries))| {
                check(classify(m) == StructureClass::Tree, || format!("arena {k} is not a tree"))?;
                let sol = solve_acyclic(m).unwrap();
                let root = m.ids().next().unwrap();
                let cert = TreeCertifier::new(m, root, Objective::Reach, DEFAULT_CHOICE_CAP).map_err(|e| e.to_string())?;
                let mut boundary = 0;
                for (b, p) in queries {
                    let q = ProblemInstance::new(m, root, b.clone(), p.clone()).unwrap();
                    let d = decide_with(&sol, &q);
                    let feasible = cert.query(b, p).map_err(|e| e.to_string())?.is_some();
                    check(feasible == (d.outcome == Outcome::ReachWins), || {
                        format!("tree {k} at ({}, {}): system {feasible}, acyclic {:?}", format_rational(b), format_rational(p), d.outcome)
                    })?;
                    boundary += usize::from(d.boundary_case);
                }
                Ok(boundary)
            })
            .collect();
        let boundary: usize = counts?.iter().sum();
        Ok(format!("30 trees x 100 queries, {boundary} on the shared boundary; {:.1}s", start.elapsed().as_secs_f64()))
    })();
    report(7, "tree linear systems agree with the acyclic solver", result);
}

const SSGS: [(&str, (i64, i64)); 5] = [
    // No path to the target.
    ("p1 a -> r\nrandom r -> b:1\np0 b -> s\nrandom s -> l:1\np0 t -> t\np0 l -> l\ntarget t\ninit a\n", (0, 1)),
    // A fair coin.
    ("p1 a -> r\nrandom r -> b:1\np0 b -> s\nrandom s -> t:1/2 l:1/2\np0 t -> t\np0 l -> l\ntarget t\ninit a\n", (1, 2)),
    // A 2/3 coin.
    ("p1 a -> r\nrandom r -> b:1\np0 b -> s\nrandom s -> t:2/3 l:1/3\np0 t -> t\np0 l -> l\ntarget t\ninit a\n", (2, 3)),
    // p0 picks the better of a 3/4 and a 1/2 coin; p1 avoids the sure win.
    (
        "p1 a -> r1 r2\nrandom r1 -> b:1\nrandom r2 -> c:1\np0 b -> s1 s2\np0 c -> s3\n\
         random s1 -> t:3/4 l:1/4\nrandom s2 -> t:1/2 l:1/2\nrandom s3 -> t:1\np0 t -> t\np0 l -> l\ntarget t\ninit a\n",
        (3, 4),
    ),
    // p0 can always reach the target.
    ("p1 a -> r\nrandom r -> b:1\np0 b -> s u\nrandom s -> t:1\nrandom u -> l:1\np0 t -> t\np0 l -> l\ntarget t\ninit a\n", (1, 1)),
];

#[test]
fn criterion_8_ssg_values_through_bidding() {
    let start = Instant::now();
    let result = (|| {
        let mut brackets = Vec::new();
        for (text, (n, d)) in SSGS {
            let value = rat(n, d);
            let g = parse_ssg(text).map_err(|e| e.to_string())?;
            check(is_alternating(&g), || format!("game with value {n}/{d} does not alternate"))?;
            let oracle = brute_force_ssg_value(&g, 20);
            check(oracle.lower == value && oracle.upper == value, || format!("oracle [{}, {}] for {n}/{d}", oracle.lower, oracle.upper))?;
            let b = ssg_value_via_bidding(&g, &rat(1, 16), &BracketOptions::default()).map_err(|e| e.to_string())?;
            check(b.width() <= rat(1, 16), || format!("bracket width {} for {n}/{d}", format_rational(&b.width())))?;
            check(b.contains(&value), || format!("[{}, {}] misses {n}/{d}", format_rational(&b.lo), format_rational(&b.hi)))?;
            brackets.push(format!("[{},{}]", format_rational(&b.lo), format_rational(&b.hi)));
        }
        let elapsed = start.elapsed().as_secs_f64();
        check(elapsed <= 600.0, || format!("took {elapsed:.0}s"))?;
        Ok(format!("brackets {}; {elapsed:.2}s", brackets.join(" ")))
    })();
    report(8, "stochastic game values recovered at budget 1/3", result);
}

/// Thresholds by the average rule: the target needs nothing, a losing sink
/// everything, and a vertex the mean of its cheapest and dearest successor.
fn average_rule(m: &Mdp) -> Vec<Rational> {
    let mut th = vec![Rational::zero(); m.len()];
    for v in topological_order(m).unwrap() {
        th[v.index()] = if m.is_target(v) {
            Rational::zero()
        } else if m.is_sink(v) {
            Rational::one()
        } else {
            let Transitions::Control(succ) = m.transitions(v) else { unreachable!("graph games have no random vertices") };
            let vals: Vec<&Rational> = succ.iter().map(|w: &VertexId| &th[w.index()]).collect();
            let lo = vals.iter().min().unwrap();
            let hi = vals.iter().max().unwrap();
            (*lo + *hi) / rat(2, 1)
        };
    }
    th
}

#[test]
fn criterion_9_graph_games_follow_the_average_rule() {
    let start = Instant::now();
    let result = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9a);
        for k in 0..10 {
            let n = rng.gen_range(4..=9);
            let m = common::random_graph_game(&mut rng, n);
            let sol = solve_acyclic(&m).map_err(|e| e.to_string())?;
            let oracle = average_rule(&m);
            for v in m.ids() {
                let set = sol.rval.get(v);
                let at = || format!("game {k}, v{}", v.index());
                check(set.corner_count() <= 2, || format!("{}: {} corners", at(), set.corner_count()))?;
                check(set.corners().iter().all(|c| c.prob.is_zero() || c.prob.is_one()), || format!("{}: corners {}", at(), show(set.corners())))?;
                let th = set.budget_at(&Rational::one()).cloned();
                check(th.as_ref() == Some(&oracle[v.index()]), || {
                    format!("{}: threshold {:?} vs average rule {}", at(), th.as_ref().map(format_rational), format_rational(&oracle[v.index()]))
                })?;
                let q = ProblemInstance::new(&m, v, oracle[v.index()].clone(), Rational::one()).unwrap();
                let d = decide_acyclic(&m, &q).map_err(|e| e.to_string())?;
                check(d.outcome != Outcome::Unknown, || format!("{}: undecided", at()))?;
            }
        }
        Ok(format!("10 games; thresholds equal the average rule; {:.2}s", start.elapsed().as_secs_f64()))
    })();
    report(9, "graph games reduce to Richman thresholds", result);
}
