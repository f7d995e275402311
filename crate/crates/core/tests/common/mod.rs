#![allow(dead_code)]

use std::collections::VecDeque;
use std::fmt::Write as _;

use bidgame::mdp::{parse_mdp, Mdp};
use bidgame::rational::{rat, Rational};
use bidgame::staircase::Point;
use rand::seq::SliceRandom;
use rand::Rng;

pub const BRANCHING: &str = "\
random a -> b:1/2 c:1/2
random b -> d:1/2 l2:1/2
control c -> l1 d
control d -> e f
random e -> l2:1/2 t:1/2
control f -> t l1
control t -> t
control l1 -> l1
control l2 -> l2
target t
init a
";

pub const TWO_LOOP: &str = "\
control a -> b d
random b -> a:1/2 c:1/2
control c -> c
control d -> d
target c
init a
";

/// `k` positive weights summing to `den`.
fn composition<R: Rng>(rng: &mut R, k: usize, den: i64) -> Vec<i64> {
    let mut cuts: Vec<i64> = (1..den).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<i64> = cuts.into_iter().take(k - 1).collect();
    cuts.sort();
    let mut out = Vec::with_capacity(k);
    let mut last = 0;
    for c in cuts.into_iter().chain([den]) {
        out.push(c - last);
        last = c;
    }
    out
}

fn random_line<R: Rng>(rng: &mut R, name: &str, succ: &[String], max_den: i64, random: bool) -> String {
    if random && succ.len() >= 2 {
        let den = rng.gen_range(succ.len() as i64..=max_den);
        let w = composition(rng, succ.len(), den);
        let items: Vec<String> = succ.iter().zip(w).map(|(s, n)| format!("{s}:{n}/{den}")).collect();
        format!("random {name} -> {}\n", items.join(" "))
    } else {
        format!("control {name} -> {}\n", succ.join(" "))
    }
}

/// A random arena with `n` vertices (at most one target, at most one losing
/// sink), possibly cyclic, probabilities with denominators at most `max_den`.
pub fn random_mdp<R: Rng>(rng: &mut R, n: usize, max_den: i64) -> Mdp {
    assert!(n >= 3);
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut text = String::new();
    // v0 is the target, v1 a losing sink.
    writeln!(text, "control v0 -> v0").unwrap();
    writeln!(text, "control v1 -> v1").unwrap();
    for i in 2..n {
        let k = rng.gen_range(1..=3.min(n));
        let mut succ: Vec<String> = names.choose_multiple(rng, k).cloned().collect();
        succ.sort();
        let random = rng.gen_bool(0.5);
        text.push_str(&random_line(rng, &names[i], &succ, max_den, random));
    }
    text.push_str("target v0\n");
    parse_mdp(&text).expect("generated arena parses")
}

/// A random tree-shaped arena with at most `max_vertices` vertices. Leaves
/// are sinks; each is a target with probability one half.
pub fn random_tree<R: Rng>(rng: &mut R, max_vertices: usize) -> Mdp {
    let total = rng.gen_range(2..=max_vertices.max(2));
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut frontier = VecDeque::from([0usize]);
    let mut count = 1;
    while let Some(u) = frontier.pop_front() {
        if count >= total {
            break;
        }
        let k = rng.gen_range(1..=3).min(total - count);
        for _ in 0..k {
            children.push(Vec::new());
            children[u].push(count);
            frontier.push_back(count);
            count += 1;
        }
    }
    let name = |i: usize| format!("v{i}");
    let mut text = String::new();
    let mut targets = Vec::new();
    for (u, ch) in children.iter().enumerate() {
        if ch.is_empty() {
            writeln!(text, "control {} -> {}", name(u), name(u)).unwrap();
            if rng.gen_bool(0.5) {
                targets.push(name(u));
            }
        } else {
            let succ: Vec<String> = ch.iter().map(|&c| name(c)).collect();
            let random = rng.gen_bool(0.5);
            text.push_str(&random_line(rng, &name(u), &succ, 8, random));
        }
    }
    if !targets.is_empty() {
        writeln!(text, "target {}", targets.join(" ")).unwrap();
    }
    parse_mdp(&text).expect("generated tree parses")
}

/// A random acyclic arena without random vertices: `n` vertices, `v0` the
/// target and `v1` the losing sink, every edge going to a lower index.
pub fn random_graph_game<R: Rng>(rng: &mut R, n: usize) -> Mdp {
    let mut text = String::from("control v0 -> v0\ncontrol v1 -> v1\n");
    for i in 2..n {
        let k = rng.gen_range(1..=3.min(i));
        let mut succ: Vec<usize> = (0..i).collect::<Vec<_>>().choose_multiple(rng, k).copied().collect();
        succ.sort();
        let s: Vec<String> = succ.iter().map(|j| format!("v{j}")).collect();
        writeln!(text, "control v{i} -> {}", s.join(" ")).unwrap();
    }
    text.push_str("target v0\n");
    parse_mdp(&text).expect("generated graph parses")
}

/// Query points: every corner of the given sets, their neighbours at
/// distance `1/1000`, a 1/8 grid, and uniformly random points on a 1/64
/// grid, `count` in total.
pub fn query_points<R: Rng>(rng: &mut R, corners: &[Point], count: usize) -> Vec<(Rational, Rational)> {
    let mut pts: Vec<(Rational, Rational)> = Vec::new();
    let nudge = rat(1, 1000);
    let clamp = |x: Rational| x.max(rat(0, 1)).min(rat(1, 1));
    for c in corners {
        pts.push((c.budget.clone(), c.prob.clone()));
        pts.push((clamp(&c.budget + &nudge), clamp(&c.prob - &nudge)));
        pts.push((clamp(&c.budget - &nudge), clamp(&c.prob + &nudge)));
    }
    for i in 0..=8 {
        for j in [0, 4, 8] {
            pts.push((rat(i, 8), rat(j, 8)));
        }
    }
    pts.truncate(count);
    while pts.len() < count {
        pts.push((rat(rng.gen_range(0..=64), 64), rat(rng.gen_range(0..=64), 64)));
    }
    pts
}
