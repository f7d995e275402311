//! Corner dumps and staircase panels for value-iteration traces.

use std::fmt::Write as _;
use std::io;

use bidgame::bellman::ValueMap;
use bidgame::mdp::{Mdp, VertexId};
use bidgame::rational::{format_rational, to_f64};
use bidgame::staircase::{Direction, StaircaseSet};

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Down => "down",
        Direction::Up => "up",
    }
}

/// One row per corner, header `vertex,iteration,direction,B,p`. Traces are
/// written in the order given, vertices in declaration order.
pub fn write_csv<W: io::Write>(out: W, mdp: &Mdp, traces: &[&[ValueMap]], vertices: &[VertexId]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vertex", "iteration", "direction", "B", "p"])?;
    for trace in traces {
        for (i, level) in trace.iter().enumerate() {
            for &v in vertices {
                let set = level.get(v);
                for c in set.corners() {
                    w.write_record([
                        mdp.name(v),
                        &i.to_string(),
                        direction_name(set.direction()),
                        &format_rational(&c.budget),
                        &format_rational(&c.prob),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

const PANEL: f64 = 120.0;
const GAP: f64 = 28.0;
const MARGIN: f64 = 60.0;

fn coord(b: f64, p: f64) -> String {
    format!("{:.6},{:.6}", b, 1.0 - p)
}

/// Boundary of the set as a polyline, and the closed outline of its area.
fn outline(set: &StaircaseSet) -> Option<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let cs: Vec<(f64, f64)> = set.corners().iter().map(|c| (to_f64(&c.budget), to_f64(&c.prob))).collect();
    if cs.is_empty() {
        return None;
    }
    let mut stairs = Vec::new();
    let area = match set.direction() {
        // Each maximal corner (B, p) contributes [B, 1] x [0, p].
        Direction::Down => {
            stairs.push((cs[0].0, 0.0));
            for (k, &(b, p)) in cs.iter().enumerate() {
                if k > 0 {
                    stairs.push((b, cs[k - 1].1));
                }
                stairs.push((b, p));
            }
            stairs.push((1.0, cs[cs.len() - 1].1));
            let mut a = vec![(1.0, 0.0)];
            a.extend(stairs.iter().copied());
            a
        }
        // Each minimal corner (B, p) contributes [0, B] x [p, 1].
        Direction::Up => {
            stairs.push((0.0, cs[0].1));
            for (k, &(b, p)) in cs.iter().enumerate() {
                if k > 0 {
                    stairs.push((cs[k - 1].0, p));
                }
                stairs.push((b, p));
            }
            stairs.push((cs[cs.len() - 1].0, 1.0));
            let mut a = vec![(0.0, 1.0)];
            a.extend(stairs.iter().copied());
            a
        }
    };
    Some((stairs, area))
}

fn points(ps: &[(f64, f64)]) -> String {
    ps.iter().map(|&(b, p)| coord(b, p)).collect::<Vec<_>>().join(" ")
}

/// A grid of 1x1 panels: one row per (trace, vertex), one column per
/// iteration. Budget runs left to right, probability bottom to top.
pub fn svg(mdp: &Mdp, traces: &[&[ValueMap]], vertices: &[VertexId]) -> String {
    let cols = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    let rows = traces.len() * vertices.len();
    let width = MARGIN + cols as f64 * (PANEL + GAP);
    let height = GAP + rows as f64 * (PANEL + GAP);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    for i in 0..cols {
        let x = MARGIN + i as f64 * (PANEL + GAP) + PANEL / 2.0;
        writeln!(s, r#"<text x="{x:.1}" y="14" text-anchor="middle">i={i}</text>"#).unwrap();
    }
    let mut row = 0;
    for trace in traces {
        for &v in vertices {
            let y = GAP + row as f64 * (PANEL + GAP);
            let dir = trace.first().map(|l| direction_name(l.get(v).direction())).unwrap_or("");
            writeln!(s, r#"<text x="4" y="{:.1}">{} {dir}</text>"#, y + PANEL / 2.0, mdp.name(v)).unwrap();
            for (i, level) in trace.iter().enumerate() {
                let x = MARGIN + i as f64 * (PANEL + GAP);
                writeln!(s, r#"<g transform="translate({x:.1} {y:.1}) scale({PANEL})">"#).unwrap();
                writeln!(
                    s,
                    r##"<rect x="0" y="0" width="1" height="1" fill="white" stroke="#888" stroke-width="1" vector-effect="non-scaling-stroke"/>"##
                )
                .unwrap();
                if let Some((stairs, area)) = outline(level.get(v)) {
                    writeln!(s, r##"<polygon points="{}" fill="#9ab" stroke="none"/>"##, points(&area)).unwrap();
                    writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2.5" vector-effect="non-scaling-stroke"/>"#,
                        points(&stairs)
                    )
                    .unwrap();
                }
                s.push_str("</g>\n");
            }
            row += 1;
        }
    }
    s.push_str("</svg>\n");
    s
}
