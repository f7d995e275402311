//! `bidgame`: solve, iterate, simulate and verify bidding games on arena
//! files, and bracket simple stochastic game values through the reduction.
//!
//! Exit codes: 0 decided, 2 undecided or a cap was hit, 1 bad input.

mod render;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use bidgame::acyclic::{decide_with, solve_acyclic};
use bidgame::approx::{alg_approx, ApproxOptions};
use bidgame::bellman::{iterate, Objective, ValueMap};
use bidgame::exact::{alg_exact, ExactOptions, Outcome};
use bidgame::mdp::{classify, parse_mdp, serialize_mdp, Mdp, ProblemInstance, StructureClass, VertexId};
use bidgame::policy::{
    adversary, extract_reach_policy, monte_carlo, play, AdversaryKind, Policy, RandomSource, ReachPolicy, ValueSource,
};
use bidgame::rational::{format_rational, parse_rational, Rational};
use bidgame::ssg::{brute_force_ssg_value, enforce_alternation, parse_ssg, reduce, ssg_value_via_bidding, BracketOptions, Ssg};
use bidgame::tree::{tree_certificate, TreeError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "bidgame", version, about = "Richman bidding games on Markov decision process arenas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decide whether the reachability player wins a threshold query.
    Solve(SolveArgs),
    /// Dump the value-iteration corners as CSV and optionally SVG.
    Iterate(IterateArgs),
    /// Play the extracted reachability policy and print one JSON record per play.
    Simulate(PlayArgs),
    /// Monte Carlo check of the extracted policy against the adversary suite.
    Verify(PlayArgs),
    /// Print the bidding arena of an alternating stochastic game.
    ReduceSsg(SsgArgs),
    /// Bracket the value of a stochastic game through its bidding arena.
    SsgValue(SsgValueArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Exact,
    Approx,
    Acyclic,
    Tree,
    Auto,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Adversary {
    AllIn,
    Zero,
    UniformRandomBid,
    ValueGuided,
    All,
}

fn rational_arg(s: &str) -> Result<Rational, String> {
    parse_rational(s)
}

#[derive(Args, Debug)]
struct Query {
    #[arg(long)]
    input: PathBuf,
    /// Start vertex; defaults to the file's `init`.
    #[arg(long)]
    vertex: Option<String>,
    /// Initial budget of the reachability player, `a/b` or decimal.
    #[arg(long, value_parser = rational_arg)]
    budget: Rational,
    /// Required probability of reaching the targets.
    #[arg(long, value_parser = rational_arg)]
    prob: Rational,
}

#[derive(Args, Debug)]
struct Limits {
    /// Iteration limit (exact solver, approximation rounds, or the trace
    /// length for policies on cyclic arenas).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 20)]
    max_rounds: u32,
    #[arg(long, default_value_t = 2_000_000)]
    corner_cap: usize,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    query: Query,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    method: Method,
    #[command(flatten)]
    limits: Limits,
}

#[derive(Args, Debug)]
struct IterateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Number of Bellman steps.
    #[arg(long)]
    iterations: usize,
    /// Restrict the dump to one vertex.
    #[arg(long)]
    vertex: Option<String>,
    #[arg(long, default_value_t = 2_000_000)]
    corner_cap: usize,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlayArgs {
    #[command(flatten)]
    query: Query,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    method: Method,
    #[command(flatten)]
    limits: Limits,
    #[arg(long, value_enum, default_value_t = Adversary::All)]
    adversary: Adversary,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    /// Step limit of a single play.
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
}

#[derive(Args, Debug)]
struct SsgArgs {
    #[arg(long)]
    input: PathBuf,
    /// Bring the game into alternation normal form first.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args, Debug)]
struct SsgValueArgs {
    #[command(flatten)]
    ssg: SsgArgs,
    /// Target bracket width.
    #[arg(long, value_parser = rational_arg, default_value = "1/16")]
    precision: Rational,
    #[arg(long, default_value_t = 20)]
    max_rounds: u32,
    #[arg(long, default_value_t = 2_000_000)]
    corner_cap: usize,
    /// Also run the min-max value iteration oracle for this many rounds.
    #[arg(long)]
    oracle_iterations: Option<usize>,
}

/// Failure with an exit code and a message for standard error.
struct Fail(u8, String);

impl Fail {
    fn input(msg: impl std::fmt::Display) -> Self {
        Fail(1, msg.to_string())
    }
}

type Run = Result<u8, Fail>;

fn read(path: &PathBuf) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| Fail::input(format!("{}: {e}", path.display())))
}

fn load_mdp(path: &PathBuf) -> Result<Mdp, Fail> {
    parse_mdp(&read(path)?).map_err(|e| Fail::input(format!("{}: {e}", path.display())))
}

fn vertex(mdp: &Mdp, name: Option<&str>) -> Result<VertexId, Fail> {
    match name {
        Some(n) => mdp.require(n).map_err(Fail::input),
        None => mdp.init().ok_or_else(|| Fail::input("no --vertex given and the arena has no init")),
    }
}

fn instance(mdp: &Mdp, q: &Query) -> Result<ProblemInstance, Fail> {
    let v = vertex(mdp, q.vertex.as_deref())?;
    ProblemInstance::new(mdp, v, q.budget.clone(), q.prob.clone()).map_err(Fail::input)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn exit_for(outcome: Outcome) -> u8 {
    if outcome == Outcome::Unknown {
        2
    } else {
        0
    }
}

struct Solved {
    method: &'static str,
    outcome: Outcome,
    iterations: usize,
    witness: Value,
    diagnostic: Option<String>,
}

fn resolve(method: Method, mdp: &Mdp) -> Method {
    match (method, classify(mdp)) {
        (Method::Auto, StructureClass::Tree) => Method::Tree,
        (Method::Auto, StructureClass::Acyclic) => Method::Acyclic,
        (Method::Auto, StructureClass::General) => Method::Approx,
        (m, _) => m,
    }
}

fn decide(mdp: &Mdp, q: &ProblemInstance, method: Method, limits: &Limits) -> Result<Solved, Fail> {
    Ok(match resolve(method, mdp) {
        Method::Exact => {
            let mut opts = ExactOptions { corner_cap: limits.corner_cap, ..ExactOptions::default() };
            if let Some(n) = limits.iterations {
                opts.max_iterations = n;
            }
            let d = alg_exact(mdp, q, &opts);
            let witness = json!({ "witness": d.witness, "enclosure_bits": d.enclosure_bits });
            Solved { method: "exact", outcome: d.outcome, iterations: d.iterations, witness, diagnostic: d.diagnostic }
        }
        Method::Approx => {
            let mut opts = ApproxOptions { max_rounds: limits.max_rounds, corner_cap: limits.corner_cap, ..ApproxOptions::default() };
            if let Some(n) = limits.iterations {
                opts.max_iterations = n;
            }
            let d = alg_approx(mdp, q, &opts);
            let iterations = d.rounds.iter().map(|r| r.performed).sum();
            let witness = json!({ "witness": d.witness, "rounds": d.rounds });
            Solved { method: "approx", outcome: d.outcome, iterations, witness, diagnostic: d.diagnostic }
        }
        Method::Acyclic => {
            let sol = solve_acyclic(mdp).map_err(Fail::input)?;
            let d = decide_with(&sol, q);
            let witness = json!({
                "threshold": d.threshold.as_ref().map(format_rational),
                "boundary_case": d.boundary_case,
                "reach_condition": d.reach_condition,
                "safety_condition": d.safety_condition,
            });
            Solved { method: "acyclic", outcome: d.outcome, iterations: d.iterations, witness, diagnostic: d.diagnostic }
        }
        Method::Tree => {
            let cert = |player| match tree_certificate(mdp, q, player) {
                Ok(c) => Ok(c),
                Err(e @ TreeError::ChoiceCap { .. }) => Err(Fail(2, e.to_string())),
                Err(e) => Err(Fail::input(e)),
            };
            let (outcome, witness) = if let Some(c) = cert(Objective::Reach)? {
                (Outcome::ReachWins, serde_json::to_value(c.named(mdp)).expect("serializable"))
            } else if let Some(c) = cert(Objective::Safe)? {
                (Outcome::SafetyWins, serde_json::to_value(c.named(mdp)).expect("serializable"))
            } else {
                (Outcome::Unknown, Value::Null)
            };
            let diagnostic = (outcome == Outcome::Unknown).then(|| "neither linear system is feasible".to_string());
            Solved { method: "tree", outcome, iterations: mdp.len(), witness, diagnostic }
        }
        Method::Auto => unreachable!("resolved above"),
    })
}

fn cmd_solve(args: &SolveArgs) -> Run {
    let mdp = load_mdp(&args.query.input)?;
    let q = instance(&mdp, &args.query)?;
    let start = Instant::now();
    let s = decide(&mdp, &q, args.method, &args.limits)?;
    print_json(&json!({
        "outcome": s.outcome,
        "method": s.method,
        "iterations": s.iterations,
        "witness": s.witness,
        "diagnostic": s.diagnostic,
        "wall_time": start.elapsed().as_secs_f64(),
    }));
    Ok(exit_for(s.outcome))
}

fn cmd_iterate(args: &IterateArgs) -> Run {
    let mdp = load_mdp(&args.input)?;
    let vertices: Vec<VertexId> = match &args.vertex {
        Some(n) => vec![mdp.require(n).map_err(Fail::input)?],
        None => mdp.ids().collect(),
    };
    let mut code = 0;
    let mut traces: Vec<Vec<ValueMap>> = Vec::new();
    for objective in [Objective::Reach, Objective::Safe] {
        match iterate(&mdp, objective, args.iterations, Some(args.corner_cap)) {
            Ok(t) => traces.push(t),
            Err(e) => {
                eprintln!("warning: {e}; writing the {} levels computed so far", e.partial.len());
                traces.push(e.partial);
                code = 2;
            }
        }
    }
    let refs: Vec<&[ValueMap]> = traces.iter().map(|t| t.as_slice()).collect();
    let csv_err = |e: csv::Error| Fail::input(format!("writing CSV: {e}"));
    match &args.csv {
        Some(path) => {
            let f = fs::File::create(path).map_err(|e| Fail::input(format!("{}: {e}", path.display())))?;
            render::write_csv(io::BufWriter::new(f), &mdp, &refs, &vertices).map_err(csv_err)?;
        }
        None => render::write_csv(io::stdout().lock(), &mdp, &refs, &vertices).map_err(csv_err)?,
    }
    if let Some(path) = &args.svg {
        fs::write(path, render::svg(&mdp, &refs, &vertices)).map_err(|e| Fail::input(format!("{}: {e}", path.display())))?;
    }
    Ok(code)
}

/// Values the reachability policy and a value-guided opponent consult:
/// the limit sets on acyclic arenas, a finite trace otherwise.
fn value_sources(mdp: &Mdp, limits: &Limits) -> Result<(ValueSource, ValueSource), Fail> {
    if classify(mdp) != StructureClass::General {
        let sol = solve_acyclic(mdp).map_err(Fail::input)?;
        return Ok((ValueSource::stabilized(sol.rval), ValueSource::stabilized(sol.sval)));
    }
    let n = limits.iterations.unwrap_or(256);
    let trace = |objective| {
        iterate(mdp, objective, n, Some(limits.corner_cap))
            .map_err(|e| Fail(2, e.to_string()))
            .and_then(|t| ValueSource::finite(t).map_err(Fail::input))
    };
    Ok((trace(Objective::Reach)?, trace(Objective::Safe)?))
}

fn extract(mdp: &Mdp, q: &ProblemInstance, args: &PlayArgs) -> Result<(ReachPolicy, ValueSource), Fail> {
    let s = decide(mdp, q, args.method, &args.limits)?;
    if s.outcome != Outcome::ReachWins {
        return Err(Fail::input(format!("extract requires a ReachWins decision (method {} gave {})", s.method, s.outcome.name())));
    }
    let (reach, safe) = value_sources(mdp, &args.limits)?;
    let policy = extract_reach_policy(mdp, reach, q).map_err(|e| Fail::input(format!("extract requires a ReachWins decision: {e}")))?;
    Ok((policy, safe))
}

fn adversaries(choice: Adversary) -> Vec<AdversaryKind> {
    match choice {
        Adversary::AllIn => vec![AdversaryKind::AllIn],
        Adversary::Zero => vec![AdversaryKind::Zero],
        Adversary::UniformRandomBid => vec![AdversaryKind::UniformRandomBid],
        Adversary::ValueGuided => vec![AdversaryKind::ValueGuided],
        Adversary::All => AdversaryKind::ALL.to_vec(),
    }
}

fn cmd_simulate(args: &PlayArgs) -> Run {
    let mdp = load_mdp(&args.query.input)?;
    let q = instance(&mdp, &args.query)?;
    let (policy, safe_values) = extract(&mdp, &q, args)?;
    let out = io::stdout();
    let mut out = io::BufWriter::new(out.lock());
    for kind in adversaries(args.adversary) {
        let opponent = adversary(kind, Objective::Safe, &mdp, Some(safe_values.clone()), args.seed).map_err(Fail::input)?;
        for trial in 0..args.trials {
            let mut r: Box<dyn Policy> = policy.boxed();
            let mut s = opponent.boxed();
            let rec = play(&mdp, r.as_mut(), s.as_mut(), &q, &RandomSource::Seeded(args.seed), trial, args.max_steps);
            let mut line = serde_json::to_value(&rec).expect("serializable");
            line["adversary"] = json!(kind.name());
            writeln!(out, "{line}").map_err(Fail::input)?;
        }
    }
    out.flush().map_err(Fail::input)?;
    Ok(0)
}

fn cmd_verify(args: &PlayArgs) -> Run {
    let mdp = load_mdp(&args.query.input)?;
    let q = instance(&mdp, &args.query)?;
    let (policy, safe_values) = extract(&mdp, &q, args)?;
    println!("{:<20} {:>8} {:>10} {:>10} {:>10}  result", "adversary", "trials", "frequency", "half-width", "bound");
    let mut all = true;
    for kind in adversaries(args.adversary) {
        let opponent = adversary(kind, Objective::Safe, &mdp, Some(safe_values.clone()), args.seed).map_err(Fail::input)?;
        let mc = monte_carlo(&mdp, &policy, opponent.as_ref(), &q, args.trials, args.seed, args.max_steps);
        let freq = bidgame::rational::to_f64(&mc.frequency);
        let bound = bidgame::rational::to_f64(&q.prob) - 3.0 * mc.half_width;
        let pass = freq >= bound;
        all &= pass;
        println!(
            "{:<20} {:>8} {:>10.4} {:>10.4} {:>10.4}  {}",
            kind.name(),
            mc.trials,
            freq,
            mc.half_width,
            bound,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if all { 0 } else { 2 })
}

fn load_ssg(args: &SsgArgs) -> Result<Ssg, Fail> {
    let g = parse_ssg(&read(&args.input)?).map_err(|e| Fail::input(format!("{}: {e}", args.input.display())))?;
    Ok(if args.normalize { enforce_alternation(&g) } else { g })
}

fn cmd_reduce_ssg(args: &SsgArgs) -> Run {
    let g = load_ssg(args)?;
    let arena = reduce(&g).map_err(|e| Fail::input(format!("{e} (use --normalize)")))?;
    print!("{}", serialize_mdp(&arena));
    Ok(0)
}

fn cmd_ssg_value(args: &SsgValueArgs) -> Run {
    let g = load_ssg(&args.ssg)?;
    let opts = BracketOptions {
        approx: ApproxOptions { max_rounds: args.max_rounds, corner_cap: args.corner_cap, ..ApproxOptions::default() },
        ..BracketOptions::default()
    };
    let start = Instant::now();
    let b = ssg_value_via_bidding(&g, &args.precision, &opts).map_err(|e| Fail::input(format!("{e} (use --normalize)")))?;
    let oracle = args.oracle_iterations.map(|n| brute_force_ssg_value(&g, n));
    let done = b.width() <= args.precision;
    print_json(&json!({
        "lo": format_rational(&b.lo),
        "hi": format_rational(&b.hi),
        "width": format_rational(&b.width()),
        "method": b.method,
        "queries": b.queries,
        "diagnostic": b.diagnostic,
        "oracle": oracle,
        "wall_time": start.elapsed().as_secs_f64(),
    }));
    Ok(if done { 0 } else { 2 })
}

fn configure_threads() -> Result<(), Fail> {
    let Ok(v) = std::env::var("BIDGAME_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Fail::input(format!("BIDGAME_THREADS must be a positive integer, got `{v}`")))?;
    if n == 0 {
        return Err(Fail::input("BIDGAME_THREADS must be positive"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(Fail::input)
}

fn run(cli: &Cli) -> Run {
    configure_threads()?;
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Iterate(a) => cmd_iterate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::ReduceSsg(a) => cmd_reduce_ssg(a),
        Command::SsgValue(a) => cmd_ssg_value(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
