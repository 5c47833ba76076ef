//! Command line front end for the solver. Four subcommands: `solve` an
//! instance to an exact equilibrium, `check` a result file against the
//! independent oracle, `gen` random instances, and `boost` to inspect the
//! price boost step on a chosen revealed set.
//!
//! Exit codes: 0 success, 1 I/O or validation failure, 2 semantic negative
//! (no equilibrium for `solve`, violations found for `check`).

use anyhow::{anyhow, bail, Result};
use clap::{Parser, Subcommand};
use marketeq::boost::{self, qf_system, BoostResult};
use marketeq::dm::{dm_run, DMResult};
use marketeq::driver::{self, SolveError, SolveReport};
use marketeq::lpbuild::{build_pf, decompose};
use marketeq::m2vpi::{solve_max, M2VPIOutcome};
use marketeq::market::{
    existence_check, surplus, Agent, EdgeSet, ExistenceVerdict, MarketInstance, MoneyFlow,
};
use marketeq::oracle::{check_equilibrium, EquilibriumViolation, LPRow, Sense};
use marketeq::rational::{self, format_rat, parse_rat, rat, Rat};
use marketeq::zplus::{approx, ZMatrix};
use marketeq_cli::io;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "marketeq", version, about = "Exact equilibria of linear exchange markets")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve an instance file and write an equilibrium result file.
    Solve {
        /// Instance JSON path.
        instance: PathBuf,
        /// Write the result file here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one JSON line per scaling phase here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// JSON array of positive rational strings used as starting prices;
        /// if the scaling subroutine alone finishes from them the usual
        /// pipeline is skipped.
        #[arg(long = "seed-prices")]
        seed_prices: Option<PathBuf>,
    },
    /// Check a result file against an instance with the simplex-free oracle.
    Check {
        instance: PathBuf,
        result: PathBuf,
    },
    /// Generate a random instance on standard output.
    Gen {
        /// Number of agents (and goods).
        #[arg(long)]
        n: usize,
        /// Edge probability as a rational in (0, 1].
        #[arg(long, default_value = "1/4")]
        density: String,
        /// Utilities are drawn uniformly from 1..=max-u.
        #[arg(long = "max-u", default_value_t = 10)]
        max_u: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add a random Hamiltonian cycle of edges so every agent's good is
        /// desired by someone else and an equilibrium is guaranteed.
        #[arg(long = "ensure-strongly-connected")]
        ensure_strongly_connected: bool,
    },
    /// Run the price boost step for an instance and a revealed edge set.
    Boost {
        instance: PathBuf,
        /// JSON file {"edges": [[i, j], ...]} with 1-based pairs.
        edges: PathBuf,
        /// Print the reduced price system and its two-variable relaxation.
        #[arg(long = "dump-lp")]
        dump_lp: bool,
    },
}

fn main() -> ExitCode {
    // Die quietly when the reader goes away (`marketeq gen | head`), the way
    // any other filter would.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version are successes; anything else is a usage error.
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.cmd {
        Cmd::Solve { instance, out, trace, seed_prices } => {
            cmd_solve(&instance, out.as_deref(), trace.as_deref(), seed_prices.as_deref())
        }
        Cmd::Check { instance, result } => cmd_check(&instance, &result),
        Cmd::Gen { n, density, max_u, seed, ensure_strongly_connected } => {
            cmd_gen(n, &density, max_u, seed, ensure_strongly_connected)
        }
        Cmd::Boost { instance, edges, dump_lp } => cmd_boost(&instance, &edges, dump_lp),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| anyhow!("writing {}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn no_equilibrium_message(witness: &[Agent]) -> String {
    let agents: Vec<usize> = witness.iter().map(|&a| a + 1).collect();
    format!(
        "no equilibrium: agents {agents:?} form a desire component with no edge inside it"
    )
}

fn cmd_solve(
    instance_path: &Path,
    out: Option<&Path>,
    trace: Option<&Path>,
    seed_prices: Option<&Path>,
) -> Result<u8> {
    let instance = io::parse_instance(&io::load_json(instance_path)?)?;
    let n = instance.n();

    if let ExistenceVerdict::NoEquilibrium { witness } = existence_check(&instance).verdict {
        eprintln!("{}", no_equilibrium_message(&witness));
        return Ok(2);
    }

    let mut trace_lines: Vec<String> = Vec::new();
    let mut report: Option<SolveReport> = None;

    if let Some(path) = seed_prices {
        let p0 = io::parse_prices(&io::load_json(path)?, n, "seed prices")?;
        if let Some(k) = p0.iter().position(|p| *p <= rat(0)) {
            bail!("seed prices: entry {} is not positive", k + 1);
        }
        // Warm start: the scaling subroutine accepts any positive prices
        // when no revealed edges constrain them. If it stops early the
        // normal pipeline below takes over from scratch.
        let identity: Vec<Agent> = (0..n).collect();
        match dm_run(&instance, &EdgeSet::new(), &p0) {
            Ok(outcome) if outcome.result == DMResult::FEquilibrium => {
                for t in &outcome.traces {
                    trace_lines.push(io::trace_line(0, &identity, t));
                }
                report = Some(seeded_report(&instance, outcome.allocation.prices, outcome.allocation.flow));
            }
            Ok(_) => eprintln!("seed prices did not finish; solving from scratch"),
            Err(_) => eprintln!("seed prices hit the phase cap; solving from scratch"),
        }
    }

    let report = match report {
        Some(r) => r,
        None => match driver::solve(&instance) {
            Ok(r) => {
                for (k, cycle) in r.cycles.iter().enumerate() {
                    for t in &cycle.dm_traces {
                        trace_lines.push(io::trace_line(k + 1, &cycle.block_agents, t));
                    }
                }
                r
            }
            Err(SolveError::NoEquilibrium { witness }) => {
                eprintln!("{}", no_equilibrium_message(&witness));
                return Ok(2);
            }
        },
    };

    if let Some(path) = trace {
        let mut text = trace_lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write_output(Some(path), &text)?;
    }
    let mut text = serde_json::to_string_pretty(&io::result_to_json(&report))?;
    text.push('\n');
    write_output(out, &text)?;
    Ok(0)
}

/// Report for a warm started run: empty revealed set, prices renormalized so
/// the minimum is 1 (an equilibrium survives uniform scaling of prices and
/// flow together).
fn seeded_report(instance: &MarketInstance, prices: Vec<Rat>, flow: MoneyFlow) -> SolveReport {
    let minp = prices.iter().min().expect("at least one agent").clone();
    let (prices, flow) = if minp == rat(1) {
        (prices, flow)
    } else {
        let scaled_p: Vec<Rat> = prices.iter().map(|p| p / &minp).collect();
        let mut scaled_f = MoneyFlow::new();
        for (i, j, v) in flow.iter() {
            scaled_f.set(i, j, v / &minp);
        }
        (scaled_p, scaled_f)
    };
    assert!(check_equilibrium(instance, &prices, &flow).is_empty());
    SolveReport { prices, flow, f_edges: EdgeSet::new(), cycles: Vec::new() }
}

fn violation_line(v: &EquilibriumViolation) -> String {
    match v {
        EquilibriumViolation::NonpositivePrice(j) => {
            format!("NonpositivePrice: price of good {} is not positive", j + 1)
        }
        EquilibriumViolation::FlowOffEdge(i, j) => format!(
            "FlowOffEdge: flow from agent {} to good {} without a utility edge",
            i + 1,
            j + 1
        ),
        EquilibriumViolation::NegativeFlow(i, j) => {
            format!("NegativeFlow: flow from agent {} to good {} is negative", i + 1, j + 1)
        }
        EquilibriumViolation::FlowNotMbb(i, j) => format!(
            "FlowNotMbb: agent {} spends on good {} which is not among their best ratios",
            i + 1,
            j + 1
        ),
        EquilibriumViolation::GoodNotCleared(j) => {
            format!("GoodNotCleared: good {} is not exactly sold", j + 1)
        }
        EquilibriumViolation::BudgetViolated(i) => {
            format!("BudgetViolated: agent {} does not spend exactly their budget", i + 1)
        }
    }
}

fn cmd_check(instance_path: &Path, result_path: &Path) -> Result<u8> {
    let instance = io::parse_instance(&io::load_json(instance_path)?)?;
    let (prices, flow) = io::parse_result(&io::load_json(result_path)?, instance.n())?;
    let violations = check_equilibrium(&instance, &prices, &flow);
    if violations.is_empty() {
        println!("ok");
        return Ok(0);
    }
    for v in &violations {
        println!("{}", violation_line(v));
    }
    Ok(2)
}

fn cmd_gen(n: usize, density: &str, max_u: u32, seed: u64, ensure: bool) -> Result<u8> {
    if n < 1 {
        bail!("--n must be at least 1");
    }
    if max_u < 1 {
        bail!("--max-u must be at least 1");
    }
    let d = parse_rat(density).map_err(|e| anyhow!("--density: {e}"))?;
    if d <= rat(0) || d > rat(1) {
        bail!("--density must be in (0, 1]");
    }
    let num = u32::try_from(d.numer().clone()).map_err(|_| anyhow!("--density is too fine"))?;
    let den = u32::try_from(d.denom().clone()).map_err(|_| anyhow!("--density is too fine"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    if n == 1 {
        edges.insert((0, 0));
    } else {
        for i in 0..n {
            for j in 0..n {
                if rng.gen_ratio(num, den) {
                    edges.insert((i, j));
                }
            }
        }
        // Validity of the instance needs a desire per agent and a suitor
        // per good.
        for i in 0..n {
            if !(0..n).any(|j| edges.contains(&(i, j))) {
                let j = rng.gen_range(0..n);
                edges.insert((i, j));
            }
        }
        for j in 0..n {
            if !(0..n).any(|i| edges.contains(&(i, j))) {
                let i = rng.gen_range(0..n);
                edges.insert((i, j));
            }
        }
        if ensure {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for k in 0..n {
                edges.insert((order[k], order[(k + 1) % n]));
            }
        }
    }
    let weighted: Vec<(usize, usize, Rat)> = edges
        .iter()
        .map(|&(i, j)| (i, j, rat(i64::from(rng.gen_range(1..=max_u)))))
        .collect();
    let instance = MarketInstance::new(n, weighted).expect("generated instance is valid");
    println!("{}", serde_json::to_string_pretty(&io::instance_to_json(&instance))?);
    Ok(0)
}

/// `coeffs . pbar <sense> rhs` with positive terms first, so rows read the
/// way the reduced system is usually written: "3 pbar_3 - 2 pbar_2 <= 0".
fn render_row(t: usize, row: &LPRow) -> String {
    let zero = rat(0);
    let one = rat(1);
    let mut terms: Vec<String> = Vec::new();
    let positives = (0..t).filter(|&k| row.coeffs[k] > zero);
    let negatives = (0..t).filter(|&k| row.coeffs[k] < zero);
    for k in positives.chain(negatives) {
        let c = &row.coeffs[k];
        let mag = rational::abs(c);
        let var = format!("pbar_{}", k + 1);
        let body = if mag == one { var } else { format!("{} {var}", format_rat(&mag)) };
        if terms.is_empty() {
            terms.push(if *c < zero { format!("-{body}") } else { body });
        } else {
            terms.push(format!("{} {body}", if *c < zero { "-" } else { "+" }));
        }
    }
    let lhs = if terms.is_empty() { "0".to_string() } else { terms.join(" ") };
    let op = match row.sense {
        Sense::Le => "<=",
        Sense::Eq => "=",
        Sense::Ge => ">=",
    };
    format!("{lhs} {op} {}", format_rat(&row.rhs))
}

fn cmd_boost(instance_path: &Path, edges_path: &Path, dump_lp: bool) -> Result<u8> {
    let instance = io::parse_instance(&io::load_json(instance_path)?)?;
    let f = io::parse_edges(&io::load_json(edges_path)?, &instance)?;
    let dec = decompose(&instance, &f).map_err(|e| anyhow!("invalid revealed set: {e}"))?;
    let sys = build_pf(&instance, &dec);
    let zm = ZMatrix::new(sys.m_rows.clone()).expect("budget matrix sign pattern");
    let ap = approx(&zm, &sys.gamma, &sys.lambda);

    println!("components: {}", sys.t);
    println!("revealed edges: {}", f.len());
    if dump_lp {
        println!("P_F budget rows:");
        for (coeffs, g) in sys.m_rows.iter().zip(&sys.gamma) {
            let row = LPRow { coeffs: coeffs.clone(), sense: Sense::Le, rhs: g.clone() };
            println!("  {}", render_row(sys.t, &row));
        }
        println!("P_F dominance rows:");
        for row in sys.mbb_lp_rows() {
            println!("  {}", render_row(sys.t, &row));
        }
        println!("Approx rows:");
        for row in ap.lp_rows() {
            println!("  {}", render_row(sys.t, &row));
        }
    }

    let fmt_vec = |v: &[Rat]| {
        let parts: Vec<String> = v.iter().map(format_rat).collect();
        format!("[{}]", parts.join(", "))
    };
    match solve_max(&qf_system(&sys, &ap)) {
        M2VPIOutcome::PointwiseMax(p_star) => println!("p_bar_star: {}", fmt_vec(&p_star)),
        M2VPIOutcome::Unbounded { ray } => println!("unbounded ray: {}", fmt_vec(&ray)),
        M2VPIOutcome::Infeasible { witness } => {
            unreachable!("zero prices satisfy the system, yet rows {witness:?} were reported")
        }
    }

    match boost::boost(&instance, &f) {
        Ok(result) => {
            let tag = match &result {
                BoostResult::Approx(_) => "approx",
                BoostResult::FEquilibrium(_) => "f-equilibrium",
            };
            let alloc = result.allocation();
            let s = surplus(&instance, &alloc.prices, &alloc.flow);
            println!("boost: {tag}");
            println!("prices: {}", fmt_vec(&alloc.prices));
            println!("agent surplus l1: {}", format_rat(&s.agent_l1()));
            println!("good surplus l1: {}", format_rat(&s.good_l1()));
        }
        // A valid F can still split the market so that the unbounded growth
        // direction leaves some component behind; that is a finding, not a
        // usage error.
        Err(marketeq::boost::BoostError::NonpositivePrice(k)) => {
            println!("boost: none (the growth direction leaves component {} at price zero)", k + 1);
        }
        Err(e) => return Err(anyhow!("invalid revealed set: {e}")),
    }
    Ok(0)
}
