//! File formats. Instances and results are JSON with every number carried as
//! a rational string ("3", "5/2"); raw JSON numbers are rejected wherever a
//! quantity is expected so a float can never slip through a lenient parser.
//! Traces are JSON lines, one phase record per line.

use anyhow::{anyhow, bail, Context, Result};
use marketeq::dm::{PhaseEvent, PhaseKind, PhaseTrace};
use marketeq::driver::{BoostTag, CycleRecord, SolveReport};
use marketeq::market::{Agent, EdgeSet, MarketInstance, MoneyFlow};
use marketeq::rational::{format_rat, parse_rat, Rat};
use serde_json::{json, Map, Value};
use std::path::Path;

pub fn load_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn obj<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| anyhow!("{what}: expected a JSON object"))
}

fn field<'a>(m: &'a Map<String, Value>, key: &str, what: &str) -> Result<&'a Value> {
    m.get(key).ok_or_else(|| anyhow!("{what}: missing field {key:?}"))
}

fn known_fields(m: &Map<String, Value>, allowed: &[&str], what: &str) -> Result<()> {
    for k in m.keys() {
        if !allowed.contains(&k.as_str()) {
            bail!("{what}: unknown field {k:?}");
        }
    }
    Ok(())
}

fn rat_value(v: &Value, what: &str) -> Result<Rat> {
    let s = v
        .as_str()
        .ok_or_else(|| anyhow!("{what}: expected a rational string like \"3\" or \"5/2\""))?;
    parse_rat(s).map_err(|e| anyhow!("{what}: {e}"))
}

/// 1-based index field, returned 0-based.
fn index_field(m: &Map<String, Value>, key: &str, n: usize, what: &str) -> Result<usize> {
    let v = field(m, key, what)?;
    let k = v
        .as_u64()
        .ok_or_else(|| anyhow!("{what}: field {key:?} must be a positive integer"))?;
    if k < 1 || k > n as u64 {
        bail!("{what}: field {key:?} must be in 1..={n}, got {k}");
    }
    Ok((k - 1) as usize)
}

pub fn parse_instance(v: &Value) -> Result<MarketInstance> {
    let m = obj(v, "instance")?;
    known_fields(m, &["n", "utilities"], "instance")?;
    let n = field(m, "n", "instance")?
        .as_u64()
        .ok_or_else(|| anyhow!("instance: field \"n\" must be a positive integer"))?;
    if n < 1 {
        bail!("instance: field \"n\" must be at least 1");
    }
    let n = usize::try_from(n).map_err(|_| anyhow!("instance: \"n\" is out of range"))?;
    let utilities = field(m, "utilities", "instance")?
        .as_array()
        .ok_or_else(|| anyhow!("instance: field \"utilities\" must be an array"))?;
    let mut seen = EdgeSet::new();
    let mut edges = Vec::with_capacity(utilities.len());
    for (k, entry) in utilities.iter().enumerate() {
        let what = format!("utilities[{k}]");
        let em = obj(entry, &what)?;
        known_fields(em, &["i", "j", "u"], &what)?;
        let i = index_field(em, "i", n, &what)?;
        let j = index_field(em, "j", n, &what)?;
        let u = rat_value(field(em, "u", &what)?, &format!("{what}.u"))?;
        if !seen.insert(i, j) {
            bail!("{what}: duplicate entry for agent {}, good {}", i + 1, j + 1);
        }
        edges.push((i, j, u));
    }
    MarketInstance::new(n, edges).map_err(|e| anyhow!("invalid instance: {e}"))
}

pub fn instance_to_json(instance: &MarketInstance) -> Value {
    let utilities: Vec<Value> = instance
        .edges()
        .map(|(i, j, u)| json!({ "i": i + 1, "j": j + 1, "u": format_rat(u) }))
        .collect();
    json!({ "n": instance.n(), "utilities": utilities })
}

/// Bare JSON array of `n` rational strings.
pub fn parse_prices(v: &Value, n: usize, what: &str) -> Result<Vec<Rat>> {
    let arr = v
        .as_array()
        .ok_or_else(|| anyhow!("{what}: expected a JSON array of rational strings"))?;
    if arr.len() != n {
        bail!("{what}: expected {n} entries, got {}", arr.len());
    }
    arr.iter()
        .enumerate()
        .map(|(k, e)| rat_value(e, &format!("{what}[{k}]")))
        .collect()
}

/// Prices and flow of a result file; the surrounding statistics fields are
/// accepted and ignored so a solver output can be fed back verbatim.
pub fn parse_result(v: &Value, n: usize) -> Result<(Vec<Rat>, MoneyFlow)> {
    let m = obj(v, "result")?;
    known_fields(m, &["prices", "flow", "revealed_edges", "cycles"], "result")?;
    let prices = parse_prices(field(m, "prices", "result")?, n, "result.prices")?;
    let flow_arr = field(m, "flow", "result")?
        .as_array()
        .ok_or_else(|| anyhow!("result: field \"flow\" must be an array"))?;
    let mut flow = MoneyFlow::new();
    let mut seen = EdgeSet::new();
    for (k, entry) in flow_arr.iter().enumerate() {
        let what = format!("flow[{k}]");
        let em = obj(entry, &what)?;
        known_fields(em, &["i", "j", "f"], &what)?;
        let i = index_field(em, "i", n, &what)?;
        let j = index_field(em, "j", n, &what)?;
        let f = rat_value(field(em, "f", &what)?, &format!("{what}.f"))?;
        if !seen.insert(i, j) {
            bail!("{what}: duplicate entry for agent {}, good {}", i + 1, j + 1);
        }
        flow.set(i, j, f);
    }
    Ok((prices, flow))
}

pub fn result_to_json(report: &SolveReport) -> Value {
    let prices: Vec<Value> =
        report.prices.iter().map(|p| Value::String(format_rat(p))).collect();
    let flow: Vec<Value> = report
        .flow
        .iter()
        .map(|(i, j, f)| json!({ "i": i + 1, "j": j + 1, "f": format_rat(f) }))
        .collect();
    let revealed: Vec<Value> =
        report.f_edges.iter().map(|(i, j)| json!([i + 1, j + 1])).collect();
    let cycles: Vec<Value> = report.cycles.iter().map(cycle_to_json).collect();
    json!({ "prices": prices, "flow": flow, "revealed_edges": revealed, "cycles": cycles })
}

fn cycle_to_json(c: &CycleRecord) -> Value {
    let tag = match c.boost {
        BoostTag::Approx => "approx",
        BoostTag::FEquilibrium => "f-equilibrium",
    };
    json!({
        "block": c.block_agents.iter().map(|&a| a + 1).collect::<Vec<_>>(),
        "boost": tag,
        "dm_phases": c.dm_traces.len(),
        "added": c.added.iter().map(|&(i, j)| json!([i + 1, j + 1])).collect::<Vec<_>>(),
        "f_size": c.f_size,
        "f_components": c.f_components,
    })
}

/// `{"edges": [[i, j], ...]}` with 1-based pairs, all of which must be
/// utility edges of the instance.
pub fn parse_edges(v: &Value, instance: &MarketInstance) -> Result<EdgeSet> {
    let n = instance.n();
    let m = obj(v, "edges file")?;
    known_fields(m, &["edges"], "edges file")?;
    let arr = field(m, "edges", "edges file")?
        .as_array()
        .ok_or_else(|| anyhow!("edges file: field \"edges\" must be an array"))?;
    let mut f = EdgeSet::new();
    for (k, entry) in arr.iter().enumerate() {
        let what = format!("edges[{k}]");
        let pair = entry
            .as_array()
            .filter(|p| p.len() == 2)
            .ok_or_else(|| anyhow!("{what}: expected a pair [i, j]"))?;
        let idx = |v: &Value, name: &str| -> Result<usize> {
            let raw = v
                .as_u64()
                .ok_or_else(|| anyhow!("{what}: {name} must be a positive integer"))?;
            if raw < 1 || raw > n as u64 {
                bail!("{what}: {name} must be in 1..={n}, got {raw}");
            }
            Ok((raw - 1) as usize)
        };
        let i = idx(&pair[0], "agent")?;
        let j = idx(&pair[1], "good")?;
        if !instance.has_edge(i, j) {
            bail!("{what}: ({}, {}) is not an edge of the instance", i + 1, j + 1);
        }
        if !f.insert(i, j) {
            bail!("{what}: duplicate edge ({}, {})", i + 1, j + 1);
        }
    }
    Ok(f)
}

/// One phase record as a JSON line. Trace indices are block local; they are
/// mapped to global 1-based agents/goods through `block_agents` (agent k of
/// a block owns good k, so one map serves both sides).
pub fn trace_line(cycle: usize, block_agents: &[Agent], t: &PhaseTrace) -> String {
    let g = |local: usize| block_agents[local] + 1;
    let events: Vec<Value> = t
        .events
        .iter()
        .map(|e| match e {
            PhaseEvent::Absorb { agent, good, x } => {
                json!({ "event": "absorb", "agent": g(*agent), "good": g(*good), "x": format_rat(x) })
            }
            PhaseEvent::EdgeBreak { agent, good, x } => {
                json!({ "event": "edge-break", "agent": g(*agent), "good": g(*good), "x": format_rat(x) })
            }
            PhaseEvent::SurplusMeet { x } => {
                json!({ "event": "surplus-meet", "x": format_rat(x) })
            }
            PhaseEvent::ScaleCap { x } => json!({ "event": "scale-cap", "x": format_rat(x) }),
        })
        .collect();
    let kind = match t.kind {
        PhaseKind::PriceRise => "price-rise",
        PhaseKind::Balancing => "balancing",
    };
    json!({
        "cycle": cycle,
        "phase": t.phase + 1,
        "kind": kind,
        "high_agents": t.high_agents.iter().map(|&a| g(a)).collect::<Vec<_>>(),
        "scaled_goods": t.scaled_goods.iter().map(|&j| g(j)).collect::<Vec<_>>(),
        "events": events,
        "last_x": format_rat(&t.last_x),
        "price_product_before": format_rat(&t.price_product_before),
        "price_product_after": format_rat(&t.price_product_after),
        "surplus_l1_before": format_rat(&t.surplus_l1_before),
        "surplus_l1_after": format_rat(&t.surplus_l1_after),
        "surplus_norm_sq_before": format_rat(&t.surplus_norm_sq_before),
        "surplus_norm_sq_after": format_rat(&t.surplus_norm_sq_after),
        "max_price_bits": t.max_price_bits,
    })
    .to_string()
}
