//! Runs the real binary against files in a temporary directory and checks
//! exit codes, output files and the printed text.

use marketeq::market::{self, ExistenceVerdict, MarketInstance};
use marketeq::rational::{rat, ratq};
use marketeq_cli::io;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marketeq")).args(args).output().expect("binary runs")
}

fn out_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn err_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn write_instance(dir: &Path, name: &str, instance: &MarketInstance) -> PathBuf {
    write_json(dir, name, &io::instance_to_json(instance))
}

/// Market that needs real scaling phases: the 1001/1000 edge forces a few
/// price rise phases, then a rebalance collapses the surplus and reveals
/// three edges at once.
fn reveal3() -> MarketInstance {
    MarketInstance::new(
        3,
        vec![
            (0, 2, rat(1)),
            (1, 1, rat(1)),
            (1, 2, ratq(1001, 1000)),
            (2, 0, rat(1)),
            (2, 1, ratq(1, 2)),
        ],
    )
    .unwrap()
}

#[test]
fn solve_symmetric_pair_to_stdout() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "sym2.json", &market::fixture_sym2());
    let out = run(&["solve", inst.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", err_str(&out));
    let text = out_str(&out);
    assert!(!text.contains('.'), "decimal point in output: {text}");
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["prices"], json!(["1", "1"]));
    assert_eq!(v["revealed_edges"], json!([]));
    let flow = v["flow"].as_array().unwrap();
    assert_eq!(flow.len(), 2);
    for entry in flow {
        assert_eq!(entry["f"], json!("1"));
    }
}

#[test]
fn solve_reports_nonexistence() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "none.json", &market::fixture_no_equilibrium());
    let out = run(&["solve", inst.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(err_str(&out).contains("no equilibrium"));
}

#[test]
fn solve_rejects_malformed_files() {
    let dir = TempDir::new().unwrap();
    let missing = write_json(dir.path(), "missing.json", &json!({ "n": 2 }));
    assert_eq!(code(&run(&["solve", missing.to_str().unwrap()])), 1);

    let float = write_json(
        dir.path(),
        "float.json",
        &json!({ "n": 1, "utilities": [{ "i": 1, "j": 1, "u": "1.5" }] }),
    );
    assert_eq!(code(&run(&["solve", float.to_str().unwrap()])), 1);

    let dup = write_json(
        dir.path(),
        "dup.json",
        &json!({ "n": 1, "utilities": [
            { "i": 1, "j": 1, "u": "1" },
            { "i": 1, "j": 1, "u": "2" },
        ] }),
    );
    let out = run(&["solve", dup.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(err_str(&out).contains("duplicate"));

    assert_eq!(code(&run(&["solve", dir.path().join("absent.json").to_str().unwrap()])), 1);
}

#[test]
fn solve_writes_result_and_trace_files() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "reveal3.json", &reveal3());
    let out_path = dir.path().join("result.json");
    let trace_path = dir.path().join("trace.jsonl");
    let out = run(&[
        "solve",
        inst.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--trace",
        trace_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", err_str(&out));

    let result_text = fs::read_to_string(&out_path).unwrap();
    assert!(!result_text.contains('.'), "decimal point in result");
    let v: Value = serde_json::from_str(&result_text).unwrap();
    assert_eq!(v["revealed_edges"], json!([[1, 3], [2, 2], [3, 1]]));
    let cycles = v["cycles"].as_array().unwrap();
    assert!(cycles.len() >= 2);
    assert_eq!(cycles[0]["boost"], json!("approx"));
    assert!(cycles[0]["dm_phases"].as_u64().unwrap() >= 1);
    let prices = v["prices"].as_array().unwrap();
    assert_eq!(prices[1], json!("1"));
    assert_eq!(prices[0], prices[2]);

    let trace_text = fs::read_to_string(&trace_path).unwrap();
    assert!(!trace_text.contains('.'), "decimal point in trace");
    let lines: Vec<&str> = trace_text.lines().collect();
    assert!(!lines.is_empty());
    for line in &lines {
        let t: Value = serde_json::from_str(line).unwrap();
        assert!(t["cycle"].as_u64().unwrap() >= 1);
        assert!(t["phase"].as_u64().unwrap() >= 1);
        let kind = t["kind"].as_str().unwrap();
        assert!(kind == "price-rise" || kind == "balancing");
        assert!(!t["events"].as_array().unwrap().is_empty());
        for a in t["high_agents"].as_array().unwrap() {
            let a = a.as_u64().unwrap();
            assert!((1..=3).contains(&a));
        }
    }

    let chk = run(&["check", inst.to_str().unwrap(), out_path.to_str().unwrap()]);
    assert_eq!(code(&chk), 0, "oracle rejected solver output: {}", out_str(&chk));
    assert_eq!(out_str(&chk).trim(), "ok");
}

#[test]
fn check_flags_perturbed_prices() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "sym2.json", &market::fixture_sym2());
    let bad = write_json(
        dir.path(),
        "bad.json",
        &json!({
            "prices": ["1", "2"],
            "flow": [
                { "i": 1, "j": 2, "f": "1" },
                { "i": 2, "j": 1, "f": "2" },
            ],
        }),
    );
    let out = run(&["check", inst.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(out_str(&out).contains("GoodNotCleared"), "got: {}", out_str(&out));
}

#[test]
fn check_rejects_float_strings() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "sym2.json", &market::fixture_sym2());
    let bad = write_json(
        dir.path(),
        "bad.json",
        &json!({ "prices": ["1", "1.5"], "flow": [] }),
    );
    assert_eq!(code(&run(&["check", inst.to_str().unwrap(), bad.to_str().unwrap()])), 1);
}

#[test]
fn gen_is_deterministic_per_seed() {
    let a = run(&["gen", "--n", "2", "--seed", "7"]);
    let b = run(&["gen", "--n", "2", "--seed", "7"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout, "same seed must give identical bytes");
    let c = run(&["gen", "--n", "2", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout, "different seed should change the draw");
    let text = out_str(&a);
    assert!(!text.contains('.'), "decimal point in generated instance");
    let inst = io::parse_instance(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(inst.n(), 2);
}

#[test]
fn gen_flag_forces_strong_connectivity() {
    for seed in ["1", "2", "3", "4", "5"] {
        let out = run(&["gen", "--n", "6", "--seed", seed, "--ensure-strongly-connected"]);
        assert_eq!(code(&out), 0);
        let inst = io::parse_instance(&serde_json::from_str(&out_str(&out)).unwrap()).unwrap();
        let report = market::existence_check(&inst);
        assert!(report.strongly_connected, "seed {seed}");
        assert_eq!(report.verdict, ExistenceVerdict::Exists);
    }
}

#[test]
fn gen_single_agent_gets_self_loop() {
    let dir = TempDir::new().unwrap();
    let out = run(&["gen", "--n", "1", "--seed", "0"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&out_str(&out)).unwrap();
    assert_eq!(v["n"], json!(1));
    let utilities = v["utilities"].as_array().unwrap();
    assert_eq!(utilities.len(), 1);
    assert_eq!(utilities[0]["i"], json!(1));
    assert_eq!(utilities[0]["j"], json!(1));

    let path = write_json(dir.path(), "one.json", &v);
    let solved = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(code(&solved), 0);
    let r: Value = serde_json::from_str(&out_str(&solved)).unwrap();
    assert_eq!(r["prices"], json!(["1"]));
}

#[test]
fn gen_rejects_invalid_flags() {
    assert_eq!(code(&run(&["gen", "--n", "0"])), 1);
    assert_eq!(code(&run(&["gen", "--n", "2", "--density", "0.5"])), 1);
    assert_eq!(code(&run(&["gen", "--n", "2", "--density", "3/2"])), 1);
    assert_eq!(code(&run(&["gen", "--n", "2", "--max-u", "0"])), 1);
    assert_eq!(code(&run(&["gen"])), 1, "missing --n is a usage error");
}

#[test]
fn boost_empty_revealed_set_summary() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "sym2.json", &market::fixture_sym2());
    let edges = write_json(dir.path(), "empty.json", &json!({ "edges": [] }));
    let out = run(&["boost", inst.to_str().unwrap(), edges.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", err_str(&out));
    let text = out_str(&out);
    assert!(text.contains("p_bar_star: [1, 1]"), "got: {text}");
    assert!(text.contains("boost: approx"), "got: {text}");
    assert!(text.contains("prices: [1/4, 1/4]"), "got: {text}");
}

#[test]
fn boost_dump_prints_reduced_rows() {
    let dir = TempDir::new().unwrap();
    let (inst, f) = market::fixture_revealed10();
    let inst_path = write_instance(dir.path(), "ten.json", &inst);
    let pairs: Vec<Value> = f.iter().map(|(i, j)| json!([i + 1, j + 1])).collect();
    let edges_path = write_json(dir.path(), "f.json", &json!({ "edges": pairs }));
    let out = run(&[
        "boost",
        inst_path.to_str().unwrap(),
        edges_path.to_str().unwrap(),
        "--dump-lp",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", err_str(&out));
    let text = out_str(&out);
    assert!(text.contains("3 pbar_3 - 2 pbar_2 <= 0"), "dominance row missing: {text}");
    assert!(text.contains("pbar_1 <= 59/15"), "bound row missing: {text}");
    // This revealed set splits off a pair of components that can grow alone,
    // so the reduced LP is unbounded and no boost allocation exists.
    assert!(text.contains("unbounded ray:"), "got: {text}");
    assert!(text.contains("boost: none"), "got: {text}");
}

#[test]
fn boost_rejects_edges_outside_instance() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "sym2.json", &market::fixture_sym2());
    let edges = write_json(dir.path(), "f.json", &json!({ "edges": [[1, 1]] }));
    let out = run(&["boost", inst.to_str().unwrap(), edges.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(err_str(&out).contains("not an edge"));
}

#[test]
fn seed_prices_warm_start_scales_to_equilibrium() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "sym2.json", &market::fixture_sym2());
    let seeds = write_json(dir.path(), "p0.json", &json!(["2", "2"]));
    let out = run(&[
        "solve",
        inst.to_str().unwrap(),
        "--seed-prices",
        seeds.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", err_str(&out));
    let v: Value = serde_json::from_str(&out_str(&out)).unwrap();
    assert_eq!(v["prices"], json!(["1", "1"]));
    assert_eq!(v["cycles"], json!([]), "warm start skips the outer loop");
}

#[test]
fn seed_prices_fall_back_when_an_edge_reveals() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "asym2.json", &market::fixture_asym2());
    let seeds = write_json(dir.path(), "p0.json", &json!(["1", "2"]));
    let out = run(&[
        "solve",
        inst.to_str().unwrap(),
        "--seed-prices",
        seeds.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", err_str(&out));
    assert!(err_str(&out).contains("solving from scratch"));
    let v: Value = serde_json::from_str(&out_str(&out)).unwrap();
    assert_eq!(v["prices"], json!(["1", "1"]));
    assert!(!v["cycles"].as_array().unwrap().is_empty());
}

#[test]
fn seed_prices_must_be_positive() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(dir.path(), "sym2.json", &market::fixture_sym2());
    let seeds = write_json(dir.path(), "p0.json", &json!(["1", "0"]));
    let out = run(&[
        "solve",
        inst.to_str().unwrap(),
        "--seed-prices",
        seeds.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(err_str(&out).contains("not positive"));
}

#[test]
fn instance_round_trip_is_exact() {
    let fixtures = vec![
        market::fixture_sym2(),
        market::fixture_asym2(),
        market::fixture_no_equilibrium(),
        market::fixture_revealed10().0,
        reveal3(),
    ];
    for inst in fixtures {
        let back = io::parse_instance(&io::instance_to_json(&inst)).unwrap();
        assert_eq!(back, inst);
    }
}
