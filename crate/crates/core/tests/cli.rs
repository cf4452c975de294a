//! End-to-end tests of the `extragrad` binary.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use extragrad::cli::Report;
use extragrad::random::{random_instance, RandomParams};
use extragrad::solver::RunTrace;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_extragrad"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn solve(instance: &str, dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", instance, "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn trace(dir: &Path) -> RunTrace {
    RunTrace::read_csv(fs::read(dir.join("trace.csv")).unwrap().as_slice()).unwrap()
}

fn kv(text: &str) -> HashMap<String, String> {
    Report::parse_kv(text).into_iter().collect()
}

fn report(dir: &Path) -> HashMap<String, String> {
    kv(&fs::read_to_string(dir.join("report.txt")).unwrap())
}

fn num(map: &HashMap<String, String>, key: &str) -> f64 {
    map.get(key).unwrap_or_else(|| panic!("missing {key}")).parse().unwrap()
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn zero_iterations_record_only_the_initial_point() {
    let t = tmp();
    let out = solve("tiny2", t.path(), &["--iters", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let tr = trace(t.path());
    assert_eq!(tr.rows.len(), 1);
    assert_eq!(tr.rows[0].iter, 0);
    // box midpoint of both agents is 0, where ½x² + ½x² = 0
    assert_eq!(tr.rows[0].objective, 0.0);
    assert_eq!(num(&report(t.path()), "objective_at_average"), 0.0);
}

#[test]
fn row_count_is_ceiling_of_iterations_over_interval_plus_one() {
    for (iters, every) in [(250usize, 100usize), (300, 100), (1, 100), (7, 3)] {
        let t = tmp();
        let out = solve(
            "tiny2",
            t.path(),
            &["--iters", &iters.to_string(), "--record-every", &every.to_string()],
        );
        assert_eq!(code(&out), 0);
        assert_eq!(trace(t.path()).rows.len(), iters.div_ceil(every) + 1, "N={iters} every={every}");
    }
}

#[test]
fn manifest_digest_matches_the_instance_file() {
    let t = tmp();
    let instance = t.path().join("grid.json");
    fs::copy(extragrad::cli::data_dir().join("synthetic6.json"), &instance).unwrap();
    let dir = t.path().join("run");
    assert_eq!(code(&solve(instance.to_str().unwrap(), &dir, &["--iters", "100"])), 0);
    let check = |dir: &Path| {
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        let path = PathBuf::from(m["instance_path"].as_str().unwrap());
        let digest: String = Sha256::digest(fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(m["instance_sha256"].as_str().unwrap(), digest);
        m
    };
    let m = check(&dir);
    assert_eq!(m["config"]["iters"], 100);
    assert!(m["outputs"].as_array().unwrap().len() >= 3);

    // generated instances are saved next to the run and digested there
    let gen = t.path().join("gen");
    assert_eq!(code(&solve("random_seed3", &gen, &["--iters", "10"])), 0);
    let m = check(&gen);
    assert_eq!(Path::new(m["instance_path"].as_str().unwrap()), gen.join("instance.json"));
}

#[test]
fn objective_gap_recomputes_from_artifacts() {
    let t = tmp();
    let out = solve("random_seed7", t.path(), &["--with-oracle", "--iters", "20000"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(t.path());
    let last = trace(t.path()).rows.last().unwrap().objective;
    let gap = (last - num(&r, "oracle_objective")).abs();
    assert_eq!(num(&r, "objective_gap"), gap);
    assert!(num(&r, "gap_surrogate").is_finite());
}

#[test]
fn identical_flags_give_identical_traces() {
    let (a, b, c) = (tmp(), tmp(), tmp());
    let flags = ["--iters", "3000", "--random-init", "--seed", "5"];
    for (dir, extra) in [(a.path(), None), (b.path(), None), (c.path(), Some("--parallel"))] {
        let mut f = flags.to_vec();
        f.extend(extra);
        assert_eq!(code(&solve("random_seed11", dir, &f)), 0);
    }
    let bytes = |d: &Path| fs::read(d.join("trace.csv")).unwrap();
    assert_eq!(bytes(a.path()), bytes(b.path()));
    assert_eq!(bytes(a.path()), bytes(c.path()));
}

#[test]
fn constants_report_the_largest_lipschitz_constant() {
    let t = tmp();
    let file = t.path().join("two.json");
    let agent = |lip: f64| {
        serde_json::json!({
            "dim": 1,
            "objective": {"kind": "quadratic", "Q": [[lip]], "q": [0.0]},
            "A": [[1.0]], "b": [0.5],
            "box": {"lower": [-1.0], "upper": [1.0]},
            "lipschitz": lip
        })
    };
    let doc = serde_json::json!({
        "agents": [agent(1.0), agent(3.0)],
        "graph": {"nodes": 2, "edges": [[0, 1]]}
    });
    fs::write(&file, doc.to_string()).unwrap();
    let out = run(&["constants", file.to_str().unwrap(), "--format", "kv"]);
    assert_eq!(code(&out), 0);
    let c = kv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(num(&c, "L_xx"), 3.0);
    assert_eq!(num(&c, "L_yy"), 0.0);

    let table = run(&["constants", file.to_str().unwrap()]);
    assert_eq!(code(&table), 0);
    assert!(String::from_utf8(table.stdout).unwrap().contains("L_xx"));
}

#[test]
fn constants_match_in_process_computation() {
    let out = run(&["constants", "random_seed4", "--format", "kv"]);
    assert_eq!(code(&out), 0);
    let c = kv(&String::from_utf8(out.stdout).unwrap());
    let want = extragrad::compute_constants(&random_instance(4, &RandomParams::default())).unwrap();
    for (k, v) in want.entries() {
        let got = num(&c, k);
        assert!(got == v || (got.is_nan() && v.is_nan()), "{k}: {got} vs {v}");
    }
}

#[test]
fn plotdata_copies_columns_verbatim() {
    let t = tmp();
    assert_eq!(code(&solve("tiny2", t.path(), &["--iters", "200"])), 0);
    let text = fs::read_to_string(t.path().join("trace.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let out = run(&["plotdata", t.path().join("trace.csv").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let series = t.path().join("series");
    for (c, name) in extragrad::solver::TRACE_COLUMNS.iter().enumerate().skip(1) {
        let s = fs::read_to_string(series.join(format!("{name}.csv"))).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some(format!("iter,{name}").as_str()));
        let data: Vec<&str> = lines.collect();
        assert_eq!(data.len(), 3);
        for (line, row) in data.iter().zip(&rows) {
            assert_eq!(*line, format!("{},{}", row[0], row[c]));
        }
    }
    // tiny2 has no inequality rows, so this column is all zeros
    let ineq = fs::read_to_string(series.join("ineq_residual.csv")).unwrap();
    assert!(ineq.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn error_kinds_map_to_exit_codes() {
    let t = tmp();
    let missing = t.path().join("nope.json");
    assert_eq!(code(&solve(missing.to_str().unwrap(), &t.path().join("a"), &[])), 4);

    let bad = t.path().join("bad.json");
    fs::write(&bad, "{\"agents\": 3}").unwrap();
    assert_eq!(code(&solve(bad.to_str().unwrap(), &t.path().join("b"), &[])), 2);
    assert_eq!(code(&run(&["constants", bad.to_str().unwrap()])), 2);

    let diverge = solve("random_seed2", &t.path().join("c"), &["--iters", "50", "--step", "1e300"]);
    assert_eq!(code(&diverge), 3);

    let trace = t.path().join("trace.csv");
    fs::write(&trace, "iter,objective\n0,1\n").unwrap();
    assert_eq!(code(&run(&["plotdata", trace.to_str().unwrap()])), 2);
}

#[test]
fn json_report_and_dcopf_entries() {
    let t = tmp();
    let out = solve("synthetic6", t.path(), &["--iters", "2000", "--with-oracle", "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(r["iterations"], 2000);
    assert!(r["dispatch.gen0.bus1"].is_f64());
    assert!(r["oracle_dispatch.gen1.bus2"].is_f64());
    assert_eq!(r["bus_balance"].as_array().unwrap().len(), 6);
    let demand = r["total_demand"].as_f64().unwrap();
    assert!((demand - 3.3).abs() < 1e-12);
}

#[test]
fn generate_writes_a_loadable_instance() {
    let t = tmp();
    let file = t.path().join("g.json");
    assert_eq!(code(&run(&["generate", "--seed", "9", "--out", file.to_str().unwrap()])), 0);
    let out = run(&["constants", file.to_str().unwrap(), "--format", "kv"]);
    assert_eq!(code(&out), 0);
    let from_file = kv(&String::from_utf8(out.stdout).unwrap());
    let direct = kv(&String::from_utf8(run(&["constants", "random_seed9", "--format", "kv"]).stdout).unwrap());
    assert_eq!(from_file, direct);
}
