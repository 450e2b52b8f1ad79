use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use trustalloc_core::sim::{metrics, read_jsonl};
use trustalloc_core::world::{load_scenario, Cell, PAPER_5X3};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trustalloc"));
    c.env_remove("RUST_BACKTRACE");
    c
}

fn scenario_file(dir: &Path) -> PathBuf {
    let path = dir.join("paper.scn");
    std::fs::write(&path, PAPER_5X3).unwrap();
    path
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(out: Output) -> String {
    assert!(!out.status.success());
    String::from_utf8(out.stderr).unwrap()
}

#[test]
fn synthesize_prints_the_best_path() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenario_file(dir.path());
    let dot = dir.path().join("psi.dot");
    let out = ok(bin()
        .args(["synthesize", "--scenario"])
        .arg(&scn)
        .args(["--trust", "uniform:0.5", "--dot"])
        .arg(&dot)
        .output()
        .unwrap());
    assert!(out.contains("states: 45"), "{out}");
    assert!(out.contains("steps: 3  total trust: 3.5"), "{out}");
    assert!(std::fs::read_to_string(&dot).unwrap().starts_with("digraph"));

    let trust = dir.path().join("trust.json");
    std::fs::write(&trust, r#"{"r1":0.9,"r2":0.1,"r3":0.1,"r4":0.1,"r5":0.1}"#).unwrap();
    let out = ok(bin().args(["synthesize", "--scenario"]).arg(&scn).arg("--trust").arg(&trust).output().unwrap());
    let r1 = out.lines().find(|l| l.trim_start().starts_with("r1:")).unwrap();
    assert!(r1.contains('a') && r1.contains('c') && r1.contains('d'), "{out}");

    let missing = dir.path().join("partial.json");
    std::fs::write(&missing, r#"{"r1":0.5}"#).unwrap();
    let err = fails(bin().args(["synthesize", "--scenario"]).arg(&scn).arg("--trust").arg(&missing).output().unwrap());
    assert!(err.contains("no trust value"), "{err}");
}

#[test]
fn plan_prints_a_connected_path() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenario_file(dir.path());
    let dot = dir.path().join("product.dot");
    let out = ok(bin()
        .args(["plan", "--scenario"])
        .arg(&scn)
        .args(["--robot", "r2", "--assignment", "e", "--after", "d", "--reveal", "--dot"])
        .arg(&dot)
        .output()
        .unwrap());
    let mut lines = out.lines();
    let cells: Vec<Cell> = lines
        .next()
        .unwrap()
        .split(" -> ")
        .map(|c| {
            let (x, y) = c.trim_matches(|ch| ch == '(' || ch == ')').split_once(',').unwrap();
            Cell::new(x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    let cost: usize = lines.next().unwrap().strip_prefix("cost: ").unwrap().parse().unwrap();
    assert_eq!(cells.len(), cost + 1);
    assert_eq!(cells[0], Cell::new(9, 0));
    assert_eq!(*cells.last().unwrap(), Cell::new(5, 1));
    let world = load_scenario(PAPER_5X3).unwrap().world;
    assert!(cells.iter().all(|c| world.is_free(*c)));
    assert!(cells.windows(2).all(|w| w[0].is_adjacent(w[1])));
    assert!(cells.iter().any(|c| c.manhattan(Cell::new(2, 2)) <= 2));
    assert!(std::fs::read_to_string(&dot).unwrap().starts_with("digraph product"));

    let err = fails(bin()
        .args(["plan", "--scenario"])
        .arg(&scn)
        .args(["--robot", "r5", "--assignment", "a"])
        .output()
        .unwrap());
    assert!(err.contains("cannot perform"), "{err}");
}

#[test]
fn run_is_deterministic_and_exports_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenario_file(dir.path());
    let logs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("log{i}.jsonl"))).collect();
    for log in &logs {
        let out = ok(bin()
            .args(["run", "--scenario"])
            .arg(&scn)
            .args(["--human", "auto", "--seed", "5", "--out"])
            .arg(log)
            .output()
            .unwrap());
        let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
        let done: u64 = summary["completions"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(done, 7);
    }
    let a = std::fs::read(&logs[0]).unwrap();
    assert_eq!(a, std::fs::read(&logs[1]).unwrap());

    let csv = dir.path().join("csv");
    ok(bin().args(["export", "--log"]).arg(&logs[0]).arg("--csv").arg(&csv).output().unwrap());
    let m = metrics(&read_jsonl(a.as_slice()).unwrap());
    let expected_points = m.last_tick as usize + 1 + m.reallocations as usize;
    for r in 1..=5 {
        let text = std::fs::read_to_string(csv.join(format!("trust_r{r}.csv"))).unwrap();
        assert_eq!(text.lines().count(), expected_points + 1);
    }
    let all = std::fs::read_to_string(csv.join("trust.csv")).unwrap();
    assert_eq!(all.lines().count(), 5 * expected_points + 1);
    let table = std::fs::read_to_string(csv.join("metrics.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(csv.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["makespan"].as_u64(), m.makespan);
}

#[test]
fn run_accepts_scripted_and_threshold_humans() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenario_file(dir.path());
    let script = dir.path().join("script.json");
    std::fs::write(&script, "[false, true, false]").unwrap();
    let log = dir.path().join("log.jsonl");
    let out = ok(bin()
        .args(["run", "--scenario"])
        .arg(&scn)
        .arg("--human")
        .arg(format!("scripted:{}", script.display()))
        .arg("--out")
        .arg(&log)
        .output()
        .unwrap());
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["allowed"], 1);
    assert_eq!(summary["denied"].as_u64(), summary["requests"].as_u64().map(|n| n - 1));

    let out = ok(bin()
        .args(["run", "--scenario"])
        .arg(&scn)
        .args(["--human", "threshold:0.99", "--out"])
        .arg(&log)
        .output()
        .unwrap());
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["allowed"], 0);
    assert_eq!(summary["reallocations"], 0);

    let err = fails(bin().args(["run", "--scenario"]).arg(&scn).args(["--human", "sometimes", "--out"]).arg(&log).output().unwrap());
    assert!(err.contains("unknown human model"), "{err}");
}

#[test]
fn run_refuses_interactive_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(PAPER_5X3).unwrap();
    doc["human"] = serde_json::json!({ "kind": "interactive" });
    let scn = dir.path().join("interactive.scn");
    std::fs::write(&scn, doc.to_string()).unwrap();
    let err = fails(bin()
        .args(["run", "--scenario"])
        .arg(&scn)
        .arg("--out")
        .arg(dir.path().join("log.jsonl"))
        .output()
        .unwrap());
    assert!(err.contains("serve"), "{err}");
}

#[test]
fn filter_replays_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    std::fs::write(
        &trace,
        "t,performance,safety,env_workload,supervision_workload,ac,ac_prev,h\n\
         0,0,1,0.2,1,,,\n\
         1,1,1,0.36,1,,,\n\
         2,1,1,0.36,0.6,0.1,0,1\n",
    )
    .unwrap();
    let params = dir.path().join("params.json");
    std::fs::write(&params, r#"{"bins": 11}"#).unwrap();
    let out = ok(bin().args(["filter", "--trace"]).arg(&trace).arg("--params").arg(&params).output().unwrap());
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4, "{out}");
    assert!(lines[0].starts_with("t,mean,variance"), "{out}");
    for line in &lines[1..] {
        let mean: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&mean));
    }

    std::fs::write(&params, r#"{"bins": 11, "unknown": 1}"#).unwrap();
    fails(bin().args(["filter", "--trace"]).arg(&trace).arg("--params").arg(&params).output().unwrap());
}

#[test]
fn serve_hosts_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = bin()
        .args(["serve", "--bind", "127.0.0.1:0", "--max-sessions", "1"])
        .env("TRUSTALLOC_PERSIST_DIR", dir.path())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_owned();

    let post = |body: &str| {
        let mut s = TcpStream::connect(&addr).unwrap();
        write!(
            s,
            "POST /sessions HTTP/1.1\r\nHost: x\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        resp
    };
    let first = post(PAPER_5X3);
    let second = post(PAPER_5X3);
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(first.starts_with("HTTP/1.1 201"), "{first}");
    assert!(second.starts_with("HTTP/1.1 503"), "{second}");
    let persisted: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(persisted.len(), 2);
}
