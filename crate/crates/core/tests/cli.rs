use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use edgecache::config::Config;

fn edgecache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgecache"))
        .args(args)
        .env_remove("EDGECACHE_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const TWO_STATIONS: &str = r#"{
  "topology": {"stations": [
    {"id": 0, "x_m": 0.0, "y_m": 0.0, "range_m": 60.0},
    {"id": 1, "x_m": 50.0, "y_m": 0.0, "range_m": 60.0}]},
  "catalog": {"F": 50, "alpha": 0.9},
  "capacity": 4,
  "policies": [{"policy": "qlru_delta", "q": 0.1}],
  "warmup_requests": 2000,
  "measure_requests": 5000,
  "snapshot_every": null
}"#;

const ONE_STATION: &str = r#"{
  "topology": {"stations": [{"id": 0, "x_m": 0.0, "y_m": 0.0, "range_m": 50.0}]},
  "catalog": {"F": 8, "alpha": 0.8},
  "traffic": {"mode": "spatial", "density": 0.0001},
  "capacity": 3,
  "analysis": {"q_grid": [0.1, 0.01, 0.001, 0.0001]}
}"#;

#[test]
fn missing_topology_file_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"topology": {"file": "nowhere/stations.json"}, "capacity": 2}"#,
    );
    let out = dir.path().join("out");
    let o = edgecache(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nowhere/stations.json"), "{err}");
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"topology": {"builtin": "berlin"}, "capacity": 2, "capcity": 3}"#);
    let o = edgecache(&["greedy", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_one_csv_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", TWO_STATIONS);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = edgecache(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("simulate.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "run_id,policy,q,requests_processed,hit_rate,mean_delay_s,cosine_dist_to_greedy"
    );
    // No snapshots: one final row per run.
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[1], "qlru_delta");
    assert_eq!(fields[3], "5000");
    let hit: f64 = fields[4].parse().unwrap();
    assert!((0.0..=1.0).contains(&hit));
}

#[test]
fn snapshot_flag_adds_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", TWO_STATIONS);
    let out = dir.path().join("o");
    let o = edgecache(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--snapshot-every", "1000"]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("simulate.csv")).unwrap();
    let counts: Vec<u64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts, vec![1000, 2000, 3000, 4000, 5000]);
}

#[test]
fn resolved_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", TWO_STATIONS);
    let out = dir.path().join("o");
    assert!(edgecache(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let resolved = out.join("resolved_config.json");
    let first = Config::from_file(&resolved).unwrap();
    let again = Config::from_file(Path::new(&write(dir.path(), "r.json", &first.to_json()))).unwrap();
    assert_eq!(first, again);
    assert_eq!(first.capacity, 4);
}

#[test]
fn analyze_single_station() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", ONE_STATION);
    let out = dir.path().join("o");
    let o = edgecache(&["analyze", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("analyze.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(header.iter().filter(|h| h.starts_with("pi_q")).count(), 4);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    // Two states per content.
    assert_eq!(rows.len(), 2 * 8);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for row in &rows {
        assert_eq!(row[col("stable")], row[col("argmax_phi")]);
        for i in 0..4 {
            let p: f64 = row[col("phi") + 2 + i].parse().unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }
    // Every content ends up with exactly one stable state.
    for f in 0..8 {
        let stable = rows
            .iter()
            .filter(|r| r[0] == *f.to_string() && &r[col("stable")] == "1")
            .count();
        assert_eq!(stable, 1);
    }
}

#[test]
fn analyze_refuses_large_topologies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"topology": {"builtin": "berlin"}, "capacity": 2, "analysis": {"max_stations": 4}}"#,
    );
    let o = edgecache(&["analyze", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn greedy_single_station_takes_most_popular() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", ONE_STATION);
    let out = dir.path().join("o");
    assert!(edgecache(&["greedy", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let text = fs::read_to_string(out.join("greedy.csv")).unwrap();
    assert_eq!(text, "content_id,bs_id\n0,0\n1,0\n2,0\n");
}

#[test]
fn greedy_fills_every_station() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", TWO_STATIONS);
    let out = dir.path().join("o");
    assert!(edgecache(&["greedy", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let text = fs::read_to_string(out.join("greedy.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 4);
}

#[test]
fn greedy_rejects_capacity_above_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &ONE_STATION.replace("\"capacity\": 3", "\"capacity\": 9"));
    let o = edgecache(&["greedy", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", ONE_STATION);
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_edgecache"))
        .args(["greedy", "--config", &cfg])
        .env("EDGECACHE_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("greedy.csv").exists());
}

#[test]
fn validate_passes() {
    let o = edgecache(&["validate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
}
