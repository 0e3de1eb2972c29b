use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HARDCORE: &str = r#"{"model":"hardcore","intensity":0.1,"radius":0.5,"min_gap":0.02}"#;

fn stiffnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stiffnet")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_spec(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn generate_graph_energy_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.json");
    let g = dir.path().join("g.json");
    let c_s = c.to_str().unwrap();
    let g_s = g.to_str().unwrap();
    let out = stiffnet(&["--seed", "3", "--out", c_s, "generate", "--model", HARDCORE, "--half-width", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let config = stiffnet::io::load_config(&c).unwrap();
    assert_eq!(config.seed, 3);
    let out = stiffnet(&["--out", g_s, "graph", c_s, "--delta", "0.3"]);
    assert_eq!(code(&out), 0);
    let graph = stiffnet::io::load_graph(&g).unwrap();
    assert!(graph.node_count() > 0);
    let out = stiffnet(&["--format", "csv", "energy", g_s, "--family", "midpoint", "--xi", "0,1,0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("node,u\n"));
    assert_eq!(text.lines().count(), 1 + graph.node_count());
}

#[test]
fn corrupted_inputs_exit_with_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_spec(dir.path(), "c.json", "{\"model\": ");
    assert_eq!(code(&stiffnet(&["graph", &c, "--delta", "0.3"])), 2);
    assert_eq!(code(&stiffnet(&["generate", "--model", "{oops", "--half-width", "3"])), 2);
    assert_eq!(code(&stiffnet(&["frobnicate"])), 2);
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_spec(dir.path(), "empty.json", r#"{"version": 1, "tasks": []}"#);
    assert_eq!(code(&stiffnet(&["run", &empty])), 3);
    let broken = write_spec(dir.path(), "broken.json", r#"{"version": 1, "tasks": ["#);
    assert_eq!(code(&stiffnet(&["run", &broken])), 2);
    let wrong_version = write_spec(dir.path(), "v.json", r#"{"version": 7, "tasks": ["keller"]}"#);
    assert_eq!(code(&stiffnet(&["run", &wrong_version])), 2);
}

#[test]
fn failing_cells_exit_one_with_partial_results() {
    // So sparse that the graphs have no edges and every h2 cell fails.
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("res");
    let spec = write_spec(
        dir.path(),
        "s.json",
        r#"{"version": 1, "tasks": ["h2", "keller"], "delta": 0.1, "N_grid": [3, 4, 5],
            "model": {"model": "hardcore", "intensity": 0.001, "radius": 0.5, "min_gap": 0.02}}"#,
    );
    let out = stiffnet(&["--out", out_dir.to_str().unwrap(), "run", &spec]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("keller.csv").exists());
    assert!(out_dir.join("summary.json").exists());
    let summary = fs::read_to_string(out_dir.join("summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["cell_errors"], 3);
    assert_eq!(fs::read_to_string(out_dir.join("h2.csv")).unwrap(), "N,seed,value\n");
}

#[test]
fn keller_run_matches_log_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("res");
    let spec = write_spec(
        dir.path(),
        "k.json",
        r#"{"version": 1, "tasks": ["keller"], "params": {"keller": {"a": 1, "d": 1}}}"#,
    );
    let out = stiffnet(&["--out", out_dir.to_str().unwrap(), "run", &spec]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    let slope = v["outputs"]["keller"]["slope_fit"]["slope"].as_f64().unwrap();
    assert!((slope / std::f64::consts::FRAC_PI_2 - 1.0).abs() < 0.01, "{slope}");
    assert_eq!(v["spec_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "s.json",
        r#"{"version": 1, "tasks": ["h1", "h2", "logmoment", "effective"], "delta": 0.3,
            "N_grid": [3, 4, 5], "n_seeds": 2, "base_seed": 11,
            "model": {"model": "hardcore", "intensity": 0.1, "radius": 0.5, "min_gap": 0.02},
            "params": {"xi": [[1, 0, 0], [0, 0, 1]], "h2": {"n_starts": 4}}}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&stiffnet(&["--threads", "1", "--out", a.to_str().unwrap(), "run", &spec])), 0);
    assert_eq!(code(&stiffnet(&["--threads", "4", "--out", b.to_str().unwrap(), "run", &spec])), 0);
    for name in ["h1_xi0.csv", "h1_xi1.csv", "h2.csv", "logmoment.csv", "effective.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert!(a.join("timings.json").exists());
}

#[test]
fn criteria_csv_has_one_row_per_cell() {
    let out = stiffnet(&[
        "--format", "csv", "--seed", "5", "criteria", "--model", HARDCORE, "--delta", "0.3", "--grid", "3,4,5", "--seeds",
        "2", "--statistic", "density",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("N,seed,value\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn invalid_parameters_exit_three() {
    assert_eq!(code(&stiffnet(&["keller", "--nu", "1.5,0.1"])), 3);
    assert_eq!(
        code(&stiffnet(&["criteria", "--model", HARDCORE, "--delta", "0.3", "--grid", "3,4", "--statistic", "density"])),
        3
    );
    assert_eq!(code(&stiffnet(&["--threads", "0", "keller"])), 3);
}
