use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn rotland(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rotland"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn edge_count(path: &Path) -> usize {
    read_json(path)["edges"].as_array().unwrap().len()
}

fn rot_z(angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    vec![c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]
}

fn identity_solution(n: usize) -> Value {
    json!({ "rotations": vec![rot_z(0.0); n] })
}

#[test]
fn generate_ring_lattice_and_random_graph() {
    let tmp = TempDir::new().unwrap();
    let o = rotland(tmp.path(), &["generate", "--graph", "ws", "--n", "40", "--k", "16", "--seed", "1", "--out", "ws.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(edge_count(&tmp.path().join("ws.json")), 320);
    assert!(stdout(&o).contains("lambda2 = 4.606664"));
    assert!(tmp.path().join("ws.truth.json").exists());

    let o = rotland(tmp.path(), &["generate", "--graph", "gnm", "--n", "40", "--m", "400", "--seed", "2", "--out", "gnm.json"]);
    assert!(o.status.success());
    assert_eq!(edge_count(&tmp.path().join("gnm.json")), 400);
    let meta = &read_json(&tmp.path().join("gnm.json"))["meta"];
    assert_eq!(meta["seed"], 2);
}

#[test]
fn generate_rejects_impossible_edge_count() {
    let tmp = TempDir::new().unwrap();
    let o = rotland(tmp.path(), &["generate", "--graph", "gnm", "--n", "5", "--m", "20", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("x.json").exists());
}

#[test]
fn generate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    for out in ["a.json", "b.json"] {
        let o = rotland(
            tmp.path(),
            &["generate", "--graph", "ws", "--n", "12", "--k", "4", "--p-rewire", "0.3", "--sigma-n-deg", "5", "--seed", "9", "--out", out],
        );
        assert!(o.status.success());
    }
    assert_eq!(read_json(&tmp.path().join("a.json")), read_json(&tmp.path().join("b.json")));
}

#[test]
fn noiseless_ground_truth_has_zero_cost() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert!(rotland(d, &["generate", "--graph", "ws", "--n", "20", "--k", "6", "--seed", "4", "--out", "p.json"]).status.success());
    let o = rotland(d, &["solve", "--problem", "p.json", "--init", "ground-truth", "--out", "s.json"]);
    assert!(o.status.success());
    let result = read_json(&d.join("s.result.json"));
    assert!(result["final_cost"].as_f64().unwrap() < 1e-20);
    assert_eq!(result["converged"], true);
    assert_eq!(result["metadata"]["tool"], "rotland");
    assert!(result["metadata"]["argv"].is_array());
    assert!(stdout(&o).contains("converged"));
}

#[test]
fn tree_from_random_start_reaches_zero_cost() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    // path 0-1-2-3-4 with arbitrary measurements
    let edges: Vec<Value> = (0..4)
        .map(|i| json!({ "i": i, "j": i + 1, "R": rot_z(0.7 + 0.5 * i as f64) }))
        .collect();
    std::fs::write(d.join("tree.json"), json!({ "n": 5, "edges": edges }).to_string()).unwrap();
    for (p, tol) in [("2", 1e-12), ("3", 1e-10)] {
        let o = rotland(d, &["solve", "--problem", "tree.json", "--p", p, "--seed", "3", "--out", "s.json"]);
        assert!(o.status.success(), "p = {p}: {}", String::from_utf8_lossy(&o.stderr));
        let cost = read_json(&d.join("s.result.json"))["final_cost"].as_f64().unwrap();
        assert!(cost < tol, "p = {p}: cost {cost}");
    }
}

#[test]
fn sub_quadratic_tree_needs_gauss_newton_curvature() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let edges: Vec<Value> = (0..4)
        .map(|i| json!({ "i": i, "j": i + 1, "R": rot_z(0.7 + 0.5 * i as f64) }))
        .collect();
    std::fs::write(d.join("tree.json"), json!({ "n": 5, "edges": edges }).to_string()).unwrap();
    let o = rotland(
        d,
        &["solve", "--problem", "tree.json", "--p", "1.5", "--seed", "3", "--curvature", "gauss-newton", "--out", "s.json"],
    );
    assert!(o.status.success());
    let result = read_json(&d.join("s.result.json"));
    // the cost is not twice differentiable at zero residual, so the run ends
    // by hitting that edge rather than by the gradient test
    assert_eq!(result["stop_reason"], "near_zero_residual");
    assert!(result["final_cost"].as_f64().unwrap() < 1e-10);
}

#[test]
fn malformed_problem_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("bad.json"), "{ \"n\": 3, \"edges\": [").unwrap();
    let o = rotland(tmp.path(), &["solve", "--problem", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rotland(tmp.path(), &["solve", "--problem", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn init_file_requires_a_path() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert!(rotland(d, &["generate", "--graph", "ws", "--n", "8", "--k", "2", "--out", "p.json"]).status.success());
    assert_eq!(rotland(d, &["solve", "--problem", "p.json", "--init", "file"]).status.code(), Some(2));
    std::fs::write(d.join("short.json"), identity_solution(3).to_string()).unwrap();
    let o = rotland(d, &["solve", "--problem", "p.json", "--init", "file", "--init-path", "short.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_restart_gives_single_minimum() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert!(rotland(d, &["generate", "--graph", "ws", "--n", "12", "--k", "4", "--sigma-n-deg", "5", "--out", "p.json"]).status.success());
    let o = rotland(d, &["map", "--problem", "p.json", "--restarts", "1", "--out-dir", "atlas"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("pct_max 100.00"));
    let atlas = read_json(&d.join("atlas/atlas.json"));
    assert_eq!(atlas["minima"].as_array().unwrap().len(), 1);
    for f in ["atlas.csv", "atlas.svg", "runs.jsonl", "runs.solutions.jsonl", "metadata.json"] {
        assert!(d.join("atlas").join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(d.join("atlas/atlas.csv")).unwrap();
    assert!(csv.starts_with("id,cost,multiplicity,x,y"));
}

#[test]
fn map_is_reproducible_for_a_seed() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert!(rotland(d, &["generate", "--graph", "gnm", "--n", "10", "--m", "20", "--sigma-n-deg", "10", "--out", "p.json"]).status.success());
    for dir in ["a", "b"] {
        assert!(rotland(d, &["map", "--problem", "p.json", "--restarts", "12", "--seed", "5", "--out-dir", dir]).status.success());
    }
    assert_eq!(
        std::fs::read_to_string(d.join("a/runs.jsonl")).unwrap(),
        std::fs::read_to_string(d.join("b/runs.jsonl")).unwrap()
    );
}

#[test]
fn zero_kernel_width_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert!(rotland(d, &["generate", "--graph", "ws", "--n", "8", "--k", "2", "--out", "p.json"]).status.success());
    let o = rotland(d, &["map", "--problem", "p.json", "--sigma-d", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_k4(d: &Path, theta: f64) {
    let mut edges = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            edges.push(json!({ "i": i, "j": j, "R": rot_z(theta) }));
        }
    }
    std::fs::write(d.join("k4.json"), json!({ "n": 4, "edges": edges }).to_string()).unwrap();
}

#[test]
fn certify_complete_graph_at_uniform_residual() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_k4(d, 0.9);
    std::fs::write(d.join("id.json"), identity_solution(4).to_string()).unwrap();
    let o = rotland(d, &["certify", "--problem", "k4.json", "--solution", "id.json", "--out", "report.json"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let separated = text.lines().find(|l| l.starts_with("separated:")).unwrap();
    assert!(separated.contains("PASS"), "{text}");
    assert!(separated.contains("lambda2 = 4.000000"), "{text}");
    assert!(separated.contains("residual term = 3.000000"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("exact:") && l.contains("PASS")));
    let report = read_json(&d.join("report.json"));
    assert_eq!(report["report"]["separated_pass"], true);
    assert_eq!(report["metadata"]["command"], "certify");
}

#[test]
fn certify_rejects_mismatched_solution() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_k4(d, 0.9);
    std::fs::write(d.join("id.json"), identity_solution(5).to_string()).unwrap();
    let o = rotland(d, &["certify", "--problem", "k4.json", "--solution", "id.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let spec = json!({
        "graphs": [
            { "graph": "ws", "n": 12, "k": 4, "p_rewire": 0.0 },
            { "graph": "gnm", "n": 12, "m": 30 }
        ],
        "sigma_n_deg": [2.0, 5.0, 10.0, 25.0],
        "restarts": 6,
        "seed": 7
    });
    std::fs::write(d.join("spec.json"), spec.to_string()).unwrap();
    let o = rotland(d, &["sweep", "--spec", "spec.json", "--out-dir", "out"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("out/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("lambda2,sigma_n_deg,pct_max,n_minima"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    // C12 with k = 4 is a circulant graph; its lambda2 is 4 - 2cos(pi/6) - 2cos(pi/3)
    let ring_l2 = 4.0 - 2.0 * (std::f64::consts::PI / 6.0).cos() - 2.0 * (std::f64::consts::PI / 3.0).cos();
    for row in &rows[..4] {
        let l2: f64 = row.split(',').next().unwrap().parse().unwrap();
        assert!((l2 - ring_l2).abs() < 1e-6, "{row}");
    }
    let cell_dirs = std::fs::read_dir(d.join("out")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(cell_dirs, 8);
}

#[test]
fn empty_sweep_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("spec.json"), json!({ "graphs": [], "sigma_n_deg": [2.0] }).to_string()).unwrap();
    let o = rotland(d, &["sweep", "--spec", "spec.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(rotland(tmp.path(), &["nonsense"]).status.code(), Some(2));
    assert_eq!(rotland(tmp.path(), &["generate", "--graph", "ws", "--n", "10"]).status.code(), Some(2));
    assert!(rotland(tmp.path(), &["--help"]).status.success());
}
