use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphskel::synthetic;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_graphskel"));
    c.env_remove("GRAPHSKEL_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Fixture cloud at eps 0.1 with the given seed.
fn simulate(dir: &TempDir, seed: u64) -> PathBuf {
    let cloud = p(dir, &format!("cloud{seed}.txt"));
    let out = run(&["simulate", "--eps", "0.1", "--seed", &seed.to_string(), "--output", s(&cloud)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    cloud
}

#[test]
fn simulate_writes_cloud_and_verified_manifest() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 1);
    let manifest = json(&p(&dir, "cloud1.manifest.json"));
    assert_eq!(manifest["hausdorff_ok"], true);
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config"]["command"], "simulate");
    assert!(manifest["hausdorff"].as_f64().unwrap() <= 0.1);
    let text = std::fs::read_to_string(&cloud).unwrap();
    assert!(text.starts_with("# {"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), manifest["num_points"].as_u64().unwrap() as usize);
}

#[test]
fn simulate_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ca = simulate(&a, 9);
    let cb = simulate(&b, 9);
    let strip = |p: &Path| {
        std::fs::read_to_string(p).unwrap().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip(&ca), strip(&cb));
}

#[test]
fn zero_noise_is_recorded() {
    let dir = TempDir::new().unwrap();
    let cloud = p(&dir, "c.txt");
    let out = run(&["simulate", "--eps", "0.1", "--noise", "0", "--output", s(&cloud)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest = json(&p(&dir, "c.manifest.json"));
    assert_eq!(manifest["noiseless"], true);
    assert_eq!(manifest["noise"], 0.0);
}

#[test]
fn simulate_rejects_invalid_sample_spec() {
    let dir = TempDir::new().unwrap();
    let out = run(&["simulate", "--eps", "0.1", "--noise", "0.5", "--output", s(&p(&dir, "c.txt"))]);
    assert_eq!(code(&out), 1);
    assert!(!p(&dir, "c.txt").exists());
}

#[test]
fn partition_of_fixture_has_five_vertex_clusters() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 2);
    let labels = p(&dir, "labels.json");
    let out = run(&["partition", "--ratio", "8", "--eps", "0.1", "--input", s(&cloud), "--output", s(&labels)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&labels);
    assert_eq!(doc["vertex_like_clusters"], 5);
    assert_eq!(doc["labels"].as_array().unwrap().len(), doc["num_points"].as_u64().unwrap() as usize);
    assert!(doc["diagnostics"][0]["shell_components"].is_u64());
}

#[test]
fn low_ratio_warns_on_stderr() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 2);
    let out = run(&["partition", "--ratio", "4", "--eps", "0.1", "--input", s(&cloud), "--output", s(&p(&dir, "l.json"))]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("R < 12ε guarantee regime"));
}

#[test]
fn graph_of_fixture_at_ratio_eight() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 3);
    let graph = p(&dir, "g.json");
    let out = run(&["graph", "--ratio", "8", "--eps", "0.1", "--input", s(&cloud), "--output", s(&graph)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&graph);
    assert_eq!(doc["structure_verified"], true);
    assert_eq!(doc["vertices"].as_array().unwrap().len(), 5);
    assert_eq!(doc["edges"].as_array().unwrap().len(), 5);
    assert_eq!(doc["schema_version"], 1);
    let matrix = doc["boundary_matrix"].as_array().unwrap();
    for e in 0..5 {
        let col: u64 = matrix.iter().map(|row| row[e].as_u64().unwrap()).sum();
        assert_eq!(col, 2);
    }
}

#[test]
fn graph_at_ratio_four_is_flagged_not_failed() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 3);
    let graph = p(&dir, "g.json");
    let out = run(&["graph", "--ratio", "4", "--eps", "0.1", "--input", s(&cloud), "--output", s(&graph)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&graph);
    assert_eq!(doc["structure_verified"], false);
    let clusters = doc["vertices"].as_array().unwrap().len() + doc["edges"].as_array().unwrap().len();
    assert!(clusters < 10, "{clusters} clusters");
    // an unverified graph cannot be fitted
    let out = run(&["fit", "--input", s(&cloud), "--graph", s(&graph), "--output", s(&p(&dir, "f.json"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn single_segment_gives_one_edge() {
    let dir = TempDir::new().unwrap();
    let spec = p(&dir, "segment.json");
    std::fs::write(&spec, r#"{"dim": 2, "vertices": [[0, 0], [5, 1]], "edges": [[0, 1]]}"#).unwrap();
    let cloud = p(&dir, "seg.txt");
    let out = run(&["simulate", "--eps", "0.1", "--graph", s(&spec), "--output", s(&cloud)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let graph = p(&dir, "g.json");
    let out = run(&["graph", "--ratio", "12", "--eps", "0.1", "--input", s(&cloud), "--output", s(&graph)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&graph);
    assert_eq!(doc["vertices"].as_array().unwrap().len(), 2);
    assert_eq!(doc["edges"][0]["boundary"], serde_json::json!([0, 1]));
}

fn fit(dir: &TempDir, cloud: &Path, extra: &[&str]) -> (Value, Value) {
    let graph = p(dir, "g.json");
    let out = run(&["graph", "--ratio", "8", "--eps", "0.1", "--input", s(cloud), "--output", s(&graph)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fitted = p(dir, "fit.json");
    let mut args = vec!["fit", "--eps", "0.1", "--input", s(cloud), "--graph", s(&graph), "--output", s(&fitted)];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    (json(&graph), json(&fitted))
}

#[test]
fn fit_recovers_fixture_vertices() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 4);
    let (_, doc) = fit(&dir, &cloud, &[]);
    let truth = synthetic::builtin_fixture();
    for v in doc["vertices"].as_array().unwrap() {
        let v: Vec<f64> = v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        let nearest = truth
            .vertices()
            .iter()
            .map(|t| graphskel::geometry::distance(&v, t).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest <= 0.2, "fitted vertex {v:?} is {nearest} from the truth");
    }
    let trace: Vec<f64> = doc["loglik_trace"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    assert_eq!(doc["config"]["command"], "fit");
    assert_eq!(doc["graph_config"]["command"], "graph");

    let csv = std::fs::read_to_string(p(&dir, "fit.wireframe.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "edge,vertex,x,y,z");
    assert_eq!(rows.len(), 1 + 2 * 5);
}

#[test]
fn zero_iterations_return_initialization() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 5);
    let (graph, doc) = fit(&dir, &cloud, &["--max-iters", "0"]);
    assert_eq!(doc["iterations"], 0);
    for (v, g) in doc["vertices"].as_array().unwrap().iter().zip(graph["vertices"].as_array().unwrap()) {
        assert_eq!(v, &g["centroid"]);
    }
}

#[test]
fn pipeline_sweep_matches_at_every_ratio() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 6);
    let report = p(&dir, "sweep.json");
    let out = run(&["pipeline", "--eps", "0.1", "--ratios", "12,10,8,6", "--input", s(&cloud), "--output", s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&report);
    let rows = doc["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["structure_match"] == true));
    assert!(doc["report"]["selected"].is_u64());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ratio"));
}

#[test]
fn malformed_input_reports_line() {
    let dir = TempDir::new().unwrap();
    let cloud = p(&dir, "bad.txt");
    std::fs::write(&cloud, "0,0,0\n1,1,1\n2,2\n").unwrap();
    let out = run(&["graph", "--ratio", "12", "--input", s(&cloud), "--output", s(&p(&dir, "g.json"))]);
    assert_eq!(code(&out), 1);
    let err: Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "parse");
    assert_eq!(err["error"]["line"], 3);
    assert!(!p(&dir, "g.json").exists());
}

#[test]
fn empty_input_fails() {
    let dir = TempDir::new().unwrap();
    let cloud = p(&dir, "empty.txt");
    std::fs::write(&cloud, "").unwrap();
    let out = run(&["partition", "--ratio", "12", "--input", s(&cloud), "--output", s(&p(&dir, "l.json"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn closed_loop_is_a_structural_error() {
    // a circle has no vertex-like samples, so its single edge cluster is orphaned
    let dir = TempDir::new().unwrap();
    let cloud = p(&dir, "circle.txt");
    let n = 2000;
    let text: String = (0..n)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            format!("{},{}\n", 20.0 * t.cos(), 20.0 * t.sin())
        })
        .collect();
    std::fs::write(&cloud, text).unwrap();
    let out = run(&["graph", "--ratio", "12", "--eps", "0.1", "--input", s(&cloud), "--output", s(&p(&dir, "g.json"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let err: Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "structural");
}

#[test]
fn vanishing_sigma_is_a_numerical_error() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 7);
    let graph = p(&dir, "g.json");
    let out = run(&["graph", "--ratio", "8", "--eps", "0.1", "--input", s(&cloud), "--output", s(&graph)]);
    assert_eq!(code(&out), 0);
    let out = run(&["fit", "--sigma", "1e-200", "--input", s(&cloud), "--graph", s(&graph), "--output", s(&p(&dir, "f.json"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["graph", "--bogus"])), 1);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["graph", "--R", "1", "--ratio", "8", "--input", "x", "--output", "y"])), 1);
    assert_eq!(code(&run(&["graph", "--ratio", "8", "--input", "/nonexistent/cloud.txt", "--output", "y"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 8);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let graph = p(&dir, &format!("g{threads}.json"));
        let fitted = p(&dir, &format!("f{threads}.json"));
        let out = bin()
            .env("GRAPHSKEL_THREADS", threads)
            .args(["graph", "--ratio", "10", "--eps", "0.1", "--input", s(&cloud), "--output", s(&graph)])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        let out = bin()
            .env("GRAPHSKEL_THREADS", threads)
            .args(["fit", "--max-iters", "5", "--input", s(&cloud), "--graph", s(&graph), "--output", s(&fitted)])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let mut doc = json(&fitted);
        doc["config"] = Value::Null;
        doc["graph_config"] = Value::Null;
        doc["wireframe"] = Value::Null;
        outputs.push(doc);
    }
    assert_eq!(outputs[0], outputs[1]);
    let out = bin().env("GRAPHSKEL_THREADS", "0").args(["graph", "--ratio", "8"]).output().unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cloud = simulate(&dir, 10);
    let graph = p(&dir, "g.json");
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let out = run(&["graph", "--ratio", "8", "--eps", "0.1", "--input", s(&cloud), "--output", s(&graph)]);
        assert_eq!(code(&out), 0);
        bytes.push(std::fs::read(&graph).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn simulate_graph_fit_round_trip_on_random_graphs() {
    let dir = TempDir::new().unwrap();
    let config = graphskel::ReconstructionConfig::from_ratio(12.0, 0.1).unwrap();
    let mut failures = Vec::new();
    for k in 0..20u64 {
        let dim = 2 + (k % 2) as usize;
        let truth = synthetic::random_compliant_graph(dim, 4, &config, 500 + k).unwrap();
        let spec = p(&dir, &format!("truth{k}.json"));
        std::fs::write(&spec, serde_json::to_string(&truth).unwrap()).unwrap();
        for seed in 0..3 {
            let cloud = p(&dir, "rt.txt");
            let graph = p(&dir, "rt.graph.json");
            let fitted = p(&dir, "rt.fit.json");
            let seed = (10 * k + seed).to_string();
            let out = run(&["simulate", "--eps", "0.1", "--seed", &seed, "--graph", s(&spec), "--output", s(&cloud)]);
            assert_eq!(code(&out), 0, "{}", stderr(&out));
            let out = run(&["graph", "--ratio", "12", "--eps", "0.1", "--input", s(&cloud), "--output", s(&graph)]);
            if code(&out) != 0 {
                failures.push(format!("graph {k} seed {seed}: exit {} {}", code(&out), stderr(&out).trim()));
                continue;
            }
            let g = json(&graph);
            assert_eq!(g["structure_verified"], true);
            assert_eq!(g["edges"].as_array().unwrap().len(), truth.num_edges(), "graph {k} seed {seed}");
            assert_eq!(g["vertices"].as_array().unwrap().len(), truth.vertices().len(), "graph {k} seed {seed}");
            let out = run(&["fit", "--eps", "0.1", "--input", s(&cloud), "--graph", s(&graph), "--output", s(&fitted)]);
            assert_eq!(code(&out), 0, "{}", stderr(&out));
            let vertices = json(&fitted)["vertices"].as_array().unwrap().clone();
            let sq: f64 = vertices
                .iter()
                .map(|v| {
                    let v: Vec<f64> = v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
                    truth
                        .vertices()
                        .iter()
                        .map(|t| graphskel::geometry::distance(&v, t).unwrap().powi(2))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            let rmse = (sq / vertices.len() as f64).sqrt();
            assert!(rmse <= 0.2, "graph {k} seed {seed}: rmse {rmse}");
        }
    }
    assert!(failures.is_empty(), "{} of 60 runs failed:\n{}", failures.len(), failures.join("\n"));
}
