//! End-to-end tests of the hamcg binary: exit codes, artifact shapes,
//! override precedence, and byte determinism of repeated runs.

use std::path::Path;
use std::process::{Command, Output};

use hamcg_core::io::sha256_hex;

fn run(dir: &Path, config: &str, args: &[&str], env: &[(&str, &str)]) -> Output {
    let cfg_path = dir.join("run.toml");
    std::fs::write(&cfg_path, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hamcg"));
    cmd.arg("--config").arg(&cfg_path).current_dir(dir);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.args(args);
    cmd.output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SDE_SMALL: &str = r#"
scenario = "simulate-sde"
[model]
preset = "harmonic"
[sde]
form = "friction"
gamma = 1.0
n_particles = 50
dt = 1e-3
t_end = 0.01
seed = 42
[sde.init]
kind = "point"
q = 1.0
p = 0.0
"#;

#[test]
fn empty_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "", &[], &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("scenario"), "{}", stderr(&out));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_hamcg"))
        .args(["--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn unknown_keys_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
scenario = "critical-points"
mystery = 1
[model]
preset = "harmonic"
other_mystery = true
[grid]
q_min = -1.0
q_max = 1.0
p_min = -1.0
p_max = 1.0
nq = 16
np = 16
"#;
    let out = run(dir.path(), cfg, &[], &[]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("mystery") && msg.contains("other_mystery"), "{msg}");
}

#[test]
fn build_graph_emits_three_edges_and_one_saddle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
scenario = "build-graph"
[model]
preset = "double_well"
[grid]
q_min = -2.5
q_max = 2.5
p_min = -2.5
p_max = 2.5
nq = 96
np = 96
[graph]
h_max = 2.0
"#;
    let out = run(dir.path(), cfg, &["--out", "g"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let graph = read_json(&dir.path().join("g/graph.json"));
    assert_eq!(graph["edges"].as_array().unwrap().len(), 3);
    let saddles = graph["vertices"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|v| v["kind"] == "saddle")
        .count();
    assert_eq!(saddles, 1);
    assert!(dir.path().join("g/labels.bin").exists());

    // the manifest stamps the exact config bytes and lists the artifacts
    let manifest = read_json(&dir.path().join("g/manifest.json"));
    assert_eq!(manifest["config_sha256"], sha256_hex(cfg.as_bytes()));
    assert_eq!(manifest["scenario"], "build-graph");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o == "graph.json"), "{outputs:?}");
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SDE_SMALL, &["--out", "s", "--seed", "777"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ckpt = read_json(&dir.path().join("s/checkpoint.json"));
    assert_eq!(ckpt["master_seed"], 777);
    let manifest = read_json(&dir.path().join("s/manifest.json"));
    assert_eq!(manifest["seed"], 777);
}

#[test]
fn threads_flag_beats_env_which_beats_config() {
    let cfg = r#"
scenario = "critical-points"
[output]
threads = 4
[model]
preset = "harmonic"
[grid]
q_min = -1.0
q_max = 1.0
p_min = -1.0
p_max = 1.0
nq = 16
np = 16
"#;
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), cfg, &["--out", "a", "--threads", "2"], &[("HAMCG_THREADS", "3")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(read_json(&dir.path().join("a/manifest.json"))["threads"], 2);

    let out = run(dir.path(), cfg, &["--out", "b"], &[("HAMCG_THREADS", "3")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(read_json(&dir.path().join("b/manifest.json"))["threads"], 3);

    let out = run(dir.path(), cfg, &["--out", "c"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(read_json(&dir.path().join("c/manifest.json"))["threads"], 4);

    let out = run(dir.path(), cfg, &["--out", "d"], &[("HAMCG_THREADS", "a lot")]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn reruns_with_the_same_config_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SDE_SMALL, &["--out", "one"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = run(dir.path(), SDE_SMALL, &["--out", "two"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for name in ["particles.csv", "checkpoint.json"] {
        let a = std::fs::read(dir.path().join("one").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("two").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn output_dir_defaults_to_the_config_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
scenario = "critical-points"
[output]
dir = "from-config"
[model]
preset = "harmonic"
[grid]
q_min = -1.0
q_max = 1.0
p_min = -1.0
p_max = 1.0
nq = 16
np = 16
"#;
    let out = run(dir.path(), cfg, &[], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("from-config/critical_points.csv").exists());
}

#[test]
fn an_undersized_hot_box_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
scenario = "solve-vfp"
[model]
preset = "harmonic"
[grid]
q_min = -1.5
q_max = 1.5
p_min = -1.5
p_max = 1.5
nq = 24
np = 24
[vfp]
form = "friction"
gamma = 20.0
dt = 1e-3
t_end = 0.5
[vfp.init]
kind = "gaussian"
q_mean = 0.0
q_sd = 0.7
p_mean = 0.0
p_sd = 1.0
"#;
    let out = run(dir.path(), cfg, &["--out", "x"], &[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("boundary flux"), "{}", stderr(&out));
}

#[test]
fn verify_coefficients_suite_passes_and_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "scenario = \"verify\"\n[verify]\nsuite = \"coefficients\"\n";
    let out = run(dir.path(), cfg, &["--out", "v"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = String::from_utf8_lossy(&out.stdout);
    for tag in ["C01  PASS", "C02  PASS", "C03  PASS", "overall: PASS"] {
        assert!(table.contains(tag), "missing {tag:?} in:\n{table}");
    }
    assert!(dir.path().join("v/verify_table.csv").exists());
    assert!(dir.path().join("v/verify_report.json").exists());
}
