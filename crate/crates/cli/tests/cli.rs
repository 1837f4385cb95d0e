use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use courtplan_core::evalkit::read_sidecar;

const TINY: &str = r#"
[synthetic]
seed = 3
n_possessions = 24
frames_per_possession = [40, 80]

[model]
horizon = 16
base_width = 8
dim_mults = [1, 2]
kernel = 3
groups = 4

[train]
lr = 1e-3
batch = 4
steps = 6

[plan]
batch = 3

[adversary]
m = 8
total_len = 16

[eval]
n_runs = 5
n_starts = 2
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_courtplan"));
    c.env_remove("COURTPLAN_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Pipeline {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Pipeline {
    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
    fn config(&self) -> PathBuf {
        self.p("tiny.toml")
    }
    fn models(&self) -> [String; 4] {
        [
            "--diffusion".into(),
            s(&self.p("d.ckpt")).into(),
            "--value".into(),
            s(&self.p("v.ckpt")).into(),
        ]
    }
}

/// Generated corpus, ingested games, dataset and both checkpoints, built once.
fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let p = Pipeline { _dir: dir, root };
        std::fs::write(p.config(), TINY).unwrap();
        let cfg = s(&p.config()).to_string();
        ok(&["--config", &cfg, "generate", "--out", s(&p.p("raw"))]);
        ok(&["--config", &cfg, "ingest", "--raw-dir", s(&p.p("raw")), "--out", s(&p.p("games"))]);
        ok(&["--config", &cfg, "build-dataset", "--games", s(&p.p("games")), "--out", s(&p.p("data"))]);
        ok(&["--config", &cfg, "train-diffusion", "--data", s(&p.p("data")), "--out", s(&p.p("d.ckpt"))]);
        ok(&["--config", &cfg, "train-value", "--data", s(&p.p("data")), "--out", s(&p.p("v.ckpt"))]);
        p
    })
}

fn with_models<'a>(p: &'a Pipeline, head: &[&'a str], models: &'a [String; 4], tail: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = head.to_vec();
    v.extend(models.iter().map(String::as_str));
    v.extend_from_slice(tail);
    let _ = p;
    v
}

#[test]
fn ingest_summary_matches_generated_sidecar() {
    let p = pipeline();
    let side = read_sidecar(&std::fs::read(p.p("raw/sidecar.csv")).unwrap()).unwrap();
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p.p("games/ingest.json")).unwrap()).unwrap();
    assert_eq!(summary["possessions"].as_u64().unwrap() as usize, side.len());
    assert_eq!(summary["games"], 1);
    assert!(p.p("d.ckpt.losses.csv").exists());
}

#[test]
fn missing_input_names_the_path_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.motion.json");
    let out = run(&["ingest", "--motion", s(&missing), "--pbp", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.motion.json"));
}

#[test]
fn unknown_config_key_is_a_usage_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[plan]\nguidance = 2.0\n").unwrap();
    let out = run(&["--config", s(&cfg), "generate", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("guidance"));
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["generate", "--possessions", "3"])
        .env("COURTPLAN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("synthetic/generate.json").exists());
    let out = run(&["generate", "--possessions", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plans_are_reproducible_and_verifiable() {
    let p = pipeline();
    let cfg = s(&p.config()).to_string();
    let m = p.models();
    let data = s(&p.p("data")).to_string();
    let (a, b) = (p.p("plan_a.bin"), p.p("plan_b.bin"));
    for path in [&a, &b] {
        let args = with_models(p, &["--config", &cfg, "plan"], &m, &["--data", &data, "--seed", "4", "--alpha", "0.1", "--out", s(path)]);
        ok(&args);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    ok(&with_models(p, &["verify", "--artifact", s(&a)], &m, &[]));
    let swapped = [m[0].clone(), m[3].clone(), m[2].clone(), m[1].clone()];
    let out = run(&with_models(p, &["verify", "--artifact", s(&a)], &swapped, &[]));
    assert_eq!(out.status.code(), Some(2));

    let svg = p.p("plan.svg");
    ok(&["--config", &cfg, "render", "--input", s(&a), "--index", "1", "--out", s(&svg)]);
    let text = std::fs::read_to_string(&svg).unwrap();
    for layer in ["id=\"court\"", "id=\"traces\"", "id=\"markers\""] {
        assert!(text.contains(layer), "{layer}");
    }
    ok(&with_models(p, &["verify", "--artifact", s(&svg)], &m, &[]));
}

#[test]
fn rollouts_run_for_both_policies() {
    let p = pipeline();
    let cfg = s(&p.config()).to_string();
    let m = p.models();
    let data = s(&p.p("data")).to_string();
    for policy in ["man_to_man", "zone_2_3"] {
        for seg in ["8", "16"] {
            let out = p.p(&format!("roll_{policy}_{seg}.bin"));
            let args = with_models(p, &["--config", &cfg, "rollout"], &m, &["--data", &data, "--policy", policy, "--m", seg, "--out", s(&out)]);
            let text = ok(&args);
            assert!(text.contains(&format!("m {seg}")), "{text}");
        }
    }
    let out = run(&with_models(p, &["--config", &cfg, "rollout"], &m, &["--data", &data, "--m", "32"]));
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn evaluation_writes_a_five_by_five_table() {
    let p = pipeline();
    let cfg = s(&p.config()).to_string();
    let m = p.models();
    let dir = p.p("eval");
    let data = p.p("data");
    let args = with_models(p, &["--config", &cfg, "evaluate"], &m, &["--data", s(&data), "--out", s(&dir)]);
    ok(&args);
    let runs = std::fs::read_to_string(dir.join("runs.csv")).unwrap();
    let mut lines = runs.lines();
    assert_eq!(lines.next().unwrap(), "alpha,run,return,oob_rate");
    assert_eq!(lines.count(), 25);
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert!(report["ground_truth"]["avg"].is_number());
    ok(&with_models(p, &["verify", "--artifact", s(&dir.join("report.json"))], &m, &[]));
}

#[test]
fn help_and_bad_flags() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let out = run(&["plan", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}
