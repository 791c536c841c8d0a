use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use expertdp::harness::RunManifest;

const TINY: &str = r#"
seed = 5
method = "dpsgd-only"

[env]
kind = "gridworld"
size = 4
slip = 0.1
horizon = 12

[ensemble]
per_setting = 3

[ensemble.grid.slip]
min = 0.0
max = 0.2
count = 2

[ensemble.grid.step_reward]
min = -0.05
max = 0.0
count = 2

[dataset]
per_expert = 3

[budget]
eps = 10.0

[train]
batch = 4
steps = 300
hidden = 8
eval_interval = 50
curve_episodes = 2

[eval]
episodes = 3
"#;

fn expertdp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_expertdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn status(o: &std::process::Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn hashes(m: &RunManifest) -> BTreeMap<String, String> {
    m.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())).collect()
}

#[test]
fn malformed_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "seed = 1\n[train]\nbogus_field = 3\n");
    let o = expertdp(&["gen-experts", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(status(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = write(dir.path(), "neg.toml", "[train]\np = 1.5\n");
    let o = expertdp(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(status(&o), 2);
}

#[test]
fn undersized_fixed_noise_is_a_budget_violation() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("[train]\n", "[train]\nsigma = 0.6\n");
    let cfg = write(dir.path(), "tiny.toml", &text);
    let out = dir.path().join("run");
    let o = expertdp(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(status(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("train").join("q.bin").exists());
}

#[test]
fn disabled_clipping_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/verify-fault.toml"))
        .unwrap()
        .replace("trials = 1000000", "trials = 20000")
        .replace("pairs = 20\n", "pairs = 2\n");
    let cfg = write(dir.path(), "fault.toml", &text);
    let out = dir.path().join("run");
    let o = expertdp(&["verify-dp", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(status(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn empty_sweep_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let o = expertdp(&["sweep", "--config", &cfg, "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(status(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("run").join("sweep").exists());
}

#[test]
fn replaying_a_manifest_reproduces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let o = expertdp(&["train", "--config", &cfg, "--out", first.to_str().unwrap()]);
    assert_eq!(status(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m1 = RunManifest::load(&RunManifest::path(&first, "train")).unwrap();

    let replay = RunManifest::path(&first, "train");
    let o = expertdp(&["train", "--config", replay.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(status(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m2 = RunManifest::load(&RunManifest::path(&second, "train")).unwrap();

    assert!(!m1.artifacts.is_empty());
    assert_eq!(hashes(&m1), hashes(&m2));
    assert_eq!(m1.inputs, m2.inputs);
    assert_eq!(m1.ledger, m2.ledger);

    let rows = csv::Reader::from_path(first.join("train").join("curve.csv")).unwrap().records().count();
    assert_eq!(rows, 300 / 50 + 1);
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(status(&expertdp(&["gen-data", "--config", &cfg, "--out", a.to_str().unwrap()])), 0);
    assert_eq!(
        status(&expertdp(&["gen-data", "--config", &cfg, "--seed", "6", "--out", b.to_str().unwrap()])),
        0
    );
    let ma = RunManifest::load(&RunManifest::path(&a, "gen-data")).unwrap();
    let mb = RunManifest::load(&RunManifest::path(&b, "gen-data")).unwrap();
    assert_eq!(mb.config.seed, 6);
    assert_ne!(hashes(&ma), hashes(&mb));
}
