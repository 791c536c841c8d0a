//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Tolerances and runtime limits are
//! pinned below.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use expertdp::harness::{commands, Method, Pipeline, RunConfig, RunManifest};
use expertdp::mdp::{EnvModel, State, TabularMdp};
use expertdp::privacy::{check_release_budget, dpsgd_epsilon, BudgetLedger};
use expertdp::rl::{cql_example, FeatTransition, QNet};
use expertdp::rng;
use expertdp::verify::suite::{audit_report, dpsgd_reports, grid_ensemble, ratio_report, sensitivity_reports, tail_reports};
use expertdp::verify::{CheckReport, TinyInstance, VerifyConfig};
use rand::Rng;

const SENSITIVITY_TOL: f64 = 1e-12;
const CLIP_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-5;
const GRAD_POINTS: usize = 10;
const FD_STEP: f64 = 1e-6;
const GAUSSIAN_REL_TOL: f64 = 0.25;

const LIMIT_1: Duration = Duration::from_secs(10);
const LIMIT_2: Duration = Duration::from_secs(30);
const LIMIT_3: Duration = Duration::from_secs(60);
const LIMIT_4: Duration = Duration::from_secs(600);
const LIMIT_5: Duration = Duration::from_secs(1);
const LIMIT_6: Duration = Duration::from_secs(60);
const LIMIT_7: Duration = Duration::from_secs(10);
const LIMIT_8: Duration = Duration::from_secs(60);
const LIMIT_9: Duration = Duration::from_secs(1800);

type Outcome = Result<(bool, String), String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&configs_dir().join(name)).expect("shipped config parses")
}

fn shipped_run_configs() -> Vec<(String, RunConfig)> {
    let mut out: Vec<_> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), RunConfig::load(&p).unwrap()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Every `(method, ε)` variant a shipped config can run: its own settings and
/// each sweep cell.
fn variants(cfg: &RunConfig) -> Vec<RunConfig> {
    let mut v = vec![cfg.clone()];
    for &m in &cfg.sweep.methods {
        for &e in &cfg.sweep.eps {
            let mut c = cfg.clone();
            c.method = m;
            c.budget.eps = e;
            v.push(c);
        }
    }
    v
}

fn verify_cfg() -> VerifyConfig {
    load("verify.toml").verify
}

fn suite_line(reports: &[CheckReport]) -> String {
    reports
        .iter()
        .map(|r| format!("{} {:.6} vs {:.6} ({:?})", r.name, r.empirical, r.claimed, r.verdict))
        .collect::<Vec<_>>()
        .join("; ")
}

fn criterion_1(cfg: &VerifyConfig, seed: u64) -> Outcome {
    let tiny = TinyInstance::build(&cfg.tiny).map_err(|e| e.to_string())?;
    let grid = grid_ensemble(&cfg.grid, seed).map_err(|e| e.to_string())?;
    let reports = sensitivity_reports(cfg, &tiny, &grid, seed);
    let ok = reports.len() == 2 && reports.iter().all(|r| r.empirical <= 1.0 + SENSITIVITY_TOL && r.verdict.ok());
    let prefixes = reports[0].details.get("prefixes").copied().unwrap_or(0.0);
    Ok((ok, format!("{prefixes} tiny prefixes, {} gridworld pairs: {}", cfg.grid.pairs, suite_line(&reports))))
}

fn criterion_2(cfg: &VerifyConfig, seed: u64) -> Outcome {
    let tiny = TinyInstance::build(&cfg.tiny).map_err(|e| e.to_string())?;
    let r = ratio_report(cfg, &tiny, seed);
    let violations = r.details.get("violations").copied().unwrap_or(f64::NAN);
    let ok = r.trials == 1000 && violations == 0.0 && r.verdict.ok();
    Ok((ok, format!("{} checks, worst ratio {:.4} vs e^eps' = {:.4}, {violations} violations", r.trials, r.empirical, r.claimed)))
}

fn criterion_3(cfg: &VerifyConfig, seed: u64) -> Outcome {
    let mut pairs = Vec::new();
    for (_, c) in shipped_run_configs() {
        for v in variants(&c) {
            let p = Pipeline::new(v, std::env::temp_dir()).map_err(|e| e.to_string())?;
            pairs.extend(p.quadrature_pairs());
        }
    }
    let reports = tail_reports(cfg, &pairs, seed).map_err(|e| e.to_string())?;
    let ok = cfg.tail.trials >= 100_000 && reports.iter().all(|r| r.verdict.ok());
    Ok((ok, format!("{} shipped (eps', delta') pairs; {}", pairs.len(), suite_line(&reports))))
}

fn criterion_4(cfg: &VerifyConfig, seed: u64) -> Outcome {
    let tiny = TinyInstance::build(&cfg.tiny).map_err(|e| e.to_string())?;
    let r = audit_report(cfg, &tiny, seed).map_err(|e| e.to_string())?;
    let ok = r.verdict.ok() && r.trials >= 1_000_000 && cfg.audit.pairs >= 20;
    Ok((
        ok,
        format!(
            "worst of {} pairs: divergence {:.2e} <= {:.4} + slack {:.2e} at eps {:.4} ({} trials per side)",
            cfg.audit.pairs, r.empirical, r.claimed, r.slack, r.details["eps"], r.trials
        ),
    ))
}

fn criterion_5(sweep_out: &Path) -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, 0.0f64);
    let mut checked = 0;
    for (name, c) in shipped_run_configs() {
        for v in variants(&c) {
            let p = Pipeline::new(v, std::env::temp_dir()).map_err(|e| format!("{name}: {e}"))?;
            let Some(params) = p.release_params().map_err(|e| format!("{name}: {e}"))? else {
                continue;
            };
            let (eps, delta) = check_release_budget(&params).map_err(|e| format!("{name}: {e}"))?;
            if eps > params.eps1 || delta > params.delta1 {
                return Ok((false, format!("{name}: composed ({eps}, {delta}) exceeds ({}, {})", params.eps1, params.delta1)));
            }
            worst.0 = worst.0.max(eps / params.eps1);
            worst.1 = worst.1.max(delta / params.delta1);
            checked += 1;
        }
    }
    let arithmetic = start.elapsed();
    let mut ledgers = 0;
    for method in ["selective", "dpsgd-only"] {
        let dir = sweep_out.join("sweep").join(method);
        for entry in walk(&dir) {
            if entry.file_name().is_some_and(|n| n == "ledger.json") && entry.parent().is_some_and(|p| p.ends_with("train")) {
                let text = std::fs::read_to_string(&entry).map_err(|e| e.to_string())?;
                let l: BudgetLedger = serde_json::from_str(&text).map_err(|e| e.to_string())?;
                let (e, d) = l.consumed();
                if e != l.eps1 + l.eps2 || d != l.delta1 + l.delta2 || l.eps != l.eps1 + l.eps2 {
                    return Ok((false, format!("{}: consumed ({e}, {d}) vs split {:?}", entry.display(), l.split())));
                }
                ledgers += 1;
            }
        }
    }
    Ok((
        checked > 0 && ledgers > 0 && arithmetic <= LIMIT_5,
        format!(
            "{checked} release variants compose within budget (worst eps ratio {:.3}, delta ratio {:.3}) in {:.3}s (limit {}s); \
             {ledgers} final ledgers sum exactly",
            worst.0,
            worst.1,
            arithmetic.as_secs_f64(),
            LIMIT_5.as_secs()
        ),
    ))
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn criterion_6(cfg: &VerifyConfig, seed: u64) -> Outcome {
    let grid = grid_ensemble(&cfg.grid, seed).map_err(|e| e.to_string())?;
    let reports = dpsgd_reports(cfg, &grid, seed).map_err(|e| e.to_string())?;
    let ok = cfg.dpsgd.steps >= 1000
        && cfg.dpsgd.clip == 1.0
        && reports.iter().all(|r| r.verdict.ok())
        && reports.iter().find(|r| r.name == "dpsgd_clip_norm").is_some_and(|r| r.empirical <= 1.0 + CLIP_TOL);
    Ok((ok, format!("{} private steps: {}", reports[0].trials, suite_line(&reports))))
}

fn criterion_7(seed: u64) -> Outcome {
    let env = EnvModel::tabular(TabularMdp::chain(5, 0.1).unwrap(), 0.9, 10).unwrap();
    let mut r = rng::stream(seed, "acceptance-gradient", &[]);
    let dims = [env.feature_dim(), 8, 8, 2];
    let mut worst: f64 = 0.0;
    for _ in 0..GRAD_POINTS {
        let net = QNet::init(dims, &mut r);
        let target = QNet::init(dims, &mut r);
        let t = FeatTransition {
            x: (0..dims[0]).map(|_| r.random_range(-1.0..1.0)).collect(),
            a: r.random_range(0..2),
            r: r.random_range(-1.0..1.0),
            x_next: env.features(&State::Cell(r.random_range(0..5))),
            terminal: r.random::<bool>(),
        };
        let alpha = r.random_range(0.1..2.0);
        let (_, grad) = cql_example(&net, &target, &t, alpha, 0.9);
        let mut fd = vec![0.0; grad.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut up = net.clone();
            up.params[i] += FD_STEP;
            let mut down = net.clone();
            down.params[i] -= FD_STEP;
            *slot = (cql_example(&up, &target, &t, alpha, 0.9).0 - cql_example(&down, &target, &t, alpha, 0.9).0)
                / (2.0 * FD_STEP);
        }
        let scale = fd.iter().chain(&grad).map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        let err = grad.iter().zip(&fd).map(|(g, f)| (g - f).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    Ok((worst <= GRAD_REL_TOL, format!("max relative error {worst:.2e} over {GRAD_POINTS} points")))
}

fn criterion_8() -> Outcome {
    let delta: f64 = 1e-5;
    let sigma = (2.0 * (1.25 / delta).ln()).sqrt();
    let eps = dpsgd_epsilon(sigma, 1.0, 1, delta).map_err(|e| e.to_string())?;
    let within = (eps - 1.0).abs() <= GAUSSIAN_REL_TOL;
    let sigmas: [f64; 3] = [0.8, 1.5, 4.0];
    let qs: [f64; 3] = [0.01, 0.1, 0.5];
    let steps = [10usize, 100, 1000];
    let mut grid = BTreeMap::new();
    for &s in &sigmas {
        for &q in &qs {
            for &n in &steps {
                grid.insert((s.to_bits(), q.to_bits(), n), dpsgd_epsilon(s, q, n, delta).map_err(|e| e.to_string())?);
            }
        }
    }
    let at = |s: f64, q: f64, n: usize| grid[&(s.to_bits(), q.to_bits(), n)];
    let mut monotone = true;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let e = at(sigmas[i], qs[j], steps[k]);
                if i < 2 {
                    monotone &= at(sigmas[i + 1], qs[j], steps[k]) < e;
                }
                if j < 2 {
                    monotone &= at(sigmas[i], qs[j + 1], steps[k]) > e;
                }
                if k < 2 {
                    monotone &= at(sigmas[i], qs[j], steps[k + 1]) > e;
                }
            }
        }
    }
    Ok((within && monotone, format!("q = 1 single step: eps {eps:.4} vs 1.0 (sigma {sigma:.4}); 3x3x3 grid monotone: {monotone}")))
}

fn criterion_9(out: &Path) -> Outcome {
    let mut desk = load("desk.toml");
    desk.sweep.eps = vec![10.0];
    desk.sweep.methods = vec![Method::Selective, Method::DpsgdOnly, Method::NonPrivate];
    desk.sweep.seeds = vec![1, 2, 3];
    let p = Pipeline::new(desk, out.join("desk")).map_err(|e| e.to_string())?;
    let outcome = commands::sweep(&p).map_err(|e| e.to_string())?;
    let cell = |m: Method| outcome.summary.iter().find(|r| r.method == m).cloned().ok_or("missing cell");
    let sel = cell(Method::Selective)?;
    let dp = cell(Method::DpsgdOnly)?;
    let np = cell(Method::NonPrivate)?;
    let pooled = (sel.se.powi(2) + dp.se.powi(2)).sqrt();
    let ordering = sel.mean >= dp.mean - pooled && np.mean >= sel.mean;

    let ro = Pipeline::new(load("release-only.toml"), out.join("release-only")).map_err(|e| e.to_string())?;
    let stage = commands::train(&ro).map_err(|e| e.to_string())?;
    let eval = commands::evaluate(&ro).map_err(|e| e.to_string())?;
    let eps2_spent = stage
        .ledger
        .entries
        .iter()
        .filter(|e| e.name == "selective_dpsgd")
        .fold(0.0, |acc, e| acc + e.eps);
    let degenerate = eps2_spent == 0.0 && stage.ledger.eps2 == 0.0 && stage.summary.stats.private_steps == 0;
    Ok((
        ordering && degenerate,
        format!(
            "selective {:.3} (se {:.3}), dpsgd-only {:.3} (se {:.3}), non-private {:.3} (se {:.3}), pooled se {:.3}; \
             release-only p = 0 run: eps2 consumed {eps2_spent}, return {:.3}",
            sel.mean, sel.se, dp.mean, dp.se, np.mean, np.se, pooled, eval.report.mean
        ),
    ))
}

const REPLAY_CONFIG: &str = r#"
seed = 3
method = "selective"

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
per_expert = 4

[budget]
eps = 4.0

[train]
batch = 4
steps = 400
hidden = 8
eval_interval = 100
curve_episodes = 2

[eval]
episodes = 4

[sweep]
eps = [2.0, 4.0]
methods = ["dpsgd-only", "non-private"]
seeds = [1, 2]
"#;

fn run_command(command: &str, p: &Pipeline) -> Result<(), String> {
    let r = match command {
        "gen-experts" => commands::gen_experts(p).map(drop),
        "gen-data" => commands::gen_data(p).map(drop),
        "release" => commands::release(p).map(drop),
        "train" => commands::train(p).map(drop),
        "evaluate" => commands::evaluate(p).map(drop),
        "sweep" => commands::sweep(p).map(drop),
        other => return Err(format!("unknown command {other}")),
    };
    r.map_err(|e| format!("{command}: {e}"))
}

fn hashes(m: &RunManifest) -> BTreeMap<String, String> {
    m.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())).collect()
}

fn criterion_10(out: &Path) -> Outcome {
    let base = RunConfig::from_toml(REPLAY_CONFIG).map_err(|e| e.to_string())?;
    let first = out.join("first");
    let mut runs: Vec<(&str, PathBuf)> = Vec::new();
    for (cmd, method) in [
        ("gen-experts", Method::Selective),
        ("gen-data", Method::Selective),
        ("release", Method::Selective),
        ("train", Method::DpsgdOnly),
        ("evaluate", Method::DpsgdOnly),
        ("sweep", Method::Selective),
    ] {
        let mut cfg = base.clone();
        cfg.method = method;
        let dir = first.join(cmd);
        let p = Pipeline::new(cfg, &dir).map_err(|e| e.to_string())?;
        if cmd == "evaluate" {
            run_command("train", &p)?;
        }
        run_command(cmd, &p)?;
        runs.push((cmd, dir));
    }
    let mut files = 0;
    for (cmd, dir) in &runs {
        let original = RunManifest::load(&RunManifest::path(dir, cmd)).map_err(|e| e.to_string())?;
        let replay_dir = out.join("replay").join(cmd);
        let p = Pipeline::new(original.config.clone(), &replay_dir).map_err(|e| e.to_string())?;
        if *cmd == "evaluate" {
            run_command("train", &p)?;
        }
        run_command(cmd, &p)?;
        let replayed = RunManifest::load(&RunManifest::path(&replay_dir, cmd)).map_err(|e| e.to_string())?;
        if original.artifacts.is_empty() || hashes(&original) != hashes(&replayed) {
            return Ok((false, format!("{cmd}: replayed artifacts differ")));
        }
        files += original.artifacts.len();
    }
    Ok((true, format!("{} manifests replayed, {files} artifacts byte-identical", runs.len())))
}

fn main() {
    let cfg = verify_cfg();
    let seed = rng::derive_seed(7, "audit", &[]);
    let scratch = tempfile::tempdir().expect("temp dir");

    let mut results: BTreeMap<usize, (bool, String)> = BTreeMap::new();
    let mut record = |n: usize, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(x) => x,
            Err(e) => (false, format!("error: {e}")),
        };
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let ok = ok && in_time;
        let limit_text = limit.map_or("unbounded".to_string(), |l| format!("limit {}s", l.as_secs()));
        let line = format!(
            "criterion {n:>2}: {} | {detail} | {:.2}s ({limit_text})",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        println!("{line}");
        results.insert(n, (ok, line));
    };

    let sweep_out = scratch.path().join("c9");
    record(1, Some(LIMIT_1), &mut || criterion_1(&cfg, seed));
    record(2, Some(LIMIT_2), &mut || criterion_2(&cfg, seed));
    record(3, Some(LIMIT_3), &mut || criterion_3(&cfg, seed));
    record(4, Some(LIMIT_4), &mut || criterion_4(&cfg, seed));
    record(6, Some(LIMIT_6), &mut || criterion_6(&cfg, seed));
    record(7, Some(LIMIT_7), &mut || criterion_7(seed));
    record(8, Some(LIMIT_8), &mut criterion_8);
    record(9, Some(LIMIT_9), &mut || criterion_9(&sweep_out));
    // The ledger half of criterion 5 reads the final ledgers written by the
    // criterion 9 sweep, so it runs afterwards and times its arithmetic itself.
    record(5, None, &mut || criterion_5(&sweep_out.join("desk")));
    record(10, None, &mut || criterion_10(&scratch.path().join("c10")));

    println!("\nsummary:");
    for (_, line) in results.values() {
        println!("{line}");
    }
    let failed: Vec<_> = results.iter().filter(|(_, (ok, _))| !ok).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("all {} acceptance criteria passed", results.len());
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
