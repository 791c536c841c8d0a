use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::Pipeline;
use super::{Method, RunConfig};
use crate::error::{Error, Result};

/// One `(method, ε, seed)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub eps: f64,
    pub seed: u64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub episodes: usize,
    pub stable_transitions: usize,
    pub eps1_consumed: f64,
    pub eps2_consumed: f64,
}

/// Seed-averaged `(method, ε)` cell with a normal 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub eps: f64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

pub fn cell_dir(out: &Path, method: Method, eps: f64, seed: u64) -> PathBuf {
    out.join("sweep")
        .join(method.name())
        .join(format!("eps-{eps}"))
        .join(format!("seed-{seed}"))
}

pub fn shared_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("sweep").join("shared").join(format!("seed-{seed}"))
}

fn cell_config(base: &RunConfig, method: Method, eps: f64, seed: u64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.method = method;
    cfg.seed = seed;
    cfg.budget.eps = eps;
    cfg.sweep = Default::default();
    cfg
}

fn run_cell(base: &RunConfig, out: &Path, method: Method, eps: f64, seed: u64) -> Result<ResultRow> {
    let cfg = cell_config(base, method, eps, seed);
    let p = Pipeline::new(cfg, cell_dir(out, method, eps, seed))?.with_shared(shared_dir(out, seed));
    let eval = super::commands::evaluate(&p)?;
    let stage = p.train()?;
    let (e1, e2) = stage
        .ledger
        .entries
        .iter()
        .fold((0.0, 0.0), |(a, b), e| match e.name.as_str() {
            "data_release" => (a + e.eps, b),
            _ => (a, b + e.eps),
        });
    Ok(ResultRow {
        method,
        eps,
        seed,
        mean: eval.report.mean,
        ci_low: eval.report.mean - eval.report.ci95,
        ci_high: eval.report.mean + eval.report.ci95,
        episodes: eval.report.episodes,
        stable_transitions: stage.summary.stable_transitions,
        eps1_consumed: e1,
        eps2_consumed: e2,
    })
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(m, e)| *m == r.method && *e == r.eps) {
            keys.push((r.method, r.eps));
        }
    }
    keys.into_iter()
        .map(|(method, eps)| {
            let means: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.eps == eps)
                .map(|r| r.mean)
                .collect();
            let n = means.len() as f64;
            let mean = means.iter().sum::<f64>() / n;
            let se = if means.len() > 1 {
                (means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                method,
                eps,
                mean,
                ci_low: mean - 1.96 * se,
                ci_high: mean + 1.96 * se,
                se,
                seeds: means.len(),
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every `(method, ε, seed)` cell of the sweep block. Experts and data
/// are generated once per seed and shared by that seed's cells. An empty
/// block does nothing.
pub fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepOutcome> {
    let s = &cfg.sweep;
    if s.eps.is_empty() || s.methods.is_empty() || s.seeds.is_empty() {
        return Ok(SweepOutcome {
            rows: Vec::new(),
            summary: Vec::new(),
            files: Vec::new(),
        });
    }
    s.seeds.par_iter().try_for_each(|&seed| -> Result<()> {
        let p = Pipeline::new(cell_config(cfg, s.methods[0], s.eps[0], seed), shared_dir(out, seed))?;
        let ens = p.ensemble()?;
        p.dataset(&ens).map(|_| ())
    })?;
    let cells: Vec<(Method, f64, u64)> = s
        .methods
        .iter()
        .flat_map(|&m| s.eps.iter().flat_map(move |&e| s.seeds.iter().map(move |&sd| (m, e, sd))))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(m, e, sd)| run_cell(cfg, out, m, e, sd))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    crate::io::create_dir(out)?;
    let results = out.join("results.csv");
    let summary_path = out.join("summary.csv");
    write_csv(&results, &rows)?;
    write_csv(&summary_path, &summary)?;
    Ok(SweepOutcome {
        rows,
        summary,
        files: vec![results, summary_path],
    })
}
