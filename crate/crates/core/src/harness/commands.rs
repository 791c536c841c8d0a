use serde_json::json;

use super::pipeline::{EvalSummary, Pipeline, TrainStage};
use super::sweep::{run_sweep, SweepOutcome};
use crate::error::{Error, Result};
use crate::experts::{ExpertDataset, ExpertEnsemble};
use crate::privacy::check_release_budget;
use crate::release::ReleasedData;
use crate::verify::SuiteReport;

pub fn gen_experts(p: &Pipeline) -> Result<ExpertEnsemble> {
    let ens = p.ensemble()?;
    let degenerate = ens.provenance.iter().filter(|x| x.degenerate).count();
    p.manifest(
        "gen-experts",
        json!({ "experts": ens.len(), "p_min": ens.p_min(), "degenerate": degenerate }),
        &[],
        &[p.ensemble_dir()],
        None,
    )?;
    Ok(ens)
}

pub fn gen_data(p: &Pipeline) -> Result<ExpertDataset> {
    let ens = p.ensemble()?;
    let data = p.dataset(&ens)?;
    p.manifest(
        "gen-data",
        json!({ "trajectories": data.len(), "horizon": data.header.horizon }),
        &[p.ensemble_dir()],
        &[p.dataset_dir()],
        None,
    )?;
    Ok(data)
}

pub fn release(p: &Pipeline) -> Result<ReleasedData> {
    let params = p.release_params()?;
    let composed = params.as_ref().map(check_release_budget).transpose()?;
    let stage = p.release()?;
    p.manifest(
        "release",
        json!({
            "split": p.split()?,
            "params": params,
            "composed": composed,
            "stable_records": stage.data.stable.len(),
            "stable_transitions": stage.data.stable_transitions().len(),
        }),
        &[p.ensemble_dir(), p.dataset_dir()],
        &[p.release_dir()],
        Some(stage.ledger.clone()),
    )?;
    Ok(stage.data)
}

pub fn train(p: &Pipeline) -> Result<TrainStage> {
    let stage = p.train()?;
    let inputs = if p.cfg.method == super::Method::NonPrivate {
        vec![p.dataset_dir()]
    } else {
        vec![p.release_dir()]
    };
    p.manifest(
        "train",
        json!({
            "split": p.split().ok(),
            "train": p.cfg.effective_train()?,
            "accountant": stage.summary.accountant,
            "stats": stage.summary.stats,
            "consumed": stage.ledger.consumed(),
        }),
        &inputs,
        &[p.train_dir()],
        Some(stage.ledger.clone()),
    )?;
    Ok(stage)
}

pub fn evaluate(p: &Pipeline) -> Result<EvalSummary> {
    let summary = p.evaluate()?;
    p.manifest(
        "evaluate",
        json!({ "mean": summary.report.mean, "ci95": summary.report.ci95 }),
        &[p.train_dir()],
        &[p.out.join("eval.json")],
        None,
    )?;
    Ok(summary)
}

pub fn sweep(p: &Pipeline) -> Result<SweepOutcome> {
    let outcome = run_sweep(&p.cfg, &p.out)?;
    p.manifest(
        "sweep",
        json!({ "cells": outcome.rows.len() }),
        &[],
        &outcome.files,
        None,
    )?;
    Ok(outcome)
}

/// Runs the verification suite and fails with a verification error when
/// any check fails. The report is written either way.
pub fn verify_dp(p: &Pipeline) -> Result<SuiteReport> {
    let report = p.verify()?;
    p.manifest(
        "verify-dp",
        json!({ "passed": report.passed, "failures": report.failures() }),
        &[],
        &[p.out.join("verify_report.json")],
        None,
    )?;
    if !report.passed {
        return Err(Error::Verification(format!("failed checks: {}", report.failures().join(", "))));
    }
    Ok(report)
}
