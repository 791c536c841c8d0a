use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{artifacts, Artifact, RunManifest};
use super::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::experts::{generate_dataset, generate_ensemble, ExpertDataset, ExpertEnsemble};
use crate::io;
use crate::mdp::EnvModel;
use crate::privacy::{derive_release_params, BudgetLedger, BudgetSplit, ReleaseParams};
use crate::release::{data_release, ReleasedData};
use crate::rl::{
    evaluate, featurize, selective_train, Accountant, CurveRow, EvalReport, ExpertPools, FeatTransition, QNet,
    TrainHooks, TrainStats,
};
use crate::rng;
use crate::verify::{run_suite, SuiteReport};

const STAGE_FILE: &str = "stage.json";
pub const CHECKPOINT_STEM: &str = "q";
pub const CURVE_FILE: &str = "curve.csv";

/// Stream labels derived from the run seed.
pub const STREAMS: [&str; 6] = ["ensemble", "dataset", "release", "train", "eval", "audit"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StageStamp {
    fingerprint: String,
}

fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    Ok(io::sha256_hex(&serde_json::to_vec(value)?))
}

fn stage_is_current(dir: &Path, fp: &str) -> bool {
    io::read_json::<StageStamp>(&dir.join(STAGE_FILE)).is_ok_and(|s| s.fingerprint == fp)
}

fn stamp(dir: &Path, fp: &str) -> Result<()> {
    io::write_json(&dir.join(STAGE_FILE), &StageStamp { fingerprint: fp.into() })
}

/// Outcome of the release stage, with the ledger as it stands afterwards.
#[derive(Clone, Debug)]
pub struct ReleaseStage {
    pub data: ReleasedData,
    pub ledger: BudgetLedger,
    pub params: Option<ReleaseParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: Method,
    pub stats: TrainStats,
    pub accountant: Option<Accountant>,
    pub stable_transitions: usize,
    pub private_transitions: usize,
    pub curve: Vec<CurveRow>,
}

#[derive(Clone, Debug)]
pub struct TrainStage {
    pub net: QNet,
    pub ledger: BudgetLedger,
    pub summary: TrainSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: Method,
    pub eps: f64,
    pub seed: u64,
    pub report: EvalReport,
}

/// Stage runner for one configured run. Stages cache their outputs under the
/// output directory and are rebuilt whenever the inputs that define them
/// change.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
    shared: PathBuf,
}

impl Pipeline {
    /// Validates `cfg` and pins the default `δ = 1/m`, so a run and its
    /// replay from a manifest fingerprint identically.
    pub fn new(mut cfg: RunConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        cfg.budget.delta = Some(cfg.delta());
        let out = out.into();
        Ok(Self {
            shared: out.clone(),
            cfg,
            out,
        })
    }

    /// Keeps the ensemble and dataset under `dir` instead of the output
    /// directory, so runs that differ only downstream can share them.
    pub fn with_shared(mut self, dir: impl Into<PathBuf>) -> Self {
        self.shared = dir.into();
        self
    }

    pub fn seed(&self, label: &str) -> u64 {
        rng::derive_seed(self.cfg.seed, label, &[])
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut m: BTreeMap<String, u64> = STREAMS.iter().map(|l| (l.to_string(), self.seed(l))).collect();
        m.insert("root".into(), self.cfg.seed);
        m
    }

    pub fn env(&self) -> Result<EnvModel> {
        self.cfg.env.build()
    }

    pub fn ensemble_dir(&self) -> PathBuf {
        self.shared.join("ensemble")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.shared.join("dataset")
    }

    pub fn release_dir(&self) -> PathBuf {
        self.out.join("release")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.out.join("train")
    }

    fn ensemble_fp(&self) -> Result<String> {
        fingerprint(&(&self.cfg.env, &self.cfg.ensemble, self.seed("ensemble")))
    }

    fn dataset_fp(&self) -> Result<String> {
        fingerprint(&(self.ensemble_fp()?, self.cfg.dataset.per_expert, self.seed("dataset")))
    }

    fn release_fp(&self) -> Result<String> {
        fingerprint(&(
            self.dataset_fp()?,
            self.cfg.method,
            &self.cfg.budget,
            self.cfg.delta(),
            self.cfg.release.t,
            self.seed("release"),
        ))
    }

    fn train_fp(&self) -> Result<String> {
        fingerprint(&(self.release_fp()?, self.cfg.effective_train()?, self.cfg.eval_max_len(), self.seed("train")))
    }

    pub fn ensemble(&self) -> Result<ExpertEnsemble> {
        let dir = self.ensemble_dir();
        let fp = self.ensemble_fp()?;
        if stage_is_current(&dir, &fp) {
            return ExpertEnsemble::load(&dir);
        }
        let ens = generate_ensemble(&self.cfg.env, &self.cfg.ensemble, self.seed("ensemble"))?;
        ens.save(&dir)?;
        stamp(&dir, &fp)?;
        Ok(ens)
    }

    pub fn dataset(&self, ensemble: &ExpertEnsemble) -> Result<ExpertDataset> {
        let dir = self.dataset_dir();
        let fp = self.dataset_fp()?;
        if stage_is_current(&dir, &fp) {
            return ExpertDataset::load(&dir);
        }
        let data = generate_dataset(ensemble, &self.env()?, self.cfg.dataset.per_expert, self.seed("dataset"))?;
        io::create_dir(&dir)?;
        data.save(&dir)?;
        stamp(&dir, &fp)?;
        Ok(data)
    }

    pub fn split(&self) -> Result<BudgetSplit> {
        self.cfg.split()
    }

    /// Release parameters for this run, or `None` if the method or split
    /// gives the release nothing to do.
    pub fn release_params(&self) -> Result<Option<ReleaseParams>> {
        let split = self.split()?;
        if !self.cfg.method.uses_release() || split.eps1 == 0.0 {
            return Ok(None);
        }
        derive_release_params(
            split.eps1,
            split.delta1,
            self.cfg.release.t,
            self.cfg.env.horizon(),
            self.cfg.ensemble.p_min,
        )
        .map(Some)
    }

    pub fn release(&self) -> Result<ReleaseStage> {
        let dir = self.release_dir();
        let fp = self.release_fp()?;
        let params = self.release_params()?;
        if let Some(p) = &params {
            // Fails with a budget violation before any data is read.
            crate::privacy::check_release_budget(p)?;
        }
        if stage_is_current(&dir, &fp) {
            return Ok(ReleaseStage {
                data: ReleasedData::load(&dir)?,
                ledger: io::read_json(&dir.join("ledger.json"))?,
                params,
            });
        }
        let ensemble = self.ensemble()?;
        let dataset = self.dataset(&ensemble)?;
        let mut ledger = BudgetLedger::new(self.split()?);
        let data = match &params {
            Some(p) => {
                let mut r = rng::stream(self.cfg.seed, "release", &[]);
                data_release(&dataset.trajectories, &ensemble.experts, p, &mut r, &mut ledger)?
            }
            None => ReleasedData::all_private(&dataset.trajectories),
        };
        io::create_dir(&dir)?;
        data.save(&dir)?;
        io::write_json(&dir.join("ledger.json"), &ledger)?;
        stamp(&dir, &fp)?;
        Ok(ReleaseStage { data, ledger, params })
    }

    /// Splits the data into public and per-expert private transitions for
    /// the configured method.
    fn training_data(&self, env: &EnvModel) -> Result<(Vec<FeatTransition>, ExpertPools, BudgetLedger)> {
        let m = self.cfg.experts();
        if self.cfg.method == Method::NonPrivate {
            let ensemble = self.ensemble()?;
            let dataset = self.dataset(&ensemble)?;
            let public = dataset
                .trajectories
                .iter()
                .flat_map(|t| t.transitions())
                .map(|t| featurize(env, &t))
                .collect();
            let ledger = BudgetLedger::new(BudgetSplit {
                eps1: 0.0,
                delta1: 0.0,
                eps2: 0.0,
                delta2: 0.0,
            });
            return Ok((public, ExpertPools::new(m, [])?, ledger));
        }
        let stage = self.release()?;
        let public = stage
            .data
            .stable_transitions()
            .iter()
            .map(|t| featurize(env, t))
            .collect();
        let pools = ExpertPools::new(
            m,
            stage
                .data
                .unstable
                .iter()
                .flat_map(|u| u.transitions().into_iter().map(move |t| (u.expert_id, t)))
                .map(|(e, t)| (e, featurize(env, &t))),
        )?;
        Ok((public, pools, stage.ledger))
    }

    pub fn train(&self) -> Result<TrainStage> {
        let dir = self.train_dir();
        let fp = self.train_fp()?;
        if stage_is_current(&dir, &fp) {
            return Ok(TrainStage {
                net: QNet::load(&dir, CHECKPOINT_STEM)?,
                ledger: io::read_json(&dir.join("ledger.json"))?,
                summary: io::read_json(&dir.join("train.json"))?,
            });
        }
        let env = self.env()?;
        let (public, pools, mut ledger) = self.training_data(&env)?;
        let train = self.cfg.effective_train()?;
        let out = selective_train(
            &env,
            &public,
            &pools,
            &train,
            &mut ledger,
            self.seed("train"),
            self.cfg.eval_max_len(),
            TrainHooks::default(),
        )?;
        let summary = TrainSummary {
            method: self.cfg.method,
            stats: out.stats,
            accountant: out.accountant,
            stable_transitions: public.len(),
            private_transitions: pools.transitions(),
            curve: out.curve,
        };
        io::create_dir(&dir)?;
        out.net.save(&dir, CHECKPOINT_STEM)?;
        write_curve(&dir.join(CURVE_FILE), &summary.curve)?;
        io::write_json(&dir.join("train.json"), &summary)?;
        io::write_json(&dir.join("ledger.json"), &ledger)?;
        stamp(&dir, &fp)?;
        Ok(TrainStage {
            net: out.net,
            ledger,
            summary,
        })
    }

    pub fn evaluate(&self) -> Result<EvalSummary> {
        let stage = self.train()?;
        let env = self.env()?.with_horizon(self.cfg.eval_max_len())?;
        let report = evaluate(&stage.net, &env, self.cfg.eval.episodes, self.seed("eval"))?;
        let summary = EvalSummary {
            method: self.cfg.method,
            eps: self.cfg.budget.eps,
            seed: self.cfg.seed,
            report,
        };
        io::write_json(&self.out.join("eval.json"), &summary)?;
        Ok(summary)
    }

    /// `(ε′, δ′)` pairs this run's release would use, for the tail check.
    pub fn quadrature_pairs(&self) -> Vec<(f64, f64)> {
        match self.release_params() {
            Ok(Some(p)) => vec![(p.eps_prime, p.delta_prime)],
            _ => Vec::new(),
        }
    }

    pub fn verify(&self) -> Result<SuiteReport> {
        let report = run_suite(&self.cfg.verify, &self.quadrature_pairs(), self.seed("audit"))?;
        io::write_json(&self.out.join("verify_report.json"), &report)?;
        Ok(report)
    }

    pub fn manifest(
        &self,
        command: &str,
        derived: serde_json::Value,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        ledger: Option<BudgetLedger>,
    ) -> Result<RunManifest> {
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<Artifact>> {
            let mut v = Vec::new();
            for p in paths {
                let root = if p.starts_with(&self.out) { &self.out } else { &self.shared };
                v.extend(artifacts(root, p)?);
            }
            Ok(v)
        };
        let m = RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.cfg.clone(),
            seeds: self.seeds(),
            derived,
            inputs: hash_all(inputs)?,
            artifacts: hash_all(outputs)?,
            ledger,
        };
        m.save(&self.out)?;
        Ok(m)
    }
}

pub fn write_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
