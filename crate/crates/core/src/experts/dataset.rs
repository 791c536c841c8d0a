use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExpertEnsemble;
use crate::error::{ensure, Result};
use crate::io;
use crate::mdp::{rollout, EnvModel, Trajectory};
use crate::rng;

/// `N` fixed-horizon trajectories per expert, stored expert-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertDataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub experts: usize,
    pub per_expert: usize,
    pub horizon: usize,
    pub action_count: usize,
    pub seed: u64,
}

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const DATASET_HEADER: &str = "dataset.json";

impl ExpertDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn of_expert(&self, expert: usize) -> &[Trajectory] {
        let n = self.header.per_expert;
        &self.trajectories[expert * n..(expert + 1) * n]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_jsonl(&dir.join(DATASET_FILE), &self.trajectories)?;
        io::write_json(&dir.join(DATASET_HEADER), &self.header)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: DatasetHeader = io::read_json(&dir.join(DATASET_HEADER))?;
        let trajectories: Vec<Trajectory> = io::read_jsonl(&dir.join(DATASET_FILE))?;
        ensure!(
            trajectories.len() == header.experts * header.per_expert,
            Config,
            "dataset holds {} trajectories, header promises {}",
            trajectories.len(),
            header.experts * header.per_expert
        );
        for t in &trajectories {
            t.validate(header.horizon, header.action_count)?;
            ensure!(t.expert_id < header.experts, Config, "trajectory names unknown expert {}", t.expert_id);
        }
        Ok(Self { header, trajectories })
    }
}

/// Rolls out every expert `per_expert` times on `env`. Trajectory `(i, j)`
/// draws from its own stream, so the output is independent of scheduling.
pub fn generate_dataset(ensemble: &ExpertEnsemble, env: &EnvModel, per_expert: usize, seed: u64) -> Result<ExpertDataset> {
    ensure!(!ensemble.is_empty(), InvalidParameter, "ensemble is empty");
    ensure!(per_expert >= 1, InvalidParameter, "need at least one trajectory per expert");
    ensure!(
        ensemble.action_count() == env.action_count(),
        InvalidParameter,
        "ensemble and environment disagree on the action count"
    );
    let trajectories = ensemble
        .experts
        .par_iter()
        .enumerate()
        .map(|(i, expert)| {
            (0..per_expert)
                .map(|j| {
                    let mut stream = rng::stream(seed, "dataset", &[i as u64, j as u64]);
                    rollout(env, expert, i, &mut stream)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(ExpertDataset {
        header: DatasetHeader {
            experts: ensemble.len(),
            per_expert,
            horizon: env.horizon(),
            action_count: env.action_count(),
            seed,
        },
        trajectories,
    })
}
