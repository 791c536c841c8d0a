use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::experts::{Axis, EnsembleConfig};
use crate::mdp::EnvSpec;
use crate::privacy::{BudgetSplit, SplitRule};
use crate::rl::{TrainConfig, DEFAULT_EVAL_EPISODES};
use crate::verify::VerifyConfig;

/// Training regime of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Release stable prefixes, then mix public SGD with expert-level DP-SGD.
    #[default]
    Selective,
    /// Whole budget to DP-SGD over all transitions.
    DpsgdOnly,
    /// Plain CQL on every transition, no privacy.
    NonPrivate,
    /// Whole budget to the release; train on the stable prefixes only.
    ReleaseOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Selective => "selective",
            Method::DpsgdOnly => "dpsgd-only",
            Method::NonPrivate => "non-private",
            Method::ReleaseOnly => "release-only",
        }
    }

    pub fn uses_release(self) -> bool {
        matches!(self, Method::Selective | Method::ReleaseOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetBlock {
    /// Trajectories per expert.
    pub per_expert: usize,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self { per_expert: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetBlock {
    pub eps: f64,
    /// Defaults to `1/m`.
    pub delta: Option<f64>,
    pub split: SplitRule,
    /// At or below this ε the whole budget goes to DP-SGD, whatever `split` says.
    pub dpsgd_below: Option<f64>,
}

impl Default for BudgetBlock {
    fn default() -> Self {
        Self {
            eps: 10.0,
            delta: None,
            split: SplitRule::Default,
            dpsgd_below: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReleaseBlock {
    /// Trajectories scanned by the release.
    pub t: usize,
}

impl Default for ReleaseBlock {
    fn default() -> Self {
        Self { t: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub episodes: usize,
    /// Defaults to the environment horizon.
    pub max_len: Option<usize>,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            episodes: DEFAULT_EVAL_EPISODES,
            max_len: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub eps: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub method: Method,
    pub env: EnvSpec,
    pub ensemble: EnsembleConfig,
    pub dataset: DatasetBlock,
    pub budget: BudgetBlock,
    pub release: ReleaseBlock,
    pub train: TrainConfig,
    pub eval: EvalBlock,
    pub sweep: SweepBlock,
    pub verify: VerifyConfig,
}

/// The desk-scale gridworld ensemble: 10 slip values × 10 step rewards × 3
/// seeds, 300 experts.
pub fn desk_ensemble() -> EnsembleConfig {
    let mut grid = BTreeMap::new();
    grid.insert(
        "slip".to_string(),
        Axis {
            min: 0.0,
            max: 0.3,
            count: 10,
        },
    );
    grid.insert(
        "step_reward".to_string(),
        Axis {
            min: -0.1,
            max: 0.0,
            count: 10,
        },
    );
    EnsembleConfig {
        grid,
        per_setting: 3,
        p_min: crate::experts::default_p_min(),
        tie_break: Default::default(),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            method: Method::Selective,
            env: EnvSpec::default(),
            ensemble: desk_ensemble(),
            dataset: DatasetBlock::default(),
            budget: BudgetBlock::default(),
            release: ReleaseBlock::default(),
            train: TrainConfig::default(),
            eval: EvalBlock::default(),
            sweep: SweepBlock::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a TOML run config, or the config embedded in a JSON manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        if is_json {
            let manifest: super::RunManifest = serde_json::from_str(&text)?;
            return Ok(manifest.config);
        }
        Self::from_toml(&text)
    }

    pub fn experts(&self) -> usize {
        self.ensemble.size()
    }

    pub fn delta(&self) -> f64 {
        self.budget.delta.unwrap_or(1.0 / self.experts() as f64)
    }

    pub fn eval_max_len(&self) -> usize {
        self.eval.max_len.unwrap_or(self.env.horizon())
    }

    /// The split rule actually applied for this run's method and ε.
    pub fn split_rule(&self) -> SplitRule {
        match self.method {
            Method::DpsgdOnly => SplitRule::DpsgdOnly,
            Method::ReleaseOnly => SplitRule::ReleaseOnly,
            Method::NonPrivate => self.budget.split,
            Method::Selective => match self.budget.dpsgd_below {
                Some(cut) if self.budget.eps <= cut => SplitRule::DpsgdOnly,
                _ => self.budget.split,
            },
        }
    }

    pub fn split(&self) -> Result<BudgetSplit> {
        self.split_rule().split(self.budget.eps, self.delta())
    }

    /// Training settings after the method's overrides.
    pub fn effective_train(&self) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        match self.method {
            Method::DpsgdOnly => t.p = 1.0,
            Method::NonPrivate | Method::ReleaseOnly => t.p = 0.0,
            Method::Selective => {
                if self.split()?.eps2 == 0.0 {
                    t.p = 0.0;
                } else if self.split()?.eps1 == 0.0 {
                    t.p = 1.0;
                }
            }
        }
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.experts() >= 1, Config, "the ensemble grid is empty");
        ensure!(self.dataset.per_expert >= 1, Config, "need at least one trajectory per expert");
        ensure!(self.release.t >= 1, Config, "release.t must be at least 1");
        ensure!(self.eval.episodes >= 1, Config, "eval.episodes must be at least 1");
        ensure!(self.eval_max_len() >= 1, Config, "eval.max_len must be at least 1");
        self.train.validate()?;
        if self.method != Method::NonPrivate {
            self.split()?;
        }
        Ok(())
    }
}
