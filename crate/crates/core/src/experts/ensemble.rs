use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{check_p_min, FlooredPolicy, StateIndexer};
use crate::error::{ensure, Error, Result};
use crate::io;
use crate::mdp::{value_iteration, BoxGrid, CartPole, Dynamics, EnvSpec, Perturbation, Policy, State, TabularMdp};
use crate::rng;

/// Actions whose value is within this distance of the best count as tied.
pub const TIE_TOL: f64 = 1e-9;
const VI_TOL: f64 = 1e-10;
/// Sampled start points per (box, action) for the cart-pole box model.
const BOX_SAMPLES: usize = 24;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    LowestIndex,
    #[default]
    Seeded,
}

/// An evenly spaced perturbation axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Perturbation axes; the cartesian product gives the settings.
    pub grid: BTreeMap<String, Axis>,
    /// Independently seeded experts per setting.
    #[serde(default = "default_per_setting")]
    pub per_setting: usize,
    #[serde(default = "default_p_min")]
    pub p_min: f64,
    #[serde(default)]
    pub tie_break: TieBreak,
}

fn default_per_setting() -> usize {
    1
}

pub fn default_p_min() -> f64 {
    0.02
}

impl EnsembleConfig {
    /// Cartesian product of the axes, first key varying slowest.
    pub fn settings(&self) -> Vec<Perturbation> {
        let mut out = vec![Perturbation::new()];
        for (name, axis) in &self.grid {
            let values = axis.values();
            out = out
                .into_iter()
                .flat_map(|base| {
                    values.iter().map(move |v| {
                        let mut p = base.clone();
                        p.insert(name.clone(), *v);
                        p
                    })
                })
                .collect();
        }
        out
    }

    pub fn size(&self) -> usize {
        self.settings().len() * self.per_setting
    }
}

/// Where an expert came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub setting: usize,
    pub perturbation: Perturbation,
    pub seed: u64,
    /// Position among the experts sharing this setting.
    pub rank: usize,
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct TrainedExpert {
    pub policy: FlooredPolicy,
    /// Action values per indexer row (absorbing row excluded).
    pub q: Vec<Vec<f64>>,
    pub degenerate: bool,
}

fn pick<R: Rng + ?Sized>(row: &[f64], tie_break: TieBreak, rng: &mut R) -> usize {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..row.len()).filter(|&a| row[a] >= best - TIE_TOL).collect();
    match tie_break {
        TieBreak::LowestIndex => tied[0],
        TieBreak::Seeded => tied[rng.random_range(0..tied.len())],
    }
}

/// Optimal action values of `mdp`; falls back to all-zero values (and the
/// degenerate flag) if value iteration does not converge.
fn solve(mdp: &TabularMdp, gamma: f64) -> (Vec<Vec<f64>>, bool) {
    match value_iteration(mdp, gamma, VI_TOL) {
        Ok(q) => ((0..q.n_states).map(|s| q.row(s).to_vec()).collect(), false),
        Err(_) => (vec![vec![0.0; mdp.n_actions()]; mdp.n_states()], true),
    }
}

/// Sampled finite model of cart-pole over `grid` boxes. State `grid.len()`
/// is the failed sink.
fn box_model<R: Rng + ?Sized>(cp: &CartPole, grid: &BoxGrid, rng: &mut R) -> Result<TabularMdp> {
    let n_boxes = grid.len();
    let n = n_boxes + 1;
    let na = CartPole::ACTIONS;
    let w = 1.0 / BOX_SAMPLES as f64;
    let mut transitions = Vec::with_capacity(n * na);
    let mut rewards = Vec::with_capacity(n * na);
    for b in 0..n_boxes {
        let bounds = grid.bounds(b);
        for a in 0..na {
            let mut row = BTreeMap::<usize, f64>::new();
            for _ in 0..BOX_SAMPLES {
                let s = bounds.map(|(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo });
                let (next, failed) = cp.integrate(s, a);
                let to = if failed { n_boxes } else { grid.index(&next) };
                *row.entry(to).or_default() += w;
            }
            let mut row: Vec<(usize, f64)> = row.into_iter().collect();
            // Make the row sum to one exactly.
            let head: f64 = row[..row.len() - 1].iter().map(|(_, p)| p).sum();
            row.last_mut().unwrap().1 = 1.0 - head;
            transitions.push(row);
            rewards.push(1.0);
        }
    }
    for _ in 0..na {
        transitions.push(vec![(n_boxes, 1.0)]);
        rewards.push(0.0);
    }
    let mut initial = vec![0.0; n];
    initial[grid.index(&[0.0; 4])] = 1.0;
    TabularMdp::new(n, na, transitions, rewards, vec![false; n * na], initial)
}

/// Trains one expert on a (perturbed) environment and floors it.
pub fn train_expert(
    spec: &EnvSpec,
    expert_id: usize,
    seed: u64,
    p_min: f64,
    tie_break: TieBreak,
) -> Result<TrainedExpert> {
    let env = spec.build()?;
    check_p_min(p_min, env.action_count())?;
    let mut rng = rng::stream(seed, "expert", &[]);
    let (q, degenerate, indexer) = match env.dynamics() {
        Dynamics::Tabular(mdp) => {
            let (q, degenerate) = solve(mdp, env.gamma());
            (q, degenerate, StateIndexer::Tabular { n_states: mdp.n_states() })
        }
        Dynamics::CartPole(cp) => {
            let grid = BoxGrid::default();
            let model = box_model(cp, &grid, &mut rng)?;
            let (mut q, degenerate) = solve(&model, env.gamma());
            q.truncate(grid.len());
            (q, degenerate, StateIndexer::CartPoleBoxes { grid })
        }
    };
    let greedy = q.iter().map(|row| pick(row, tie_break, &mut rng)).collect();
    let policy = FlooredPolicy::from_greedy(expert_id, greedy, indexer, p_min, env.action_count())?;
    Ok(TrainedExpert { policy, q, degenerate })
}

/// The private expert set with per-expert provenance.
#[derive(Clone, Debug)]
pub struct ExpertEnsemble {
    pub base: EnvSpec,
    pub experts: Vec<FlooredPolicy>,
    pub provenance: Vec<Provenance>,
    pub q_values: Vec<Vec<Vec<f64>>>,
}

impl ExpertEnsemble {
    pub fn from_parts(
        base: EnvSpec,
        experts: Vec<FlooredPolicy>,
        provenance: Vec<Provenance>,
        q_values: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        ensure!(!experts.is_empty(), InvalidParameter, "ensemble is empty");
        ensure!(
            provenance.len() == experts.len() && q_values.len() == experts.len(),
            InvalidParameter,
            "provenance does not match the expert list"
        );
        let (na, p_min) = (experts[0].n_actions, experts[0].p_min);
        ensure!(
            experts.iter().all(|e| e.n_actions == na && e.p_min == p_min),
            InvalidParameter,
            "experts must share action count and p_min"
        );
        ensure!(
            experts.iter().enumerate().all(|(i, e)| e.expert_id == i),
            InvalidParameter,
            "expert ids must be 0..m in order"
        );
        Ok(Self {
            base,
            experts,
            provenance,
            q_values,
        })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn p_min(&self) -> f64 {
        self.experts[0].p_min
    }

    pub fn action_count(&self) -> usize {
        self.experts[0].n_actions
    }

    pub fn action_prob(&self, expert: usize, s: &State, a: usize) -> f64 {
        self.experts[expert].action_prob(s, a)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        let mut files = Vec::with_capacity(self.len());
        for (i, expert) in self.experts.iter().enumerate() {
            let name = format!("expert_{i:05}.json");
            let record = ExpertRecord {
                policy: expert.clone(),
                provenance: self.provenance[i].clone(),
                q_values: self.q_values[i].clone(),
            };
            io::write_json(&dir.join(&name), &record)?;
            files.push(name);
        }
        let manifest = EnsembleManifest {
            base: self.base.clone(),
            expert_ids: (0..self.len()).collect(),
            files,
            p_min: self.p_min(),
            action_count: self.action_count(),
        };
        io::write_json(&dir.join(MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: EnsembleManifest = io::read_json(&dir.join(MANIFEST))?;
        let mut experts = Vec::new();
        let mut provenance = Vec::new();
        let mut q_values = Vec::new();
        for (id, file) in manifest.expert_ids.iter().zip(&manifest.files) {
            let record: ExpertRecord = io::read_json(&dir.join(file))?;
            if record.policy.expert_id != *id {
                return Err(Error::Config(format!("{file} holds expert {} not {id}", record.policy.expert_id)));
            }
            experts.push(record.policy);
            provenance.push(record.provenance);
            q_values.push(record.q_values);
        }
        Self::from_parts(manifest.base, experts, provenance, q_values)
    }
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    base: EnvSpec,
    expert_ids: Vec<usize>,
    files: Vec<String>,
    p_min: f64,
    action_count: usize,
}

#[derive(Serialize, Deserialize)]
struct ExpertRecord {
    #[serde(flatten)]
    policy: FlooredPolicy,
    provenance: Provenance,
    q_values: Vec<Vec<f64>>,
}

/// Trains `|settings| * per_setting` experts in parallel. Expert `i` uses a
/// stream derived from `(seed, setting, rank)`, so the result does not
/// depend on thread scheduling.
pub fn generate_ensemble(base: &EnvSpec, cfg: &EnsembleConfig, seed: u64) -> Result<ExpertEnsemble> {
    let settings = cfg.settings();
    ensure!(
        !settings.is_empty() && cfg.per_setting >= 1,
        InvalidParameter,
        "perturbation grid is empty"
    );
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..cfg.per_setting).map(move |r| (s, r)))
        .collect();
    let trained: Vec<(TrainedExpert, Provenance)> = jobs
        .par_iter()
        .enumerate()
        .map(|(id, &(setting, rank))| {
            let perturbation = settings[setting].clone();
            let spec = base.perturbed(&perturbation)?;
            let expert_seed = rng::derive_seed(seed, "ensemble", &[setting as u64, rank as u64]);
            let t = train_expert(&spec, id, expert_seed, cfg.p_min, cfg.tie_break)?;
            let prov = Provenance {
                setting,
                perturbation,
                seed: expert_seed,
                rank,
                degenerate: t.degenerate,
            };
            Ok((t, prov))
        })
        .collect::<Result<_>>()?;
    let mut experts = Vec::with_capacity(trained.len());
    let mut provenance = Vec::with_capacity(trained.len());
    let mut q_values = Vec::with_capacity(trained.len());
    for (t, p) in trained {
        experts.push(t.policy);
        q_values.push(t.q);
        provenance.push(p);
    }
    ExpertEnsemble::from_parts(base.clone(), experts, provenance, q_values)
}
