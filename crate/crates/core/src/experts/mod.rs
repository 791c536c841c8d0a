//! Expert ensembles: per-perturbation training, the `p_min` floor, and
//! demonstration data.

mod dataset;
mod ensemble;
mod policy;

pub use dataset::{generate_dataset, DatasetHeader, ExpertDataset, DATASET_FILE, DATASET_HEADER};
pub use ensemble::{
    default_p_min, generate_ensemble, train_expert, Axis, EnsembleConfig, ExpertEnsemble, Provenance, TieBreak,
    TrainedExpert, MANIFEST, TIE_TOL,
};
pub use policy::{floor_policy, FlooredPolicy, StateIndexer, TabularPolicy};
