//! Counterfactual perturbations of transcripts and their influence scores.

mod augment;
mod explain;
mod influence;
mod linalg;
mod model;
mod perturb;

pub use augment::{augment_all, augment_item, dedup_records, AugmentConfig, AugmentItem};
pub use explain::{explain, jaccard, write_reports, Explanation, ExplanationReport};
pub use influence::{average_hessian, exact_influence, pc, pc_at, spearman, tracin_from_grads, tracin_plus, TracInScorer};
pub use linalg::solve_damped;
pub use model::{EncoderModel, GradientSubset, LossModel, SoftmaxRegression};
pub use perturb::{
    generate_perturbations, read_records, round6, select_augmentations, write_records, PerturbationRecord, Polarity,
    PoolEntry, ReplacementPool,
};
