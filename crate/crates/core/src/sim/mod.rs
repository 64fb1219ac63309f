//! Ground-truth marked point process: exact OU covariates, closed-form
//! intensities and mark probabilities, and thinning simulation.

mod model;
mod ou;
mod thinning;

pub use model::{
    baseline_intensity, dominating_bound, mark_probability, true_intensity, true_joint_probability, Baseline,
    GroundTruthModel, MarkLaw, TypeIntensities, N_CLASSES, N_MARKS, N_TYPES, X_DIM, Y_DIM,
};
pub use ou::{ou_transition, OuParams};
pub use thinning::{simulate, GRID_STEP};
