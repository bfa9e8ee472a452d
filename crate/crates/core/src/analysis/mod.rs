//! Theory checks and figure quantities: the SDE model and its weak-order
//! check, the PAC-Bayes bound, alignment and angle metrics, eigenvalue
//! variance and loss-landscape slices.

mod bound;
mod formulas;
mod landscape;
mod sde;

pub use bound::{pac_bayes_bound, BoundInputs, BoundTerms};
pub use formulas::{alignment_metric, perturbation_angle, spectral_variance_per_layer};
pub use landscape::{
    landscape_directions, loss_landscape_slice, loss_landscape_slice_of, LandscapeGrid,
};
pub use sde::{
    sde_simulate, simulate, weak_error_vs_eta, BrownianPath, DiffusionMode, NetworkSde,
    QuadraticBenchmark, SdeConfig, SdePoint, SdeProblem, WeakErrorPoint, WeakErrorStudy,
};
