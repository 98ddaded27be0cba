//! Gaussian projection hash families and the parameter theory around them.

mod family;
mod params;
mod probability;

pub use family::{static_bucket, GaussianStream, HashFamily};
pub use params::{BudgetMode, IndexParams, ParamMode, DEFAULT_FANOUT};
pub use probability::{
    derive_alpha, derive_params, dynamic_collision_probability, dynamic_log_inverse_probability,
    normal_cdf, normal_pdf, normal_upper_tail, radius_schedule, static_collision_probability,
    CollisionProfile, DerivedParams, STATIC_QUADRATURE_TOL,
};
