//! Bochner identities, the boundary sign lemma, the profile `h`, pointwise
//! inequalities, level sets and the continuity-argument functions.

pub mod bochner;
pub mod continuity;
pub mod hfun;
pub mod inequalities;
pub mod levelset;
pub mod maxreg;

pub use bochner::{
    bochner_residual, boundary_sign_check, weighted_bochner_residual, BernsteinState, BoundarySignReport,
};
pub use continuity::{continuity_tools, ContinuityTools};
pub use hfun::{h_checks, HFunction, LinearProfile, Profile};
pub use inequalities::{pointwise_inequality_suite, InequalityReport};
pub use levelset::{level_sets, LevelSetData};
pub use maxreg::{maxreg_params, MaxRegParams};
