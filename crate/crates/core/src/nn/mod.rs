//! Minimal dense autodiff used by the policy.

pub mod mat;
pub mod params;
pub mod tape;

pub use mat::Mat;
pub use params::{NamedArray, ParamId, ParamSet};
pub use tape::{smooth_l1_value, Tape, Var};
