//! Network assembly, parameter storage, checkpoints and ablation variants.

pub mod checkpoint;
mod config;
mod model;
mod store;

pub use config::{make_variant, Ablation, ArchConfig, VARIANTS};
pub use model::{build, complexity, forward, param_count, randomize_output, Aminet, Complexity, Trace, STAGES};
pub use store::{Bound, ParamGrads, ParamStore};
