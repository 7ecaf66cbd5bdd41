//! Pseudo-spectral solver for the mollified Oldroyd-B system in vorticity
//! form on the periodic unit cube.
//!
//! Fields are generic over the scalar type ([`Real`], implemented for `f32`
//! and `f64`); the `*64` aliases below are what the studies and the CLI use.

// `!(x > 0.0)` is used on purpose so that NaN fails validation; index loops
// mirror the formulas in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod diffusive;
pub mod error;
pub mod experiments;
pub mod flowmap;
pub mod mollifier;
pub mod scalar;
pub mod spectral;
pub mod vorticity;

pub use diagnostics::{DiagnosticsRecord, Recorder};
pub use diffusive::{ForcingSpec, PhysParams, Problem, SimState};
pub use error::{Error, Result};
pub use flowmap::FlowMapSettings;
pub use mollifier::MollifierSpec;
pub use scalar::Real;
pub use spectral::{Field, Grid, Rank, SobolevIndex, Torus};

pub type Field64 = Field<f64>;
pub type Field32 = Field<f32>;
pub type Torus64 = Torus<f64>;
pub type Torus32 = Torus<f32>;
pub type SimState64 = SimState<f64>;
pub type SimState32 = SimState<f32>;
pub type Problem64 = Problem<f64>;
pub type Problem32 = Problem<f32>;
pub type MollifierSpec64 = MollifierSpec<f64>;
pub type MollifierSpec32 = MollifierSpec<f32>;
