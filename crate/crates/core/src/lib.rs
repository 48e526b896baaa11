//! Simulation and numerical checks for the semidiscrete directed polymer on
//! Z^d x R driven by independent Brownian motions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod environment;
pub mod error;
pub mod factorization;
pub mod keyed;
pub mod moments;
pub mod ode;
pub mod params;
pub mod partition;
pub mod she;
pub mod stats;
pub mod tail;
pub mod walk;

pub use error::{Error, Result};
pub use walk::{LatticeSite, Skeleton, TransitionKernel, UnitStep};
