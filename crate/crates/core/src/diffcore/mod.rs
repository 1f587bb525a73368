//! Differentiation substrate: recording tape, scalar abstraction, special
//! functions, parameter storage, the Adam optimizer, dense-network helpers,
//! and the finite-difference gradient oracle.

mod adam;
mod fdcheck;
pub mod nn;
mod params;
mod real;
pub mod special;
mod tape;

pub use adam::{adam_step, AdamState};
pub use fdcheck::{finite_diff_check, finite_diff_check_scaled};
pub use params::ParamStore;
pub use real::Real;
pub use tape::{Gradients, OpKind, Tape, Var, VecVar};
