//! Numerical toolkit for rearrangement-invariant norms, Bessel-type
//! potentials and optimal Calderon-space norms on logarithmic grids.

pub mod gridfn;
pub mod par;
pub mod rearrange;
pub mod kernels;
pub mod lorentz;
pub mod optimal;
pub mod potentials;
