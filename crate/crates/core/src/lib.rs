//! Coarse-graining toolkit for kinetic equations with one degree of freedom.
//!
//! The state space is the phase plane x = (q, p) with energy
//! H(q, p) = p^2 / (2 m) + V(q) and an optional pair interaction psi acting
//! through convolution with the position marginal. The crate covers the whole
//! pipeline from the microscopic models to the coarse-grained limits:
//!
//! * [`model`]: potentials, interaction kernels, box domains, critical points.
//! * [`sde`]: particle integrators for the frictional (Langevin) system and
//!   for the fast Hamiltonian rotation with weak momentum noise.
//! * [`reeb`]: the graph of connected components of energy level sets, with
//!   point classification and empirical pushforwards onto the graph.
//! * [`coeffs`]: level-curve quadratures for the orbit period T and the
//!   effective graph coefficients A and B, tabulated per edge.
//! * [`graphpde`]: the limiting diffusion on the graph, a finite-volume
//!   solver with flux balance at interior vertices.
//! * [`vfp`]: 2-d phase-space finite-volume solvers for the kinetic equation
//!   (friction form and small-noise form), a 1-d position-space solver for
//!   the overdamped limit, and the coarse-graining pushforwards.
//! * [`functionals`]: relative entropy, free energy, relative Fisher
//!   information, and the large-deviation rate functional in both its
//!   flux (h) form and its variational duality form.
//! * [`verify`]: the acceptance checks wired together as one runnable suite.
//!
//! Everything is deterministic: random number use is counter-based per
//! particle, reductions use fixed chunking, and the parallel feature changes
//! wall time, never results.

pub mod coeffs;
pub mod error;
pub mod functionals;
pub mod graphpde;
pub mod io;
pub mod model;
pub mod numerics;
pub mod par;
pub mod reeb;
pub mod sde;
pub mod verify;
pub mod vfp;

pub use error::{Error, Result};
