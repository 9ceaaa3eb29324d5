//! Numerical laboratory for linearized kinetic collision operators.
//!
//! The library discretizes velocity space in an orthonormal Hermite basis
//! under the Gaussian equilibrium, builds concrete collision operators
//! (BGK and a synthetic variable-frequency model), and then verifies the
//! hydrodynamic small-frequency theory numerically: eigenvalue branches of
//! `L - i(v.xi)`, spectral projectors and their expansions, transport
//! coefficients, semigroup splittings, a pseudo-spectral
//! Navier-Stokes-Fourier solver on the torus, and a stiff exponential
//! integrator for the full scaled kinetic equation.
//!
//! Modules mirror that pipeline bottom-up; everything is driven by the
//! `kinspec` binary through config files (see [`experiments`]).

pub mod collision_models;
pub mod experiments;
pub mod kinetic_solver;
pub mod linalg;
pub mod nsf_solver;
pub mod parallel;
pub mod semigroup_engine;
pub mod spectral_analysis;
pub mod transport_coefficients;
pub mod velocity_space;
