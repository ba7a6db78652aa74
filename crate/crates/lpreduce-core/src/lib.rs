//! Symmetry reduction engine for finite-dimensional mechanical systems with a
//! Lie group acting on configuration space.
//!
//! The crate takes a system `(metric, group action, potential, gauge-fixing
//! condition)` and produces everything needed to run the reduced
//! (Lagrange-Poincaré) equations of motion in an adapted local trivialization:
//!
//! * [`lie`] — exponential-chart Lie group operations (structure constants,
//!   Maurer-Cartan coefficient matrices, adjoint representation);
//! * [`system`] — system definitions, Killing fields, Faddeev-Popov operator,
//!   oblique and orthogonal projectors onto the gauge slice;
//! * [`frame`] — transformation between ambient and adapted coordinates
//!   (gauge-fixing Newton solve, chart Jacobians, basis-change matrices);
//! * [`geometry`] — orbit metric, mechanical connection, curvature, covariant
//!   derivatives and Christoffel symbols of the horizontal metric, with
//!   independent closed-form and finite-difference pathways;
//! * [`dynamics`] — the reduced first-order equations of motion, a fixed-step
//!   integrator with constraint retraction, and group-element reconstruction;
//! * [`reference`] — the unreduced Euler-Lagrange integrator plus mapping and
//!   comparison utilities used to validate the reduced dynamics;
//! * [`lattice`] — a finite-difference lattice discretization of a gauge field
//!   coupled to a scalar, exposed as an ordinary finite-dimensional system,
//!   with closed-form evaluators for the reduced field equations.
//!
//! The crate is `no_std`-compatible (with `alloc`); all IO lives in the
//! companion CLI crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
// Tensor contractions are written in explicit index notation so the code can
// be read against the slot conventions documented alongside each formula;
// iterator rewrites would obscure exactly the structure under test.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod dynamics;
pub mod error;
pub mod fd;
mod fmath;
pub mod frame;
pub mod geometry;
pub mod lattice;
pub mod lie;
pub mod linalg;
pub mod reference;
pub mod system;
pub mod tol;

pub use error::{Error, Result};
