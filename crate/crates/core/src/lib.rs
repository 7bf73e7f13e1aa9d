//! Meshless Total Lagrangian Explicit Dynamics for soft-tissue mechanics.
//!
//! Nodes scattered through a body carry Modified Moving Least Squares
//! shape functions; a background tetrahedral mesh only supplies
//! integration cells. Equilibrium is reached by dynamic relaxation with
//! essential boundary conditions imposed exactly through a precomputed
//! condensation operator.

pub mod benchmarks;
pub mod cloud;
pub mod io;
pub mod materials;
pub mod mmls;
pub mod quadrature;
pub mod solver;

pub use cloud::{AxisMask, BoundarySpec, DrivenNode, FixedNode, NodeCloud, Vec3};
pub use materials::{Material, NeoHookeanParams, OgdenParams};
pub use mmls::{Mmls, MmlsConfig, ShapeEval, ShapeProvider};
pub use solver::{solve, Model, SolveResult, SolverConfig};
