//! Total Lagrangian explicit dynamics: precomputation, internal forces,
//! central-difference and dynamic-relaxation stepping, and exact
//! essential-boundary correction.

mod dynamics;
mod ebc;
mod precompute;
mod solve;

pub use dynamics::{
    adapt_dr_params, central_difference_step, critical_timestep, dr_step, smooth_load_factor, DrAdaptation,
    DrConfig, DrHistory, SimulationState, StepInfo,
};
pub use ebc::{
    build_ebc_operator, ebc_correct, AxisOperator, EbcCorrection, EbcMethod, EbcOperator, SurfaceRule,
};
pub use precompute::{
    deformation_gradient, internal_force, lump_mass, max_eigenvalue, MassLumping, strain_displacement_block, strain_energy_total,
    InternalForce, PointShapes, Precomputed,
};
pub use solve::{
    solve, solve_precomputed, solve_with_progress, IntegrationScheme, Mode, Model, Progress, Snapshot, SolveFailure,
    SolveResult, SolverConfig,
    StageRecord, StepRecord,
};

use thiserror::Error;

use crate::cloud::{CloudError, Vec3};
use crate::materials::MaterialError;
use crate::mmls::ShapeError;
use crate::quadrature::QuadratureError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("inverted configuration at integration point {point} ({}, {}, {}): det X = {det:e}", .location.x, .location.y, .location.z)]
    Inverted { point: usize, location: Vec3, det: f64 },
    #[error("material evaluation failed at integration point {point}: {source}")]
    Material { point: usize, source: MaterialError },
    #[error("lumped mass of node {node} is not positive ({mass:e}); the discretisation is unusable")]
    NonPositiveMass { node: usize, mass: f64 },
    #[error("essential-boundary condensation matrix for axis {axis} is singular (condition estimate {condition:e})")]
    SingularCondensation { axis: usize, condition: f64 },
    #[error("essential-boundary operator for axis {axis} misses the identity by {error:e}")]
    InexactCondensation { axis: usize, error: f64 },
    #[error("solution diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("no steady state within {iterations} iterations in load stage {stage} (last increment {last_increment:e} m)")]
    NonConvergence { stage: usize, iterations: usize, last_increment: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}
