use serde::Serialize;
use thiserror::Error;

use super::dynamics::{
    adapt_dr_params, central_difference_step, critical_timestep, dr_step, smooth_load_factor, DrConfig, DrHistory,
    SimulationState,
};
use super::ebc::{build_ebc_operator, ebc_correct, EbcMethod, SurfaceRule};
use super::precompute::{internal_force, lump_mass, max_eigenvalue, MassLumping, PointShapes, Precomputed};
use super::SolverError;
use crate::cloud::{BoundarySpec, NodeCloud, Vec3};
use crate::materials::Material;
use crate::mmls::{Mmls, MmlsConfig};
use crate::quadrature::{adaptive_integration_set, fixed_integration_set, AdaptiveConfig, QuadratureRule};

/// A complete problem: geometry, constraints, material and the optional
/// essential-boundary triangulation.
#[derive(Debug, Clone)]
pub struct Model {
    pub cloud: NodeCloud,
    pub boundary: BoundarySpec,
    pub material: Material,
    pub surface: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Dynamic relaxation to equilibrium.
    Steady,
    /// Undamped central-difference time integration.
    Dynamic,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "steady" => Some(Mode::Steady),
            "dynamic" => Some(Mode::Dynamic),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Steady => "steady",
            Mode::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntegrationScheme {
    /// One rule of the given order per background cell.
    Fixed { rule_order: usize },
    Adaptive(AdaptiveConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mode: Mode,
    pub mmls: MmlsConfig,
    pub integration: IntegrationScheme,
    pub ebc_method: EbcMethod,
    pub mass_lumping: MassLumping,
    /// Time step or pseudo-time increment; defaults to the critical estimate.
    pub timestep: Option<f64>,
    pub safety: f64,
    /// Initial damping coefficient for relaxation.
    pub damping: Option<f64>,
    pub adaptive_damping: bool,
    pub mass_scale: f64,
    /// Steady-state increment threshold (m); defaults to `1e-7 × diameter`.
    pub convergence_tol: Option<f64>,
    /// Consecutive iterations below the threshold required to stop.
    pub convergence_window: usize,
    /// Iteration cap per load stage (steady) or overall (dynamic).
    pub max_iterations: usize,
    pub load_stages: usize,
    pub snapshots: usize,
    /// Dynamic mode end time; defaults to the load duration.
    pub end_time: Option<f64>,
}

impl SolverConfig {
    pub fn new(radius: f64) -> Self {
        Self {
            mode: Mode::Steady,
            mmls: MmlsConfig::new(radius),
            integration: IntegrationScheme::Fixed { rule_order: 1 },
            ebc_method: EbcMethod::Ebciem(SurfaceRule::Gauss3),
            mass_lumping: MassLumping::Diagonal,
            timestep: None,
            safety: 0.5,
            damping: None,
            adaptive_damping: true,
            mass_scale: 1.0,
            convergence_tol: None,
            convergence_window: 10,
            max_iterations: 200_000,
            load_stages: 1,
            snapshots: 0,
            end_time: None,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        self.mmls.validate()?;
        if let IntegrationScheme::Adaptive(a) = &self.integration {
            a.validate()?;
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if let Some(h) = self.timestep {
            if !positive(h) {
                return Err(SolverError::Config(format!("timestep must be positive, got {h}")));
            }
        }
        if !positive(self.safety) {
            return Err(SolverError::Config(format!("safety factor must be positive, got {}", self.safety)));
        }
        if !positive(self.mass_scale) {
            return Err(SolverError::Config(format!("mass scale must be positive, got {}", self.mass_scale)));
        }
        if self.damping.is_some_and(|c| !(c >= 0.0 && c.is_finite())) {
            return Err(SolverError::Config("damping must be non-negative".into()));
        }
        if self.convergence_tol.is_some_and(|t| !positive(t)) {
            return Err(SolverError::Config("convergence threshold must be positive".into()));
        }
        if self.end_time.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
            return Err(SolverError::Config("end time must be non-negative".into()));
        }
        if self.load_stages == 0 || self.convergence_window == 0 || self.max_iterations == 0 {
            return Err(SolverError::Config(
                "load stages, convergence window and iteration cap must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Precomputed {
    /// Shape functions, integration points, lumped mass and the boundary
    /// operator for `model`.
    pub fn new(model: &Model, cfg: &SolverConfig) -> Result<Self, SolverError> {
        cfg.validate()?;
        let cloud = &model.cloud;
        let mmls = Mmls::new(cloud, cfg.mmls)?;
        let integration = match &cfg.integration {
            IntegrationScheme::Fixed { rule_order } => {
                fixed_integration_set(cloud, &QuadratureRule::with_order(*rule_order)?)
            }
            IntegrationScheme::Adaptive(a) => adaptive_integration_set(cloud, &mmls, a)?,
        };
        let shapes = PointShapes::evaluate(&mmls, &integration.points)?;
        let mass = lump_mass(cloud.len(), &integration, &shapes, cloud.density(), cfg.mass_lumping)?;
        let ebc = build_ebc_operator(cfg.ebc_method, cloud, &model.boundary, &mmls, &model.surface, &mass)?;
        let node_shapes = PointShapes::evaluate(&mmls, cloud.nodes())?;
        let volume = integration.total_weight();
        Ok(Self { integration, shapes, mass, ebc, volume, node_shapes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub load_factor: f64,
    pub max_increment: f64,
    /// Condensed boundary force on the driven constraints (N).
    pub reaction: [f64; 3],
    pub ebc_error: f64,
}

/// Equilibrium at the end of one load stage: a point on the force–depth curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: usize,
    pub load_factor: f64,
    pub reaction: [f64; 3],
    pub min_det: f64,
    pub max_det: f64,
    pub iterations: usize,
    pub residual_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub load_factor: f64,
    /// Interpolated nodal displacements `Σ φ_j(x_i) u_j` (m).
    pub displacements: Vec<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub iteration: usize,
    pub load_factor: f64,
    /// `‖f_ext − f_int‖∞` after removing the condensed boundary force.
    pub residual: f64,
    pub max_increment: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Interpolated nodal displacements (m).
    pub displacements: Vec<Vec3>,
    /// Nodal parameters `u_j`; not displacements, shape functions do not interpolate.
    pub parameters: Vec<Vec3>,
    pub steps: Vec<StepRecord>,
    pub stages: Vec<StageRecord>,
    pub snapshots: Vec<Snapshot>,
    pub timestep: f64,
    pub final_damping: f64,
    pub integration_points: usize,
    pub capped_cells: usize,
    pub total_mass: f64,
    pub max_ebc_error: f64,
    pub min_det: f64,
    pub max_det: f64,
    /// Final `‖f_ext − f_int‖∞ / ‖f_int‖∞` over unconstrained directions.
    pub residual_ratio: f64,
    pub converged: bool,
}

impl SolveResult {
    pub fn final_reaction(&self) -> Vec3 {
        self.steps.last().map(|s| Vec3::from(s.reaction)).unwrap_or_else(Vec3::zeros)
    }
}

#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct SolveFailure {
    pub error: SolverError,
    pub last_good: Option<Snapshot>,
    pub steps: Vec<StepRecord>,
}

impl From<SolverError> for SolveFailure {
    fn from(error: SolverError) -> Self {
        Self { error, last_good: None, steps: vec![] }
    }
}

/// Runs `model` to steady state or to the end time.
pub fn solve(model: &Model, cfg: &SolverConfig) -> Result<SolveResult, SolveFailure> {
    solve_with_progress(model, cfg, &mut |_| {})
}

pub fn solve_with_progress(
    model: &Model,
    cfg: &SolverConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<SolveResult, SolveFailure> {
    let pre = Precomputed::new(model, cfg)?;
    solve_precomputed(model, cfg, &pre, progress)
}

/// Stepping loop state shared by both modes.
struct Runner<'a> {
    model: &'a Model,
    cfg: &'a SolverConfig,
    pre: &'a Precomputed,
    mass: Vec<f64>,
    state: SimulationState,
    steps: Vec<StepRecord>,
    snapshots: Vec<Snapshot>,
    last_good: Option<Snapshot>,
    max_ebc_error: f64,
    min_det: f64,
    max_det: f64,
}

struct Outcome {
    max_increment: f64,
    residual: f64,
    force_norm: f64,
    min_det: f64,
    max_det: f64,
}

impl Runner<'_> {
    fn snapshot(&self, load_factor: f64) -> Snapshot {
        Snapshot {
            step: self.state.step,
            time: self.state.t,
            load_factor,
            displacements: self.pre.nodal_displacements(&self.state.u_now),
        }
    }

    fn fail(self, error: SolverError) -> SolveFailure {
        SolveFailure { error, last_good: self.last_good, steps: self.steps }
    }

    /// One explicit update with coefficients `(α, β)` followed by the exact
    /// boundary correction at `load_factor`.
    fn step(
        &mut self,
        load_factor: f64,
        dr: Option<(&mut DrConfig, &mut DrHistory)>,
        dt: f64,
    ) -> Result<Outcome, SolverError> {
        let f = internal_force(&self.state.u_now, self.pre, &self.model.material)?;
        let u_prev_before = self.state.u_prev.clone();
        let (alpha, beta) = match dr {
            Some((dr, hist)) => {
                if dr.adaptive {
                    dr.c = adapt_dr_params(hist, &self.state.u_now, &f.forces, &self.mass, dr).c;
                }
                dr_step(&mut self.state, None, &f.forces, &self.mass, dr)?;
                dr.alpha_beta()
            }
            None => {
                central_difference_step(&mut self.state, None, &f.forces, &self.mass, dt)?;
                (dt * dt, 1.0)
            }
        };
        let u_bar = self.pre.ebc.prescribed(load_factor);
        let corr = ebc_correct(&mut self.state.u_now, &self.pre.ebc, &u_bar)?;
        let reaction = self.pre.ebc.driven_reaction(&corr, alpha) * self.cfg.mass_scale;
        let ebc_error = self.pre.ebc.max_error(&self.state.u_now, &u_bar);
        self.max_ebc_error = self.max_ebc_error.max(ebc_error);
        self.min_det = self.min_det.min(f.min_det);
        self.max_det = self.max_det.max(f.max_det);

        // Out-of-balance force net of the condensed boundary force.
        let mut residual: f64 = 0.0;
        let mut force_norm: f64 = 0.0;
        for j in 0..self.mass.len() {
            let u0 = self.state.u_prev[j];
            let inertial = self.state.u_now[j] - u0 - (u0 - u_prev_before[j]) * beta;
            residual = residual.max((inertial * (self.mass[j] / alpha)).amax());
            force_norm = force_norm.max(f.forces[j].amax());
        }
        let max_increment = self.state.max_increment();
        if !max_increment.is_finite() {
            return Err(SolverError::Divergence {
                step: self.state.step,
                detail: "non-finite displacement after boundary correction".into(),
            });
        }
        self.steps.push(StepRecord {
            step: self.state.step,
            time: self.state.t,
            load_factor,
            max_increment,
            reaction: reaction.into(),
            ebc_error,
        });
        Ok(Outcome { max_increment, residual, force_norm, min_det: f.min_det, max_det: f.max_det })
    }
}

/// Picks `n` of `k` evenly spread indices `1..=k`, always including `k`.
fn snapshot_marks(n: usize, k: usize) -> Vec<usize> {
    (1..=n.min(k)).map(|i| (i * k).div_ceil(n.min(k))).collect()
}

pub fn solve_precomputed(
    model: &Model,
    cfg: &SolverConfig,
    pre: &Precomputed,
    progress: &mut dyn FnMut(&Progress),
) -> Result<SolveResult, SolveFailure> {
    cfg.validate()?;
    let cloud = &model.cloud;
    let dt = match cfg.timestep {
        Some(dt) => dt,
        None => default_timestep(model, cfg, pre)?,
    };
    let mass: Vec<f64> = pre.mass.iter().map(|m| m * cfg.mass_scale).collect();
    let total_mass = pre.mass.iter().sum();
    let mut run = Runner {
        model,
        cfg,
        pre,
        mass,
        state: SimulationState::at_rest(cloud.len()),
        steps: vec![],
        snapshots: vec![],
        last_good: None,
        max_ebc_error: 0.0,
        min_det: f64::INFINITY,
        max_det: f64::NEG_INFINITY,
    };
    let duration = model.boundary.load_duration();
    let mut stages = Vec::new();
    let mut final_damping = 0.0;
    let mut converged = true;
    let residual_ratio;

    match cfg.mode {
        Mode::Steady => {
            let tol = cfg.convergence_tol.unwrap_or(1e-7 * cloud.diameter());
            let c0 = cfg.damping.unwrap_or_else(|| initial_damping(model));
            let mut dr = DrConfig {
                h: dt,
                c: c0.min(1.99 / dt),
                adaptive: cfg.adaptive_damping,
                tol,
                max_iterations: cfg.max_iterations,
                mass_scale: cfg.mass_scale,
            };
            let mut hist = DrHistory::default();
            let k = cfg.load_stages;
            let marks = snapshot_marks(cfg.snapshots, k);
            let stage_time = duration / k as f64;
            let mut last_ratio = 0.0;
            for stage in 1..=k {
                let (from, to) = ((stage - 1) as f64 / k as f64, stage as f64 / k as f64);
                let mut quiet = 0;
                let mut iterations = 0;
                let mut t_stage = 0.0;
                let mut out;
                loop {
                    t_stage += dt;
                    let lf = from + (to - from) * smooth_load_factor(t_stage, stage_time);
                    out = match run.step(lf, Some((&mut dr, &mut hist)), dt) {
                        Ok(o) => o,
                        Err(e) => return Err(run.fail(e)),
                    };
                    iterations += 1;
                    progress(&Progress {
                        iteration: run.state.step,
                        load_factor: lf,
                        residual: out.residual,
                        max_increment: out.max_increment,
                    });
                    let ramp_done = t_stage >= stage_time;
                    quiet = if ramp_done && out.max_increment < tol { quiet + 1 } else { 0 };
                    if quiet >= cfg.convergence_window {
                        break;
                    }
                    if iterations >= cfg.max_iterations {
                        let e = SolverError::NonConvergence {
                            stage,
                            iterations,
                            last_increment: out.max_increment,
                        };
                        return Err(run.fail(e));
                    }
                }
                let (ratio, f) = match equilibrium_check(&mut run, to) {
                    Ok(r) => r,
                    Err(e) => return Err(run.fail(e)),
                };
                last_ratio = ratio;
                stages.push(StageRecord {
                    stage,
                    load_factor: to,
                    reaction: f.into(),
                    min_det: out.min_det,
                    max_det: out.max_det,
                    iterations,
                    residual_ratio: ratio,
                });
                let snap = run.snapshot(to);
                if marks.contains(&stage) {
                    run.snapshots.push(snap.clone());
                }
                run.last_good = Some(snap);
            }
            final_damping = dr.c;
            residual_ratio = last_ratio;
        }
        Mode::Dynamic => {
            let end = cfg.end_time.unwrap_or(duration);
            let total = ((end / dt).ceil() as usize).max(1);
            if total > cfg.max_iterations {
                return Err(run.fail(SolverError::Config(format!(
                    "{total} steps needed to reach t = {end} s exceeds the cap of {}",
                    cfg.max_iterations
                ))));
            }
            let marks = snapshot_marks(cfg.snapshots, total);
            let mut last = None;
            for i in 1..=total {
                let lf = smooth_load_factor(i as f64 * dt, duration);
                let out = match run.step(lf, None, dt) {
                    Ok(o) => o,
                    Err(e) => return Err(run.fail(e)),
                };
                progress(&Progress {
                    iteration: i,
                    load_factor: lf,
                    residual: out.residual,
                    max_increment: out.max_increment,
                });
                if marks.contains(&i) {
                    let snap = run.snapshot(lf);
                    run.snapshots.push(snap.clone());
                    run.last_good = Some(snap);
                }
                last = Some(out);
            }
            converged = false;
            residual_ratio = last.map_or(0.0, |o| ratio(o.residual, o.force_norm));
        }
    }

    Ok(SolveResult {
        displacements: pre.nodal_displacements(&run.state.u_now),
        parameters: run.state.u_now,
        steps: run.steps,
        stages,
        snapshots: run.snapshots,
        timestep: dt,
        final_damping,
        integration_points: pre.integration.len(),
        capped_cells: pre.integration.capped_cells.len(),
        total_mass,
        max_ebc_error: run.max_ebc_error,
        min_det: run.min_det,
        max_det: run.max_det,
        residual_ratio,
        converged,
    })
}

fn ratio(residual: f64, force: f64) -> f64 {
    if force > 0.0 {
        residual / force
    } else {
        residual
    }
}

/// Takes one trial step from rest at the current configuration and
/// returns the relative free residual and the condensed driven reaction.
/// The trial does not alter the run.
fn equilibrium_check(run: &mut Runner<'_>, load_factor: f64) -> Result<(f64, Vec3), SolverError> {
    let f = internal_force(&run.state.u_now, run.pre, &run.model.material)?;
    let mut trial = run.state.clone();
    trial.u_prev.clone_from(&trial.u_now);
    let alpha = 1.0;
    let dr = DrConfig {
        h: 1.0,
        c: 0.0,
        adaptive: false,
        tol: 1.0,
        max_iterations: 1,
        mass_scale: 1.0,
    };
    dr_step(&mut trial, None, &f.forces, &run.mass, &dr)?;
    let corr = ebc_correct(&mut trial.u_now, &run.pre.ebc, &run.pre.ebc.prescribed(load_factor))?;
    let reaction = run.pre.ebc.driven_reaction(&corr, alpha) * run.cfg.mass_scale;
    let mut residual: f64 = 0.0;
    let mut force: f64 = 0.0;
    for j in 0..run.mass.len() {
        residual = residual.max(((trial.u_now[j] - trial.u_prev[j]) * (run.mass[j] / alpha)).amax());
        force = force.max(f.forces[j].amax());
    }
    Ok((ratio(residual, force), reaction))
}

/// Wave-speed estimate, capped by the measured highest mode. On coarse
/// clouds the meshless stiffness can exceed what the node spacing
/// suggests, and the explicit update would otherwise be unstable.
fn default_timestep(model: &Model, cfg: &SolverConfig, pre: &Precomputed) -> Result<f64, SolverError> {
    let wave = critical_timestep(&model.cloud, &model.material, cfg.safety);
    let lambda = max_eigenvalue(pre, &model.material, SPECTRAL_ITERATIONS)? / cfg.mass_scale;
    if lambda > 0.0 && lambda.is_finite() {
        Ok(wave.min(SPECTRAL_MARGIN / lambda.sqrt()))
    } else {
        Ok(wave)
    }
}

/// Power iterations for the highest-mode estimate.
const SPECTRAL_ITERATIONS: usize = 40;
/// `Δt ≤ margin / ω_max`; central difference needs `Δt ≤ 2 / ω_max`.
const SPECTRAL_MARGIN: f64 = 1.6;

/// Damping near critical for the slowest shear mode of a body of this size.
fn initial_damping(model: &Model) -> f64 {
    let (_, mu) = model.material.small_strain_moduli();
    let omega = std::f64::consts::PI * (mu / model.cloud.density()).sqrt() / (2.0 * model.cloud.diameter());
    2.0 * omega
}
