use super::SolverError;
use crate::cloud::{NodeCloud, Vec3};
use crate::materials::Material;

/// Largest admissible `c·h`; keeps `β` away from −1.
const MAX_CH: f64 = 1.99;
/// Iterations between damping re-estimates.
const ADAPT_INTERVAL: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationState {
    pub u_now: Vec<Vec3>,
    pub u_prev: Vec<Vec3>,
    pub t: f64,
    pub step: usize,
}

impl SimulationState {
    pub fn at_rest(node_count: usize) -> Self {
        Self { u_now: vec![Vec3::zeros(); node_count], u_prev: vec![Vec3::zeros(); node_count], t: 0.0, step: 0 }
    }

    /// Largest nodal displacement change over the last step.
    pub fn max_increment(&self) -> f64 {
        self.u_now.iter().zip(&self.u_prev).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub max_increment: f64,
}

/// `u⁺ = u + β(u − u⁻) + α M⁻¹ (f_ext − f_int)`; every explicit update
/// goes through here so that equal coefficients give identical bits.
fn advance(
    state: &mut SimulationState,
    f_ext: Option<&[Vec3]>,
    f_int: &[Vec3],
    mass: &[f64],
    alpha: f64,
    beta: f64,
    dt: f64,
) -> Result<StepInfo, SolverError> {
    let n = state.u_now.len();
    if f_int.len() != n || mass.len() != n || state.u_prev.len() != n || f_ext.is_some_and(|f| f.len() != n) {
        return Err(SolverError::DimensionMismatch(format!(
            "state of {n} nodes, {} forces, {} masses",
            f_int.len(),
            mass.len()
        )));
    }
    let mut max_increment: f64 = 0.0;
    for j in 0..n {
        let r = match f_ext {
            Some(f) => f[j] - f_int[j],
            None => -f_int[j],
        };
        let u = state.u_now[j];
        let next = u + (u - state.u_prev[j]) * beta + r * (alpha / mass[j]);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(SolverError::Divergence {
                step: state.step + 1,
                detail: format!("non-finite displacement at node {j}"),
            });
        }
        max_increment = max_increment.max((next - u).norm());
        state.u_prev[j] = u;
        state.u_now[j] = next;
    }
    state.t += dt;
    state.step += 1;
    Ok(StepInfo { max_increment })
}

/// Central difference: `u⁺ = Δt² M⁻¹ (f_ext − f_int) + 2u − u⁻`.
pub fn central_difference_step(
    state: &mut SimulationState,
    f_ext: Option<&[Vec3]>,
    f_int: &[Vec3],
    mass: &[f64],
    dt: f64,
) -> Result<StepInfo, SolverError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SolverError::Config(format!("time step must be positive, got {dt}")));
    }
    advance(state, f_ext, f_int, mass, dt * dt, 1.0, dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrConfig {
    /// Pseudo-time increment (s).
    pub h: f64,
    /// Damping coefficient (1/s).
    pub c: f64,
    pub adaptive: bool,
    /// Steady-state threshold on the largest displacement increment (m).
    pub tol: f64,
    pub max_iterations: usize,
    /// Factor applied to the physical lumped mass.
    pub mass_scale: f64,
}

impl DrConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(SolverError::Config(format!("pseudo-time step must be positive, got {}", self.h)));
        }
        if !(self.c >= 0.0 && self.c * self.h < 2.0) {
            return Err(SolverError::Config(format!("need 0 <= c*h < 2, got c = {}, h = {}", self.c, self.h)));
        }
        if !(self.mass_scale > 0.0 && self.mass_scale.is_finite()) {
            return Err(SolverError::Config(format!("mass scale must be positive, got {}", self.mass_scale)));
        }
        Ok(())
    }

    /// `(α, β) = (2h²/(2 + ch), (2 − ch)/(2 + ch))`.
    pub fn alpha_beta(&self) -> (f64, f64) {
        let ch = self.c * self.h;
        (2.0 * self.h * self.h / (2.0 + ch), (2.0 - ch) / (2.0 + ch))
    }
}

/// One dynamic-relaxation iteration.
pub fn dr_step(
    state: &mut SimulationState,
    f_ext: Option<&[Vec3]>,
    f_int: &[Vec3],
    mass: &[f64],
    cfg: &DrConfig,
) -> Result<StepInfo, SolverError> {
    cfg.validate()?;
    let (alpha, beta) = cfg.alpha_beta();
    advance(state, f_ext, f_int, mass, alpha, beta, cfg.h)
}

/// 3-4-5 polynomial ramp `10τ³ − 15τ⁴ + 6τ⁵`, `τ = clamp(t/T, 0, 1)`.
/// A zero duration applies the full load at once.
pub fn smooth_load_factor(t: f64, duration: f64) -> f64 {
    if duration <= 0.0 {
        return 1.0;
    }
    let tau = (t / duration).clamp(0.0, 1.0);
    tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau))
}

/// `safety · h_min / √((λ + 2μ)/ρ)` from the small-strain moduli.
pub fn critical_timestep(cloud: &NodeCloud, material: &Material, safety: f64) -> f64 {
    let (lambda, mu) = material.small_strain_moduli();
    let wave = ((lambda + 2.0 * mu) / cloud.density()).sqrt();
    safety * cloud.min_node_spacing() / wave
}

/// Last displacement/force pair seen by [`adapt_dr_params`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DrHistory {
    prev: Option<(Vec<Vec3>, Vec<Vec3>)>,
    calls: usize,
    /// Most recent accepted eigenvalue estimate (1/s²).
    pub last_estimate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrAdaptation {
    pub c: f64,
    pub mass_scale: f64,
}

/// Records `(u, f_int)` and, every few calls, re-estimates the lowest
/// eigenvalue from the secant Rayleigh quotient
/// `Δu·Δf / (Δu·MΔu)`, setting `c = 2√λ` clamped
/// so that `c·h ≤ 1.99`.
/// Non-positive or non-finite estimates keep the previous `c`. `mass`
/// is the mass actually used in stepping.
pub fn adapt_dr_params(
    history: &mut DrHistory,
    u: &[Vec3],
    f_int: &[Vec3],
    mass: &[f64],
    cfg: &DrConfig,
) -> DrAdaptation {
    history.calls += 1;
    let mut c = cfg.c;
    if history.calls % ADAPT_INTERVAL == 0 {
        if let Some((pu, pf)) = &history.prev {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..u.len() {
                let du = u[j] - pu[j];
                num += du.dot(&(f_int[j] - pf[j]));
                den += mass[j] * du.norm_squared();
            }
            let lambda = num / den;
            if lambda > 0.0 && lambda.is_finite() {
                history.last_estimate = Some(lambda);
                c = (2.0 * lambda.sqrt()).min(MAX_CH / cfg.h);
            }
        }
    }
    match &mut history.prev {
        Some((pu, pf)) => {
            pu.copy_from_slice(u);
            pf.copy_from_slice(f_int);
        }
        None => history.prev = Some((u.to_vec(), f_int.to_vec())),
    }
    DrAdaptation { c, mass_scale: cfg.mass_scale }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(h: f64, c: f64) -> DrConfig {
        DrConfig { h, c, adaptive: false, tol: 1e-9, max_iterations: 1000, mass_scale: 1.0 }
    }

    #[test]
    fn alpha_beta_at_two_thirds() {
        let h = 0.3;
        let (a, b) = cfg(h, 2.0 / 3.0 / h).alpha_beta();
        assert!((b - 0.5).abs() < 1e-15);
        assert!((a - 0.75 * h * h).abs() < 1e-15);
        assert_eq!(cfg(h, 0.0).alpha_beta(), (h * h, 1.0));
    }

    #[test]
    fn rest_and_drift() {
        let mut s = SimulationState::at_rest(2);
        let f = vec![Vec3::new(1.0, 2.0, 3.0); 2];
        central_difference_step(&mut s, Some(&f), &f, &[1.0, 2.0], 0.1).unwrap();
        assert!(s.u_now.iter().all(|u| u.norm() == 0.0));
        s.u_now[0] = Vec3::new(1.0, 0.0, 0.0);
        let before = s.clone();
        central_difference_step(&mut s, Some(&f), &f, &[1.0, 2.0], 0.1).unwrap();
        assert_eq!(s.u_now[0], before.u_now[0] * 2.0 - before.u_prev[0]);
        assert_eq!(s.u_prev, before.u_now);
    }

    #[test]
    fn constant_acceleration() {
        let (dt, n, f) = (0.01, 200, 3.0);
        let mut s = SimulationState::at_rest(1);
        // Start at u(-dt) = u(0) - ... chosen so the scheme matches f t²/2.
        s.u_prev[0] = Vec3::new(0.5 * f * dt * dt, 0.0, 0.0);
        let ext = [Vec3::new(f, 0.0, 0.0)];
        for _ in 0..n {
            central_difference_step(&mut s, Some(&ext), &[Vec3::zeros()], &[1.0], dt).unwrap();
        }
        let t = n as f64 * dt;
        let exact = 0.5 * f * t * t;
        assert!((s.u_now[0].x - exact).abs() < f * dt * dt * 10.0, "{} vs {exact}", s.u_now[0].x);
    }

    #[test]
    fn undamped_dr_matches_central_difference_bitwise() {
        let h = 0.0123;
        let mut a = SimulationState::at_rest(3);
        a.u_now = vec![Vec3::new(0.1, -0.2, 0.3), Vec3::new(0.01, 0.0, 0.7), Vec3::new(-0.5, 0.25, 0.0)];
        let mut b = a.clone();
        let mass = [1.3, 0.7, 2.1];
        for i in 0..50 {
            let fa: Vec<Vec3> = a.u_now.iter().map(|u| u * (3.0 + i as f64) + Vec3::repeat(0.1)).collect();
            central_difference_step(&mut a, None, &fa, &mass, h).unwrap();
            dr_step(&mut b, None, &fa, &mass, &cfg(h, 0.0)).unwrap();
        }
        assert_eq!(a.u_now, b.u_now);
    }

    #[test]
    fn non_finite_is_divergence() {
        let mut s = SimulationState::at_rest(1);
        let err = central_difference_step(&mut s, None, &[Vec3::new(f64::NAN, 0.0, 0.0)], &[1.0], 0.1);
        assert!(matches!(err, Err(SolverError::Divergence { step: 1, .. })));
    }

    #[test]
    fn load_factor_shape() {
        assert_eq!(smooth_load_factor(0.0, 2.0), 0.0);
        assert_eq!(smooth_load_factor(2.0, 2.0), 1.0);
        assert!((smooth_load_factor(1.0, 2.0) - 0.5).abs() < 1e-15);
        let e = 1e-6;
        assert!(smooth_load_factor(e, 1.0) / e < 1e-9);
        assert!((1.0 - smooth_load_factor(1.0 - e, 1.0)) / e < 1e-9);
        assert_eq!(smooth_load_factor(5.0, 0.0), 1.0);
    }

    #[test]
    fn damping_estimate_for_one_dof() {
        let (k, m) = (40.0, 2.5);
        let h = 0.1;
        let mut dr = cfg(h, 0.1);
        let mut s = SimulationState::at_rest(1);
        s.u_now[0] = Vec3::new(1.0, 0.0, 0.0);
        s.u_prev[0] = s.u_now[0];
        let mut hist = DrHistory::default();
        for _ in 0..50 {
            let f = [s.u_now[0] * k];
            dr.c = adapt_dr_params(&mut hist, &s.u_now, &f, &[m], &dr).c;
            dr_step(&mut s, None, &f, &[m], &dr).unwrap();
        }
        let exact = 2.0 * (k / m).sqrt();
        assert!((dr.c - exact).abs() < 0.05 * exact, "{} vs {exact}", dr.c);
        assert!(dr.c * h <= MAX_CH);
    }

    #[test]
    fn damping_clamped_and_stationary() {
        let h = 1.0;
        let mut hist = DrHistory::default();
        let c0 = 0.3;
        let u = [Vec3::zeros()];
        for _ in 0..20 {
            let a = adapt_dr_params(&mut hist, &u, &[Vec3::zeros()], &[1.0], &cfg(h, c0));
            assert_eq!(a.c, c0);
        }
        let mut hist = DrHistory::default();
        let mut c = c0;
        for i in 0..20 {
            let u = [Vec3::new(i as f64, 0.0, 0.0)];
            c = adapt_dr_params(&mut hist, &u, &[u[0] * 1e6], &[1.0], &cfg(h, c)).c;
        }
        assert!(c * h <= MAX_CH && c > c0);
    }
}
