use mtled::benchmarks::{cube, CubeSpec, GridLayout};
use mtled::cloud::{BoundarySpec, NodeCloud};
use mtled::io::lateral_stretch;
use mtled::materials::Mat3;
use mtled::solver::{
    central_difference_step, critical_timestep, internal_force, strain_energy_total, Model, Precomputed,
    SimulationState,
};
use mtled::{Material, NeoHookeanParams, SolverConfig, Vec3};

fn smooth_field(p: &Vec3, amplitude: f64) -> Vec3 {
    let s = |t: f64| (std::f64::consts::PI * t / 0.1).sin();
    Vec3::new(s(p.z) * s(p.y), -0.5 * s(p.x) * s(p.z), 0.3 * s(p.x) * s(p.y)) * amplitude
}

#[test]
fn internal_force_ignores_rigid_translation() {
    let b = cube(&CubeSpec::default()).unwrap();
    let cfg = SolverConfig::new(b.radius);
    let pre = Precomputed::new(&b.model, &cfg).unwrap();
    let u: Vec<Vec3> = b.model.cloud.nodes().iter().map(|p| smooth_field(p, 2e-3)).collect();
    let f = internal_force(&u, &pre, &b.model.material).unwrap();

    let shift = Vec3::new(1.3, -0.7, 2.1);
    let cloud = &b.model.cloud;
    let moved = NodeCloud::new(cloud.nodes().iter().map(|p| p + shift).collect(), cloud.cells().to_vec(), cloud.density())
        .unwrap();
    let model = Model { cloud: moved, ..b.model.clone() };
    let pre_moved = Precomputed::new(&model, &cfg).unwrap();
    let g = internal_force(&u, &pre_moved, &model.material).unwrap();

    let scale = f.forces.iter().map(|v| v.amax()).fold(0.0, f64::max);
    assert!(scale > 0.0);
    for (a, b) in f.forces.iter().zip(&g.forces) {
        assert!((a - b).amax() < 1e-8 * scale, "{a} vs {b}");
    }
}

#[test]
fn undamped_stepping_conserves_energy() {
    let b = cube(&CubeSpec::default()).unwrap();
    let free = BoundarySpec::new(b.model.cloud.len(), vec![], vec![], 0.0).unwrap();
    let model = Model { boundary: free, surface: vec![], ..b.model.clone() };
    let pre = Precomputed::new(&model, &SolverConfig::new(b.radius)).unwrap();
    let dt = critical_timestep(&model.cloud, &model.material, 0.25);

    let mut state = SimulationState::at_rest(model.cloud.len());
    let u0: Vec<Vec3> = model.cloud.nodes().iter().map(|p| smooth_field(p, 1e-3)).collect();
    state.u_now = u0.clone();
    state.u_prev = u0;
    let e0 = strain_energy_total(&state.u_now, &pre, &model.material).unwrap();
    assert!(e0 > 0.0);

    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let before = state.u_prev.clone();
        let f = internal_force(&state.u_now, &pre, &model.material).unwrap();
        central_difference_step(&mut state, None, &f.forces, &pre.mass, dt).unwrap();
        // Energy at the middle level with the centred velocity.
        let kinetic: f64 = (0..pre.mass.len())
            .map(|j| 0.5 * pre.mass[j] * ((state.u_now[j] - before[j]) / (2.0 * dt)).norm_squared())
            .sum();
        let strain = strain_energy_total(&state.u_prev, &pre, &model.material).unwrap();
        worst = worst.max(((kinetic + strain) - e0).abs() / e0);
    }
    assert!(worst < 0.01, "energy drift {worst}");
}

#[test]
fn small_strain_reaction_matches_youngs_modulus() {
    let strain = 0.002;
    let spec = CubeSpec { compression: strain, radius_factor: CubeSpec::ONE_POINT_RADIUS_FACTOR, ..CubeSpec::default() };
    let b = cube(&spec).unwrap();
    let r = mtled::solve(&b.model, &SolverConfig::new(b.radius)).unwrap();
    let expected = spec.young * strain * spec.edge * spec.edge;
    let reaction = r.final_reaction().z.abs();
    assert!((reaction - expected).abs() < 0.02 * expected, "reaction {reaction} N, expected {expected} N");
}

#[test]
fn cube_mass_is_one_kilogram() {
    for layout in [GridLayout::COARSE, GridLayout { nx: 9, ny: 9, nz: 9 }] {
        let b = cube(&CubeSpec { layout, ..CubeSpec::default() }).unwrap();
        let pre = Precomputed::new(&b.model, &SolverConfig::new(b.radius)).unwrap();
        let total: f64 = pre.mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-8, "{total}");
        assert!(pre.mass.iter().all(|m| *m > 0.0));
    }
}

/// Lateral stretch by bisection on the material's own lateral stress.
fn bisect_lateral(axial: f64, m: &NeoHookeanParams) -> f64 {
    let material = Material::NeoHookean(*m);
    let s_xx = |l: f64| material.spk(&Mat3::from_diagonal(&Vec3::new(l, l, axial))).unwrap().s[(0, 0)];
    let (mut lo, mut hi) = (0.5, 2.0);
    assert!(s_xx(lo) * s_xx(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if s_xx(mid).signum() == s_xx(lo).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn lateral_stretch_agrees_with_bisection() {
    for (young, nu) in [(3000.0, 0.49), (3000.0, 0.3), (1e5, 0.45)] {
        let m = NeoHookeanParams::new(young, nu).unwrap();
        for axial in [0.5, 0.8, 0.95, 1.1] {
            let newton = lateral_stretch(axial, &m).unwrap();
            let bisect = bisect_lateral(axial, &m);
            assert!((newton - bisect).abs() < 1e-12, "{axial}: {newton} vs {bisect}");
        }
        // Small strain: λ_lat − 1 ≈ ν ε.
        let eps = 1e-4;
        let lat = lateral_stretch(1.0 - eps, &m).unwrap();
        assert!(((lat - 1.0) / (nu * eps) - 1.0).abs() < 0.01, "nu {nu}: {}", (lat - 1.0) / eps);
    }
}
