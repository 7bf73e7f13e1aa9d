//! Error measures against a reference field and the closed-form cube solution.

use serde::Serialize;
use thiserror::Error;

use crate::cloud::Vec3;
use crate::materials::NeoHookeanParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("computed field has {computed} entries, reference {reference}")]
    Length { computed: usize, reference: usize },
    #[error("reference range along axis {axis} is zero; the normalised error is undefined")]
    ZeroRange { axis: usize },
    #[error("no root of the lateral stress found ({0})")]
    NoRoot(String),
}

fn ranges(reference: &[Vec3]) -> [f64; 3] {
    std::array::from_fn(|a| {
        let (lo, hi) = reference.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[a]), hi.max(v[a])));
        hi - lo
    })
}

fn check(computed: &[Vec3], reference: &[Vec3], axis: usize) -> Result<f64, MetricError> {
    if computed.len() != reference.len() {
        return Err(MetricError::Length { computed: computed.len(), reference: reference.len() });
    }
    let r = ranges(reference)[axis];
    if !(r > 0.0) {
        return Err(MetricError::ZeroRange { axis });
    }
    Ok(r)
}

/// `√(mean (u − u_ref)²) / (max u_ref − min u_ref)` along one axis.
pub fn nrmse(computed: &[Vec3], reference: &[Vec3], axis: usize) -> Result<f64, MetricError> {
    let range = check(computed, reference, axis)?;
    let sq: f64 = computed.iter().zip(reference).map(|(c, r)| (c[axis] - r[axis]).powi(2)).sum();
    Ok((sq / computed.len() as f64).sqrt() / range)
}

/// `|u − u_ref| / (max u_ref − min u_ref)` node by node along one axis.
pub fn nre_field(computed: &[Vec3], reference: &[Vec3], axis: usize) -> Result<Vec<f64>, MetricError> {
    let range = check(computed, reference, axis)?;
    Ok(computed.iter().zip(reference).map(|(c, r)| ((c[axis] - r[axis]) / range).abs()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Counts over `bins` equal-width bins spanning `[min, max]`; the top
/// edge is inclusive so every value lands in a bin.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Histogram { edges: vec![0.0; bins + 1], counts: vec![0; bins] };
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let i = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

/// Per-axis summary of one comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub nrmse: [Option<f64>; 3],
    pub nre_min: [Option<f64>; 3],
    pub nre_max: [Option<f64>; 3],
    pub nre_histogram: [Option<Histogram>; 3],
}

impl ErrorReport {
    /// Axes whose reference range is zero are left empty.
    pub fn new(computed: &[Vec3], reference: &[Vec3], bins: usize) -> Result<Self, MetricError> {
        let mut rep = ErrorReport {
            nrmse: [None; 3],
            nre_min: [None; 3],
            nre_max: [None; 3],
            nre_histogram: [None, None, None],
        };
        for a in 0..3 {
            match nre_field(computed, reference, a) {
                Ok(nre) => {
                    rep.nrmse[a] = Some(nrmse(computed, reference, a)?);
                    rep.nre_min[a] = nre.iter().copied().reduce(f64::min);
                    rep.nre_max[a] = nre.iter().copied().reduce(f64::max);
                    rep.nre_histogram[a] = Some(histogram(&nre, bins));
                }
                Err(MetricError::ZeroRange { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(rep)
    }
}

/// Lateral stretch of a Neo-Hookean block under uniaxial stress at axial
/// stretch `axial`, from the zero of the lateral second Piola–Kirchhoff
/// stress.
pub fn lateral_stretch(axial: f64, material: &NeoHookeanParams) -> Result<f64, MetricError> {
    let c10 = material.c10();
    let d1 = material.d1;
    let s_lat = |l: f64| {
        let j = l * l * axial;
        let i1 = 2.0 * l * l + axial * axial;
        // S = 2C10 J^{-2/3}(I − I1/3 C⁻¹) + (2/D1) J(J − 1) C⁻¹ on the lateral diagonal.
        2.0 * c10 * j.powf(-2.0 / 3.0) * (1.0 - i1 / (3.0 * l * l)) + 2.0 / d1 * j * (j - 1.0) / (l * l)
    };
    // The incompressible stretch is a natural starting point.
    let guess = 1.0 / axial.sqrt();
    let (mut lo, mut hi) = (0.5 * guess.min(1.0), 2.0 * guess.max(1.0));
    let (mut flo, fhi) = (s_lat(lo), s_lat(hi));
    if !(flo.is_finite() && fhi.is_finite()) || flo.signum() == fhi.signum() {
        return Err(MetricError::NoRoot(format!("no sign change on [{lo}, {hi}]")));
    }
    let mut x = guess.clamp(lo, hi);
    for _ in 0..200 {
        let fx = s_lat(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == flo.signum() {
            lo = x;
            flo = fx;
        } else {
            hi = x;
        }
        // Newton with a central-difference slope, bisection when it leaves the bracket.
        let dx = 1e-7 * x;
        let slope = (s_lat(x + dx) - s_lat(x - dx)) / (2.0 * dx);
        let step = fx / slope;
        if step.is_finite() && step.abs() < 1e-15 * x {
            return Ok(x - step);
        }
        let newton = x - step;
        x = if newton >= lo && newton <= hi && step.is_finite() { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 * x {
            return Ok(x);
        }
    }
    Err(MetricError::NoRoot("iteration limit".into()))
}

/// Homogeneous solution of the cube held in z on `z = 0` and pressed down by
/// `compression × edge` on `z = edge`, lateral faces free, centred at
/// `(edge/2, edge/2)` laterally.
pub fn cube_analytical_displacement(
    point: &Vec3,
    compression: f64,
    material: &NeoHookeanParams,
    edge: f64,
) -> Result<Vec3, MetricError> {
    let lat = lateral_stretch(1.0 - compression, material)?;
    let c = 0.5 * edge;
    Ok(Vec3::new((lat - 1.0) * (point.x - c), (lat - 1.0) * (point.y - c), -compression * point.z))
}
