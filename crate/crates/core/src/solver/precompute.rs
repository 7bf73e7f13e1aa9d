use nalgebra::SMatrix;
use rayon::prelude::*;

use super::SolverError;
use crate::cloud::Vec3;
use crate::materials::{Mat3, Material, MaterialError};
use crate::mmls::{ShapeEval, ShapeError, ShapeProvider};
use crate::quadrature::IntegrationSet;

use super::ebc::EbcOperator;

/// Shape data for many points in flat storage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointShapes {
    offsets: Vec<usize>,
    nodes: Vec<u32>,
    phi: Vec<f64>,
    dphi: Vec<Vec3>,
}

impl PointShapes {
    pub fn from_evals(evals: Vec<ShapeEval>) -> Self {
        let total = evals.iter().map(|e| e.len()).sum();
        let mut s = Self {
            offsets: Vec::with_capacity(evals.len() + 1),
            nodes: Vec::with_capacity(total),
            phi: Vec::with_capacity(total),
            dphi: Vec::with_capacity(total),
        };
        s.offsets.push(0);
        for e in evals {
            s.nodes.extend(e.nodes.iter().map(|&n| n as u32));
            s.phi.extend_from_slice(&e.phi);
            s.dphi.extend_from_slice(&e.dphi);
            s.offsets.push(s.nodes.len());
        }
        s
    }

    /// Evaluates `shapes` at every point in parallel.
    pub fn evaluate<S: ShapeProvider + ?Sized>(shapes: &S, points: &[Vec3]) -> Result<Self, ShapeError> {
        let evals = points.par_iter().map(|p| shapes.shape_at(p)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_evals(evals))
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self, i: usize) -> &[u32] {
        &self.nodes[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn phi(&self, i: usize) -> &[f64] {
        &self.phi[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn dphi(&self, i: usize) -> &[Vec3] {
        &self.dphi[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn interpolate(&self, i: usize, values: &[Vec3]) -> Vec3 {
        self.nodes(i).iter().zip(self.phi(i)).map(|(&j, &p)| values[j as usize] * p).sum()
    }
}

/// Everything that stays fixed during time stepping.
#[derive(Debug, Clone)]
pub struct Precomputed {
    pub integration: IntegrationSet,
    pub shapes: PointShapes,
    /// Lumped mass per node (applied identically in each direction).
    pub mass: Vec<f64>,
    pub ebc: EbcOperator,
    pub volume: f64,
    /// Shapes at the field nodes, for turning nodal parameters into displacements.
    pub node_shapes: PointShapes,
}

impl Precomputed {
    pub fn node_count(&self) -> usize {
        self.mass.len()
    }

    /// Physical displacement `Σ φ_j(x_i) u_j` at every node.
    pub fn nodal_displacements(&self, params: &[Vec3]) -> Vec<Vec3> {
        (0..self.node_shapes.len()).map(|i| self.node_shapes.interpolate(i, params)).collect()
    }
}

/// How the consistent mass is reduced to a diagonal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MassLumping {
    /// `m_j = ρ Σ_i w_i φ_j(x_i)`. Meshless shape functions take negative
    /// values, so nodes on edges and corners may end up with little or
    /// negative mass.
    RowSum,
    /// `m_j ∝ Σ_i w_i φ_j(x_i)²`, scaled so the masses add up to `ρ Σ_i w_i`.
    /// Always positive.
    #[default]
    Diagonal,
}

impl MassLumping {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "row_sum" | "rowsum" => Some(MassLumping::RowSum),
            "diagonal" => Some(MassLumping::Diagonal),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MassLumping::RowSum => "row_sum",
            MassLumping::Diagonal => "diagonal",
        }
    }
}

/// Lumped nodal masses through the integration points; fails if any node
/// ends up without positive mass.
pub fn lump_mass(
    node_count: usize,
    set: &IntegrationSet,
    shapes: &PointShapes,
    density: f64,
    scheme: MassLumping,
) -> Result<Vec<f64>, SolverError> {
    if shapes.len() != set.len() {
        return Err(SolverError::DimensionMismatch(format!(
            "{} shape evaluations for {} integration points",
            shapes.len(),
            set.len()
        )));
    }
    let mut mass = vec![0.0; node_count];
    for (i, w) in set.weights.iter().enumerate() {
        for (&j, &p) in shapes.nodes(i).iter().zip(shapes.phi(i)) {
            mass[j as usize] += match scheme {
                MassLumping::RowSum => density * w * p,
                MassLumping::Diagonal => w * p * p,
            };
        }
    }
    if scheme == MassLumping::Diagonal {
        let scale = density * set.total_weight() / mass.iter().sum::<f64>();
        mass.iter_mut().for_each(|m| *m *= scale);
    }
    if let Some((node, &m)) = mass.iter().enumerate().find(|(_, m)| !(**m > 0.0 && m.is_finite())) {
        return Err(SolverError::NonPositiveMass { node, mass: m });
    }
    Ok(mass)
}

/// `X = I + Σ_j u_j ⊗ ∇φ_j`.
pub fn deformation_gradient(nodes: &[u32], dphi: &[Vec3], u: &[Vec3]) -> Mat3 {
    let mut x = Mat3::identity();
    for (&j, d) in nodes.iter().zip(dphi) {
        x += u[j as usize] * d.transpose();
    }
    x
}

/// Linear strain-displacement block of one node, rows in Voigt order
/// `(xx, yy, zz, xy, yz, xz)`.
pub fn strain_displacement_block(d: &Vec3) -> SMatrix<f64, 6, 3> {
    SMatrix::<f64, 6, 3>::from_row_slice(&[
        d.x, 0.0, 0.0, //
        0.0, d.y, 0.0, //
        0.0, 0.0, d.z, //
        d.y, d.x, 0.0, //
        0.0, d.z, d.y, //
        d.z, 0.0, d.x,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalForce {
    pub forces: Vec<Vec3>,
    pub min_det: f64,
    pub max_det: f64,
}

/// Nodal internal forces `Σ_i X Sᵢ ∇φ_j wᵢ`. Stresses are evaluated in
/// parallel; the scatter into nodes runs in integration-point order so the
/// result does not depend on the number of workers.
pub fn internal_force(u: &[Vec3], pre: &Precomputed, material: &Material) -> Result<InternalForce, SolverError> {
    let shapes = &pre.shapes;
    let weights = &pre.integration.weights;
    let per_point: Vec<(Mat3, f64)> = (0..shapes.len())
        .into_par_iter()
        .map(|i| {
            let x = deformation_gradient(shapes.nodes(i), shapes.dphi(i), u);
            let det = x.determinant();
            if !(det > 0.0) {
                return Err(SolverError::Inverted { point: i, location: pre.integration.points[i], det });
            }
            let s = material.spk(&x).map_err(|source| match source {
                MaterialError::Inverted { det, .. } => {
                    SolverError::Inverted { point: i, location: pre.integration.points[i], det }
                }
                source => SolverError::Material { point: i, source },
            })?;
            Ok((x * s.s * weights[i], det))
        })
        .collect::<Result<_, _>>()?;

    let mut forces = vec![Vec3::zeros(); u.len()];
    let mut min_det = f64::INFINITY;
    let mut max_det = f64::NEG_INFINITY;
    for (i, (pw, det)) in per_point.iter().enumerate() {
        min_det = min_det.min(*det);
        max_det = max_det.max(*det);
        for (&j, d) in shapes.nodes(i).iter().zip(shapes.dphi(i)) {
            forces[j as usize] += pw * d;
        }
    }
    Ok(InternalForce { forces, min_det, max_det })
}

/// Largest eigenvalue of `M⁻¹K` at the reference configuration (1/s²), by
/// power iteration on the internal force of small displacements. Power
/// iteration approaches the eigenvalue from below, so callers keep a margin.
pub fn max_eigenvalue(pre: &Precomputed, material: &Material, iterations: usize) -> Result<f64, SolverError> {
    let n = pre.node_count();
    // Deterministic, well-mixed start vector.
    let mut v: Vec<Vec3> = (0..n)
        .map(|j| {
            let t = j as f64;
            Vec3::new((12.9898 * t + 1.0).sin(), (78.233 * t + 2.0).sin(), (37.719 * t + 3.0).sin())
        })
        .collect();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let scale = v.iter().map(|x| x.amax()).fold(0.0, f64::max);
        if !(scale > 0.0 && scale.is_finite()) {
            break;
        }
        v.iter_mut().for_each(|x| *x /= scale);
        // Small enough that the response is linear, large enough to stay clear of round-off.
        let eps = 1e-7 * pre.volume.cbrt();
        let u: Vec<Vec3> = v.iter().map(|x| x * eps).collect();
        let f = internal_force(&u, pre, material)?;
        let (mut vkv, mut vmv) = (0.0, 0.0);
        for j in 0..n {
            let kv = f.forces[j] / eps;
            vkv += v[j].dot(&kv);
            vmv += pre.mass[j] * v[j].norm_squared();
            v[j] = kv / pre.mass[j];
        }
        lambda = vkv / vmv;
    }
    Ok(lambda)
}

/// `Σ_i W(Xᵢ) wᵢ`.
pub fn strain_energy_total(u: &[Vec3], pre: &Precomputed, material: &Material) -> Result<f64, SolverError> {
    let shapes = &pre.shapes;
    let parts: Vec<f64> = (0..shapes.len())
        .into_par_iter()
        .map(|i| {
            let x = deformation_gradient(shapes.nodes(i), shapes.dphi(i), u);
            material
                .strain_energy(&x)
                .map(|w| w * pre.integration.weights[i])
                .map_err(|source| SolverError::Material { point: i, source })
        })
        .collect::<Result<_, _>>()?;
    Ok(parts.iter().sum())
}
