//! Built-in verification problems: unconstrained compression of a cube and
//! indentation of a cylinder.

use crate::cloud::{AxisMask, BoundarySpec, CloudError, DrivenNode, FixedNode, NodeCloud, Vec3};
use crate::io::{cube_analytical_displacement, MetricError};
use crate::materials::{Material, MaterialError, NeoHookeanParams, OgdenParams};
use crate::solver::Model;

/// Node counts along x, y, z of a regular grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridLayout {
    /// 252 nodes.
    pub const COARSE: GridLayout = GridLayout { nx: 6, ny: 6, nz: 7 };
    /// 3375 nodes.
    pub const FINE: GridLayout = GridLayout { nx: 15, ny: 15, nz: 15 };

    pub fn node_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }
}

/// Six tetrahedra sharing the main diagonal `0–6` of a hexahedron whose
/// corners are numbered counter-clockwise on the bottom then the top face.
/// Neighbouring hexahedra split consistently, so faces match.
const KUHN: [[usize; 4]; 6] = [[0, 1, 2, 6], [0, 2, 3, 6], [0, 3, 7, 6], [0, 7, 4, 6], [0, 4, 5, 6], [0, 5, 1, 6]];

fn hex_grid_cells(nx: usize, ny: usize, nz: usize) -> Vec<[usize; 4]> {
    let id = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    let mut cells = Vec::with_capacity(6 * (nx - 1) * (ny - 1) * (nz - 1));
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let c = [
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ];
                cells.extend(KUHN.iter().map(|t| t.map(|q| c[q])));
            }
        }
    }
    cells
}

/// A cube compression model together with the influence radius it was built for.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub model: Model,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeSpec {
    pub layout: GridLayout,
    pub edge: f64,
    /// Top-face displacement as a fraction of the edge.
    pub compression: f64,
    pub young: f64,
    pub poisson: f64,
    pub density: f64,
    /// Influence radius as a multiple of the largest grid spacing.
    pub radius_factor: f64,
    pub load_duration: f64,
}

impl CubeSpec {
    /// Radius factor for runs with one integration point per cell. The
    /// under-integrated system is noticeably more accurate with the
    /// smaller support; refined integration prefers [`CubeSpec::default`].
    pub const ONE_POINT_RADIUS_FACTOR: f64 = 2.0;

    pub fn material(&self) -> Result<NeoHookeanParams, MaterialError> {
        NeoHookeanParams::new(self.young, self.poisson)
    }

    /// Closed-form displacement at every node of `cloud`.
    pub fn reference(&self, cloud: &NodeCloud) -> Result<Vec<Vec3>, BenchmarkError> {
        let m = self.material()?;
        cloud
            .nodes()
            .iter()
            .map(|p| cube_analytical_displacement(p, self.compression, &m, self.edge))
            .collect::<Result<_, _>>()
            .map_err(BenchmarkError::from)
    }
}

impl Default for CubeSpec {
    fn default() -> Self {
        Self {
            layout: GridLayout::COARSE,
            edge: 0.1,
            compression: 0.2,
            young: 3000.0,
            poisson: 0.49,
            density: 1000.0,
            radius_factor: 2.2,
            load_duration: 1.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("grid needs at least two nodes per direction")]
    Layout,
}

/// Regular-grid cube with the bottom face held in z only and the top face
/// driven down in z only; the lateral faces are free, so the exact
/// solution is a homogeneous deformation. Both constrained faces are
/// triangulated for surface-integrated constraints.
pub fn cube(spec: &CubeSpec) -> Result<Benchmark, BenchmarkError> {
    let GridLayout { nx, ny, nz } = spec.layout;
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(BenchmarkError::Layout);
    }
    let a = spec.edge;
    let (hx, hy, hz) = (a / (nx - 1) as f64, a / (ny - 1) as f64, a / (nz - 1) as f64);
    let mut nodes = Vec::with_capacity(spec.layout.node_count());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                // Exact end values keep boundary detection free of round-off.
                let c = |n: usize, m: usize, h: f64| if n == m - 1 { a } else { n as f64 * h };
                nodes.push(Vec3::new(c(i, nx, hx), c(j, ny, hy), c(k, nz, hz)));
            }
        }
    }
    let cloud = NodeCloud::new(nodes, hex_grid_cells(nx, ny, nz), spec.density)?;
    let bottom = |j: usize| cloud.node(j).z == 0.0;
    let top = |j: usize| cloud.node(j).z == a;
    let fixed = (0..cloud.len()).filter(|&j| bottom(j)).map(|node| FixedNode { node, mask: AxisMask::Z }).collect();
    let driven = (0..cloud.len())
        .filter(|&j| top(j))
        .map(|node| DrivenNode { node, mask: AxisMask::Z, displacement: Vec3::new(0.0, 0.0, -spec.compression * a) })
        .collect();
    let boundary = BoundarySpec::new(cloud.len(), fixed, driven, spec.load_duration)?;
    let surface = cloud.boundary_faces(|j| bottom(j) || top(j));
    // Drop faces on the side walls that happen to touch both planes.
    let surface = surface.into_iter().filter(|f| f.iter().all(|&j| bottom(j)) || f.iter().all(|&j| top(j))).collect();
    let material = Material::NeoHookean(spec.material()?);
    let radius = spec.radius_factor * hx.max(hy).max(hz);
    Ok(Benchmark { model: Model { cloud, boundary, material, surface }, radius })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderSpec {
    pub diameter: f64,
    pub height: f64,
    /// Nodes along each side of the square grid mapped onto the disk (odd).
    pub radial: usize,
    pub layers: usize,
    pub indenter_diameter: f64,
    /// Indentation depth as a fraction of the height.
    pub depth_fraction: f64,
    pub material: OgdenParams,
    pub density: f64,
    pub radius_factor: f64,
    pub load_duration: f64,
}

impl Default for CylinderSpec {
    fn default() -> Self {
        Self {
            diameter: 0.030,
            height: 0.017,
            radial: 13,
            layers: 9,
            indenter_diameter: 0.010,
            depth_fraction: 0.7,
            material: OgdenParams::silicone_gel(),
            density: 1000.0,
            radius_factor: 2.2,
            load_duration: 0.5,
        }
    }
}

/// Cylinder resting on a fully fixed base, indented at the centre of the
/// top face by a rigid flat patch that carries its nodes straight down.
pub fn cylinder(spec: &CylinderSpec) -> Result<Benchmark, BenchmarkError> {
    let (n, nz) = (spec.radial, spec.layers);
    if n < 3 || nz < 2 {
        return Err(BenchmarkError::Layout);
    }
    let r = 0.5 * spec.diameter;
    let h = spec.height;
    let mut nodes = Vec::with_capacity(n * n * nz);
    for k in 0..nz {
        let z = if k == nz - 1 { h } else { h * k as f64 / (nz - 1) as f64 };
        for j in 0..n {
            for i in 0..n {
                // Square [-1, 1]² onto the unit disk along rays from the centre.
                let s = Vec3::new(
                    -1.0 + 2.0 * i as f64 / (n - 1) as f64,
                    -1.0 + 2.0 * j as f64 / (n - 1) as f64,
                    0.0,
                );
                let len = s.norm();
                let p = if len > 0.0 { s * (s.x.abs().max(s.y.abs()) / len) } else { s };
                nodes.push(Vec3::new(r * p.x, r * p.y, z));
            }
        }
    }
    let cloud = NodeCloud::new(nodes, hex_grid_cells(n, n, nz), spec.density)?;
    let bottom = |j: usize| cloud.node(j).z == 0.0;
    let patch = |j: usize| {
        let p = cloud.node(j);
        p.z == h && p.xy().norm() <= 0.5 * spec.indenter_diameter * (1.0 + 1e-9)
    };
    let fixed = (0..cloud.len()).filter(|&j| bottom(j)).map(|node| FixedNode { node, mask: AxisMask::ALL }).collect();
    let depth = spec.depth_fraction * h;
    let driven = (0..cloud.len())
        .filter(|&j| patch(j))
        .map(|node| DrivenNode { node, mask: AxisMask::ALL, displacement: Vec3::new(0.0, 0.0, -depth) })
        .collect();
    let boundary = BoundarySpec::new(cloud.len(), fixed, driven, spec.load_duration)?;
    let surface = cloud
        .boundary_faces(|j| bottom(j) || patch(j))
        .into_iter()
        .filter(|f| f.iter().all(|&j| bottom(j)) || f.iter().all(|&j| patch(j)))
        .collect();
    let spacing = (spec.diameter / (n - 1) as f64).max(h / (nz - 1) as f64);
    Ok(Benchmark {
        model: Model { cloud, boundary, material: Material::Ogden(spec.material), surface },
        radius: spec.radius_factor * spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_volume_and_boundary() {
        let b = cube(&CubeSpec::default()).unwrap();
        let m = &b.model;
        assert_eq!(m.cloud.len(), 252);
        assert!((m.cloud.volume() - 1e-3).abs() < 1e-15);
        assert_eq!(m.boundary.fixed().len(), 36);
        assert_eq!(m.boundary.driven().len(), 36);
        // Two faces of 25 squares, two triangles each.
        assert_eq!(m.surface.len(), 100);
        assert!((b.radius - 0.044).abs() < 1e-12);
    }

    #[test]
    fn cylinder_is_valid() {
        let b = cylinder(&CylinderSpec::default()).unwrap();
        let m = &b.model;
        assert_eq!(m.cloud.len(), 13 * 13 * 9);
        let exact = std::f64::consts::PI * 0.015f64.powi(2) * 0.017;
        // Polygonal boundary: the grid under-fills the disk slightly.
        assert!((m.cloud.volume() - exact).abs() < 0.05 * exact);
        assert_eq!(m.boundary.fixed().len(), 169);
        assert!(m.boundary.driven().len() >= 9);
    }
}
