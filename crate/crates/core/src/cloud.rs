//! Reference-configuration discretization: field nodes, background
//! tetrahedral integration cells and essential-boundary node sets.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::{Matrix4, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::mmls::{MmlsConfig, MomentMatrix};

pub type Vec3 = Vector3<f64>;

/// Relative tolerance (against the mean cell volume) below which a cell is degenerate.
const DEGENERATE_REL_VOLUME: f64 = 1e-14;
/// Eigenvalue ratio of the linear moment block below which a support is treated as coplanar.
const COPLANAR_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("node list is empty")]
    NoNodes,
    #[error("cell list is empty")]
    NoCells,
    #[error("node {node} has a non-finite coordinate")]
    NonFiniteNode { node: usize },
    #[error("cell {cell} references node {node}, but the cloud has {count} nodes")]
    IndexOutOfRange { cell: usize, node: usize, count: usize },
    #[error("cell {cell} is degenerate (|volume| = {volume:e}, mean cell volume {mean:e})")]
    DegenerateCell { cell: usize, volume: f64, mean: f64 },
    #[error("density must be positive and finite, got {0}")]
    BadDensity(f64),
    #[error("boundary references node {node}, but the cloud has {count} nodes")]
    BoundaryIndex { node: usize, count: usize },
    #[error("node {0} is listed as both fixed and driven")]
    FixedDrivenOverlap(usize),
    #[error("node {0} is listed twice in the same boundary set")]
    DuplicateBoundaryNode(usize),
    #[error("constraint on node {0} has an empty axis mask")]
    EmptyMask(usize),
    #[error("load duration must be non-negative and finite, got {0}")]
    BadDuration(f64),
}

/// Signed volume of the tetrahedron `(a, b, c, d)`.
pub fn tet_signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

/// Field nodes plus the background tetrahedra spanning the reference body.
///
/// Cells are stored with positive orientation; anything handed in with a
/// negative signed volume has its last two vertices swapped.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCloud {
    nodes: Vec<Vec3>,
    cells: Vec<[usize; 4]>,
    cell_volumes: Vec<f64>,
    density: f64,
    volume: f64,
}

impl NodeCloud {
    pub fn new(nodes: Vec<Vec3>, cells: Vec<[usize; 4]>, density: f64) -> Result<Self, CloudError> {
        if nodes.is_empty() {
            return Err(CloudError::NoNodes);
        }
        if cells.is_empty() {
            return Err(CloudError::NoCells);
        }
        if !(density.is_finite() && density > 0.0) {
            return Err(CloudError::BadDensity(density));
        }
        if let Some(node) = nodes.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(CloudError::NonFiniteNode { node });
        }
        let count = nodes.len();
        for (cell, c) in cells.iter().enumerate() {
            if let Some(&node) = c.iter().find(|&&n| n >= count) {
                return Err(CloudError::IndexOutOfRange { cell, node, count });
            }
        }

        let signed: Vec<f64> = cells
            .iter()
            .map(|c| tet_signed_volume(&nodes[c[0]], &nodes[c[1]], &nodes[c[2]], &nodes[c[3]]))
            .collect();
        let mean = signed.iter().map(|v| v.abs()).sum::<f64>() / cells.len() as f64;
        for (cell, &v) in signed.iter().enumerate() {
            if !(v.abs() > DEGENERATE_REL_VOLUME * mean) || mean == 0.0 {
                return Err(CloudError::DegenerateCell { cell, volume: v.abs(), mean });
            }
        }

        let mut oriented = cells;
        for (c, &v) in oriented.iter_mut().zip(&signed) {
            if v < 0.0 {
                c.swap(2, 3);
            }
        }
        let cell_volumes: Vec<f64> = signed.iter().map(|v| v.abs()).collect();
        let volume = cell_volumes.iter().sum();
        Ok(Self { nodes, cells: oriented, cell_volumes, density, volume })
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Vec3 {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    pub fn cell_vertices(&self, cell: usize) -> [Vec3; 4] {
        let c = self.cells[cell];
        [self.nodes[c[0]], self.nodes[c[1]], self.nodes[c[2]], self.nodes[c[3]]]
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.cell_volumes
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    /// Total reference volume, the sum of all cell volumes.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = self.nodes[0];
        let mut hi = self.nodes[0];
        for p in &self.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Smallest distance between any two distinct nodes.
    pub fn min_node_spacing(&self) -> f64 {
        // Probe with a growing radius until every node has found a neighbour.
        let (lo, hi) = self.bounding_box();
        let extent = (hi - lo).max().max(f64::MIN_POSITIVE);
        let mut radius = extent / (self.nodes.len() as f64).cbrt().max(1.0);
        loop {
            let grid = SupportGrid::new(self, radius);
            let mut best = f64::INFINITY;
            let mut all_found = true;
            for (i, p) in self.nodes.iter().enumerate() {
                let mut found = false;
                grid.for_each_within(p, |j, d2| {
                    if j != i {
                        found = true;
                        best = best.min(d2.sqrt());
                    }
                });
                all_found &= found;
            }
            if all_found || radius > 4.0 * extent {
                return best;
            }
            radius *= 2.0;
        }
    }

    /// Triangular faces that belong to exactly one cell and whose three
    /// vertices all satisfy `on_boundary`.
    pub fn boundary_faces(&self, on_boundary: impl Fn(usize) -> bool) -> Vec<[usize; 3]> {
        let mut count: BTreeMap<[usize; 3], (usize, [usize; 3])> = BTreeMap::new();
        for c in &self.cells {
            // Faces opposite each vertex, wound outward for a positive cell.
            let faces = [[c[1], c[2], c[3]], [c[0], c[3], c[2]], [c[0], c[1], c[3]], [c[0], c[2], c[1]]];
            for f in faces {
                let mut key = f;
                key.sort_unstable();
                count.entry(key).and_modify(|e| e.0 += 1).or_insert((1, f));
            }
        }
        count
            .into_values()
            .filter(|(n, f)| *n == 1 && f.iter().all(|&v| on_boundary(v)))
            .map(|(_, f)| f)
            .collect()
    }

    /// Nodes strictly closer than `radius` to `x`, ascending by index.
    /// Builds a throwaway bin structure; use [`SupportGrid`] for repeated queries.
    pub fn support_nodes(&self, x: &Vec3, radius: f64) -> Vec<usize> {
        SupportGrid::new(self, radius).support_nodes(x)
    }
}

/// Uniform bin structure with bin edge equal to the query radius, so a
/// support query only inspects the 27 bins around the query point.
#[derive(Debug, Clone)]
pub struct SupportGrid<'a> {
    nodes: &'a [Vec3],
    radius: f64,
    origin: Vec3,
    bins: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> SupportGrid<'a> {
    pub fn new(cloud: &'a NodeCloud, radius: f64) -> Self {
        Self::from_points(cloud.nodes(), radius)
    }

    pub fn from_points(nodes: &'a [Vec3], radius: f64) -> Self {
        assert!(radius > 0.0 && radius.is_finite(), "support radius must be positive");
        let origin = nodes.iter().fold(Vec3::repeat(f64::INFINITY), |a, p| a.inf(p));
        let mut bins: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut grid = Self { nodes, radius, origin, bins: HashMap::new() };
        for (i, p) in nodes.iter().enumerate() {
            bins.entry(grid.bin_of(p)).or_default().push(i);
        }
        grid.bins = bins;
        grid
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn bin_of(&self, p: &Vec3) -> [i64; 3] {
        let s = (p - self.origin) / self.radius;
        [s.x.floor() as i64, s.y.floor() as i64, s.z.floor() as i64]
    }

    fn for_each_within(&self, x: &Vec3, mut f: impl FnMut(usize, f64)) {
        let b = self.bin_of(x);
        let r2 = self.radius * self.radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.bins.get(&[b[0] + dx, b[1] + dy, b[2] + dz]) {
                        for &j in list {
                            let d2 = (self.nodes[j] - x).norm_squared();
                            if d2 < r2 {
                                f(j, d2);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn support_nodes(&self, x: &Vec3) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(x, |j, _| out.push(j));
        out.sort_unstable();
        out
    }
}

/// Which displacement components a boundary entry constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AxisMask(pub [bool; 3]);

impl AxisMask {
    pub const ALL: AxisMask = AxisMask([true, true, true]);
    pub const X: AxisMask = AxisMask([true, false, false]);
    pub const Y: AxisMask = AxisMask([false, true, false]);
    pub const Z: AxisMask = AxisMask([false, false, true]);

    pub fn contains(&self, axis: usize) -> bool {
        self.0[axis]
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    /// Parses masks such as `xyz`, `z` or `xy`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut m = [false; 3];
        for ch in s.chars() {
            let axis = match ch.to_ascii_lowercase() {
                'x' => 0,
                'y' => 1,
                'z' => 2,
                _ => return None,
            };
            if m[axis] {
                return None;
            }
            m[axis] = true;
        }
        let mask = AxisMask(m);
        (!mask.is_empty()).then_some(mask)
    }
}

impl std::fmt::Display for AxisMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (axis, name) in ["x", "y", "z"].iter().enumerate() {
            if self.0[axis] {
                f.write_str(name)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedNode {
    pub node: usize,
    pub mask: AxisMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivenNode {
    pub node: usize,
    pub mask: AxisMask,
    /// Final prescribed displacement (m); only masked components are imposed.
    pub displacement: Vec3,
}

/// Essential-boundary sets: nodes held at zero and nodes driven along a
/// load schedule of length `load_duration` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    fixed: Vec<FixedNode>,
    driven: Vec<DrivenNode>,
    load_duration: f64,
}

impl BoundarySpec {
    pub fn new(
        node_count: usize,
        fixed: Vec<FixedNode>,
        driven: Vec<DrivenNode>,
        load_duration: f64,
    ) -> Result<Self, CloudError> {
        if !(load_duration.is_finite() && load_duration >= 0.0) {
            return Err(CloudError::BadDuration(load_duration));
        }
        let mut fixed_set = HashSet::new();
        for f in &fixed {
            if f.node >= node_count {
                return Err(CloudError::BoundaryIndex { node: f.node, count: node_count });
            }
            if f.mask.is_empty() {
                return Err(CloudError::EmptyMask(f.node));
            }
            if !fixed_set.insert(f.node) {
                return Err(CloudError::DuplicateBoundaryNode(f.node));
            }
        }
        let mut driven_set = HashSet::new();
        for d in &driven {
            if d.node >= node_count {
                return Err(CloudError::BoundaryIndex { node: d.node, count: node_count });
            }
            if d.mask.is_empty() {
                return Err(CloudError::EmptyMask(d.node));
            }
            if fixed_set.contains(&d.node) {
                return Err(CloudError::FixedDrivenOverlap(d.node));
            }
            if !driven_set.insert(d.node) {
                return Err(CloudError::DuplicateBoundaryNode(d.node));
            }
        }
        Ok(Self { fixed, driven, load_duration })
    }

    pub fn fixed(&self) -> &[FixedNode] {
        &self.fixed
    }

    pub fn driven(&self) -> &[DrivenNode] {
        &self.driven
    }

    pub fn load_duration(&self) -> f64 {
        self.load_duration
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty() && self.driven.is_empty()
    }

    /// Constrained `(node, final value, driven?)` triples for one axis,
    /// fixed entries first, each group in listing order.
    pub fn axis_constraints(&self, axis: usize) -> Vec<(usize, f64, bool)> {
        let fixed = self.fixed.iter().filter(|f| f.mask.contains(axis)).map(|f| (f.node, 0.0, false));
        let driven = self
            .driven
            .iter()
            .filter(|d| d.mask.contains(axis))
            .map(|d| (d.node, d.displacement[axis], true));
        fixed.chain(driven).collect()
    }
}

/// Per-point support statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PointAdmissibility {
    pub point: Vec3,
    pub support_count: usize,
    /// Condition estimate of the regularised moment matrix; infinite when singular.
    pub condition: f64,
    pub insufficient: bool,
    pub coplanar: bool,
}

impl PointAdmissibility {
    pub fn flagged(&self) -> bool {
        self.insufficient || self.coplanar
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub points: Vec<PointAdmissibility>,
}

impl AdmissibilityReport {
    pub fn flagged(&self) -> impl Iterator<Item = (usize, &PointAdmissibility)> {
        self.points.iter().enumerate().filter(|(_, p)| p.flagged())
    }

    pub fn is_admissible(&self) -> bool {
        self.flagged().next().is_none()
    }

    pub fn worst_condition(&self) -> f64 {
        self.points.iter().map(|p| p.condition).fold(0.0, f64::max)
    }

    pub fn min_support(&self) -> usize {
        self.points.iter().map(|p| p.support_count).min().unwrap_or(0)
    }
}

/// Support counts, moment-matrix conditioning and rank checks of the
/// linear sub-basis at each evaluation point.
pub fn check_admissibility(cloud: &NodeCloud, eval_points: &[Vec3], cfg: &MmlsConfig) -> AdmissibilityReport {
    let grid = SupportGrid::new(cloud, cfg.radius);
    let points = eval_points
        .iter()
        .map(|x| {
            let support = grid.support_nodes(x);
            let insufficient = support.len() < 4;
            let coplanar = !insufficient && linear_block_rank_deficient(cloud, x, &support, cfg.radius);
            let condition = if support.is_empty() {
                f64::INFINITY
            } else {
                MomentMatrix::assemble(cloud.nodes(), x, &support, cfg).condition()
            };
            PointAdmissibility { point: *x, support_count: support.len(), condition, insufficient, coplanar }
        })
        .collect();
    AdmissibilityReport { points }
}

/// Eigenvalue test on the weighted moment block of the basis `[1, x, y, z]`.
fn linear_block_rank_deficient(cloud: &NodeCloud, x: &Vec3, support: &[usize], radius: f64) -> bool {
    let mut m = Matrix4::<f64>::zeros();
    for &j in support {
        let xi = (cloud.node(j) - x) / radius;
        let w = crate::mmls::quartic_weight(xi.norm());
        let p = nalgebra::Vector4::new(1.0, xi.x, xi.y, xi.z);
        m += p * p.transpose() * w;
    }
    let eig = SymmetricEigen::new(m).eigenvalues;
    let max = eig.amax();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    !(max > 0.0) || min <= COPLANAR_RATIO * max
}
