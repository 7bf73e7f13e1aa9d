//! Tetrahedral quadrature rules, cell subdivision and the adaptive
//! integration-point generator.
//!
//! The adaptive scheme integrates a vector "less smooth" integrand (sums of
//! squared shape-function derivatives) over each background cell, compares
//! the parent estimate against the sum over its subdivisions and keeps
//! refining wherever the relative difference exceeds the threshold. Points
//! of the accepted cells become the integration set.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{tet_signed_volume, NodeCloud, Vec3};
use crate::mmls::{ShapeError, ShapeProvider};

/// Below this magnitude an integral component is considered zero, and its
/// relative error converged.
const NEGLIGIBLE_INTEGRAL: f64 = 1e-30;
const DEGENERATE_CHILD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("subdivision produced a degenerate child (volume ratio {ratio:e})")]
    DegenerateChild { ratio: f64 },
    #[error("parent tetrahedron is degenerate (volume {0:e})")]
    DegenerateParent(f64),
    #[error("unsupported subdivision arity {0} (expected 2, 4 or 8)")]
    BadScheme(usize),
    #[error("no tetrahedral rule of order {0} is available (1, 2, 3, 4 or 5)")]
    BadOrder(usize),
    #[error("invalid adaptive configuration: {0}")]
    Config(String),
    #[error("integrand evaluation failed: {0}")]
    Integrand(#[from] ShapeError),
}

/// Points in barycentric coordinates on the reference tetrahedron
/// `(0,0,0), (1,0,0), (0,1,0), (0,0,1)`, with weights summing to 1/6.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly.
    pub order: usize,
}

impl QuadratureRule {
    pub fn centroid() -> Self {
        Self { points: vec![[0.25; 4]], weights: vec![1.0 / 6.0], order: 1 }
    }

    /// Four-point Gauss rule, degree 2.
    pub fn four_point() -> Self {
        let a = (5.0 + 3.0 * 5f64.sqrt()) / 20.0;
        let b = (5.0 - 5f64.sqrt()) / 20.0;
        Self {
            points: vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]],
            weights: vec![1.0 / 24.0; 4],
            order: 2,
        }
    }

    /// Fourteen-point rule with positive weights, degree 5.
    pub fn fourteen_point() -> Self {
        let mut points = Vec::with_capacity(14);
        let mut weights = Vec::with_capacity(14);
        for (a, w) in [(0.092_735_250_310_891_226_4, 0.012_248_840_519_393_658_3), (0.310_885_919_263_300_610, 0.018_781_320_953_002_641_7)] {
            let b = 1.0 - 3.0 * a;
            for k in 0..4 {
                let mut p = [a; 4];
                p[k] = b;
                points.push(p);
                weights.push(w);
            }
        }
        let c = 0.045_503_704_125_649_649_4;
        let d = 0.5 - c;
        let w = 0.007_091_003_462_846_911_07;
        for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            let mut p = [d; 4];
            p[i] = c;
            p[j] = c;
            points.push(p);
            weights.push(w);
        }
        Self { points, weights, order: 5 }
    }

    /// Lowest-cost rule that integrates degree `order` exactly.
    pub fn with_order(order: usize) -> Result<Self, QuadratureError> {
        match order {
            0 | 1 => Ok(Self::centroid()),
            2 => Ok(Self::four_point()),
            3..=5 => Ok(Self::fourteen_point()),
            _ => Err(QuadratureError::BadOrder(order)),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical points and weights on tetrahedron `t`.
    pub fn map(&self, t: &[Vec3; 4]) -> impl Iterator<Item = (Vec3, f64)> + '_ {
        let vol = tet_signed_volume(&t[0], &t[1], &t[2], &t[3]).abs();
        let scale = vol * 6.0;
        let t = *t;
        self.points.iter().zip(&self.weights).map(move |(b, w)| {
            (t[0] * b[0] + t[1] * b[1] + t[2] * b[2] + t[3] * b[3], w * scale)
        })
    }
}

/// Subdivision arity used by the adaptive scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Subdivision {
    /// Split at the midpoint of the longest edge.
    Two,
    /// Split the largest face into four via its three edge midpoints and
    /// connect each piece to the opposite vertex.
    Four,
    /// Octasection through all six edge midpoints.
    Eight,
}

impl Subdivision {
    pub fn from_arity(n: usize) -> Result<Self, QuadratureError> {
        match n {
            2 => Ok(Self::Two),
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            _ => Err(QuadratureError::BadScheme(n)),
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Self::Two => 2,
            Self::Four => 4,
            Self::Eight => 8,
        }
    }
}

fn midpoint(a: &Vec3, b: &Vec3) -> Vec3 {
    (a + b) * 0.5
}

/// Splits a tetrahedron into 2, 4 or 8 children that partition it.
pub fn subdivide_tet(t: &[Vec3; 4], scheme: Subdivision) -> Result<Vec<[Vec3; 4]>, QuadratureError> {
    let parent = tet_signed_volume(&t[0], &t[1], &t[2], &t[3]).abs();
    if !(parent > 0.0) {
        return Err(QuadratureError::DegenerateParent(parent));
    }
    const EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let children = match scheme {
        Subdivision::Two => {
            let (i, j) = EDGES
                .iter()
                .copied()
                .fold(((0, 1), -1.0), |best, (i, j)| {
                    let l = (t[i] - t[j]).norm_squared();
                    if l > best.1 {
                        ((i, j), l)
                    } else {
                        best
                    }
                })
                .0;
            let m = midpoint(&t[i], &t[j]);
            let mut a = *t;
            a[j] = m;
            let mut b = *t;
            b[i] = m;
            vec![a, b]
        }
        Subdivision::Four => {
            // Face opposite vertex k; pick the largest.
            let area = |k: usize| {
                let f: Vec<usize> = (0..4).filter(|&v| v != k).collect();
                (t[f[1]] - t[f[0]]).cross(&(t[f[2]] - t[f[0]])).norm()
            };
            let apex = (0..4).fold(0, |best, k| if area(k) > area(best) { k } else { best });
            let f: Vec<usize> = (0..4).filter(|&v| v != apex).collect();
            let (a, b, c) = (t[f[0]], t[f[1]], t[f[2]]);
            let (ab, bc, ca) = (midpoint(&a, &b), midpoint(&b, &c), midpoint(&c, &a));
            let d = t[apex];
            vec![[a, ab, ca, d], [ab, b, bc, d], [ca, bc, c, d], [ab, bc, ca, d]]
        }
        Subdivision::Eight => {
            let [p0, p1, p2, p3] = *t;
            let m01 = midpoint(&p0, &p1);
            let m02 = midpoint(&p0, &p2);
            let m03 = midpoint(&p0, &p3);
            let m12 = midpoint(&p1, &p2);
            let m13 = midpoint(&p1, &p3);
            let m23 = midpoint(&p2, &p3);
            let mut out = vec![[p0, m01, m02, m03], [m01, p1, m12, m13], [m02, m12, p2, m23], [m03, m13, m23, p3]];
            // The inner octahedron is cut along its shortest diagonal.
            let diagonals = [(m01, m23), (m02, m13), (m03, m12)];
            let k = (0..3)
                .min_by(|&a, &b| {
                    let la = (diagonals[a].0 - diagonals[a].1).norm_squared();
                    let lb = (diagonals[b].0 - diagonals[b].1).norm_squared();
                    la.total_cmp(&lb)
                })
                .unwrap();
            let (d0, d1) = diagonals[k];
            // The remaining four midpoints form a cycle around the diagonal.
            let ring = match k {
                0 => [m02, m03, m13, m12],
                1 => [m01, m03, m23, m12],
                _ => [m01, m02, m23, m13],
            };
            for i in 0..4 {
                out.push([d0, d1, ring[i], ring[(i + 1) % 4]]);
            }
            out
        }
    };
    for c in &children {
        let v = tet_signed_volume(&c[0], &c[1], &c[2], &c[3]).abs();
        if v < DEGENERATE_CHILD * parent {
            return Err(QuadratureError::DegenerateChild { ratio: v / parent });
        }
    }
    Ok(children)
}

/// Componentwise sums of squared shape-function derivatives at `x`.
pub fn less_smooth_integrand<S: ShapeProvider + ?Sized>(shapes: &S, x: &Vec3) -> Result<Vec3, ShapeError> {
    let s = shapes.shape_at(x)?;
    Ok(s.dphi.iter().map(|d| d.component_mul(d)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdaptiveConfig {
    /// Relative accuracy threshold.
    pub tau: f64,
    pub scheme: Subdivision,
    pub max_depth: usize,
    /// Polynomial order of the base rule.
    pub rule_order: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self { tau: 0.01, scheme: Subdivision::Eight, max_depth: 6, rule_order: 2 }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(QuadratureError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.max_depth < 1 {
            return Err(QuadratureError::Config("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Integration points and weights with per-point provenance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntegrationSet {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// Originating background cell of each point.
    pub cells: Vec<usize>,
    /// Subdivision depth of the accepted sub-cell holding each point.
    pub depths: Vec<u8>,
    /// Cells on which refinement stopped at `max_depth` without meeting `tau`.
    pub capped_cells: Vec<usize>,
}

impl IntegrationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn push_rule(&mut self, rule: &QuadratureRule, t: &[Vec3; 4], cell: usize, depth: usize) {
        for (p, w) in rule.map(t) {
            self.points.push(p);
            self.weights.push(w);
            self.cells.push(cell);
            self.depths.push(depth as u8);
        }
    }

    fn append(&mut self, mut other: IntegrationSet) {
        self.points.append(&mut other.points);
        self.weights.append(&mut other.weights);
        self.cells.append(&mut other.cells);
        self.depths.append(&mut other.depths);
        self.capped_cells.append(&mut other.capped_cells);
    }

    /// Audit dump: `x,y,z,weight,cell,depth`, one row per point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y,z,weight,cell,depth")?;
        for i in 0..self.len() {
            let p = &self.points[i];
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
                p.x, p.y, p.z, self.weights[i], self.cells[i], self.depths[i]
            )?;
        }
        Ok(())
    }
}

/// Applies `rule` once per cell with no refinement.
pub fn fixed_integration_set(cloud: &NodeCloud, rule: &QuadratureRule) -> IntegrationSet {
    let mut set = IntegrationSet::default();
    for cell in 0..cloud.cells().len() {
        set.push_rule(rule, &cloud.cell_vertices(cell), cell, 0);
    }
    set
}

fn integrate_rule<F, E>(f: &F, rule: &QuadratureRule, t: &[Vec3; 4]) -> Result<Vec3, E>
where
    F: Fn(&Vec3) -> Result<Vec3, E>,
{
    let mut q = Vec3::zeros();
    for (p, w) in rule.map(t) {
        q += f(&p)? * w;
    }
    Ok(q)
}

/// Largest componentwise relative difference between a parent estimate and
/// the sum over its children.
fn relative_error(parent: &Vec3, children: &Vec3) -> f64 {
    (0..3)
        .map(|k| {
            if parent[k].abs() < NEGLIGIBLE_INTEGRAL {
                0.0
            } else {
                ((parent[k] - children[k]) / parent[k]).abs()
            }
        })
        .fold(0.0, f64::max)
}

struct Refiner<'r, F> {
    f: &'r F,
    rule: &'r QuadratureRule,
    cfg: &'r AdaptiveConfig,
}

impl<F, E> Refiner<'_, F>
where
    F: Fn(&Vec3) -> Result<Vec3, E>,
    E: From<QuadratureError>,
{
    fn refine(&self, t: &[Vec3; 4], q: Vec3, cell: usize, depth: usize, out: &mut IntegrationSet) -> Result<(), E> {
        if depth >= self.cfg.max_depth {
            out.push_rule(self.rule, t, cell, depth);
            if out.capped_cells.last() != Some(&cell) {
                out.capped_cells.push(cell);
            }
            return Ok(());
        }
        let children = subdivide_tet(t, self.cfg.scheme)?;
        let mut qs = Vec::with_capacity(children.len());
        for c in &children {
            qs.push(integrate_rule(self.f, self.rule, c)?);
        }
        let sum: Vec3 = qs.iter().sum();
        if relative_error(&q, &sum) <= self.cfg.tau {
            out.push_rule(self.rule, t, cell, depth);
            return Ok(());
        }
        for (c, qc) in children.iter().zip(qs) {
            self.refine(c, qc, cell, depth + 1, out)?;
        }
        Ok(())
    }
}

/// Adaptive integration-point generation over every cell of `cloud`, driven
/// by the vector integrand `f`. Cells are processed in parallel and the
/// per-cell results concatenated in cell order.
pub fn adaptive_integrate<F, E>(
    cloud: &NodeCloud,
    f: &F,
    cfg: &AdaptiveConfig,
    rule: &QuadratureRule,
) -> Result<IntegrationSet, E>
where
    F: Fn(&Vec3) -> Result<Vec3, E> + Sync,
    E: From<QuadratureError> + Send,
{
    cfg.validate()?;
    let refiner = Refiner { f, rule, cfg };
    let per_cell: Vec<Result<IntegrationSet, E>> = (0..cloud.cells().len())
        .into_par_iter()
        .map(|cell| {
            let t = cloud.cell_vertices(cell);
            let q = integrate_rule(f, rule, &t)?;
            let mut out = IntegrationSet::default();
            refiner.refine(&t, q, cell, 0, &mut out)?;
            Ok(out)
        })
        .collect();
    let mut set = IntegrationSet::default();
    for r in per_cell {
        set.append(r?);
    }
    Ok(set)
}

/// Adaptive integration driven by the shape-derivative integrand of `shapes`.
pub fn adaptive_integration_set<S: ShapeProvider>(
    cloud: &NodeCloud,
    shapes: &S,
    cfg: &AdaptiveConfig,
) -> Result<IntegrationSet, QuadratureError> {
    let rule = QuadratureRule::with_order(cfg.rule_order)?;
    let f = |x: &Vec3| less_smooth_integrand(shapes, x).map_err(QuadratureError::from);
    adaptive_integrate(cloud, &f, cfg, &rule)
}
