use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::precompute::PointShapes;
use super::SolverError;
use crate::cloud::{BoundarySpec, NodeCloud, Vec3};
use crate::mmls::ShapeProvider;

/// Condensation matrices above this condition estimate are rejected.
const MAX_CONDITION: f64 = 1e12;
/// Tolerance for the build-time `Φ_e·P = I` check.
const IDENTITY_TOL: f64 = 1e-10;

/// Quadrature used on essential-boundary triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceRule {
    /// Three interior points, degree 2.
    Gauss3,
    /// Points at the vertices; collapses onto the nodally lumped operator.
    Vertex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EbcMethod {
    /// Boundary forces lumped at the constrained nodes.
    Sebciem,
    /// Boundary forces interpolated linearly over a surface triangulation.
    Ebciem(SurfaceRule),
}

impl EbcMethod {
    pub fn name(&self) -> &'static str {
        match self {
            EbcMethod::Sebciem => "sebciem",
            EbcMethod::Ebciem(SurfaceRule::Gauss3) => "ebciem",
            EbcMethod::Ebciem(SurfaceRule::Vertex) => "ebciem-vertex",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sebciem" => Some(EbcMethod::Sebciem),
            "ebciem" => Some(EbcMethod::Ebciem(SurfaceRule::Gauss3)),
            "ebciem-vertex" => Some(EbcMethod::Ebciem(SurfaceRule::Vertex)),
            _ => None,
        }
    }
}

/// Condensed constraint operator for one displacement component.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisOperator {
    pub nodes: Vec<usize>,
    /// Final prescribed values, zero for fixed entries.
    pub targets: Vec<f64>,
    pub driven: Vec<bool>,
    /// Rows of `Φ_e`: shape functions evaluated at the constrained nodes.
    pub rows: PointShapes,
    /// `P = M⁻¹ V (Φ_e M⁻¹ V)⁻¹`, node-major.
    pub p: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    /// Column sums of `V`: the net nodal force of a unit multiplier.
    pub v_colsum: Vec<f64>,
}

impl AxisOperator {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Φ_e u` for this component.
    pub fn constrained_values(&self, u: &[Vec3], axis: usize) -> Vec<f64> {
        (0..self.rows.len())
            .map(|r| self.rows.nodes(r).iter().zip(self.rows.phi(r)).map(|(&j, &p)| p * u[j as usize][axis]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbcOperator {
    pub method: EbcMethod,
    pub axes: [AxisOperator; 3],
    node_count: usize,
}

/// Result of one correction: `G⁻¹ (ū − Φ_e ũ)` per axis. Divided by the
/// step's `α` these are the boundary force multipliers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EbcCorrection {
    pub multipliers: [Vec<f64>; 3],
}

impl EbcOperator {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn constraint_count(&self) -> usize {
        self.axes.iter().map(|a| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.constraint_count() == 0
    }

    /// Prescribed values per axis at the given load factor.
    pub fn prescribed(&self, load_factor: f64) -> [Vec<f64>; 3] {
        std::array::from_fn(|a| {
            let ax = &self.axes[a];
            ax.targets.iter().zip(&ax.driven).map(|(&t, &d)| if d { t * load_factor } else { t }).collect()
        })
    }

    /// Largest `|Φ_e u − ū|` over all constraints.
    pub fn max_error(&self, u: &[Vec3], u_bar: &[Vec<f64>; 3]) -> f64 {
        let mut err: f64 = 0.0;
        for (a, ax) in self.axes.iter().enumerate() {
            for (v, t) in ax.constrained_values(u, a).iter().zip(&u_bar[a]) {
                err = err.max((v - t).abs());
            }
        }
        err
    }

    /// Net force on the driven constraints implied by `corr` for a step
    /// with coefficient `alpha`.
    pub fn driven_reaction(&self, corr: &EbcCorrection, alpha: f64) -> Vec3 {
        let mut f = Vec3::zeros();
        for (a, ax) in self.axes.iter().enumerate() {
            let Some(m) = corr.multipliers.get(a) else { continue };
            f[a] = ax
                .driven
                .iter()
                .zip(&ax.v_colsum)
                .zip(m)
                .filter(|((d, _), _)| **d)
                .map(|((_, c), t)| c * t)
                .sum::<f64>()
                / alpha;
        }
        f
    }
}

/// Applies `u += P (ū − Φ_e u)` on every axis and returns the condensed
/// multipliers.
pub fn ebc_correct(u: &mut [Vec3], ebc: &EbcOperator, u_bar: &[Vec<f64>; 3]) -> Result<EbcCorrection, SolverError> {
    if u.len() != ebc.node_count {
        return Err(SolverError::DimensionMismatch(format!(
            "displacement has {} nodes, boundary operator {}",
            u.len(),
            ebc.node_count
        )));
    }
    let mut corr = EbcCorrection::default();
    for (a, ax) in ebc.axes.iter().enumerate() {
        if u_bar[a].len() != ax.len() {
            return Err(SolverError::DimensionMismatch(format!(
                "axis {a}: {} prescribed values for {} constraints",
                u_bar[a].len(),
                ax.len()
            )));
        }
        if ax.is_empty() {
            continue;
        }
        let current = ax.constrained_values(u, a);
        let gap = DMatrixCol::from_iterator(ax.len(), u_bar[a].iter().zip(&current).map(|(t, v)| t - v));
        let du = &ax.p * &gap;
        for (ui, d) in u.iter_mut().zip(du.iter()) {
            ui[a] += d;
        }
        corr.multipliers[a] = (&ax.g_inv * &gap).iter().copied().collect();
    }
    Ok(corr)
}

type DMatrixCol = nalgebra::DVector<f64>;

/// Builds the per-axis condensation operators.
///
/// With [`EbcMethod::Ebciem`], constraint columns come from surface
/// triangles whose three vertices are all constrained on that axis; any
/// constrained node outside such triangles keeps its lumped column. `P`
/// does not change when columns of `V` are rescaled, so the two kinds mix
/// freely.
pub fn build_ebc_operator<S: ShapeProvider + ?Sized>(
    method: EbcMethod,
    cloud: &NodeCloud,
    boundary: &BoundarySpec,
    shapes: &S,
    surface: &[[usize; 3]],
    mass: &[f64],
) -> Result<EbcOperator, SolverError> {
    let n = cloud.len();
    if mass.len() != n {
        return Err(SolverError::DimensionMismatch(format!("{} masses for {n} nodes", mass.len())));
    }
    if let Some(t) = surface.iter().find(|t| t.iter().any(|&k| k >= n)) {
        return Err(SolverError::Config(format!("boundary triangle {t:?} references a missing node")));
    }
    let mut axes = Vec::with_capacity(3);
    for axis in 0..3 {
        axes.push(build_axis(method, cloud, boundary, shapes, surface, mass, axis)?);
    }
    let axes: [AxisOperator; 3] = axes.try_into().expect("three axes");
    Ok(EbcOperator { method, axes, node_count: n })
}

fn build_axis<S: ShapeProvider + ?Sized>(
    method: EbcMethod,
    cloud: &NodeCloud,
    boundary: &BoundarySpec,
    shapes: &S,
    surface: &[[usize; 3]],
    mass: &[f64],
    axis: usize,
) -> Result<AxisOperator, SolverError> {
    let n = cloud.len();
    let cons = boundary.axis_constraints(axis);
    let m = cons.len();
    let nodes: Vec<usize> = cons.iter().map(|c| c.0).collect();
    let points: Vec<Vec3> = nodes.iter().map(|&k| *cloud.node(k)).collect();
    let rows = PointShapes::evaluate(shapes, &points)?;
    if m == 0 {
        return Ok(AxisOperator {
            nodes,
            targets: vec![],
            driven: vec![],
            rows,
            p: DMatrix::zeros(n, 0),
            g_inv: DMatrix::zeros(0, 0),
            v_colsum: vec![],
        });
    }

    let mut v = DMatrix::<f64>::zeros(n, m);
    let mut covered = vec![false; m];
    if let EbcMethod::Ebciem(rule) = method {
        let column: HashMap<usize, usize> = nodes.iter().enumerate().map(|(c, &k)| (k, c)).collect();
        for tri in surface {
            let Some(cols) = tri.iter().map(|k| column.get(k).copied()).collect::<Option<Vec<_>>>() else {
                continue;
            };
            let [a, b, c] = tri.map(|k| *cloud.node(k));
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            for (bary, w) in surface_rule(rule) {
                let s = a * bary[0] + b * bary[1] + c * bary[2];
                let eval = shapes.shape_at(&s)?;
                for (col, nk) in cols.iter().zip(bary) {
                    if nk == 0.0 {
                        continue;
                    }
                    covered[*col] = true;
                    for (&j, &p) in eval.nodes.iter().zip(&eval.phi) {
                        v[(j, *col)] += p * nk * w * area;
                    }
                }
            }
        }
    }
    for (col, done) in covered.iter().enumerate() {
        if !done {
            for (&j, &p) in rows.nodes(col).iter().zip(rows.phi(col)) {
                v[(j as usize, col)] += p;
            }
        }
    }

    let mut minv_v = v.clone();
    for (j, mut row) in minv_v.row_iter_mut().enumerate() {
        row /= mass[j];
    }
    let mut g = DMatrix::<f64>::zeros(m, m);
    for r in 0..m {
        for (&j, &p) in rows.nodes(r).iter().zip(rows.phi(r)) {
            for c in 0..m {
                g[(r, c)] += p * minv_v[(j as usize, c)];
            }
        }
    }
    // A bounded SVD: the unbounded one can spin forever on non-finite input.
    let sv = g
        .clone()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .map(|s| s.singular_values)
        .ok_or(SolverError::SingularCondensation { axis, condition: f64::INFINITY })?;
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(SolverError::SingularCondensation { axis, condition });
    }
    let g_inv = g.clone().try_inverse().ok_or(SolverError::SingularCondensation { axis, condition })?;
    let p = &minv_v * &g_inv;

    // Φ_e·P against the identity.
    let mut error: f64 = 0.0;
    for r in 0..m {
        let mut row = nalgebra::RowDVector::<f64>::zeros(m);
        for (&j, &ph) in rows.nodes(r).iter().zip(rows.phi(r)) {
            for c in 0..m {
                row[c] += ph * p[(j as usize, c)];
            }
        }
        row[r] -= 1.0;
        error = error.max(row.amax());
    }
    if !(error <= IDENTITY_TOL) {
        return Err(SolverError::InexactCondensation { axis, error });
    }

    let v_colsum = v.column_iter().map(|c| c.sum()).collect();
    Ok(AxisOperator {
        nodes,
        targets: cons.iter().map(|c| c.1).collect(),
        driven: cons.iter().map(|c| c.2).collect(),
        rows,
        p,
        g_inv,
        v_colsum,
    })
}

/// Barycentric points and weights (summing to 1) of a triangle rule.
fn surface_rule(rule: SurfaceRule) -> Vec<([f64; 3], f64)> {
    let third = 1.0 / 3.0;
    match rule {
        SurfaceRule::Gauss3 => {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            vec![([a, b, b], third), ([b, a, b], third), ([b, b, a], third)]
        }
        SurfaceRule::Vertex => vec![([1.0, 0.0, 0.0], third), ([0.0, 1.0, 0.0], third), ([0.0, 0.0, 1.0], third)],
    }
}
