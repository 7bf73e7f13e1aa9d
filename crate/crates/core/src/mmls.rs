//! Modified Moving Least Squares shape functions.
//!
//! The approximation uses the complete quadratic basis in 3D,
//! `[1, x, y, z, x², y², z², xy, xz, yz]`, evaluated in coordinates centred
//! on the evaluation point and scaled by the influence radius. The moment
//! matrix is regularised by a diagonal penalty `H` that acts only on the six
//! second-degree coefficients, so supports on which the classical quadratic
//! MLS moment matrix is singular still yield shape functions (the penalty
//! selects the solution with the smallest quadratic coefficients), while on
//! well-posed supports the classical result is only perturbed by `O(mu)`.
//!
//! Derivatives are the full derivatives of the shape functions: the weights
//! move with the evaluation point, `H` does not.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, SymmetricEigen};
use thiserror::Error;

use crate::cloud::{NodeCloud, SupportGrid, Vec3};

pub const BASIS_SIZE: usize = 10;
/// Estimated condition number above which the moment matrix is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;
pub const DEFAULT_MU: f64 = 1e-7;

type Mat10 = SMatrix<f64, BASIS_SIZE, BASIS_SIZE>;
type Vec10 = SVector<f64, BASIS_SIZE>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("point ({}, {}, {}) has only {support} support nodes (at least 4 required)", .point.x, .point.y, .point.z)]
    Inadmissible { point: Vec3, support: usize },
    #[error("moment matrix at ({}, {}, {}) is singular (condition estimate {condition:e}, {support} support nodes)", .point.x, .point.y, .point.z)]
    Singular { point: Vec3, condition: f64, support: usize },
    #[error("invalid MMLS configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmlsConfig {
    /// Influence-domain radius (m), the same for every node.
    pub radius: f64,
    /// Penalty weights for the `x², y², z², xy, xz, yz` coefficients.
    pub mu: [f64; 6],
}

impl MmlsConfig {
    pub fn new(radius: f64) -> Self {
        Self::with_mu(radius, DEFAULT_MU)
    }

    pub fn with_mu(radius: f64, mu: f64) -> Self {
        Self { radius, mu: [mu; 6] }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(ShapeError::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if self.mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(ShapeError::Config(format!("mu weights must be non-negative, got {:?}", self.mu)));
        }
        Ok(())
    }
}

/// Shape function values and spatial derivatives at one point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShapeEval {
    pub nodes: Vec<usize>,
    pub phi: Vec<f64>,
    /// `∂φ/∂x, ∂φ/∂y, ∂φ/∂z` per support node (1/m).
    pub dphi: Vec<Vec3>,
}

impl ShapeEval {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ φ_j u_j` for a nodal field.
    pub fn interpolate(&self, values: &[Vec3]) -> Vec3 {
        self.nodes.iter().zip(&self.phi).map(|(&j, &p)| values[j] * p).sum()
    }

    pub fn interpolate_scalar(&self, values: &[f64]) -> f64 {
        self.nodes.iter().zip(&self.phi).map(|(&j, &p)| values[j] * p).sum()
    }

    pub fn gradient_scalar(&self, values: &[f64]) -> Vec3 {
        self.nodes.iter().zip(&self.dphi).map(|(&j, d)| d * values[j]).sum()
    }
}

/// Anything that can produce shape functions at arbitrary points.
pub trait ShapeProvider: Sync {
    fn shape_at(&self, x: &Vec3) -> Result<ShapeEval, ShapeError>;
}

/// Quartic spline `1 − 6d² + 8d³ − 3d⁴` on `[0, 1]`, zero beyond.
pub fn quartic_weight(d: f64) -> f64 {
    if d >= 1.0 {
        0.0
    } else {
        // 1 − 6d² + 8d³ − 3d⁴ in factored form, which cannot round to a
        // negative value just inside the support edge.
        (1.0 - d).powi(3) * (1.0 + 3.0 * d)
    }
}

pub fn quartic_weight_deriv(d: f64) -> f64 {
    if d >= 1.0 {
        0.0
    } else {
        d * quartic_weight_deriv_over_d(d)
    }
}

/// `w'(d) / d`, finite at `d = 0`.
fn quartic_weight_deriv_over_d(d: f64) -> f64 {
    if d >= 1.0 {
        0.0
    } else {
        -12.0 * (1.0 - d).powi(2)
    }
}

fn basis(xi: &Vec3) -> Vec10 {
    let (x, y, z) = (xi.x, xi.y, xi.z);
    Vec10::from([1.0, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z])
}

fn penalty(cfg: &MmlsConfig) -> Mat10 {
    let mut h = Mat10::zeros();
    for (k, m) in cfg.mu.iter().enumerate() {
        h[(4 + k, 4 + k)] = *m;
    }
    h
}

/// Regularised moment matrix `PᵀWP + H` at one point, in local scaled coordinates.
pub(crate) struct MomentMatrix {
    a: Mat10,
    /// Local basis vectors and weights of the support nodes.
    p: Vec<Vec10>,
    xi: Vec<Vec3>,
    w: Vec<f64>,
}

impl MomentMatrix {
    pub(crate) fn assemble(nodes: &[Vec3], x: &Vec3, support: &[usize], cfg: &MmlsConfig) -> Self {
        let mut a = penalty(cfg);
        let mut p = Vec::with_capacity(support.len());
        let mut xi = Vec::with_capacity(support.len());
        let mut w = Vec::with_capacity(support.len());
        for &j in support {
            let s = (nodes[j] - x) / cfg.radius;
            let wj = quartic_weight(s.norm());
            let pj = basis(&s);
            a.ger(wj, &pj, &pj, 1.0);
            p.push(pj);
            xi.push(s);
            w.push(wj);
        }
        Self { a, p, xi, w }
    }

    fn eigen(&self) -> SymmetricEigen<f64, nalgebra::Const<BASIS_SIZE>> {
        SymmetricEigen::new(self.a)
    }

    pub(crate) fn condition(&self) -> f64 {
        condition_of(&self.eigen())
    }
}

fn condition_of(eig: &SymmetricEigen<f64, nalgebra::Const<BASIS_SIZE>>) -> f64 {
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if min <= 0.0 || max == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix applied through its eigenpairs.
struct EigenSolve {
    q: Mat10,
    inv_lambda: Vec10,
}

impl EigenSolve {
    fn solve(&self, b: &Vec10) -> Vec10 {
        let t = self.q.tr_mul(b).component_mul(&self.inv_lambda);
        self.q * t
    }
}

/// MMLS evaluator bound to a cloud, with its own support index.
pub struct Mmls<'a> {
    cloud: &'a NodeCloud,
    grid: SupportGrid<'a>,
    cfg: MmlsConfig,
}

impl<'a> Mmls<'a> {
    pub fn new(cloud: &'a NodeCloud, cfg: MmlsConfig) -> Result<Self, ShapeError> {
        cfg.validate()?;
        Ok(Self { cloud, grid: SupportGrid::new(cloud, cfg.radius), cfg })
    }

    pub fn config(&self) -> &MmlsConfig {
        &self.cfg
    }

    pub fn cloud(&self) -> &NodeCloud {
        self.cloud
    }

    pub fn support(&self, x: &Vec3) -> Vec<usize> {
        self.grid.support_nodes(x)
    }

    fn factor(&self, x: &Vec3) -> Result<(Vec<usize>, MomentMatrix, EigenSolve), ShapeError> {
        let support = self.grid.support_nodes(x);
        if support.len() < 4 {
            return Err(ShapeError::Inadmissible { point: *x, support: support.len() });
        }
        let m = MomentMatrix::assemble(self.cloud.nodes(), x, &support, &self.cfg);
        let eig = m.eigen();
        let condition = condition_of(&eig);
        if !(condition <= SINGULAR_CONDITION) {
            return Err(ShapeError::Singular { point: *x, condition, support: support.len() });
        }
        let inv_lambda = eig.eigenvalues.map(|l| 1.0 / l);
        Ok((support, m, EigenSolve { q: eig.eigenvectors, inv_lambda }))
    }

    /// Shape functions and their full spatial derivatives at `x`.
    ///
    /// Solves through a QR factorisation of the stacked matrix
    /// `B = [W^½ P; H^½]` rather than the normal equations: with
    /// `A = BᵀB = RᵀR` and `t = R⁻ᵀ b`, every product
    /// `w_j p_jᵀ A⁻¹ b` equals `√w_j Q_j·t`, which stays accurate when the
    /// penalty is all that keeps `A` invertible.
    pub fn shape(&self, x: &Vec3) -> Result<ShapeEval, ShapeError> {
        let (nodes, m, _) = self.factor(x)?;
        let r = self.cfg.radius;
        let n = nodes.len();

        let mut b = DMatrix::<f64>::zeros(n + 6, BASIS_SIZE);
        for j in 0..n {
            let sw = m.w[j].sqrt();
            for c in 0..BASIS_SIZE {
                b[(j, c)] = sw * m.p[j][c];
            }
        }
        for (k, mu) in self.cfg.mu.iter().enumerate() {
            b[(n + k, 4 + k)] = mu.sqrt();
        }
        let qr = b.qr();
        let (q, rm) = (qr.q(), qr.r());
        let rt = rm.transpose();
        let forward = |rhs: &Vec10| -> Result<DVector<f64>, ShapeError> {
            let v = DVector::from_column_slice(rhs.as_slice());
            rt.solve_lower_triangular(&v)
                .ok_or(ShapeError::Singular { point: *x, condition: f64::INFINITY, support: n })
        };
        let project = |j: usize, t: &DVector<f64>| -> f64 { (0..BASIS_SIZE).map(|c| q[(j, c)] * t[c]).sum() };

        // p(x) in local coordinates is e0; its derivative is e_{1+k} / r.
        let mut e0 = Vec10::zeros();
        e0[0] = 1.0;
        let t0 = forward(&e0)?;
        let qt0: Vec<f64> = (0..n).map(|j| project(j, &t0)).collect();
        let phi: Vec<f64> = qt0.iter().zip(&m.w).map(|(v, w)| v * w.sqrt()).collect();
        // p_j·γ with γ = A⁻¹e0; the direct product only where w_j vanishes.
        let gamma = rm
            .solve_upper_triangular(&t0)
            .ok_or(ShapeError::Singular { point: *x, condition: f64::INFINITY, support: n })?;
        let pg: Vec<f64> = (0..n)
            .map(|j| {
                if m.w[j] > 1e-12 {
                    qt0[j] / m.w[j].sqrt()
                } else {
                    (0..BASIS_SIZE).map(|c| m.p[j][c] * gamma[c]).sum()
                }
            })
            .collect();

        // dw_j/dx_k = -g(d_j) ξ_jk / r with g = w'(d)/d.
        let dw: Vec<Vec3> = m.xi.iter().map(|s| -s * (quartic_weight_deriv_over_d(s.norm()) / r)).collect();

        let mut dphi = vec![Vec3::zeros(); n];
        for k in 0..3 {
            let mut rhs = Vec10::zeros();
            rhs[1 + k] = 1.0 / r;
            for j in 0..n {
                rhs.axpy(-dw[j][k] * pg[j], &m.p[j], 1.0);
            }
            let tk = forward(&rhs)?;
            for j in 0..n {
                dphi[j][k] = m.w[j].sqrt() * project(j, &tk) + pg[j] * dw[j][k];
            }
        }
        Ok(ShapeEval { nodes, phi, dphi })
    }

    /// Basis coefficients `a = (PᵀWP + H)⁻¹ PᵀW u` in the local scaled frame
    /// for nodal values `values` (indexed by cloud node).
    pub fn coefficients(&self, x: &Vec3, values: &[f64]) -> Result<[f64; BASIS_SIZE], ShapeError> {
        let (nodes, m, solver) = self.factor(x)?;
        let mut rhs = Vec10::zeros();
        for (k, &j) in nodes.iter().enumerate() {
            rhs.axpy(m.w[k] * values[j], &m.p[k], 1.0);
        }
        Ok(solver.solve(&rhs).into())
    }

    /// Classical MLS (no regularisation) through a direct LU solve in a frame
    /// anchored at the support centroid. Derivatives are central differences.
    /// Independent of the main evaluation path; used for cross-checks.
    pub fn mls_shape_oracle(&self, x: &Vec3) -> Result<ShapeEval, ShapeError> {
        let phi = self.mls_phi(x)?;
        let h = 1e-6 * self.cfg.radius;
        let mut dphi = vec![Vec3::zeros(); phi.1.len()];
        for k in 0..3 {
            let mut xp = *x;
            xp[k] += h;
            let mut xm = *x;
            xm[k] -= h;
            let (sp, vp) = self.mls_phi(&xp)?;
            let (sm, vm) = self.mls_phi(&xm)?;
            for (j, node) in phi.0.iter().enumerate() {
                let fp = sp.iter().position(|n| n == node).map_or(0.0, |i| vp[i]);
                let fm = sm.iter().position(|n| n == node).map_or(0.0, |i| vm[i]);
                dphi[j][k] = (fp - fm) / (2.0 * h);
            }
        }
        Ok(ShapeEval { nodes: phi.0, phi: phi.1, dphi })
    }

    fn mls_phi(&self, x: &Vec3) -> Result<(Vec<usize>, Vec<f64>), ShapeError> {
        let support = self.grid.support_nodes(x);
        if support.is_empty() {
            return Err(ShapeError::Inadmissible { point: *x, support: 0 });
        }
        let nodes = self.cloud.nodes();
        let r = self.cfg.radius;
        let centroid = support.iter().map(|&j| nodes[j]).sum::<Vec3>() / support.len() as f64;
        let mut a = Mat10::zeros();
        let mut cols = Vec::with_capacity(support.len());
        for &j in &support {
            let w = quartic_weight((nodes[j] - x).norm() / r);
            let p = basis(&((nodes[j] - centroid) / r));
            a += p * p.transpose() * w;
            cols.push(p * w);
        }
        let sv = a.singular_values();
        let cond = sv.max() / sv.min();
        if !(cond <= SINGULAR_CONDITION) {
            return Err(ShapeError::Singular { point: *x, condition: cond, support: support.len() });
        }
        let px = basis(&((x - centroid) / r));
        let lu = a.lu();
        let phi = cols
            .iter()
            .map(|c| {
                lu.solve(c)
                    .map(|s| px.dot(&s))
                    .ok_or(ShapeError::Singular { point: *x, condition: f64::INFINITY, support: support.len() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((support, phi))
    }
}

impl ShapeProvider for Mmls<'_> {
    fn shape_at(&self, x: &Vec3) -> Result<ShapeEval, ShapeError> {
        self.shape(x)
    }
}

/// Free-function form of [`Mmls::shape`].
pub fn mmls_shape(cloud: &NodeCloud, x: &Vec3, cfg: &MmlsConfig) -> Result<ShapeEval, ShapeError> {
    Mmls::new(cloud, *cfg)?.shape(x)
}

/// Free-function form of [`Mmls::mls_shape_oracle`].
pub fn mls_shape_oracle(cloud: &NodeCloud, x: &Vec3, radius: f64) -> Result<ShapeEval, ShapeError> {
    Mmls::new(cloud, MmlsConfig::with_mu(radius, 0.0))?.mls_shape_oracle(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cloud_from(nodes: Vec<Vec3>) -> NodeCloud {
        // A single valid cell made of the first four non-coplanar nodes is
        // enough: shape evaluation never looks at cells.
        let n = nodes.len();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    for d in c + 1..n {
                        let v = crate::cloud::tet_signed_volume(&nodes[a], &nodes[b], &nodes[c], &nodes[d]);
                        if v.abs() > 1e-6 {
                            return NodeCloud::new(nodes, vec![[a, b, c, d]], 1.0).unwrap();
                        }
                    }
                }
            }
        }
        panic!("no valid cell");
    }

    fn grid(n: usize, h: f64) -> Vec<Vec3> {
        let mut v = Vec::new();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    v.push(Vec3::new(i as f64, j as f64, k as f64) * h);
                }
            }
        }
        v
    }

    #[test]
    fn weight_values() {
        assert_eq!(quartic_weight(0.0), 1.0);
        assert_eq!(quartic_weight(1.0), 0.0);
        assert_eq!(quartic_weight_deriv(1.0), 0.0);
        assert!((quartic_weight(0.5) - 0.3125).abs() < 1e-15);
        assert_eq!(quartic_weight(1.7), 0.0);
        // Derivative just inside the edge tends to zero as well.
        assert!(quartic_weight_deriv(1.0 - 1e-9).abs() < 1e-12);
    }

    #[test]
    fn weight_derivative_matches_fd() {
        for &d in &[0.1, 0.33, 0.5, 0.8, 0.95] {
            let h = 1e-6;
            let fd = (quartic_weight(d + h) - quartic_weight(d - h)) / (2.0 * h);
            assert!((fd - quartic_weight_deriv(d)).abs() < 1e-8);
        }
    }

    #[test]
    fn cube_corner_centroid_gives_equal_shapes() {
        let c = cloud_from(grid(2, 1.0));
        let s = mmls_shape(&c, &Vec3::repeat(0.5), &MmlsConfig::new(1.5)).unwrap();
        assert_eq!(s.len(), 8);
        // Only the penalty keeps this support solvable, so round-off is
        // amplified by roughly the square root of its condition number.
        for p in &s.phi {
            assert!((p - 0.125).abs() < 1e-11, "{p}");
        }
        assert!((s.phi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn reproduces_linear_field() {
        let h = 0.1;
        let c = cloud_from(grid(5, h));
        let f = |p: &Vec3| 2.0 * p.x + 3.0 * p.y - p.z;
        let vals: Vec<f64> = c.nodes().iter().map(f).collect();
        let m = Mmls::new(&c, MmlsConfig::new(2.2 * h)).unwrap();
        for x in [Vec3::new(0.17, 0.21, 0.23), Vec3::new(0.05, 0.32, 0.11), Vec3::new(0.2, 0.2, 0.2)] {
            let s = m.shape(&x).unwrap();
            assert!((s.interpolate_scalar(&vals) - f(&x)).abs() < 1e-10);
            let g = s.gradient_scalar(&vals);
            assert!((g - Vec3::new(2.0, 3.0, -1.0)).norm() < 1e-8, "{g}");
        }
    }

    #[test]
    fn matches_classical_mls_on_random_support() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let nodes: Vec<Vec3> = (0..30).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let c = cloud_from(nodes);
        let x = Vec3::repeat(0.5);
        let radius = 1.0;
        let mm = mmls_shape(&c, &x, &MmlsConfig::new(radius)).unwrap();
        let cl = mls_shape_oracle(&c, &x, radius).unwrap();
        assert_eq!(mm.nodes, cl.nodes);
        for (a, b) in mm.phi.iter().zip(&cl.phi) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn classical_fails_but_mmls_succeeds_on_plane_with_apex() {
        // Ten nodes on z = 0 plus a single node above: the z², xz, yz
        // columns of the classical moment matrix are all proportional.
        let mut nodes = Vec::new();
        for j in 0..3 {
            for i in 0..3 {
                nodes.push(Vec3::new(i as f64 * 0.5, j as f64 * 0.5, 0.0));
            }
        }
        nodes.push(Vec3::new(0.25, 0.75, 0.0));
        nodes.push(Vec3::new(0.5, 0.5, 0.5));
        let c = cloud_from(nodes);
        let x = Vec3::new(0.5, 0.5, 0.1);
        assert!(matches!(mls_shape_oracle(&c, &x, 2.0), Err(ShapeError::Singular { .. })));
        let s = mmls_shape(&c, &x, &MmlsConfig::new(2.0)).unwrap();
        let sum: f64 = s.phi.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
        assert!(s.phi.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let h = 0.1;
        let base = grid(6, h);
        let nodes: Vec<Vec3> = base
            .iter()
            .map(|p| p + Vec3::new(rng.random(), rng.random(), rng.random()).map(|v: f64| (v - 0.5) * 0.3 * h))
            .collect();
        let c = cloud_from(nodes);
        let m = Mmls::new(&c, MmlsConfig::new(2.3 * h)).unwrap();
        for _ in 0..20 {
            let x = Vec3::new(rng.random(), rng.random(), rng.random()) * 0.3 + Vec3::repeat(0.1);
            let s = m.shape(&x).unwrap();
            let step = 1e-6 * m.config().radius;
            for k in 0..3 {
                let mut xp = x;
                xp[k] += step;
                let mut xm = x;
                xm[k] -= step;
                let (sp, sm) = (m.shape(&xp).unwrap(), m.shape(&xm).unwrap());
                for (j, node) in s.nodes.iter().enumerate() {
                    let fp = sp.nodes.iter().position(|n| n == node).map_or(0.0, |i| sp.phi[i]);
                    let fm = sm.nodes.iter().position(|n| n == node).map_or(0.0, |i| sm.phi[i]);
                    let fd = (fp - fm) / (2.0 * step);
                    let an = s.dphi[j][k];
                    let scale = s.dphi.iter().map(|d| d.amax()).fold(0.0, f64::max);
                    assert!((fd - an).abs() <= 1e-4 * scale, "node {node} axis {k}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn inadmissible_support_reports_count() {
        let c = cloud_from(grid(3, 1.0));
        let err = mmls_shape(&c, &Vec3::zeros(), &MmlsConfig::new(0.5)).unwrap_err();
        assert!(matches!(err, ShapeError::Inadmissible { support: 1, .. }));
    }

    #[test]
    fn bad_config_rejected() {
        let c = cloud_from(grid(2, 1.0));
        assert!(Mmls::new(&c, MmlsConfig::new(-1.0)).is_err());
        assert!(Mmls::new(&c, MmlsConfig { radius: 1.0, mu: [-1.0; 6] }).is_err());
    }
}
