//! Hyperelastic constitutive models returning second Piola–Kirchhoff stress.
//!
//! Both models are isotropic and written in terms of the right Cauchy–Green
//! tensor `C = FᵀF`, so the stress `S = 2 ∂W/∂C` is frame indifferent.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("inverted or degenerate deformation (det F = {det:e})")]
    Inverted { det: f64, f: Mat3 },
    #[error("eigen-decomposition of C failed to converge")]
    EigenFailure { c: Mat3 },
    #[error("invalid material parameters: {0}")]
    Params(String),
}

/// Compressible decoupled Neo-Hookean solid,
/// `W = C10 (J^{-2/3} tr C − 3) + (J − 1)² / D1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeoHookeanParams {
    pub young: f64,
    pub poisson: f64,
    /// Shear modulus `E / (2(1 + ν))`.
    pub shear: f64,
    /// Compressibility `2 / K = 6(1 − 2ν) / E`.
    pub d1: f64,
}

impl NeoHookeanParams {
    pub fn new(young: f64, poisson: f64) -> Result<Self, MaterialError> {
        if !(young.is_finite() && young > 0.0) {
            return Err(MaterialError::Params(format!("Young's modulus must be positive, got {young}")));
        }
        if !(0.0..0.5).contains(&poisson) {
            return Err(MaterialError::Params(format!("Poisson's ratio must lie in [0, 0.5), got {poisson}")));
        }
        Ok(Self {
            young,
            poisson,
            shear: young / (2.0 * (1.0 + poisson)),
            d1: 6.0 * (1.0 - 2.0 * poisson) / young,
        })
    }

    pub fn c10(&self) -> f64 {
        self.shear / 2.0
    }

    pub fn bulk(&self) -> f64 {
        2.0 / self.d1
    }
}

/// One-term Ogden solid,
/// `W = 2μ₁/a₁² (J^{-a₁/3} Σ λᵢ^{a₁} − 3) + (J − 1)² / D₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OgdenParams {
    pub a1: f64,
    pub mu1: f64,
    pub d1: f64,
}

impl OgdenParams {
    pub fn new(a1: f64, mu1: f64, d1: f64) -> Result<Self, MaterialError> {
        // The 2μ₁/a₁² prefactor makes the linearised shear modulus μ₁ for
        // either sign of a₁, so positivity needs μ₁ > 0 and a₁ ≠ 0.
        if !(a1.is_finite() && a1 != 0.0 && mu1.is_finite() && mu1 > 0.0) {
            return Err(MaterialError::Params(format!("need a1 != 0 and mu1 > 0, got a1={a1} mu1={mu1}")));
        }
        if !(d1.is_finite() && d1 > 0.0) {
            return Err(MaterialError::Params(format!("D1 must be positive, got {d1}")));
        }
        Ok(Self { a1, mu1, d1 })
    }

    /// Constants identified for a soft silicone gel (Sylgard 527).
    pub fn silicone_gel() -> Self {
        Self { a1: -1.1, mu1: 643.6, d1: 1.2598e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Material {
    NeoHookean(NeoHookeanParams),
    Ogden(OgdenParams),
}

/// Second Piola–Kirchhoff stress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressState {
    pub s: Mat3,
}

impl StressState {
    /// `(S11, S22, S33, S12, S23, S13)`.
    pub fn voigt(&self) -> [f64; 6] {
        let s = &self.s;
        [s[(0, 0)], s[(1, 1)], s[(2, 2)], s[(0, 1)], s[(1, 2)], s[(0, 2)]]
    }
}

fn checked_det(f: &Mat3) -> Result<f64, MaterialError> {
    let det = f.determinant();
    if det > 0.0 && det.is_finite() {
        Ok(det)
    } else {
        Err(MaterialError::Inverted { det, f: *f })
    }
}

impl Material {
    pub fn name(&self) -> &'static str {
        match self {
            Material::NeoHookean(_) => "neo_hookean",
            Material::Ogden(_) => "ogden",
        }
    }

    /// Small-strain Lamé constants `(λ, μ)`.
    pub fn small_strain_moduli(&self) -> (f64, f64) {
        let (bulk, shear) = match self {
            Material::NeoHookean(p) => (p.bulk(), p.shear),
            // Linearising the Ogden term gives shear modulus μ₁.
            Material::Ogden(p) => (2.0 / p.d1, p.mu1),
        };
        (bulk - 2.0 * shear / 3.0, shear)
    }

    /// Strain energy density (J/m³).
    pub fn strain_energy(&self, f: &Mat3) -> Result<f64, MaterialError> {
        checked_det(f)?;
        self.energy_from_c(&(f.transpose() * f))
    }

    /// Energy as a function of `C` alone; `C` must be positive definite.
    pub fn energy_from_c(&self, c: &Mat3) -> Result<f64, MaterialError> {
        let det_c = c.determinant();
        if !(det_c > 0.0) {
            return Err(MaterialError::Inverted { det: det_c.max(0.0).sqrt(), f: *c });
        }
        let j = det_c.sqrt();
        match self {
            Material::NeoHookean(p) => Ok(p.c10() * (j.powf(-2.0 / 3.0) * c.trace() - 3.0) + (j - 1.0).powi(2) / p.d1),
            Material::Ogden(p) => {
                let eig = SymmetricEigen::try_new(*c, f64::EPSILON, 200)
                    .ok_or(MaterialError::EigenFailure { c: *c })?;
                let a = p.a1;
                let jf = j.powf(-a / 3.0);
                let sum: f64 = eig.eigenvalues.iter().map(|l2| l2.max(0.0).sqrt().powf(a)).sum();
                Ok(2.0 * p.mu1 / (a * a) * (jf * sum - 3.0) + (j - 1.0).powi(2) / p.d1)
            }
        }
    }

    pub fn spk(&self, f: &Mat3) -> Result<StressState, MaterialError> {
        match self {
            Material::NeoHookean(p) => neo_hookean_spk(f, p),
            Material::Ogden(p) => ogden_spk(f, p),
        }
    }
}

pub fn neo_hookean_spk(f: &Mat3, p: &NeoHookeanParams) -> Result<StressState, MaterialError> {
    let j = checked_det(f)?;
    let c = f.transpose() * f;
    let c_inv = c.try_inverse().ok_or(MaterialError::Inverted { det: j, f: *f })?;
    let i1 = c.trace();
    let dev = (Mat3::identity() - c_inv * (i1 / 3.0)) * (2.0 * p.c10() * j.powf(-2.0 / 3.0));
    let vol = c_inv * (2.0 / p.d1 * (j - 1.0) * j);
    Ok(StressState { s: dev + vol })
}

/// Spectral form: `S = Σ (1/λᵢ) ∂W/∂λᵢ Nᵢ⊗Nᵢ` over the eigenpairs of `C`.
/// Coincident stretches give equal principal stresses, so the
/// recomposition does not depend on how the eigenvectors are chosen inside
/// a repeated eigenspace.
pub fn ogden_spk(f: &Mat3, p: &OgdenParams) -> Result<StressState, MaterialError> {
    let j = checked_det(f)?;
    let c = f.transpose() * f;
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 200).ok_or(MaterialError::EigenFailure { c })?;
    let a = p.a1;
    let jf = j.powf(-a / 3.0);
    let stretches = eig.eigenvalues.map(|l2| l2.max(0.0).sqrt());
    let pow: Vec<f64> = stretches.iter().map(|l| l.powf(a)).collect();
    let sum: f64 = pow.iter().sum();
    let vol = 2.0 / p.d1 * (j - 1.0) * j;
    let mut s = Mat3::zeros();
    for i in 0..3 {
        let l2 = eig.eigenvalues[i];
        // λ ∂W/∂λ for the isochoric part, plus J ∂W/∂J.
        let lam_dw = 2.0 * p.mu1 / a * jf * (pow[i] - sum / 3.0) + vol;
        let si = lam_dw / l2;
        let n = eig.eigenvectors.column(i);
        s += n * n.transpose() * si;
    }
    if !s.iter().all(|v| v.is_finite()) {
        return Err(MaterialError::EigenFailure { c });
    }
    Ok(StressState { s })
}
