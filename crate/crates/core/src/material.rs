//! Compressible Neo-Hookean tissue model.
//!
//! Strain energy per unit reference volume:
//!
//! ```text
//! W(F) = mu/2 (I1 - 3) - mu ln J + lambda/2 (ln J)^2,   I1 = tr(F^T F), J = det F
//! P(F) = mu (F - F^-T) + lambda ln J F^-T
//! ```
//!
//! The tangent `A = dP/dF` is stored as a 9x9 matrix with row `3*i + j` for
//! `P_ij` and column `3*k + l` for `F_kl`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::Tissue;

pub type Tangent = SMatrix<f64, 9, 9>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("Poisson ratio {0} outside [0, 0.5)")]
    PoissonRatio(f64),
    #[error("Young's modulus must be positive, got {0}")]
    YoungsModulus(f64),
    #[error("density must be positive, got {0}")]
    Density(f64),
    #[error("inverted element: det F = {det}")]
    Inverted { det: f64 },
    #[error("no material for label {0}")]
    MissingLabel(u8),
}

/// Lamé parameters `(mu, lambda)` from Young's modulus and Poisson ratio.
pub fn lame_from_youngs(youngs: f64, poisson: f64) -> Result<(f64, f64), MaterialError> {
    if !(youngs > 0.0 && youngs.is_finite()) {
        return Err(MaterialError::YoungsModulus(youngs));
    }
    // nu = 0 is the degenerate but admissible end of the range.
    if !(0.0..0.5).contains(&poisson) {
        return Err(MaterialError::PoissonRatio(poisson));
    }
    let mu = youngs / (2.0 * (1.0 + poisson));
    let lambda = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    Ok((mu, lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    /// Pa
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Pa
    pub mu: f64,
    /// Pa
    pub lambda: f64,
    /// kg/m³
    pub density: f64,
}

pub const DEFAULT_DENSITY: f64 = 1000.0;
pub const DEFAULT_POISSON: f64 = 0.45;
pub const FAT_YOUNGS: f64 = 4460.0;
pub const GLAND_YOUNGS: f64 = 15100.0;

struct Kinematics {
    f_inv_t: Matrix3<f64>,
    ln_j: f64,
}

impl Material {
    pub fn new(
        name: impl Into<String>,
        youngs_modulus: f64,
        poisson_ratio: f64,
        density: f64,
    ) -> Result<Self, MaterialError> {
        let (mu, lambda) = lame_from_youngs(youngs_modulus, poisson_ratio)?;
        if !(density > 0.0 && density.is_finite()) {
            return Err(MaterialError::Density(density));
        }
        Ok(Material {
            name: name.into(),
            youngs_modulus,
            poisson_ratio,
            mu,
            lambda,
            density,
        })
    }

    pub fn fat(poisson: f64) -> Result<Self, MaterialError> {
        Material::new("fat", FAT_YOUNGS, poisson, DEFAULT_DENSITY)
    }

    pub fn gland(poisson: f64) -> Result<Self, MaterialError> {
        Material::new("gland", GLAND_YOUNGS, poisson, DEFAULT_DENSITY)
    }

    /// P-wave modulus `lambda + 2 mu`.
    pub fn p_modulus(&self) -> f64 {
        self.lambda + 2.0 * self.mu
    }

    /// Dilatational wave speed (m/s).
    pub fn dilatational_wave_speed(&self) -> f64 {
        (self.p_modulus() / self.density).sqrt()
    }

    fn kinematics(f: &Matrix3<f64>) -> Result<Kinematics, MaterialError> {
        let det = f.determinant();
        if !(det > 0.0) {
            return Err(MaterialError::Inverted { det });
        }
        let f_inv = f.try_inverse().ok_or(MaterialError::Inverted { det })?;
        Ok(Kinematics {
            f_inv_t: f_inv.transpose(),
            ln_j: det.ln(),
        })
    }

    /// Strain energy density (J/m³).
    pub fn strain_energy(&self, f: &Matrix3<f64>) -> Result<f64, MaterialError> {
        let det = f.determinant();
        if !(det > 0.0) {
            return Err(MaterialError::Inverted { det });
        }
        let i1 = f.norm_squared();
        let ln_j = det.ln();
        Ok(0.5 * self.mu * (i1 - 3.0) - self.mu * ln_j + 0.5 * self.lambda * ln_j * ln_j)
    }

    /// First Piola-Kirchhoff stress (Pa).
    pub fn pk1_stress(&self, f: &Matrix3<f64>) -> Result<Matrix3<f64>, MaterialError> {
        let k = Self::kinematics(f)?;
        Ok(self.mu * (f - k.f_inv_t) + self.lambda * k.ln_j * k.f_inv_t)
    }

    /// Stress and tangent together, sharing the inverse.
    pub fn stress_and_tangent(
        &self,
        f: &Matrix3<f64>,
    ) -> Result<(Matrix3<f64>, Tangent), MaterialError> {
        let k = Self::kinematics(f)?;
        let p = self.mu * (f - k.f_inv_t) + self.lambda * k.ln_j * k.f_inv_t;
        // dP_ij/dF_kl = mu d_ik d_jl + (mu - lambda ln J) Finv_li Finv_jk + lambda Finv_ji Finv_lk
        let g = k.f_inv_t; // g[(a, b)] = Finv_ba
        let c1 = self.mu - self.lambda * k.ln_j;
        let mut a = Tangent::zeros();
        for i in 0..3 {
            for j in 0..3 {
                for kk in 0..3 {
                    for l in 0..3 {
                        let mut v = c1 * g[(i, l)] * g[(kk, j)] + self.lambda * g[(i, j)] * g[(kk, l)];
                        if i == kk && j == l {
                            v += self.mu;
                        }
                        a[(3 * i + j, 3 * kk + l)] = v;
                    }
                }
            }
        }
        Ok((p, a))
    }

    /// `dP/dF` (Pa); see the module docs for the index layout.
    pub fn material_tangent(&self, f: &Matrix3<f64>) -> Result<Tangent, MaterialError> {
        self.stress_and_tangent(f).map(|(_, a)| a)
    }
}

/// Materials per tissue label, plus labels treated as rigid (not simulated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialTable {
    pub materials: BTreeMap<u8, Material>,
    pub rigid: BTreeSet<u8>,
}

impl MaterialTable {
    /// Fat and gland from the reference moduli, pectoral rigid.
    pub fn breast_defaults(poisson: f64) -> Result<Self, MaterialError> {
        let mut materials = BTreeMap::new();
        materials.insert(Tissue::Fat.code(), Material::fat(poisson)?);
        materials.insert(Tissue::Gland.code(), Material::gland(poisson)?);
        Ok(MaterialTable {
            materials,
            rigid: BTreeSet::from([Tissue::Pectoral.code()]),
        })
    }

    pub fn get(&self, label: u8) -> Option<&Material> {
        self.materials.get(&label)
    }

    pub fn is_rigid(&self, label: u8) -> bool {
        self.rigid.contains(&label)
    }

    /// Every label must be either simulated or rigid.
    pub fn check_covers(&self, labels: impl IntoIterator<Item = u8>) -> Result<(), MaterialError> {
        for l in labels {
            if !self.materials.contains_key(&l) && !self.rigid.contains(&l) {
                return Err(MaterialError::MissingLabel(l));
            }
        }
        Ok(())
    }

    pub fn max_p_modulus(&self) -> f64 {
        self.materials.values().map(Material::p_modulus).fold(0.0, f64::max)
    }
}
