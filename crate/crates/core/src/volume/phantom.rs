//! Synthetic breast phantom standing in for segmented MRI.
//!
//! Layout along z (posterior at low z): thorax with lungs and heart, then a
//! pectoral slab spanning the whole x-y extent, then a fat hemisphere whose
//! flat base rests on the slab, with a glandular ellipsoid inside it. The
//! hemisphere base sits at `z = Dz - 1.25 r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BreastMask, Grid, LabelVolume, Tissue, VolumeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub breast_radius_mm: f64,
    pub gland_semiaxes_mm: [f64; 3],
    pub pectoral_thickness_mm: f64,
    pub voxel_spacing_mm: [f64; 3],
    pub domain_dims_mm: [f64; 3],
    /// Seed for a small random perturbation of the gland; `None` disables it.
    pub jitter_seed: Option<u64>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            breast_radius_mm: 20.0,
            gland_semiaxes_mm: [8.0, 6.0, 6.0],
            pectoral_thickness_mm: 4.0,
            voxel_spacing_mm: [1.0; 3],
            domain_dims_mm: [60.0, 60.0, 50.0],
            jitter_seed: None,
        }
    }
}

impl PhantomSpec {
    /// Domain sized for a given breast radius with the default proportions.
    pub fn with_radius(radius_mm: f64) -> Self {
        PhantomSpec {
            breast_radius_mm: radius_mm,
            gland_semiaxes_mm: [0.4 * radius_mm, 0.3 * radius_mm, 0.3 * radius_mm],
            pectoral_thickness_mm: 0.2 * radius_mm,
            domain_dims_mm: [3.0 * radius_mm, 3.0 * radius_mm, 2.5 * radius_mm],
            ..PhantomSpec::default()
        }
    }

    pub fn base_plane_z(&self) -> f64 {
        self.domain_dims_mm[2] - 1.25 * self.breast_radius_mm
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        let bad = |m: String| Err(VolumeError::Phantom(m));
        let r = self.breast_radius_mm;
        if !(r > 0.0 && r.is_finite()) {
            return bad(format!("breast radius must be positive, got {r}"));
        }
        if self.gland_semiaxes_mm.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return bad(format!("gland semiaxes must be positive, got {:?}", self.gland_semiaxes_mm));
        }
        if !(self.pectoral_thickness_mm >= 0.0 && self.pectoral_thickness_mm.is_finite()) {
            return bad(format!(
                "pectoral thickness must be non-negative, got {}",
                self.pectoral_thickness_mm
            ));
        }
        if self.voxel_spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad(format!("voxel spacing must be positive, got {:?}", self.voxel_spacing_mm));
        }
        let d = self.domain_dims_mm;
        if d.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad(format!("domain dims must be positive, got {d:?}"));
        }
        if d[0] < 2.0 * r || d[1] < 2.0 * r {
            return bad(format!("domain {d:?} narrower than breast diameter {}", 2.0 * r));
        }
        if self.base_plane_z() - self.pectoral_thickness_mm < 0.0 {
            return bad(format!(
                "domain depth {} too shallow for radius {r} and pectoral {}",
                d[2], self.pectoral_thickness_mm
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    semiaxes: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semiaxes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    fn surface_samples(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        const N_THETA: usize = 32;
        const N_PHI: usize = 64;
        (0..=N_THETA).flat_map(move |t| {
            let theta = std::f64::consts::PI * t as f64 / N_THETA as f64;
            (0..N_PHI).map(move |f| {
                let phi = 2.0 * std::f64::consts::PI * f as f64 / N_PHI as f64;
                [
                    self.center[0] + self.semiaxes[0] * theta.sin() * phi.cos(),
                    self.center[1] + self.semiaxes[1] * theta.sin() * phi.sin(),
                    self.center[2] + self.semiaxes[2] * theta.cos(),
                ]
            })
        })
    }
}

fn gland_ellipsoid(spec: &PhantomSpec) -> Ellipsoid {
    let r = spec.breast_radius_mm;
    let mut semiaxes = spec.gland_semiaxes_mm;
    let mut offset = [0.0, 0.0];
    if let Some(seed) = spec.jitter_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in semiaxes.iter_mut() {
            *s *= rng.gen_range(0.9..1.1);
        }
        for o in offset.iter_mut() {
            *o = rng.gen_range(-0.1..0.1) * r;
        }
    }
    let cz = semiaxes[2];
    let height = if r > 2.0 * cz { cz + 0.25 * (r - 2.0 * cz) } else { cz };
    let d = spec.domain_dims_mm;
    Ellipsoid {
        center: [
            0.5 * d[0] + offset[0],
            0.5 * d[1] + offset[1],
            spec.base_plane_z() + height,
        ],
        semiaxes,
    }
}

/// Builds the phantom label volume and its breast mask (hemisphere plus slab).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(LabelVolume, BreastMask), VolumeError> {
    spec.validate()?;
    let r = spec.breast_radius_mm;
    let d = spec.domain_dims_mm;
    let s = spec.voxel_spacing_mm;
    let z_base = spec.base_plane_z();
    let z_pec = z_base - spec.pectoral_thickness_mm;
    let center = [0.5 * d[0], 0.5 * d[1], z_base];

    let gland = gland_ellipsoid(spec);
    let contained = gland.surface_samples().all(|p| {
        let dist2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
        dist2 <= r * r && p[2] >= z_base
    });
    if !contained {
        return Err(VolumeError::Phantom(format!(
            "gland ellipsoid {:?} at height {:.2} mm does not fit inside hemisphere of radius {r}",
            gland.semiaxes,
            gland.center[2] - z_base
        )));
    }

    let heart = Ellipsoid {
        center: [0.5 * d[0], 0.5 * d[1], 0.5 * z_pec],
        semiaxes: [0.2 * d[0], 0.25 * d[1], 0.35 * z_pec],
    };
    let lungs = [-1.0, 1.0].map(|side| Ellipsoid {
        center: [0.5 * d[0] + side * 0.3 * d[0], 0.5 * d[1], 0.5 * z_pec],
        semiaxes: [0.15 * d[0], 0.35 * d[1], 0.4 * z_pec],
    });

    let dims: [usize; 3] = std::array::from_fn(|a| ((d[a] / s[a]).round() as usize).max(1));
    let grid = Grid::new(dims, s, [0.5 * s[0], 0.5 * s[1], 0.5 * s[2]])?;
    let mut labels = Vec::with_capacity(grid.len());
    let mut mask = Vec::with_capacity(grid.len());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = grid.center([i, j, k]);
                let (label, in_mask) = if p[2] >= z_base {
                    let dist2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
                    if dist2 <= r * r {
                        let l = if gland.contains(p) { Tissue::Gland } else { Tissue::Fat };
                        (l, true)
                    } else {
                        (Tissue::Background, false)
                    }
                } else if p[2] >= z_pec {
                    (Tissue::Pectoral, true)
                } else if heart.contains(p) {
                    (Tissue::Heart, false)
                } else if lungs.iter().any(|l| l.contains(p)) {
                    (Tissue::Lung, false)
                } else {
                    (Tissue::Thorax, false)
                };
                labels.push(label.code());
                mask.push(in_mask as u8);
            }
        }
    }
    Ok((LabelVolume::new(grid, labels)?, BreastMask::new(grid, mask)?))
}
