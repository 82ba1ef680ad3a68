use super::{Grid, LabelVolume, ProbabilityVolume, VolumeError};

/// Output grid with cubic voxels of `pitch` whose outer boundary starts at the
/// input's lower boundary and covers the full input extent.
fn isotropic_grid(grid: &Grid, pitch: f64) -> Result<Grid, VolumeError> {
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(VolumeError::Invalid(format!("pitch must be positive, got {pitch}")));
    }
    let lower = grid.lower_bound();
    let mut dims = [0usize; 3];
    let mut origin = [0.0; 3];
    for a in 0..3 {
        let extent = grid.dims[a] as f64 * grid.spacing[a];
        // Tolerate round-off so exact multiples do not gain a voxel.
        dims[a] = ((extent / pitch) - 1e-9).ceil().max(1.0) as usize;
        origin[a] = lower[a] + 0.5 * pitch;
    }
    Grid::new(dims, [pitch; 3], origin)
}

fn nearest_index(x: f64, origin: f64, spacing: f64, n: usize) -> usize {
    let t = ((x - origin) / spacing).round();
    t.clamp(0.0, (n - 1) as f64) as usize
}

/// Nearest-neighbour resampling of labels to cubic voxels.
pub fn resample_isotropic(vol: &LabelVolume, pitch_mm: f64) -> Result<LabelVolume, VolumeError> {
    let src = *vol.grid();
    let dst = isotropic_grid(&src, pitch_mm)?;
    let lookup: [Vec<usize>; 3] = std::array::from_fn(|a| {
        (0..dst.dims[a])
            .map(|i| {
                let x = dst.origin[a] + i as f64 * pitch_mm;
                nearest_index(x, src.origin[a], src.spacing[a], src.dims[a])
            })
            .collect()
    });
    let mut data = Vec::with_capacity(dst.len());
    for k in 0..dst.dims[2] {
        for j in 0..dst.dims[1] {
            for i in 0..dst.dims[0] {
                data.push(vol.get(lookup[0][i], lookup[1][j], lookup[2][k]));
            }
        }
    }
    LabelVolume::new(dst, data)
}

/// Trilinear resampling of class probabilities, renormalised per voxel.
pub fn resample_probability_isotropic(
    vol: &ProbabilityVolume,
    pitch_mm: f64,
) -> Result<ProbabilityVolume, VolumeError> {
    let src = *vol.grid();
    let dst = isotropic_grid(&src, pitch_mm)?;
    // (lower index, weight of upper) per output coordinate and axis.
    let taps: [Vec<(usize, usize, f64)>; 3] = std::array::from_fn(|a| {
        (0..dst.dims[a])
            .map(|i| {
                let x = dst.origin[a] + i as f64 * pitch_mm;
                let t = ((x - src.origin[a]) / src.spacing[a]).clamp(0.0, (src.dims[a] - 1) as f64);
                let lo = t.floor() as usize;
                let hi = (lo + 1).min(src.dims[a] - 1);
                (lo, hi, t - lo as f64)
            })
            .collect()
    });
    let c = vol.num_classes();
    let mut classes = vec![Vec::with_capacity(dst.len()); c];
    let mut acc = vec![0f64; c];
    for k in 0..dst.dims[2] {
        let (k0, k1, wk) = taps[2][k];
        for j in 0..dst.dims[1] {
            let (j0, j1, wj) = taps[1][j];
            for i in 0..dst.dims[0] {
                let (i0, i1, wi) = taps[0][i];
                acc.iter_mut().for_each(|v| *v = 0.0);
                for (kk, wz) in [(k0, 1.0 - wk), (k1, wk)] {
                    for (jj, wy) in [(j0, 1.0 - wj), (j1, wj)] {
                        for (ii, wx) in [(i0, 1.0 - wi), (i1, wi)] {
                            let w = wx * wy * wz;
                            if w == 0.0 {
                                continue;
                            }
                            let idx = src.index(ii, jj, kk);
                            for (cl, a) in acc.iter_mut().enumerate() {
                                *a += w * vol.class(cl)[idx] as f64;
                            }
                        }
                    }
                }
                let sum: f64 = acc.iter().sum();
                for (cl, a) in acc.iter().enumerate() {
                    classes[cl].push((a / sum) as f32);
                }
            }
        }
    }
    ProbabilityVolume::new(dst, classes)
}
