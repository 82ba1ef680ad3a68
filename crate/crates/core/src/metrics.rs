//! Overlap and volume metrics for compressed label maps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Grid, LabelVolume, ProbabilityVolume, Tissue, NUM_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("no fat or gland voxels in the {0} volume")]
    EmptyForeground(&'static str),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Breast tissue classes used for alignment and volume.
pub const BREAST_CLASSES: [u8; 2] = [1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDice {
    pub dice: f64,
    /// Class absent from both volumes; `dice` is then 1.
    pub empty: bool,
}

fn dice_from_counts(a: usize, b: usize, both: usize) -> ClassDice {
    if a + b == 0 {
        ClassDice { dice: 1.0, empty: true }
    } else {
        ClassDice {
            dice: 2.0 * both as f64 / (a + b) as f64,
            empty: false,
        }
    }
}

fn grid_text(g: &Grid) -> String {
    format!("dims {:?} spacing {:?} origin {:?}", g.dims, g.spacing, g.origin)
}

/// `2 |A_c & B_c| / (|A_c| + |B_c|)` per class on identical grids.
pub fn dice_per_class(
    a: &LabelVolume,
    b: &LabelVolume,
    classes: &[u8],
) -> Result<BTreeMap<u8, ClassDice>, MetricsError> {
    if !a.grid().matches(b.grid()) {
        return Err(MetricsError::GridMismatch(format!(
            "{} vs {}",
            grid_text(a.grid()),
            grid_text(b.grid())
        )));
    }
    let mut na = [0usize; 256];
    let mut nb = [0usize; 256];
    let mut both = [0usize; 256];
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na[x as usize] += 1;
        nb[y as usize] += 1;
        if x == y {
            both[x as usize] += 1;
        }
    }
    Ok(classes
        .iter()
        .map(|&c| (c, dice_from_counts(na[c as usize], nb[c as usize], both[c as usize])))
        .collect())
}

fn same_spacing(a: &Grid, b: &Grid) -> Result<(), MetricsError> {
    if a.same_spacing(b) {
        Ok(())
    } else {
        Err(MetricsError::GridMismatch(format!(
            "spacing {:?} vs {:?}",
            a.spacing, b.spacing
        )))
    }
}

/// Physical center of mass (mm) of voxels whose label is in `classes`.
pub fn center_of_mass(vol: &LabelVolume, classes: &[u8]) -> Option<[f64; 3]> {
    let g = vol.grid();
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (idx, &l) in vol.data().iter().enumerate() {
        if classes.contains(&l) {
            let p = g.center(g.ijk(idx));
            for a in 0..3 {
                sum[a] += p[a];
            }
            n += 1;
        }
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComAlignedDice {
    /// Whole-voxel translation applied to the post volume.
    pub shift_voxels: [i64; 3],
    pub dice: BTreeMap<u8, ClassDice>,
}

/// Translates `post` by the whole-voxel offset that best aligns the combined
/// fat+gland center of mass with `pre`'s, then computes Dice on the union of
/// both extents (outside a volume counts as background).
pub fn com_aligned_dice(
    pre: &LabelVolume,
    post: &LabelVolume,
    classes: &[u8],
) -> Result<ComAlignedDice, MetricsError> {
    let (gp, gq) = (pre.grid(), post.grid());
    same_spacing(gp, gq)?;
    let com_pre = center_of_mass(pre, &BREAST_CLASSES).ok_or(MetricsError::EmptyForeground("pre"))?;
    let com_post = center_of_mass(post, &BREAST_CLASSES).ok_or(MetricsError::EmptyForeground("post"))?;
    let mut shift = [0i64; 3];
    let mut offset = [0i64; 3];
    for a in 0..3 {
        // post index i sits at pre index i + origin offset
        let o = (gq.origin[a] - gp.origin[a]) / gp.spacing[a];
        if (o - o.round()).abs() > 1e-6 {
            return Err(MetricsError::GridMismatch(format!(
                "origins {:?} and {:?} are not on a common lattice",
                gp.origin, gq.origin
            )));
        }
        shift[a] = ((com_pre[a] - com_post[a]) / gp.spacing[a]).round() as i64;
        offset[a] = o.round() as i64 + shift[a];
    }
    let mut na = [0usize; 256];
    let mut nb = [0usize; 256];
    let mut both = [0usize; 256];
    for &l in pre.data() {
        na[l as usize] += 1;
    }
    for (idx, &l) in post.data().iter().enumerate() {
        nb[l as usize] += 1;
        let ijk = gq.ijk(idx);
        let mut inside = true;
        let mut target = [0usize; 3];
        for a in 0..3 {
            let t = ijk[a] as i64 + offset[a];
            if t < 0 || t >= gp.dims[a] as i64 {
                inside = false;
                break;
            }
            target[a] = t as usize;
        }
        if inside && pre.get(target[0], target[1], target[2]) == l {
            both[l as usize] += 1;
        }
    }
    // background-background overlap outside both extents is not counted;
    // callers are expected to ask about foreground classes.
    let dice = classes
        .iter()
        .map(|&c| (c, dice_from_counts(na[c as usize], nb[c as usize], both[c as usize])))
        .collect();
    Ok(ComAlignedDice {
        shift_voxels: shift,
        dice,
    })
}

/// Fat+gland volume (mm³).
pub fn breast_volume_mm3(vol: &LabelVolume) -> f64 {
    let c = vol.counts();
    (c[1] + c[2]) as f64 * vol.grid().voxel_volume()
}

/// `(V_pre - V_post) / V_pre * 100` over fat+gland voxels; positive is a loss.
pub fn breast_volume_change(pre: &LabelVolume, post: &LabelVolume) -> Result<f64, MetricsError> {
    same_spacing(pre.grid(), post.grid())?;
    let v_pre = breast_volume_mm3(pre);
    if v_pre == 0.0 {
        return Err(MetricsError::EmptyForeground("pre"));
    }
    Ok((v_pre - breast_volume_mm3(post)) / v_pre * 100.0)
}

/// Weighted mean of class probabilities followed by argmax, ties to the lowest class.
pub fn ensemble_argmax(
    probs: &[ProbabilityVolume],
    weights: Option<&[f64]>,
) -> Result<LabelVolume, MetricsError> {
    let first = probs
        .first()
        .ok_or_else(|| MetricsError::Invalid("no probability volumes".into()))?;
    let grid = *first.grid();
    let nc = first.num_classes();
    if nc > NUM_CLASSES {
        return Err(MetricsError::Invalid(format!(
            "{nc} classes, at most {NUM_CLASSES} supported"
        )));
    }
    for p in probs {
        if !p.grid().matches(&grid) {
            return Err(MetricsError::GridMismatch(format!(
                "{} vs {}",
                grid_text(p.grid()),
                grid_text(&grid)
            )));
        }
        if p.num_classes() != nc {
            return Err(MetricsError::Invalid(format!(
                "class count {} vs {nc}",
                p.num_classes()
            )));
        }
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != probs.len() {
                return Err(MetricsError::Invalid(format!(
                    "{} weights for {} volumes",
                    w.len(),
                    probs.len()
                )));
            }
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
                return Err(MetricsError::Invalid(format!(
                    "weights must be non-negative with a positive sum, got {w:?}"
                )));
            }
            w.to_vec()
        }
        None => vec![1.0; probs.len()],
    };
    let total: f64 = w.iter().sum();
    let mut data = Vec::with_capacity(grid.len());
    for v in 0..grid.len() {
        let mut best = 0u8;
        let mut best_p = f64::NEG_INFINITY;
        for c in 0..nc {
            let mut s = 0.0;
            for (p, wk) in probs.iter().zip(&w) {
                s += wk * p.class(c)[v] as f64;
            }
            let mean = s / total;
            if mean > best_p {
                best_p = mean;
                best = c as u8;
            }
        }
        data.push(best);
    }
    LabelVolume::new(grid, data).map_err(|e| MetricsError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Population standard deviation (divides by n).
    pub sd: f64,
    pub n: usize,
}

/// Mean and population SD; `None` for an empty slice.
pub fn mean_sd(values: &[f64]) -> Option<MeanSd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanSd {
        mean,
        sd: var.sqrt(),
        n: values.len(),
    })
}

/// One case compared against its uncompressed map for one solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case_id: String,
    pub solver: String,
    /// Dice on the common grid without alignment.
    pub dice: BTreeMap<u8, ClassDice>,
    /// Dice after center-of-mass alignment (the reported figure).
    pub com_dice: BTreeMap<u8, ClassDice>,
    pub com_shift_voxels: [i64; 3],
    /// Per-class center-of-mass displacement post minus pre (mm).
    pub com_shift_mm: BTreeMap<u8, [f64; 3]>,
    /// Spacing of the grid the maps were compared on (mm).
    pub voxel_spacing_mm: [f64; 3],
    pub bv_pre_mm3: f64,
    pub bv_post_mm3: f64,
    pub bv_change_percent: f64,
    pub converged: bool,
}

impl MetricsReport {
    /// Compares a compressed map with the uncompressed one on the same grid.
    pub fn compute(
        case_id: &str,
        solver: &str,
        pre: &LabelVolume,
        post: &LabelVolume,
        converged: bool,
    ) -> Result<Self, MetricsError> {
        let dice = dice_per_class(pre, post, &BREAST_CLASSES)?;
        let aligned = com_aligned_dice(pre, post, &BREAST_CLASSES)?;
        let mut com_shift_mm = BTreeMap::new();
        for c in BREAST_CLASSES {
            if let (Some(a), Some(b)) = (center_of_mass(pre, &[c]), center_of_mass(post, &[c])) {
                com_shift_mm.insert(c, [b[0] - a[0], b[1] - a[1], b[2] - a[2]]);
            }
        }
        Ok(MetricsReport {
            case_id: case_id.to_string(),
            solver: solver.to_string(),
            dice,
            com_dice: aligned.dice,
            com_shift_voxels: aligned.shift_voxels,
            com_shift_mm,
            voxel_spacing_mm: pre.grid().spacing,
            bv_pre_mm3: breast_volume_mm3(pre),
            bv_post_mm3: breast_volume_mm3(post),
            bv_change_percent: breast_volume_change(pre, post)?,
            converged,
        })
    }

    pub fn fat_dice(&self) -> f64 {
        self.com_dice.get(&Tissue::Fat.code()).map_or(f64::NAN, |d| d.dice)
    }

    pub fn gland_dice(&self) -> f64 {
        self.com_dice.get(&Tissue::Gland.code()).map_or(f64::NAN, |d| d.dice)
    }
}

/// Mean and SD of the reported figures for one solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub solver: String,
    pub fat: MeanSd,
    pub gland: MeanSd,
    pub bv_change_percent: MeanSd,
}

/// Aggregates per solver, in order of first appearance.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Vec<AggregateRow>, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Invalid("no reports to aggregate".into()));
    }
    let mut solvers: Vec<&str> = Vec::new();
    for r in reports {
        if !solvers.contains(&r.solver.as_str()) {
            solvers.push(&r.solver);
        }
    }
    Ok(solvers
        .into_iter()
        .map(|s| {
            let rows: Vec<&MetricsReport> = reports.iter().filter(|r| r.solver == s).collect();
            let col = |f: &dyn Fn(&MetricsReport) -> f64| {
                mean_sd(&rows.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("at least one row")
            };
            AggregateRow {
                solver: s.to_string(),
                fat: col(&|r| r.fat_dice()),
                gland: col(&|r| r.gland_dice()),
                bv_change_percent: col(&|r| r.bv_change_percent),
            }
        })
        .collect())
}

/// Percent with two decimals, e.g. `1.52%`.
pub fn format_percent(v: f64) -> String {
    format!("{v:.2}%")
}

/// Plain-text table with columns Case, FEA, Fat, Gland, BV: one row per
/// report (grouped by case) and a Mean ± SD row per solver.
pub fn render_table(reports: &[MetricsReport]) -> Result<String, MetricsError> {
    let aggregates = aggregate(reports)?;
    let mut cases: Vec<&str> = Vec::new();
    for r in reports {
        if !cases.contains(&r.case_id.as_str()) {
            cases.push(&r.case_id);
        }
    }
    let mut rows: Vec<[String; 5]> = vec![["Case".into(), "FEA".into(), "Fat".into(), "Gland".into(), "BV".into()]];
    for c in &cases {
        for r in reports.iter().filter(|r| r.case_id == *c) {
            rows.push([
                r.case_id.clone(),
                r.solver.clone(),
                format!("{:.2}", r.fat_dice()),
                format!("{:.2}", r.gland_dice()),
                format_percent(r.bv_change_percent),
            ]);
        }
    }
    for a in &aggregates {
        rows.push([
            "Mean ± SD".into(),
            a.solver.clone(),
            format!("{:.2} ± {:.2}", a.fat.mean, a.fat.sd),
            format!("{:.2} ± {:.2}", a.gland.mean, a.gland.sd),
            "-".into(),
        ]);
    }
    let mut widths = [0usize; 5];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    Ok(out)
}
