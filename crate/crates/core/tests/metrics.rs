mod common;

use std::collections::BTreeMap;

use common::*;
use mammofem_core::metrics::{
    aggregate, breast_volume_change, com_aligned_dice, dice_per_class, ensemble_argmax, format_percent, mean_sd,
    render_table, ClassDice, MetricsReport,
};
use mammofem_core::volume::{Grid, LabelVolume, ProbabilityVolume};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const N: usize = 32;
const TRIALS: u64 = 100;

fn grid() -> Grid {
    Grid::new([N; 3], [1.0; 3], [0.0; 3]).unwrap()
}

fn random_labels(r: &mut ChaCha8Rng) -> LabelVolume {
    // bias towards few classes so overlaps are frequent
    let data = (0..N * N * N)
        .map(|_| match r.gen_range(0..10) {
            0..=3 => 0,
            4..=6 => 1,
            7..=8 => 2,
            _ => r.gen_range(3..7),
        })
        .collect();
    LabelVolume::new(grid(), data).unwrap()
}

fn dice_oracle(a: &LabelVolume, b: &LabelVolume, c: u8) -> ClassDice {
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += (x == c) as u64;
        nb += (y == c) as u64;
        both += (x == c && y == c) as u64;
    }
    if na + nb == 0 {
        ClassDice { dice: 1.0, empty: true }
    } else {
        ClassDice {
            dice: 2.0 * both as f64 / (na + nb) as f64,
            empty: false,
        }
    }
}

#[test]
fn dice_matches_voxel_counting() {
    let mut r = rng(1);
    let classes: Vec<u8> = (0..7).collect();
    for _ in 0..TRIALS {
        let a = random_labels(&mut r);
        let b = random_labels(&mut r);
        let got = dice_per_class(&a, &b, &classes).unwrap();
        let swapped = dice_per_class(&b, &a, &classes).unwrap();
        for &c in &classes {
            assert_eq!(got[&c], dice_oracle(&a, &b, c));
            assert_eq!(got[&c], swapped[&c]);
        }
    }
}

#[test]
fn bv_change_matches_counting() {
    let mut r = rng(2);
    for _ in 0..TRIALS {
        let a = random_labels(&mut r);
        let b = random_labels(&mut r);
        let count = |v: &LabelVolume| v.data().iter().filter(|&&l| l == 1 || l == 2).count() as f64;
        let expected = (count(&a) - count(&b)) / count(&a) * 100.0;
        assert_eq!(breast_volume_change(&a, &b).unwrap(), expected);
    }
}

#[test]
fn bv_change_examples() {
    let g = Grid::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
    let pre = LabelVolume::new(g, vec![1; 1000]).unwrap();
    let mut data = vec![1u8; 1000];
    data[..20].iter_mut().for_each(|x| *x = 0);
    let post = LabelVolume::new(g, data).unwrap();
    assert!((breast_volume_change(&pre, &post).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(breast_volume_change(&pre, &pre).unwrap(), 0.0);
    // shrinking foreground is a positive loss
    assert!(breast_volume_change(&pre, &post).unwrap() > 0.0);
    assert_eq!(format_percent(1.52), "1.52%");
}

/// Probabilities in steps of 1/64 so every weighted sum is exact.
fn random_probs(r: &mut ChaCha8Rng, nc: usize) -> (ProbabilityVolume, Vec<Vec<u32>>) {
    let mut ticks = vec![vec![0u32; N * N * N]; nc];
    for v in 0..N * N * N {
        let mut left = 64u32;
        for c in 0..nc - 1 {
            let t = r.gen_range(0..=left.min(40));
            ticks[c][v] = t;
            left -= t;
        }
        ticks[nc - 1][v] = left;
    }
    let planes = ticks
        .iter()
        .map(|p| p.iter().map(|&t| t as f32 / 64.0).collect())
        .collect();
    (ProbabilityVolume::new(grid(), planes).unwrap(), ticks)
}

#[test]
fn ensemble_matches_brute_force() {
    let mut r = rng(3);
    let nc = 3;
    for trial in 0..TRIALS {
        let (pa, ta) = random_probs(&mut r, nc);
        let (pb, tb) = random_probs(&mut r, nc);
        let weights = [1 + trial % 3, 1 + (trial / 3) % 2];
        let got = ensemble_argmax(&[pa, pb], Some(&weights.map(|w| w as f64))).unwrap();
        for v in 0..N * N * N {
            let mut best = 0;
            let mut best_score = 0;
            for c in 0..nc {
                let score = weights[0] as u32 * ta[c][v] + weights[1] as u32 * tb[c][v];
                if c == 0 || score > best_score {
                    best = c;
                    best_score = score;
                }
            }
            assert_eq!(got.data()[v], best as u8, "trial {trial} voxel {v}");
        }
    }
}

#[test]
fn ensemble_duplicates_and_weights() {
    let mut r = rng(4);
    let (p, _) = random_probs(&mut r, 4);
    let (q, _) = random_probs(&mut r, 4);
    let single = ensemble_argmax(std::slice::from_ref(&p), None).unwrap();
    assert_eq!(ensemble_argmax(&[p.clone(), p.clone()], None).unwrap(), single);
    assert_eq!(ensemble_argmax(&[p.clone(), q], Some(&[1.0, 0.0])).unwrap(), single);

    // opposite one-hot votes tie and resolve to the lower class
    let g = Grid::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
    let a = ProbabilityVolume::new(g, vec![vec![0.0], vec![0.0], vec![1.0]]).unwrap();
    let b = ProbabilityVolume::new(g, vec![vec![0.0], vec![1.0], vec![0.0]]).unwrap();
    assert_eq!(ensemble_argmax(&[a, b], None).unwrap().data(), &[1]);
}

/// Random blob of fat and gland kept away from the borders.
fn blob(r: &mut ChaCha8Rng) -> LabelVolume {
    let mut v = LabelVolume::new(grid(), vec![0; N * N * N]).unwrap();
    for z in 8..24 {
        for y in 8..24 {
            for x in 8..24 {
                let l = match r.gen_range(0..4) {
                    0 => 0,
                    1 => 2,
                    _ => 1,
                };
                v.set(x, y, z, l).unwrap();
            }
        }
    }
    v
}

fn translate(v: &LabelVolume, t: [i64; 3]) -> LabelVolume {
    let mut out = LabelVolume::new(grid(), vec![0; N * N * N]).unwrap();
    for z in 0..N {
        for y in 0..N {
            for x in 0..N {
                let l = v.get(x, y, z);
                if l != 0 {
                    let p = [x as i64 + t[0], y as i64 + t[1], z as i64 + t[2]].map(|c| c as usize);
                    out.set(p[0], p[1], p[2], l).unwrap();
                }
            }
        }
    }
    out
}

#[test]
fn com_alignment_undoes_integer_translation() {
    let mut r = rng(5);
    for _ in 0..TRIALS {
        let pre = blob(&mut r);
        let other = blob(&mut r);
        let t = [r.gen_range(-7..=7), r.gen_range(-7..=7), r.gen_range(-7..=7)];
        let moved = translate(&pre, t);
        let res = com_aligned_dice(&pre, &moved, &[1, 2]).unwrap();
        assert_eq!(res.shift_voxels, t.map(|c| -c));
        for d in res.dice.values() {
            assert_eq!(d.dice, 1.0);
        }
        // invariance for an unrelated post volume too
        let base = com_aligned_dice(&pre, &other, &[1, 2]).unwrap();
        let shifted = com_aligned_dice(&pre, &translate(&other, t), &[1, 2]).unwrap();
        assert_eq!(base.dice, shifted.dice);
    }
}

#[test]
fn com_alignment_across_grid_origins() {
    let mut r = rng(6);
    let pre = blob(&mut r);
    // same data on a grid whose origin is 5 voxels further along x
    let g = Grid::new([N; 3], [1.0; 3], [5.0, 0.0, 0.0]).unwrap();
    let post = LabelVolume::new(g, pre.data().to_vec()).unwrap();
    let res = com_aligned_dice(&pre, &post, &[1, 2]).unwrap();
    assert_eq!(res.shift_voxels, [-5, 0, 0]);
    assert!(res.dice.values().all(|d| d.dice == 1.0));
}

fn report(case: &str, solver: &str, fat: f64, gland: f64, bv: f64) -> MetricsReport {
    let d = |x| ClassDice { dice: x, empty: false };
    MetricsReport {
        case_id: case.into(),
        solver: solver.into(),
        dice: BTreeMap::from([(1, d(fat)), (2, d(gland))]),
        com_dice: BTreeMap::from([(1, d(fat)), (2, d(gland))]),
        com_shift_voxels: [0; 3],
        com_shift_mm: BTreeMap::new(),
        voxel_spacing_mm: [1.0; 3],
        bv_pre_mm3: 1000.0,
        bv_post_mm3: 1000.0 - 10.0 * bv,
        bv_change_percent: bv,
        converged: true,
    }
}

#[test]
fn aggregate_matches_brute_force() {
    let mut r = rng(7);
    for _ in 0..TRIALS {
        let n = r.gen_range(1..9);
        let vals: Vec<[f64; 3]> = (0..n).map(|_| [r.gen(), r.gen(), r.gen_range(0.0..5.0)]).collect();
        let reports: Vec<MetricsReport> = vals
            .iter()
            .enumerate()
            .map(|(i, v)| report(&format!("c{i}"), "implicit", v[0], v[1], v[2]))
            .collect();
        let rows = aggregate(&reports).unwrap();
        assert_eq!(rows.len(), 1);
        for (k, got) in [rows[0].fat, rows[0].gland, rows[0].bv_change_percent].iter().enumerate() {
            let mut mean = 0.0;
            for v in &vals {
                mean += v[k];
            }
            mean /= n as f64;
            let mut ss = 0.0;
            for v in &vals {
                ss += (v[k] - mean) * (v[k] - mean);
            }
            let sd = (ss / n as f64).sqrt();
            assert!((got.mean - mean).abs() < 1e-12);
            assert!((got.sd - sd).abs() < 1e-12);
            assert_eq!(got.n, n);
        }
    }
}

#[test]
fn four_reference_fat_scores_aggregate_to_085_pm_005() {
    let s = mean_sd(&[0.91, 0.78, 0.85, 0.89]).unwrap();
    assert!((s.mean - 0.85).abs() <= 0.01, "{}", s.mean);
    assert_eq!(format!("{:.2}", s.sd), "0.05");
    assert_eq!(mean_sd(&[0.7]).unwrap().sd, 0.0);
    assert_eq!(mean_sd(&[0.7, 0.7]).unwrap().sd, 0.0);
}

#[test]
fn table_has_rows_per_case_and_solver() {
    let reports = vec![
        report("1", "explicit", 0.91, 0.76, 1.52),
        report("1", "implicit", 0.69, 0.20, 2.10),
        report("2", "explicit", 0.78, 0.70, 4.30),
        report("2", "implicit", 0.59, 0.28, 3.00),
    ];
    let table = render_table(&reports).unwrap();
    assert!(table.contains("1.52%"));
    assert!(table.contains("Mean ± SD"));
    assert_eq!(table.lines().filter(|l| l.contains("explicit")).count(), 3);
}
