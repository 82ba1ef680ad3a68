mod common;

use common::*;
use mammofem_core::volume::{
    apply_breast_mask, generate_phantom, load_label_volume, load_mask, load_probability_volume,
    resample_isotropic, resample_probability_isotropic, save_label_volume, save_mask, save_probability_volume,
    BreastMask, Grid, LabelVolume, PhantomSpec, ProbabilityVolume,
};
use proptest::prelude::*;
use rand::Rng;

/// Grids whose spacing and origin are short decimals, as scanners write them.
fn grid_strategy() -> impl Strategy<Value = Grid> {
    (
        prop::array::uniform3(1usize..9),
        prop::array::uniform3(20u32..300),
        prop::array::uniform3(-2000i32..2000),
    )
        .prop_map(|(d, s, o)| {
            Grid::new(d, s.map(|x| x as f64 / 100.0), o.map(|x| x as f64 / 10.0)).unwrap()
        })
}

fn labels_on(grid: Grid, seed: u64) -> LabelVolume {
    let mut r = rng(seed);
    LabelVolume::new(grid, (0..grid.len()).map(|_| r.gen_range(0..7)).collect()).unwrap()
}

fn probs_on(grid: Grid, nc: usize, seed: u64) -> ProbabilityVolume {
    let mut r = rng(seed);
    let mut planes = vec![vec![0f32; grid.len()]; nc];
    for v in 0..grid.len() {
        let raw: Vec<f32> = (0..nc).map(|_| r.gen_range(0.0..1.0)).collect();
        let s: f32 = raw.iter().sum();
        for c in 0..nc {
            planes[c][v] = raw[c] / s;
        }
    }
    ProbabilityVolume::new(grid, planes).unwrap()
}

proptest! {
    #![proptest_config(proptest_config(48))]

    #[test]
    fn save_then_load_is_identity(grid in grid_strategy(), seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let vol = labels_on(grid, seed);
        let mask = BreastMask::new(grid, vol.data().iter().map(|&l| (l > 2) as u8).collect()).unwrap();
        let probs = probs_on(grid, 3, seed);
        for ext in ["mhd", "nii"] {
            let p = dir.path().join(format!("labels.{ext}"));
            save_label_volume(&vol, &p).unwrap();
            prop_assert_eq!(&load_label_volume(&p).unwrap(), &vol);
            let m = dir.path().join(format!("mask.{ext}"));
            save_mask(&mask, &m).unwrap();
            prop_assert_eq!(&load_mask(&m).unwrap(), &mask);
            let q = dir.path().join(format!("probs.{ext}"));
            save_probability_volume(&probs, &q).unwrap();
            prop_assert_eq!(&load_probability_volume(&q).unwrap(), &probs);
        }
    }

    #[test]
    fn resampling_is_idempotent_and_keeps_labels(grid in grid_strategy(), seed in 0u64..1000, pitch in 30u32..250) {
        let vol = labels_on(grid, seed);
        let p = pitch as f64 / 100.0;
        let once = resample_isotropic(&vol, p).unwrap();
        let twice = resample_isotropic(&once, p).unwrap();
        prop_assert_eq!(&once, &twice);
        let before = vol.label_set();
        prop_assert!(once.label_set().iter().all(|l| before.contains(l)));
        for a in 0..3 {
            prop_assert!((once.grid().lower_bound()[a] - vol.grid().lower_bound()[a]).abs() < 1e-9);
            prop_assert!(once.grid().upper_bound()[a] >= vol.grid().upper_bound()[a] - 1e-9);
        }
    }

    #[test]
    fn resampled_probabilities_stay_normalised(grid in grid_strategy(), seed in 0u64..1000, pitch in 30u32..250) {
        let probs = probs_on(grid, 4, seed);
        let out = resample_probability_isotropic(&probs, pitch as f64 / 100.0).unwrap();
        for v in 0..out.grid().len() {
            let s: f32 = (0..4).map(|c| out.class(c)[v]).sum();
            prop_assert!((s - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn masking_never_adds_voxels(grid in grid_strategy(), seed in 0u64..1000) {
        let vol = labels_on(grid, seed);
        let mut r = rng(seed + 1);
        let mask = BreastMask::new(grid, (0..grid.len()).map(|_| r.gen_range(0..2)).collect()).unwrap();
        let out = apply_breast_mask(&vol, &mask).unwrap();
        let (a, b) = (vol.counts(), out.counts());
        for c in 1..7 {
            prop_assert!(b[c] <= a[c]);
        }
        for (i, (&l, &m)) in vol.data().iter().zip(mask.data()).enumerate() {
            prop_assert_eq!(out.data()[i], if m == 1 { l } else { 0 });
        }
    }
}

#[test]
fn phantom_labels_follow_pectoral_thickness() {
    let (vol, mask) = generate_phantom(&PhantomSpec::default()).unwrap();
    let labels = vol.label_set();
    for l in [0, 1, 2, 5] {
        assert!(labels.contains(&l), "{labels:?}");
    }
    assert!(mask.grid().matches(vol.grid()));
    let thin = PhantomSpec {
        pectoral_thickness_mm: 0.0,
        ..PhantomSpec::default()
    };
    let (vol, _) = generate_phantom(&thin).unwrap();
    assert_eq!(vol.counts()[5], 0);
    assert!(vol.counts()[1] > 0 && vol.counts()[2] > 0);
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let vol = labels_on(Grid::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap(), 1);
    let p = dir.path().join("v.mhd");
    save_label_volume(&vol, &p).unwrap();
    let raw = dir.path().join("v.raw");
    let bytes = std::fs::read(&raw).unwrap();
    std::fs::write(&raw, &bytes[..63]).unwrap();
    let err = load_label_volume(&p).unwrap_err();
    assert!(err.to_string().contains("payload size mismatch"), "{err}");
}
