use std::path::Path;

use super::metaimage::{self, bytes_to_f32, f32_to_bytes, ElementType};
use super::nifti;
use super::{BreastMask, Grid, LabelVolume, ProbabilityVolume, VolumeError, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    MetaImage,
    Nifti,
}

impl VolumeFormat {
    pub fn from_path(path: &Path) -> Result<Self, VolumeError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("mhd") => Ok(VolumeFormat::MetaImage),
            Some(e) if e.eq_ignore_ascii_case("nii") => Ok(VolumeFormat::Nifti),
            Some("gz") => Err(VolumeError::Unsupported("compressed NIfTI (.nii.gz)".into())),
            _ => Err(VolumeError::Unsupported(format!(
                "unknown volume extension: {}",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            VolumeFormat::MetaImage => "mhd",
            VolumeFormat::Nifti => "nii",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Label,
    Probability,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedVolume {
    Label(LabelVolume),
    Probability(ProbabilityVolume),
}

struct Decoded {
    grid: Grid,
    components: usize,
    element: ElementType,
    /// Component-major for NIfTI, interleaved for MetaImage.
    interleaved: bool,
    payload: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded, VolumeError> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::MetaImage => {
            let raw = metaimage::read(path)?;
            Ok(Decoded {
                grid: raw.grid,
                components: raw.channels,
                element: raw.element,
                interleaved: true,
                payload: raw.payload,
            })
        }
        VolumeFormat::Nifti => {
            let img = nifti::read(path)?;
            Ok(Decoded {
                grid: img.grid,
                components: img.planes,
                element: img.element,
                interleaved: false,
                payload: img.payload,
            })
        }
    }
}

fn label_values(d: &Decoded) -> Result<Vec<u8>, VolumeError> {
    if d.components != 1 {
        return Err(VolumeError::Invalid(format!(
            "label volume has {} components",
            d.components
        )));
    }
    match d.element {
        ElementType::UChar => Ok(d.payload.clone()),
        ElementType::Float => bytes_to_f32(&d.payload)
            .into_iter()
            .enumerate()
            .map(|(index, v)| {
                if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(VolumeError::LabelOutOfRange {
                        index,
                        value: v as f64,
                    })
                }
            })
            .collect(),
    }
}

pub fn load_label_volume(path: impl AsRef<Path>) -> Result<LabelVolume, VolumeError> {
    let d = decode(path.as_ref())?;
    let data = label_values(&d)?;
    LabelVolume::new(d.grid, data)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BreastMask, VolumeError> {
    let d = decode(path.as_ref())?;
    let data = label_values(&d)?;
    BreastMask::new(d.grid, data)
}

pub fn load_probability_volume(path: impl AsRef<Path>) -> Result<ProbabilityVolume, VolumeError> {
    let d = decode(path.as_ref())?;
    if d.element != ElementType::Float {
        return Err(VolumeError::Invalid(
            "probability volumes must be stored as float32".into(),
        ));
    }
    let values = bytes_to_f32(&d.payload);
    let n = d.grid.len();
    let c = d.components;
    let classes = (0..c)
        .map(|class| {
            if d.interleaved {
                (0..n).map(|v| values[v * c + class]).collect()
            } else {
                values[class * n..(class + 1) * n].to_vec()
            }
        })
        .collect();
    ProbabilityVolume::new(d.grid, classes)
}

pub fn load_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<LoadedVolume, VolumeError> {
    match kind {
        VolumeKind::Label => load_label_volume(path).map(LoadedVolume::Label),
        VolumeKind::Probability => load_probability_volume(path).map(LoadedVolume::Probability),
    }
}

fn write_u8(path: &Path, grid: &Grid, data: &[u8]) -> Result<(), VolumeError> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::MetaImage => metaimage::write(path, grid, 1, ElementType::UChar, data),
        VolumeFormat::Nifti => nifti::write(path, grid, 1, ElementType::UChar, data),
    }
}

/// Format is chosen by extension (`.mhd` or `.nii`).
pub fn save_label_volume(vol: &LabelVolume, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    debug_assert!(vol.data().iter().all(|&v| (v as usize) < NUM_CLASSES));
    write_u8(path.as_ref(), vol.grid(), vol.data())
}

pub fn save_mask(mask: &BreastMask, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    write_u8(path.as_ref(), mask.grid(), mask.data())
}

pub fn save_probability_volume(
    vol: &ProbabilityVolume,
    path: impl AsRef<Path>,
) -> Result<(), VolumeError> {
    let path = path.as_ref();
    let n = vol.grid().len();
    let c = vol.num_classes();
    match VolumeFormat::from_path(path)? {
        VolumeFormat::MetaImage => {
            let mut values = vec![0f32; n * c];
            for class in 0..c {
                for (v, &p) in vol.class(class).iter().enumerate() {
                    values[v * c + class] = p;
                }
            }
            metaimage::write(path, vol.grid(), c, ElementType::Float, &f32_to_bytes(&values))
        }
        VolumeFormat::Nifti => {
            let values: Vec<f32> = vol.classes().iter().flatten().copied().collect();
            nifti::write(path, vol.grid(), c, ElementType::Float, &f32_to_bytes(&values))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Tissue;

    #[test]
    fn constant_volume_roundtrip_mhd() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mhd");
        let g = Grid::new([3, 3, 3], [1.0; 3], [0.0; 3]).unwrap();
        let vol = LabelVolume::filled(g, Tissue::Fat);
        save_label_volume(&vol, &path).unwrap();
        let raw = std::fs::read(dir.path().join("c.raw")).unwrap();
        assert_eq!(raw.len(), 27);
        let back = load_label_volume(&path).unwrap();
        assert_eq!(back.grid().dims, [3, 3, 3]);
        assert_eq!(back.counts()[Tissue::Fat as usize], 27);
    }

    #[test]
    fn payload_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mhd");
        std::fs::write(
            &path,
            "NDims = 3\nDimSize = 4 4 4\nElementType = MET_UCHAR\nElementDataFile = bad.raw\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("bad.raw"), vec![0u8; 63]).unwrap();
        let err = load_label_volume(&path).unwrap_err();
        assert!(err.to_string().contains("payload size mismatch"), "{err}");
    }

    #[test]
    fn out_of_range_label_reports_voxel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lab.mhd");
        std::fs::write(
            &path,
            "NDims = 3\nDimSize = 2 1 1\nElementType = MET_UCHAR\nElementDataFile = lab.raw\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("lab.raw"), [1u8, 9]).unwrap();
        match load_label_volume(&path) {
            Err(VolumeError::LabelOutOfRange { index, value }) => {
                assert_eq!(index, 1);
                assert_eq!(value, 9.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn local_data_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("local.mhd");
        let mut bytes =
            b"NDims = 3\nDimSize = 2 1 1\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n"
                .to_vec();
        bytes.extend_from_slice(&[2, 1]);
        std::fs::write(&path, bytes).unwrap();
        let vol = load_label_volume(&path).unwrap();
        assert_eq!(vol.data(), &[2, 1]);
    }

    #[test]
    fn anisotropic_spacing_roundtrip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new([4, 3, 2], [0.625, 0.625, 1.3], [-10.25, 3.5, 7.0]).unwrap();
        let data: Vec<u8> = (0..g.len()).map(|i| (i % 7) as u8).collect();
        let vol = LabelVolume::new(g, data).unwrap();
        for name in ["a.mhd", "a.nii"] {
            let p = dir.path().join(name);
            save_label_volume(&vol, &p).unwrap();
            let back = load_label_volume(&p).unwrap();
            assert_eq!(back, vol, "{name}");
        }
    }

    #[test]
    fn probability_roundtrip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new([2, 2, 1], [1.0; 3], [0.0; 3]).unwrap();
        let a = vec![0.25f32, 0.5, 1.0, 0.0];
        let b: Vec<f32> = a.iter().map(|p| 1.0 - p).collect();
        let vol = ProbabilityVolume::new(g, vec![a, b]).unwrap();
        for name in ["p.mhd", "p.nii"] {
            let p = dir.path().join(name);
            save_probability_volume(&vol, &p).unwrap();
            assert_eq!(load_probability_volume(&p).unwrap(), vol, "{name}");
        }
    }
}
