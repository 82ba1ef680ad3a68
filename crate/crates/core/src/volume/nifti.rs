//! Uncompressed single-file NIfTI-1 (`.nii`), little-endian, canonical axes.
//!
//! Supported datatypes: 2 (uint8) and 16 (float32). A 4D image with
//! `dim[4] = C` stores `C` class planes one after the other.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::metaimage::ElementType;
use super::{Grid, VolumeError};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_UINT8: i16 = 2;
const DT_FLOAT32: i16 = 16;
const NIFTI_UNITS_MM: u8 = 2;

pub(crate) struct NiftiImage {
    pub grid: Grid,
    pub planes: usize,
    pub element: ElementType,
    pub payload: Vec<u8>,
}

/// Widens an `f32` header field through its shortest decimal form, so a value
/// such as 1.3 that was written from an `f64` reads back as the same `f64`.
fn widen(v: f32) -> f64 {
    format!("{v}").parse().unwrap_or(v as f64)
}

pub(crate) fn read(path: &Path) -> Result<NiftiImage, VolumeError> {
    let bytes = fs::read(path).map_err(|e| VolumeError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    if bytes.len() < HEADER_SIZE {
        return Err(VolumeError::Header(format!(
            "file is {} bytes, shorter than a NIfTI-1 header",
            bytes.len()
        )));
    }
    let h = &bytes[..HEADER_SIZE];
    let sizeof_hdr = LittleEndian::read_i32(&h[0..4]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if i32::from_be_bytes([h[0], h[1], h[2], h[3]]) == HEADER_SIZE as i32 {
            return Err(VolumeError::Unsupported("big-endian NIfTI".into()));
        }
        return Err(VolumeError::Header(format!("sizeof_hdr = {sizeof_hdr}")));
    }
    if &h[344..348] != b"n+1\0" {
        return Err(VolumeError::Unsupported(
            "only single-file NIfTI-1 (magic n+1) is supported".into(),
        ));
    }
    let mut dim = [0i16; 8];
    LittleEndian::read_i16_into(&h[40..56], &mut dim);
    let ndim = dim[0];
    if !(3..=4).contains(&ndim) {
        return Err(VolumeError::Unsupported(format!("dim[0] = {ndim}")));
    }
    let planes = if ndim == 4 { dim[4].max(1) as usize } else { 1 };
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(VolumeError::Header(format!("dims {:?}", &dim[1..4])));
    }
    let datatype = LittleEndian::read_i16(&h[70..72]);
    let element = match datatype {
        DT_UINT8 => ElementType::UChar,
        DT_FLOAT32 => ElementType::Float,
        other => return Err(VolumeError::Unsupported(format!("datatype {other}"))),
    };
    let mut pixdim = [0f32; 8];
    LittleEndian::read_f32_into(&h[76..108], &mut pixdim);
    let vox_offset = LittleEndian::read_f32(&h[108..112]);
    if vox_offset < HEADER_SIZE as f32 || vox_offset.fract() != 0.0 {
        return Err(VolumeError::Header(format!("vox_offset = {vox_offset}")));
    }
    let scl_slope = LittleEndian::read_f32(&h[112..116]);
    let scl_inter = LittleEndian::read_f32(&h[116..120]);
    if scl_slope != 0.0 && !(scl_slope == 1.0 && scl_inter == 0.0) {
        return Err(VolumeError::Unsupported("intensity scaling (scl_slope)".into()));
    }
    let qform_code = LittleEndian::read_i16(&h[252..254]);
    let sform_code = LittleEndian::read_i16(&h[254..256]);
    let origin = if qform_code > 0 {
        let mut q = [0f32; 3];
        LittleEndian::read_f32_into(&h[268..280], &mut q);
        q
    } else if sform_code > 0 {
        [
            LittleEndian::read_f32(&h[292..296]),
            LittleEndian::read_f32(&h[308..312]),
            LittleEndian::read_f32(&h[324..328]),
        ]
    } else {
        [0.0; 3]
    };
    let grid = Grid::new(
        [dim[1] as usize, dim[2] as usize, dim[3] as usize],
        [widen(pixdim[1]), widen(pixdim[2]), widen(pixdim[3])],
        [widen(origin[0]), widen(origin[1]), widen(origin[2])],
    )
    .map_err(|e| VolumeError::Header(e.to_string()))?;
    let start = vox_offset as usize;
    let expected = grid.len() * planes * element_size(element);
    let found = bytes.len().saturating_sub(start);
    if found != expected {
        return Err(VolumeError::PayloadSize { expected, found });
    }
    Ok(NiftiImage {
        grid,
        planes,
        element,
        payload: bytes[start..].to_vec(),
    })
}

fn element_size(e: ElementType) -> usize {
    match e {
        ElementType::UChar => 1,
        ElementType::Float => 4,
    }
}

pub(crate) fn write(
    path: &Path,
    grid: &Grid,
    planes: usize,
    element: ElementType,
    payload: &[u8],
) -> Result<(), VolumeError> {
    for a in 0..3 {
        if grid.dims[a] > i16::MAX as usize {
            return Err(VolumeError::Unsupported(format!(
                "dimension {} exceeds NIfTI-1 limit",
                grid.dims[a]
            )));
        }
    }
    let mut h = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r'; // regular
    let mut dim = [1i16; 8];
    dim[0] = if planes > 1 { 4 } else { 3 };
    dim[1] = grid.dims[0] as i16;
    dim[2] = grid.dims[1] as i16;
    dim[3] = grid.dims[2] as i16;
    dim[4] = planes as i16;
    LittleEndian::write_i16_into(&dim, &mut h[40..56]);
    let (datatype, bitpix) = match element {
        ElementType::UChar => (DT_UINT8, 8i16),
        ElementType::Float => (DT_FLOAT32, 32i16),
    };
    LittleEndian::write_i16(&mut h[70..72], datatype);
    LittleEndian::write_i16(&mut h[72..74], bitpix);
    let pixdim = [
        1.0f32,
        grid.spacing[0] as f32,
        grid.spacing[1] as f32,
        grid.spacing[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    LittleEndian::write_f32_into(&pixdim, &mut h[76..108]);
    LittleEndian::write_f32(&mut h[108..112], VOX_OFFSET as f32);
    h[123] = NIFTI_UNITS_MM;
    LittleEndian::write_i16(&mut h[252..254], 1);
    LittleEndian::write_i16(&mut h[254..256], 1);
    let o = grid.origin.map(|v| v as f32);
    LittleEndian::write_f32_into(&o, &mut h[268..280]);
    let s = grid.spacing.map(|v| v as f32);
    let srow = [
        s[0], 0.0, 0.0, o[0], //
        0.0, s[1], 0.0, o[1], //
        0.0, 0.0, s[2], o[2],
    ];
    LittleEndian::write_f32_into(&srow, &mut h[280..328]);
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend_from_slice(payload);
    fs::write(path, h).map_err(|e| VolumeError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widen_recovers_short_decimals() {
        for v in [0.625f64, 0.722, 1.3, 0.7, 1.0, -12.5] {
            assert_eq!(widen(v as f32), v);
        }
    }
}
