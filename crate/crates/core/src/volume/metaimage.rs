//! MetaImage (`.mhd` header + `.raw` payload) reader and writer.
//!
//! Only 3D images are handled. `ElementType` is `MET_UCHAR` for labels and
//! masks, `MET_FLOAT` for probabilities (one channel per class, interleaved).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};

use super::{Grid, VolumeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ElementType {
    UChar,
    Float,
}

impl ElementType {
    fn size(self) -> usize {
        match self {
            ElementType::UChar => 1,
            ElementType::Float => 4,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            ElementType::UChar => "MET_UCHAR",
            ElementType::Float => "MET_FLOAT",
        }
    }
}

pub(crate) struct RawImage {
    pub grid: Grid,
    pub channels: usize,
    pub element: ElementType,
    pub payload: Vec<u8>,
}

fn io_err(path: &Path, source: std::io::Error) -> VolumeError {
    VolumeError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_reals(key: &str, value: &str, n: usize) -> Result<Vec<f64>, VolumeError> {
    let vals: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| VolumeError::Header(format!("{key}: {e}")))?;
    if vals.len() != n {
        return Err(VolumeError::Header(format!(
            "{key}: expected {n} values, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

pub(crate) fn read(path: &Path) -> Result<RawImage, VolumeError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut fields: HashMap<String, String> = HashMap::new();
    let mut cursor = 0usize;
    let mut local_data = None;
    while cursor < bytes.len() {
        let end = bytes[cursor..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| cursor + p)
            .unwrap_or(bytes.len());
        let line = std::str::from_utf8(&bytes[cursor..end])
            .map_err(|_| VolumeError::Header("non-UTF-8 header line".into()))?
            .trim();
        cursor = end + 1;
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| VolumeError::Header(format!("malformed line {line:?}")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let is_data_file = key == "ElementDataFile";
        fields.insert(key, value.clone());
        if is_data_file {
            if value == "LOCAL" {
                local_data = Some(bytes[cursor.min(bytes.len())..].to_vec());
            }
            break;
        }
    }

    let get = |k: &str| {
        fields
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| VolumeError::Header(format!("missing {k}")))
    };
    let ndims: usize = get("NDims")?
        .parse()
        .map_err(|e| VolumeError::Header(format!("NDims: {e}")))?;
    if ndims != 3 {
        return Err(VolumeError::Unsupported(format!("NDims = {ndims}")));
    }
    let dims = parse_reals("DimSize", get("DimSize")?, 3)?;
    let spacing = match fields.get("ElementSpacing").or_else(|| fields.get("ElementSize")) {
        Some(v) => parse_reals("ElementSpacing", v, 3)?,
        None => vec![1.0; 3],
    };
    let origin = match fields
        .get("Offset")
        .or_else(|| fields.get("Origin"))
        .or_else(|| fields.get("Position"))
    {
        Some(v) => parse_reals("Offset", v, 3)?,
        None => vec![0.0; 3],
    };
    if let Some(msb) = fields
        .get("BinaryDataByteOrderMSB")
        .or_else(|| fields.get("ElementByteOrderMSB"))
    {
        if msb.eq_ignore_ascii_case("true") {
            return Err(VolumeError::Unsupported("big-endian MetaImage payload".into()));
        }
    }
    if let Some(c) = fields.get("CompressedData") {
        if c.eq_ignore_ascii_case("true") {
            return Err(VolumeError::Unsupported("compressed MetaImage payload".into()));
        }
    }
    let channels: usize = match fields.get("ElementNumberOfChannels") {
        Some(v) => v
            .parse()
            .map_err(|e| VolumeError::Header(format!("ElementNumberOfChannels: {e}")))?,
        None => 1,
    };
    let element = match get("ElementType")? {
        "MET_UCHAR" => ElementType::UChar,
        "MET_FLOAT" => ElementType::Float,
        other => return Err(VolumeError::Unsupported(format!("ElementType {other}"))),
    };
    let mut dims_u = [0usize; 3];
    for a in 0..3 {
        if dims[a] < 1.0 || dims[a].fract() != 0.0 {
            return Err(VolumeError::Header(format!("DimSize {:?}", dims)));
        }
        dims_u[a] = dims[a] as usize;
    }
    let grid = Grid::new(
        dims_u,
        [spacing[0], spacing[1], spacing[2]],
        [origin[0], origin[1], origin[2]],
    )
    .map_err(|e| VolumeError::Header(e.to_string()))?;

    let payload = match local_data {
        Some(p) => p,
        None => {
            let data_file = get("ElementDataFile")?;
            let raw_path = path
                .parent()
                .map(|p| p.join(data_file))
                .unwrap_or_else(|| PathBuf::from(data_file));
            fs::read(&raw_path).map_err(|e| io_err(&raw_path, e))?
        }
    };
    let expected = grid.len() * channels * element.size();
    if payload.len() != expected {
        return Err(VolumeError::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    Ok(RawImage {
        grid,
        channels,
        element,
        payload,
    })
}

fn fmt_triplet(v: &[f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

/// Writes `<stem>.mhd` and `<stem>.raw` next to each other. `path` must end in `.mhd`.
pub(crate) fn write(
    path: &Path,
    grid: &Grid,
    channels: usize,
    element: ElementType,
    payload: &[u8],
) -> Result<(), VolumeError> {
    debug_assert_eq!(payload.len(), grid.len() * channels * element.size());
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| VolumeError::Invalid(format!("bad output path {}", path.display())))?
        .to_string();
    let mut header = String::new();
    header.push_str("ObjectType = Image\n");
    header.push_str("NDims = 3\n");
    header.push_str("BinaryData = True\n");
    header.push_str("BinaryDataByteOrderMSB = False\n");
    header.push_str("CompressedData = False\n");
    header.push_str("TransformMatrix = 1 0 0 0 1 0 0 0 1\n");
    header.push_str(&format!("Offset = {}\n", fmt_triplet(&grid.origin)));
    header.push_str(&format!("ElementSpacing = {}\n", fmt_triplet(&grid.spacing)));
    header.push_str(&format!(
        "DimSize = {} {} {}\n",
        grid.dims[0], grid.dims[1], grid.dims[2]
    ));
    if channels != 1 {
        header.push_str(&format!("ElementNumberOfChannels = {channels}\n"));
    }
    header.push_str(&format!("ElementType = {}\n", element.tag()));
    header.push_str(&format!("ElementDataFile = {raw_name}\n"));
    fs::write(path, header).map_err(|e| io_err(path, e))?;
    fs::write(&raw_path, payload).map_err(|e| io_err(&raw_path, e))?;
    Ok(())
}

pub(crate) fn f32_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = vec![0u8; values.len() * 4];
    LittleEndian::write_f32_into(values, &mut out);
    out
}

pub(crate) fn bytes_to_f32(bytes: &[u8]) -> Vec<f32> {
    let mut out = vec![0f32; bytes.len() / 4];
    LittleEndian::read_f32_into(bytes, &mut out);
    out
}
