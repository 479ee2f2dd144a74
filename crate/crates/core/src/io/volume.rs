use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_err, sibling};
use crate::error::{Error, Result};
use crate::fields::DensityVolume;
use crate::geom::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub resolution: [usize; 3],
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    /// Raw file, relative to the header.
    pub data: String,
    pub order: String,
    pub endianness: String,
}

/// Loads a volume and reports how many negative values were clamped to 0.
pub fn load_volume_counted(header_path: &Path) -> Result<(DensityVolume, usize)> {
    let text = fs::read_to_string(header_path).map_err(|e| load_err(header_path, e.to_string()))?;
    let h: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| load_err(header_path, format!("malformed header: {e}")))?;
    if h.order != "x-fastest" {
        return Err(load_err(header_path, format!("unsupported order {:?}", h.order)));
    }
    if h.endianness != "little" {
        return Err(load_err(header_path, format!("unsupported endianness {:?}", h.endianness)));
    }
    let raw_path = sibling(header_path, &h.data);
    let bytes = fs::read(&raw_path).map_err(|e| load_err(&raw_path, e.to_string()))?;
    let expected = 4 * h.resolution.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            path: raw_path,
            expected,
            found: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(load_err(&raw_path, format!("non-finite density {} at vertex {i}", data[i])));
    }
    let (vol, clamped) = DensityVolume::with_clamping(
        h.resolution,
        Vec3::from_array(h.bbox_min),
        Vec3::from_array(h.bbox_max),
        data,
    )
    .map_err(|e| load_err(header_path, e.to_string()))?;
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} negative densities to 0", raw_path.display());
    }
    Ok((vol, clamped))
}

pub fn load_volume(header_path: &Path) -> Result<DensityVolume> {
    load_volume_counted(header_path).map(|(v, _)| v)
}

/// Writes `<header_path>` and a raw file next to it with the same stem.
pub fn save_volume(vol: &DensityVolume, header_path: &Path) -> Result<()> {
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("volume");
    let raw_name = format!("{stem}.raw");
    let header = VolumeHeader {
        resolution: vol.resolution(),
        bbox_min: vol.bbox_min().to_array(),
        bbox_max: vol.bbox_max().to_array(),
        data: raw_name.clone(),
        order: "x-fastest".into(),
        endianness: "little".into(),
    };
    if let Some(dir) = header_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut bytes = Vec::with_capacity(4 * vol.data().len());
    for v in vol.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(sibling(header_path, &raw_name), bytes)?;
    fs::write(header_path, serde_json::to_string_pretty(&header)? + "\n")?;
    Ok(())
}
