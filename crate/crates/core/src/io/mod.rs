//! On-disk formats: volume header + raw densities, camera bundles with PNG
//! images, PLY meshes and point clouds, and report JSON.

mod cameras;
mod ply;
mod report;
mod volume;

pub use cameras::{load_cameras, save_cameras, CameraRecord};
pub use ply::{read_ply, write_ply, PlyData, PlyFormat};
pub use report::{to_json_string, write_json, SCHEMA_VERSION};
pub use volume::{load_volume, load_volume_counted, save_volume, VolumeHeader};

use std::path::{Path, PathBuf};

use crate::error::Error;

pub(crate) fn load_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// `rel` resolved against the directory holding `file`.
pub(crate) fn sibling(file: &Path, rel: &str) -> PathBuf {
    let rel = Path::new(rel);
    if rel.is_absolute() {
        return rel.to_path_buf();
    }
    file.parent().map(|d| d.join(rel)).unwrap_or_else(|| rel.to_path_buf())
}
