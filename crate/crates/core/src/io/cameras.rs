use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{load_err, sibling};
use crate::error::{Error, Result};
use crate::geom::Color;
use crate::observation::{CameraModel, ImageBuffer, Intrinsics, Pose};

/// Rotation orthonormality tolerance for loaded poses.
pub const LOAD_ROTATION_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Row-major 3x3.
    pub intrinsics: [[f64; 3]; 3],
    /// Row-major 4x4.
    pub cam_to_world: [[f64; 4]; 4],
    /// PNG path relative to the bundle.
    pub image: String,
}

fn decode_png(path: &Path, id: &str, width: usize, height: usize) -> Result<ImageBuffer> {
    let img = image::open(path)
        .map_err(|e| Error::Camera {
            id: id.to_string(),
            msg: format!("{}: {e}", path.display()),
        })?
        .into_rgb8();
    if img.width() as usize != width || img.height() as usize != height {
        return Err(Error::Camera {
            id: id.to_string(),
            msg: format!(
                "image {} is {}x{}, bundle declares {width}x{height}",
                path.display(),
                img.width(),
                img.height()
            ),
        });
    }
    let pixels = img
        .pixels()
        .map(|p| Color::new(p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0))
        .collect();
    ImageBuffer::new(width, height, pixels)
}

/// Loads a camera bundle and decodes every image.
pub fn load_cameras(bundle_path: &Path) -> Result<Vec<CameraModel>> {
    let text = fs::read_to_string(bundle_path).map_err(|e| load_err(bundle_path, e.to_string()))?;
    let records: Vec<CameraRecord> =
        serde_json::from_str(&text).map_err(|e| load_err(bundle_path, format!("malformed camera bundle: {e}")))?;
    records
        .iter()
        .map(|r| {
            let cam_err = |msg: String| Error::Camera { id: r.id.clone(), msg };
            let intrinsics = Intrinsics::from_matrix(r.intrinsics).map_err(|e| cam_err(e.to_string()))?;
            let pose = Pose::from_matrix(r.cam_to_world, LOAD_ROTATION_TOLERANCE).map_err(|e| cam_err(e.to_string()))?;
            let image = decode_png(&sibling(bundle_path, &r.image), &r.id, r.width, r.height)?;
            Ok(CameraModel::new(r.id.clone(), intrinsics, pose, Arc::new(image)))
        })
        .collect()
}

fn encode(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `images/<id>.png` for each camera and the bundle JSON.
pub fn save_cameras(cams: &[CameraModel], bundle_path: &Path) -> Result<()> {
    let dir = bundle_path.parent().unwrap_or(Path::new(""));
    fs::create_dir_all(dir.join("images"))?;
    let mut records = Vec::with_capacity(cams.len());
    for cam in cams {
        let rel = format!("images/{}.png", cam.id);
        let mut buf = image::RgbImage::new(cam.width as u32, cam.height as u32);
        for (i, px) in buf.pixels_mut().enumerate() {
            let c = cam.image.pixels()[i];
            *px = image::Rgb([encode(c.r), encode(c.g), encode(c.b)]);
        }
        buf.save(dir.join(&rel))?;
        records.push(CameraRecord {
            id: cam.id.clone(),
            width: cam.width,
            height: cam.height,
            intrinsics: cam.intrinsics.to_matrix(),
            cam_to_world: cam.pose.to_matrix(),
            image: rel,
        });
    }
    fs::write(bundle_path, serde_json::to_string_pretty(&records)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;

    fn camera(id: &str, img: ImageBuffer) -> CameraModel {
        let pose = Pose::look_at(Vec3::new(2.0, -1.0, 0.5), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let k = Intrinsics {
            fx: 30.5,
            fy: 31.25,
            cx: 3.5,
            cy: 2.5,
        };
        CameraModel::new(id, k, pose, Arc::new(img))
    }

    #[test]
    fn png_values_are_normalized() {
        let d = tempfile::tempdir().unwrap();
        let px = vec![Color::new(1.0, 128.0 / 255.0, 0.0), Color::gray(0.2)];
        let cam = camera("a", ImageBuffer::new(2, 1, px).unwrap());
        let bundle = d.path().join("cameras.json");
        save_cameras(std::slice::from_ref(&cam), &bundle).unwrap();
        let loaded = load_cameras(&bundle).unwrap();
        assert_eq!(loaded.len(), 1);
        let c = loaded[0].image.get(0, 0);
        assert_eq!(c.r, 1.0);
        assert!((c.g - 0.50196).abs() < 1e-5);
        assert_eq!(c.g, 128.0 / 255.0);
        assert_eq!(loaded[0].image.get(1, 0).r, 51.0 / 255.0);
    }

    #[test]
    fn round_trip_preserves_geometry() {
        let d = tempfile::tempdir().unwrap();
        let img = ImageBuffer::new(8, 6, (0..48).map(|i| Color::gray(i as f64 / 47.0)).collect()).unwrap();
        let cams = vec![camera("c0", img.clone()), camera("c1", img)];
        let bundle = d.path().join("cams.json");
        save_cameras(&cams, &bundle).unwrap();
        let loaded = load_cameras(&bundle).unwrap();
        for (a, b) in cams.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.intrinsics, b.intrinsics);
            assert_eq!(a.pose, b.pose);
            for (p, q) in a.image.pixels().iter().zip(b.image.pixels()) {
                assert!((*p - *q).max_abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn reflection_and_missing_image_are_rejected() {
        let d = tempfile::tempdir().unwrap();
        let cam = camera("x", ImageBuffer::filled(4, 4, Color::gray(0.5)));
        let bundle = d.path().join("cams.json");
        save_cameras(&[cam], &bundle).unwrap();
        let mut recs: Vec<CameraRecord> = serde_json::from_str(&fs::read_to_string(&bundle).unwrap()).unwrap();
        for row in recs[0].cam_to_world.iter_mut().take(3) {
            row[2] = -row[2];
        }
        fs::write(&bundle, serde_json::to_string(&recs).unwrap()).unwrap();
        assert!(matches!(load_cameras(&bundle), Err(Error::Camera { .. })));

        for row in recs[0].cam_to_world.iter_mut().take(3) {
            row[2] = -row[2];
        }
        recs[0].width = 5;
        fs::write(&bundle, serde_json::to_string(&recs).unwrap()).unwrap();
        assert!(matches!(load_cameras(&bundle), Err(Error::Camera { .. })));

        recs[0].width = 4;
        recs[0].image = "images/nope.png".into();
        fs::write(&bundle, serde_json::to_string(&recs).unwrap()).unwrap();
        assert!(matches!(load_cameras(&bundle), Err(Error::Camera { .. })));
    }
}
