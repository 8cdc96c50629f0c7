//! On-disk formats: per-view PLY, PNG images, camera and manifest JSON.

pub mod ply;
pub mod synthetic;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::grid::{BinaryMap, Grid, ImageView};
use crate::scene::{ensure_valid, Scene, SceneView};

pub use ply::{
    decode_gaussian_ply, encode_gaussian_ply, encoded_size, read_gaussian_ply, write_gaussian_ply,
};
pub use synthetic::{generate_synthetic_scene, synthesize_scene, Layout, SyntheticSpec};

pub const FORMAT_VERSION: &str = "1.0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestView {
    pub view_id: usize,
    pub image_path: PathBuf,
    pub camera_path: PathBuf,
    pub gaussians_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub format_version: String,
    /// `[height, width]`
    pub resolution: [usize; 2],
    pub views: Vec<ManifestView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera transform.
    pub w2c: [f64; 16],
}

impl From<&Camera> for CameraJson {
    fn from(c: &Camera) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            w2c: c.row_major(),
        }
    }
}

impl From<&CameraJson> for Camera {
    fn from(c: &CameraJson) -> Self {
        Camera::from_row_major(c.fx, c.fy, c.cx, c.cy, c.width, c.height, &c.w2c)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<Camera> {
    Ok(Camera::from(&read_json::<CameraJson>(path)?))
}

pub fn write_camera(camera: &Camera, path: impl AsRef<Path>) -> Result<()> {
    write_json(&CameraJson::from(camera), path)
}

/// Loads an 8-bit PNG, mapping each channel linearly to `[0, 1]` by `/255`.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImageView> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| p.0.map(|v| f64::from(v) / 255.0))
        .collect();
    Grid::from_vec(w, h, data)
}

pub fn write_png(img: &ImageView, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .channels()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer sized from image");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a binary mask as an 8-bit grayscale PNG with values 0 and 255.
pub fn write_mask_png(mask: &BinaryMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes)
        .expect("buffer sized from mask");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn view_err(view_id: usize, e: impl std::fmt::Display) -> Error {
    Error::View {
        view_id,
        message: e.to_string(),
    }
}

/// Loads a scene manifest and every file it references, then validates the scene.
/// A directory is read through its `scene.json`.
pub fn read_scene(manifest_path: impl AsRef<Path>) -> Result<Scene> {
    let joined;
    let mut manifest_path = manifest_path.as_ref();
    if manifest_path.is_dir() {
        joined = manifest_path.join("scene.json");
        manifest_path = &joined;
    }
    let manifest: SceneManifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let [height, width] = manifest.resolution;

    let mut seen = BTreeSet::new();
    for v in &manifest.views {
        if !seen.insert(v.view_id) {
            return Err(Error::Validation(format!("duplicate view_id {}", v.view_id)));
        }
    }
    if let Some((i, id)) = seen.iter().enumerate().find(|(i, id)| *i != **id) {
        return Err(Error::Validation(format!(
            "view_ids must be contiguous from 0: expected {i}, found {id}"
        )));
    }
    let mut entries = manifest.views.clone();
    entries.sort_by_key(|v| v.view_id);

    let mut views = Vec::with_capacity(entries.len());
    for entry in &entries {
        let id = entry.view_id;
        let image = read_png(base.join(&entry.image_path)).map_err(|e| view_err(id, e))?;
        let camera = read_camera(base.join(&entry.camera_path)).map_err(|e| view_err(id, e))?;
        let set = read_gaussian_ply(base.join(&entry.gaussians_path)).map_err(|e| view_err(id, e))?;
        if (image.height, image.width) != (height, width) {
            return Err(view_err(
                id,
                format!(
                    "dimension mismatch: image is {}x{}, manifest says {height}x{width}",
                    image.height, image.width
                ),
            ));
        }
        if (camera.height, camera.width) != (image.height, image.width) {
            return Err(view_err(
                id,
                format!(
                    "dimension mismatch: image is {}x{}, camera says {}x{}",
                    image.height, image.width, camera.height, camera.width
                ),
            ));
        }
        views.push(SceneView {
            image,
            camera,
            gaussians: GaussianSet::pixel_aligned(set.primitives, id),
        });
    }
    let scene = Scene::new(views);
    ensure_valid(&scene)?;
    Ok(scene)
}

/// Writes a scene as `view_XXX.{png,json,ply}` plus `scene.json`; returns the manifest path.
pub fn write_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (height, width) = scene.resolution()?;
    let mut views = Vec::with_capacity(scene.view_count());
    for (i, view) in scene.views.iter().enumerate() {
        let entry = ManifestView {
            view_id: i,
            image_path: format!("view_{i:03}.png").into(),
            camera_path: format!("view_{i:03}.json").into(),
            gaussians_path: format!("view_{i:03}.ply").into(),
        };
        write_png(&view.image, dir.join(&entry.image_path))?;
        write_camera(&view.camera, dir.join(&entry.camera_path))?;
        let degree = view.gaussians.max_sh_degree();
        write_gaussian_ply(&view.gaussians, dir.join(&entry.gaussians_path), degree)?;
        views.push(entry);
    }
    let manifest = SceneManifest {
        format_version: FORMAT_VERSION.into(),
        resolution: [height, width],
        views,
    };
    let path = dir.join("scene.json");
    write_json(&manifest, &path)?;
    Ok(path)
}
