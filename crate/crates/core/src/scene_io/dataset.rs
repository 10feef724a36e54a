//! Multi-view datasets in the NeRF-synthetic `transforms.json` layout.

use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::image_io::{read_image, write_image, ImageFormat};
use crate::camera::{Camera, View};
use crate::error::{Error, Result};

/// Training and held-out views plus the background they were rendered on.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<View>,
    pub test: Vec<View>,
    pub background: [f64; 3],
}

impl Dataset {
    pub fn all_views(&self) -> impl Iterator<Item = &View> {
        self.train.iter().chain(&self.test)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    white_background: Option<bool>,
    /// Explicit RGB background; overrides `white_background`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<[f64; 3]>,
    frames: Vec<Frame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
}

impl Manifest {
    fn background(&self) -> [f64; 3] {
        match (self.background, self.white_background) {
            (Some(bg), _) => bg,
            (None, Some(true)) => [1.0; 3],
            _ => [0.0; 3],
        }
    }
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

fn pose_matrix(frame: &Frame) -> Result<Matrix4<f64>> {
    let rows = &frame.transform_matrix;
    if !(rows.len() == 4 || rows.len() == 3) || rows.iter().any(|r| r.len() != 4) {
        return Err(Error::Dataset(format!(
            "frame '{}': transform_matrix must be 4x4",
            frame.file_path
        )));
    }
    let mut m = Matrix4::identity();
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    if m.try_inverse().is_none() || m.determinant().abs() < 1e-9 {
        return Err(Error::Dataset(format!(
            "frame '{}': transform_matrix is not invertible",
            frame.file_path
        )));
    }
    Ok(m)
}

/// Locates a frame's image. Blender exports often omit the extension.
fn resolve_image(dir: &Path, file_path: &str) -> Option<PathBuf> {
    let base = dir.join(file_path);
    if base.is_file() {
        return Some(base);
    }
    ["png", "ppm"]
        .iter()
        .map(|ext| PathBuf::from(format!("{}.{ext}", base.display())))
        .find(|p| p.is_file())
}

/// Frame path without a trailing image extension, so saving a loaded
/// dataset reproduces the original file names.
fn view_name(file_path: &str) -> String {
    let p = Path::new(file_path);
    match ImageFormat::from_path(p) {
        Some(_) => p.with_extension("").to_string_lossy().into_owned(),
        None => file_path.to_string(),
    }
}

fn load_split(dir: &Path, manifest_path: &Path) -> Result<(Vec<View>, [f64; 3])> {
    let manifest = read_manifest(manifest_path)?;
    if !(manifest.camera_angle_x > 0.0 && manifest.camera_angle_x < std::f64::consts::PI) {
        return Err(Error::Dataset(format!(
            "camera_angle_x {} out of range",
            manifest.camera_angle_x
        )));
    }
    let background = manifest.background();
    let mut frames: Vec<&Frame> = manifest.frames.iter().collect();
    frames.sort_by(|a, b| a.file_path.cmp(&b.file_path));
    let mut views = Vec::with_capacity(frames.len());
    for frame in frames {
        let pose = pose_matrix(frame)?;
        let path = resolve_image(dir, &frame.file_path)
            .ok_or_else(|| Error::Dataset(format!("frame '{}': image file not found", frame.file_path)))?;
        let target = read_image(&path, background)?;
        let mut camera = Camera::from_fov_x(target.width, target.height, manifest.camera_angle_x, pose)
            .map_err(|e| Error::Dataset(format!("frame '{}': {e}", frame.file_path)))?;
        if let Some(t) = frame.time {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Dataset(format!(
                    "frame '{}': time {t} outside [0, 1]",
                    frame.file_path
                )));
            }
            camera = camera.with_time(t);
        }
        views.push(View::new(view_name(&frame.file_path), camera, target)?);
    }
    Ok((views, background))
}

/// Loads a dataset directory. `transforms_train.json` (and optionally
/// `transforms_test.json`) take precedence; otherwise `transforms.json`
/// supplies the training views. Frames are ordered by file path.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let train_manifest = dir.join("transforms_train.json");
    let (train, test, background) = if train_manifest.is_file() {
        let (train, bg) = load_split(dir, &train_manifest)?;
        let test_manifest = dir.join("transforms_test.json");
        let test = if test_manifest.is_file() {
            load_split(dir, &test_manifest)?.0
        } else {
            Vec::new()
        };
        (train, test, bg)
    } else {
        let single = dir.join("transforms.json");
        if !single.is_file() {
            return Err(Error::Dataset(format!(
                "{}: no transforms.json manifest",
                dir.display()
            )));
        }
        let (train, bg) = load_split(dir, &single)?;
        (train, Vec::new(), bg)
    };
    if train.is_empty() {
        return Err(Error::Dataset("manifest lists no frames".into()));
    }
    Ok(Dataset {
        train,
        test,
        background,
    })
}

fn split_manifest(views: &[View], background: [f64; 3], format: ImageFormat) -> Result<Manifest> {
    let first = &views[0].camera;
    let fov = 2.0 * (0.5 * first.width as f64 / first.fx).atan();
    let mut frames = Vec::new();
    for v in views {
        let c = &v.camera;
        let round_trip = Camera::focal_from_fov_x(c.width, fov);
        if (round_trip - c.fx).abs() > 1e-9 * c.fx
            || c.fx != c.fy
            || c.cx != c.width as f64 / 2.0
            || c.cy != c.height as f64 / 2.0
        {
            return Err(Error::Dataset(format!(
                "view '{}': manifests need one shared field of view and centered principal points",
                v.name
            )));
        }
        frames.push(Frame {
            file_path: format!("{}.{}", v.name, format.extension()),
            transform_matrix: (0..4)
                .map(|i| (0..4).map(|j| c.cam_to_world[(i, j)]).collect())
                .collect(),
            time: c.time,
        });
    }
    Ok(Manifest {
        camera_angle_x: fov,
        white_background: None,
        background: Some(background),
        frames,
    })
}

/// Writes `transforms_train.json`, `transforms_test.json` (when there are
/// held-out views) and one image per view named after the view.
pub fn save_dataset(dataset: &Dataset, dir: &Path, format: ImageFormat) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (split, views) in [("train", &dataset.train), ("test", &dataset.test)] {
        if views.is_empty() {
            continue;
        }
        let manifest = split_manifest(views, dataset.background, format)?;
        for v in views.iter() {
            let path = dir.join(format!("{}.{}", v.name, format.extension()));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_image(&v.target, &path, format)?;
        }
        let path = dir.join(format!("transforms_{split}.json"));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
