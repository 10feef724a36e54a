//! Procedural scenes with analytically rendered targets.
//!
//! Each spec yields an initial (untextured) scene, a dataset and the
//! texture model its experiments install on top of that scene.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::camera::{Camera, View};
use crate::error::{Error, Result};
use crate::geom::{GaussianPrimitive, Ray, Vec3};
use crate::image::Image;
use crate::neuralfield::FieldConfig;
use crate::render::{render_image, RenderConfig};
use crate::scene::{ModelConfig, Scene};
use crate::texfield::{TextureLayout, TextureMode, ALPHA_CHANNELS, COLOR_CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// One flat splat in front of a checkerboard quad.
    TexturedQuad,
    /// Two procedurally striped, shaded spheres seen from a ring of cameras.
    TwoSpheres,
    /// A single splat whose reference carries a checker texture.
    CheckerSplat,
    /// A banded sphere swinging along x over normalized time.
    DynamicSwing,
}

impl SyntheticSpec {
    pub const ALL: [SyntheticSpec; 4] = [
        SyntheticSpec::TexturedQuad,
        SyntheticSpec::TwoSpheres,
        SyntheticSpec::CheckerSplat,
        SyntheticSpec::DynamicSwing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticSpec::TexturedQuad => "textured_quad",
            SyntheticSpec::TwoSpheres => "two_spheres",
            SyntheticSpec::CheckerSplat => "checker_splat",
            SyntheticSpec::DynamicSwing => "dynamic_swing",
        }
    }
}

impl std::str::FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|spec| spec.name() == s)
            .ok_or_else(|| Error::UnknownSpec(s.to_string()))
    }
}

impl std::fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SyntheticSpec,
    /// Initial primitives without textures.
    pub scene: Scene,
    pub dataset: Dataset,
    /// Texture model the experiments on this scene use by default.
    pub model: ModelConfig,
}

pub fn make_synthetic_scene(spec: SyntheticSpec, seed: u64) -> Result<SyntheticScene> {
    match spec {
        SyntheticSpec::TexturedQuad => textured_quad(seed),
        SyntheticSpec::TwoSpheres => two_spheres(seed),
        SyntheticSpec::CheckerSplat => checker_splat(seed),
        SyntheticSpec::DynamicSwing => dynamic_swing(seed),
    }
}

pub fn make_synthetic_scene_by_name(name: &str, seed: u64) -> Result<SyntheticScene> {
    make_synthetic_scene(name.parse()?, seed)
}

fn render_targets(
    cameras: Vec<(String, Camera)>,
    shade: impl Fn(&Ray, &Camera) -> Option<[f64; 3]>,
    background: [f64; 3],
) -> Result<Vec<View>> {
    cameras
        .into_iter()
        .map(|(name, cam)| {
            let mut img = Image::filled(cam.width, cam.height, background);
            for r in 0..cam.height {
                for c in 0..cam.width {
                    if let Some(rgb) = shade(&cam.ray(r, c), &cam) {
                        img.set_pixel(r, c, rgb);
                    }
                }
            }
            View::new(name, cam, img)
        })
        .collect()
}

/// Nearest positive hit of a ray with a sphere.
fn hit_sphere(ray: &Ray, center: &Vec3, radius: f64) -> Option<Vec3> {
    let oc = ray.origin - center;
    let b = ray.direction.dot(&oc);
    let c = oc.dot(&oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then(|| ray.origin + ray.direction * t)
}

/// Points spread evenly over a unit sphere.
fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

pub const QUAD_HALF_SIDE: f64 = 1.0;
pub const QUAD_CELLS: usize = 8;
pub const CHECKER_LIGHT: f64 = 0.9;
pub const CHECKER_DARK: f64 = 0.1;

/// Checkerboard value of the quad at `(x, y)`, or `None` off the quad.
pub fn quad_checker(x: f64, y: f64) -> Option<f64> {
    let h = QUAD_HALF_SIDE;
    if x.abs() > h || y.abs() > h {
        return None;
    }
    let cell = |v: f64| (((v + h) / (2.0 * h) * QUAD_CELLS as f64) as usize).min(QUAD_CELLS - 1);
    Some(if (cell(x) + cell(y)) % 2 == 0 {
        CHECKER_LIGHT
    } else {
        CHECKER_DARK
    })
}

fn textured_quad(seed: u64) -> Result<SyntheticScene> {
    let size = 32;
    let fov = 2.0 * (0.42f64).atan();
    let eyes = [(-0.3, 0.25), (0.3, 0.25), (-0.3, -0.25), (0.3, -0.25)];
    let cameras = eyes
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let cam = Camera::look_at(Vec3::new(x, y, 3.0), Vec3::zeros(), Vec3::y(), size, size, fov)?;
            Ok((format!("view_{i:02}"), cam))
        })
        .collect::<Result<Vec<_>>>()?;
    let background = [0.0; 3];
    let train = render_targets(
        cameras,
        |ray, _| {
            if ray.direction.z.abs() < 1e-12 {
                return None;
            }
            let t = -ray.origin.z / ray.direction.z;
            let p = ray.origin + ray.direction * t;
            (t > 0.0).then(|| quad_checker(p.x, p.y)).flatten().map(|v| [v; 3])
        },
        background,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 2.0 * QUAD_HALF_SIDE / 6.0;
    let mut splat = GaussianPrimitive::isotropic(Vec3::zeros(), sigma, 0.9, [0.5; 3]);
    splat.log_scale.z = (0.02f64).ln();
    splat.center += Vec3::new(rng.gen_range(-1e-3..1e-3), rng.gen_range(-1e-3..1e-3), 0.0);
    let scene = Scene::new(vec![splat], background);
    // Grid nodes must be well below the checker cell size once the splat
    // has grown to cover the quad.
    let model = ModelConfig::neural(TextureMode::Triplane3d, FieldConfig::desk(32));
    Ok(SyntheticScene {
        spec: SyntheticSpec::TexturedQuad,
        scene,
        dataset: Dataset {
            train,
            test: Vec::new(),
            background,
        },
        model,
    })
}

struct Sphere {
    center: Vec3,
    radius: f64,
    albedo: fn(&Vec3) -> [f64; 3],
}

const LIGHT: [f64; 3] = [0.3, 0.8, 0.52];

fn lambert(normal: &Vec3) -> f64 {
    let l = Vec3::from(LIGHT).normalize();
    0.35 + 0.65 * normal.dot(&l).max(0.0)
}

fn striped(n: &Vec3) -> [f64; 3] {
    let s = 0.5 + 0.5 * (6.0 * n.z.atan2(n.x)).sin();
    [0.85, 0.25 + 0.6 * s, 0.15]
}

fn banded(n: &Vec3) -> [f64; 3] {
    let s = 0.5 + 0.5 * (7.0 * n.y).sin();
    [0.1 + 0.2 * s, 0.3 + 0.4 * s, 0.9]
}

fn spheres() -> [Sphere; 2] {
    [
        Sphere {
            center: Vec3::new(-0.55, 0.0, 0.0),
            radius: 0.5,
            albedo: striped,
        },
        Sphere {
            center: Vec3::new(0.6, 0.05, 0.1),
            radius: 0.4,
            albedo: banded,
        },
    ]
}

fn shade_spheres(ray: &Ray, spheres: &[Sphere]) -> Option<[f64; 3]> {
    let mut best: Option<(f64, [f64; 3])> = None;
    for s in spheres {
        if let Some(p) = hit_sphere(ray, &s.center, s.radius) {
            let d = (p - ray.origin).norm();
            if best.is_none_or(|(bd, _)| d < bd) {
                let n = (p - s.center) / s.radius;
                let a = (s.albedo)(&n);
                let k = lambert(&n);
                best = Some((d, [a[0] * k, a[1] * k, a[2] * k]));
            }
        }
    }
    best.map(|b| b.1)
}

fn two_spheres(seed: u64) -> Result<SyntheticScene> {
    let size = 32;
    let fov = 0.9;
    let cameras = (0..8)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 8.0;
            let elev = if i % 2 == 0 { 0.5 } else { 0.8 };
            let eye = Vec3::new(3.2 * a.sin(), elev, 3.2 * a.cos());
            Ok((
                format!("view_{i:02}"),
                Camera::look_at(eye, Vec3::zeros(), Vec3::y(), size, size, fov)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let background = [0.0; 3];
    let sph = spheres();
    let views = render_targets(cameras, |ray, _| shade_spheres(ray, &sph), background)?;
    let (train, test): (Vec<_>, Vec<_>) = views.into_iter().enumerate().partition(|(i, _)| i % 2 == 0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = Vec::new();
    for (s, count) in sph.iter().zip([28, 20]) {
        for n in fibonacci_sphere(count) {
            let jitter = Vec3::new(
                rng.gen_range(-0.02..0.02),
                rng.gen_range(-0.02..0.02),
                rng.gen_range(-0.02..0.02),
            );
            let center = s.center + n * (s.radius * 0.92) + jitter;
            let a = (s.albedo)(&n);
            let k = lambert(&n);
            let color = [a[0] * k, a[1] * k, a[2] * k].map(|c| (c + rng.gen_range(-0.05..0.05)).clamp(0.02, 0.98));
            let sigma = s.radius * 0.3;
            prims.push(GaussianPrimitive::isotropic(center, sigma, 0.8, color).with_sh_degree(1));
        }
    }
    let scene = Scene::new(prims, background);
    let model = ModelConfig::neural(TextureMode::Triplane3d, FieldConfig::desk(4));
    Ok(SyntheticScene {
        spec: SyntheticSpec::TwoSpheres,
        scene,
        dataset: Dataset {
            train: train.into_iter().map(|(_, v)| v).collect(),
            test: test.into_iter().map(|(_, v)| v).collect(),
            background,
        },
        model,
    })
}

/// Reference splat of `checker_splat`: unit-ish Gaussian with an
/// alternating rank-one pattern on its xy plane.
pub fn checker_reference(resolution: usize) -> Scene {
    let splat = GaussianPrimitive::isotropic(Vec3::zeros(), 0.35, 0.9, [0.5; 3]);
    let mut scene = Scene::new(vec![splat], [0.0; 3]);
    scene.model = ModelConfig::direct(TextureMode::Triplane3d, resolution);
    let mut tex = crate::texfield::LocalTexture::zeros(resolution, TextureLayout::Triplane);
    let len = COLOR_CHANNELS * resolution;
    for i in 0..resolution {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        for c in 0..COLOR_CHANNELS {
            tex.color[i * COLOR_CHANNELS + c] = s * 0.6;
            tex.color[len + i * COLOR_CHANNELS + c] = s;
        }
    }
    let alen = ALPHA_CHANNELS * resolution;
    tex.alpha[..alen].fill(0.0);
    scene.direct_textures = vec![tex];
    scene
}

fn checker_splat(seed: u64) -> Result<SyntheticScene> {
    let size = 24;
    let tau = 8;
    let reference = checker_reference(tau);
    let render = RenderConfig::default();
    let eyes = [
        Vec3::new(0.0, 0.0, 2.5),
        Vec3::new(0.6, 0.3, 2.4),
        Vec3::new(-0.5, 0.4, 2.4),
        Vec3::new(0.2, -0.6, 2.4),
    ];
    let mut train = Vec::new();
    for (i, eye) in eyes.into_iter().enumerate() {
        let cam = Camera::look_at(eye, Vec3::zeros(), Vec3::y(), size, size, 0.8)?;
        let img = render_image(&reference, &cam, &render)?.image;
        train.push(View::new(format!("view_{i:02}"), cam, img)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = reference.primitives[0].clone();
    start.opacity_logit += rng.gen_range(-0.1..0.1);
    let scene = Scene::new(vec![start], reference.background);
    Ok(SyntheticScene {
        spec: SyntheticSpec::CheckerSplat,
        scene,
        dataset: Dataset {
            train,
            test: Vec::new(),
            background: reference.background,
        },
        model: ModelConfig::direct(TextureMode::Triplane3d, tau),
    })
}

pub const SWING_AMPLITUDE: f64 = 0.6;
pub const SWING_FRAMES: usize = 5;

/// Sphere center x at normalized time `t`: `A·cos(πt)`, evaluated so that
/// `t` and `1 − t` give exactly opposite values.
pub fn swing_x(t: f64) -> f64 {
    // cos(πt) = sin(π(½ − t)), which is exactly zero at t = ½.
    if t <= 0.5 {
        SWING_AMPLITUDE * (PI * (0.5 - t)).sin()
    } else {
        -SWING_AMPLITUDE * (PI * (0.5 - (1.0 - t))).sin()
    }
}

fn swing_color(n: &Vec3) -> [f64; 3] {
    let s = 0.5 + 0.5 * (8.0 * n.y).sin();
    let k = 0.4 + 0.6 * n.z.max(0.0);
    [(0.2 + 0.7 * s) * k, 0.5 * k, (0.9 - 0.6 * s) * k]
}

fn dynamic_swing(seed: u64) -> Result<SyntheticScene> {
    let size = 32;
    let radius = 0.35;
    let cameras = (0..SWING_FRAMES)
        .map(|i| {
            let t = i as f64 / (SWING_FRAMES - 1) as f64;
            let cam =
                Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), size, size, 0.8)?.with_time(t);
            Ok((format!("frame_{i:02}"), cam))
        })
        .collect::<Result<Vec<_>>>()?;
    let background = [0.0; 3];
    let train = render_targets(
        cameras,
        |ray, cam| {
            let center = Vec3::new(swing_x(cam.time.unwrap_or(0.0)), 0.0, 0.0);
            hit_sphere(ray, &center, radius).map(|p| swing_color(&((p - center) / radius)))
        },
        background,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = fibonacci_sphere(16)
        .into_iter()
        .map(|n| {
            let center = n * (radius * 0.8) + Vec3::new(rng.gen_range(-0.01..0.01), 0.0, 0.0);
            GaussianPrimitive::isotropic(center, 0.15, 0.7, swing_color(&n))
        })
        .collect();
    let field = FieldConfig {
        time_dependent: true,
        ..FieldConfig::desk(4)
    };
    Ok(SyntheticScene {
        spec: SyntheticSpec::DynamicSwing,
        scene: Scene::new(prims, background),
        dataset: Dataset {
            train,
            test: Vec::new(),
            background,
        },
        model: ModelConfig::neural(TextureMode::Triplane3d, field),
    })
}

/// Gives every texture non-zero content: random `v¹` decoder rows for a
/// neural field, random `v¹` factors for direct textures. Gradient checks
/// use this so that every texture path carries signal.
pub fn randomize_textures(scene: &mut Scene, scale: f64, rng: &mut impl Rng) {
    if let Some(field) = &mut scene.field {
        let tau = field.config.texture_resolution;
        for (mlp, channels) in [
            (&mut field.color_decoder, COLOR_CHANNELS),
            (&mut field.alpha_decoder, ALPHA_CHANNELS),
        ] {
            let last = mlp.layers.last_mut().expect("decoders have an output layer");
            let factor_len = channels * tau;
            let bound = scale / (last.inputs as f64).sqrt();
            for o in 0..last.outputs {
                if (o / factor_len) % 2 == 1 {
                    for i in 0..last.inputs {
                        last.weights[o * last.inputs + i] = rng.gen_range(-bound..bound);
                    }
                    last.bias[o] = rng.gen_range(-0.1 * scale..0.1 * scale);
                }
            }
        }
    }
    for tex in &mut scene.direct_textures {
        for (data, channels) in [(&mut tex.color, COLOR_CHANNELS), (&mut tex.alpha, ALPHA_CHANNELS)] {
            let len = channels * tex.resolution;
            for p in 0..3 {
                for v in &mut data[(2 * p + 1) * len..(2 * p + 2) * len] {
                    *v = rng.gen_range(-scale..scale);
                }
            }
        }
    }
}

/// Small randomized problem for gradient checks: five splats with SH
/// degree 1, an 8×8 view, a neural field with non-zero textures and a
/// random target image.
pub fn gradcheck_scene(seed: u64) -> Result<(Scene, View)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = Vec::new();
    for _ in 0..5 {
        let center = Vec3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.4..0.4),
        );
        let color = [
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
        ];
        let mut p = GaussianPrimitive::isotropic(center, 0.3, rng.gen_range(0.4..0.8), color).with_sh_degree(1);
        for c in p.sh.iter_mut().skip(1).flatten() {
            *c = rng.gen_range(-0.2..0.2);
        }
        for s in p.log_scale.iter_mut() {
            *s += rng.gen_range(-0.3..0.3);
        }
        let q: [f64; 4] = [
            1.0,
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        p.rotation = q.map(|v| v / n);
        prims.push(p);
    }
    let mut scene = Scene::new(prims, [0.1, 0.2, 0.3]);
    let field = FieldConfig {
        plane_resolution: 6,
        channels: 2,
        decoder_width: 8,
        hidden_layers: 1,
        ..FieldConfig::desk(4)
    };
    scene.install_textures(ModelConfig::neural(TextureMode::Triplane3d, field), &mut rng)?;
    randomize_textures(&mut scene, 0.5, &mut rng);
    let cam = Camera::look_at(Vec3::new(0.4, 0.3, 3.0), Vec3::zeros(), Vec3::y(), 8, 8, 0.7)?;
    let mut target = Image::new(8, 8);
    target.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
    Ok((scene, View::new("gradcheck", cam, target)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_names_round_trip() {
        for spec in SyntheticSpec::ALL {
            assert_eq!(spec.name().parse::<SyntheticSpec>().unwrap(), spec);
        }
        assert!(matches!("teapot".parse::<SyntheticSpec>(), Err(Error::UnknownSpec(_))));
    }

    #[test]
    fn checker_cells_alternate() {
        assert_eq!(quad_checker(-0.99, -0.99), Some(CHECKER_LIGHT));
        assert_eq!(quad_checker(-0.74, -0.99), Some(CHECKER_DARK));
        assert_eq!(quad_checker(0.99, 0.99), Some(CHECKER_LIGHT));
        assert_eq!(quad_checker(1.01, 0.0), None);
    }

    #[test]
    fn swing_is_antisymmetric() {
        for i in 0..=16 {
            let t = i as f64 / 16.0;
            assert_eq!(swing_x(t), -swing_x(1.0 - t));
        }
    }

    #[test]
    fn scenes_are_valid() {
        for spec in SyntheticSpec::ALL {
            let s = make_synthetic_scene(spec, 1).unwrap();
            s.scene.validate().unwrap();
            assert!(!s.dataset.train.is_empty());
        }
    }
}
