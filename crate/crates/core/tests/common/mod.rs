#![allow(dead_code, clippy::needless_range_loop)]

use ntsplat::camera::Camera;
use ntsplat::geom::{GaussianPrimitive, Mat3, Vec3, SH_C0};
use ntsplat::image::Image;
use ntsplat::render::{SplatResponse, ALPHA_MIN, MAX_ALPHA, TERMINATION_T};
use ntsplat::scene::{ModelConfig, Scene};
use ntsplat::texfield::TextureMode;
use rand::Rng;

/// Random splats in `[-0.6, 0.6]³` with varied shapes and orientations.
pub fn random_primitives(rng: &mut impl Rng, count: usize, sh_degree: usize) -> Vec<GaussianPrimitive> {
    (0..count)
        .map(|_| {
            let center = Vec3::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
            );
            let color = [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ];
            let mut p = GaussianPrimitive::isotropic(center, rng.gen_range(0.1..0.35), rng.gen_range(0.2..0.95), color)
                .with_sh_degree(sh_degree);
            for s in p.log_scale.iter_mut() {
                *s += rng.gen_range(-0.5..0.5);
            }
            p.rotation = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            for c in p.sh.iter_mut().skip(1).flatten() {
                *c = rng.gen_range(-0.3..0.3);
            }
            p
        })
        .collect()
}

pub fn random_scene(rng: &mut impl Rng, count: usize) -> Scene {
    let bg = [
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
    ];
    Scene::new(random_primitives(rng, count, 0), bg)
}

pub fn random_camera(rng: &mut impl Rng, width: usize, height: usize) -> Camera {
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let eye = Vec3::new(3.0 * theta.cos(), rng.gen_range(-1.0..1.0), 3.0 * theta.sin());
    Camera::look_at(eye, Vec3::zeros(), Vec3::y(), width, height, 0.8).unwrap()
}

pub fn direct_model(mode: TextureMode, tau: usize) -> ModelConfig {
    ModelConfig::direct(mode, tau)
}

/// Independent front-to-back compositing: `Σ cᵢ aᵢ Πⱼ<ᵢ (1 − aⱼ) + T·bg`
/// with colors `max(0, c + c_tex)`, stopping once `T` drops below the
/// termination threshold.
pub fn oracle_composite(responses: &[SplatResponse], background: [f64; 3]) -> ([f64; 3], f64) {
    let mut out = [0.0; 3];
    let mut t = 1.0f64;
    for r in responses {
        let a = r.effective_alpha;
        for ch in 0..3 {
            let c = (r.base_color[ch] + r.tex_color[ch]).max(0.0);
            out[ch] += c * a * t;
        }
        t *= 1.0 - a;
        if t < TERMINATION_T {
            break;
        }
    }
    for ch in 0..3 {
        out[ch] += background[ch] * t;
    }
    (out, t)
}

fn rotation_of(q: [f64; 4]) -> Mat3 {
    let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    uq.to_rotation_matrix().into_inner()
}

/// Untextured reference renderer: each splat contributes at the point of
/// maximal response `t* = dᵀΣ⁻¹(μ−o) / dᵀΣ⁻¹d` along the ray, with
/// opacity `min(α·exp(−½ rᵀΣ⁻¹r), 0.99)` and its degree-0 color.
pub fn oracle_render_untextured(scene: &Scene, camera: &Camera) -> Image {
    let eye = camera.eye();
    let splats: Vec<(Vec3, Mat3, f64, [f64; 3])> = scene
        .primitives
        .iter()
        .map(|p| {
            assert_eq!(p.sh.len(), 1, "oracle supports degree-0 color only");
            let r = rotation_of(p.rotation);
            let s2 = Mat3::from_diagonal(&p.log_scale.map(|v| (2.0 * v).exp()));
            let sigma_inv = (r * s2 * r.transpose()).try_inverse().unwrap();
            let opacity = 1.0 / (1.0 + (-p.opacity_logit).exp());
            let color = [0, 1, 2].map(|c| (SH_C0 * p.sh[0][c] + 0.5).max(0.0));
            (p.center, sigma_inv, opacity, color)
        })
        .collect();
    let mut img = Image::new(camera.width, camera.height);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let d = camera.ray(row, col).direction;
            let mut hits: Vec<(f64, usize, SplatResponse)> = Vec::new();
            for (k, (mu, si, opacity, color)) in splats.iter().enumerate() {
                let t = (d.dot(&(si * (mu - eye))) / d.dot(&(si * d))).max(ntsplat::geom::T_NEAR);
                let r = eye + d * t - mu;
                let a = (opacity * (-0.5 * r.dot(&(si * r))).exp()).clamp(0.0, MAX_ALPHA);
                if a < ALPHA_MIN {
                    continue;
                }
                hits.push((
                    t,
                    k,
                    SplatResponse {
                        t_star: t,
                        base_color: *color,
                        tex_color: [0.0; 3],
                        base_weight: a,
                        tex_alpha: 0.0,
                        effective_alpha: a,
                    },
                ));
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let responses: Vec<SplatResponse> = hits.into_iter().map(|h| h.2).collect();
            img.set_pixel(row, col, oracle_composite(&responses, scene.background).0);
        }
    }
    img
}

pub fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn random_image(rng: &mut impl Rng, width: usize, height: usize) -> Image {
    let data = (0..width * height * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    Image::from_data(width, height, data).unwrap()
}

/// Windowed SSIM evaluated pixel by pixel: an 11×11 Gaussian window
/// (σ = 1.5) truncated to the image and renormalized, averaged over
/// pixels and then over channels.
pub fn oracle_ssim(a: &Image, b: &Image) -> f64 {
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let (w, h) = (a.width as isize, a.height as isize);
    let mut total = 0.0;
    for ch in 0..3 {
        let mut sum = 0.0;
        for r in 0..h {
            for c in 0..w {
                let (mut z, mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for qr in (r - 5).max(0)..=(r + 5).min(h - 1) {
                    for qc in (c - 5).max(0)..=(c + 5).min(w - 1) {
                        let (dr, dc) = ((qr - r) as f64, (qc - c) as f64);
                        let g = (-(dr * dr + dc * dc) / (2.0 * 1.5 * 1.5)).exp();
                        let x = a.pixel(qr as usize, qc as usize)[ch];
                        let y = b.pixel(qr as usize, qc as usize)[ch];
                        z += g;
                        mx += g * x;
                        my += g * y;
                        xx += g * x * x;
                        yy += g * y * y;
                        xy += g * x * y;
                    }
                }
                let (mx, my) = (mx / z, my / z);
                let (vx, vy, cov) = (xx / z - mx * mx, yy / z - my * my, xy / z - mx * my);
                sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += sum / (w * h) as f64;
    }
    total / 3.0
}

pub fn oracle_psnr(a: &Image, b: &Image) -> f64 {
    let mut se = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = x.clamp(0.0, 1.0) - y.clamp(0.0, 1.0);
        se += d * d;
    }
    let mse = se / a.data.len() as f64;
    if mse == 0.0 {
        100.0
    } else {
        (-10.0 * mse.log10()).min(100.0)
    }
}

/// Bilinear sample of an explicit `τ×τ×channels` plane at grid `(u, v)`,
/// clamping to the last cell like the texture sampler.
pub fn bilinear(plane: &[f64], tau: usize, channels: usize, u: f64, v: f64) -> Vec<f64> {
    let cell = |x: f64| -> (usize, f64) {
        let i = (x.floor().max(0.0) as usize).min(tau - 2);
        (i, x - i as f64)
    };
    let (i, fu) = cell(u);
    let (j, fv) = cell(v);
    let at = |r: usize, c: usize, ch: usize| plane[(r * tau + c) * channels + ch];
    (0..channels)
        .map(|ch| {
            (1.0 - fu) * (1.0 - fv) * at(i, j, ch)
                + (1.0 - fu) * fv * at(i, j + 1, ch)
                + fu * (1.0 - fv) * at(i + 1, j, ch)
                + fu * fv * at(i + 1, j + 1, ch)
        })
        .collect()
}
