//! Textured volume rendering: per-splat responses at the ray's
//! contribution point, depth ordering and front-to-back compositing.
//!
//! Each hit contributes opacity `clamp(α·𝒫 + α_tex, 0, 0.99)` and color
//! `max(0, c + c_tex)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geom::{
    contribution_in_local, eval_sh_raw, view_direction, ContributionPoint, GaussianPrimitive, Mat3, Ray, Vec3, T_NEAR,
};
use crate::image::Image;
use crate::scene::Scene;
use crate::texfield::{triplane_texture_query, LocalTexture, TEXTURE_HALF_EXTENT};

pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const MAX_ALPHA: f64 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const TERMINATION_T: f64 = 1e-4;

/// Squared Mahalanobis radius beyond which a splat can contribute neither
/// texture (outside the 3σ box) nor base opacity above `ALPHA_MIN`.
const CULL_RADIUS_SQ: f64 = 3.0 * TEXTURE_HALF_EXTENT * TEXTURE_HALF_EXTENT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthOrdering {
    /// Sort every pixel's hits by their own `t*`.
    PerRay,
    /// Sort all hits by the camera-space depth of the splat center.
    CenterDepth,
}

/// How per-pixel gradient contributions are summed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Fixed-order sums, bit-reproducible for any thread count.
    Reference,
    /// Atomic accumulation; agrees with `Reference` to rounding.
    Fast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub t_near: f64,
    pub alpha_min: f64,
    pub max_alpha: f64,
    pub termination: f64,
    pub cull: bool,
    pub ordering: DepthOrdering,
    pub reduction: Reduction,
    /// When false every texture reads as zero.
    pub textures: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            t_near: T_NEAR,
            alpha_min: ALPHA_MIN,
            max_alpha: MAX_ALPHA,
            termination: TERMINATION_T,
            cull: true,
            ordering: DepthOrdering::PerRay,
            reduction: Reduction::Reference,
            textures: true,
        }
    }
}

/// One splat's contribution to one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatResponse {
    pub t_star: f64,
    pub base_color: [f64; 3],
    pub tex_color: [f64; 3],
    /// `α·𝒫` at the contribution point.
    pub base_weight: f64,
    pub tex_alpha: f64,
    pub effective_alpha: f64,
}

impl SplatResponse {
    /// Composited color `max(0, c + c_tex)`.
    pub fn color(&self) -> [f64; 3] {
        [0, 1, 2].map(|c| (self.base_color[c] + self.tex_color[c]).max(0.0))
    }
}

/// Why a splat does not contribute to a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Skip {
    BelowAlphaMin,
    Culled,
    Degenerate,
}

/// Per-splat quantities that do not depend on the pixel.
#[derive(Clone, Debug)]
pub(crate) struct PreparedSplat {
    pub center: Vec3,
    /// `S⁻¹ Rᵀ`.
    pub local: Mat3,
    pub max_scale: f64,
    pub opacity: f64,
    pub base_raw: [f64; 3],
    pub base: [f64; 3],
    pub degenerate: bool,
    pub depth: f64,
}

impl PreparedSplat {
    fn new(p: &GaussianPrimitive, eye: &Vec3, forward: &Vec3) -> Self {
        let dir = view_direction(&p.center, eye);
        let base_raw = eval_sh_raw(&p.sh, &dir);
        Self {
            center: p.center,
            local: p.to_local_matrix(),
            max_scale: p.log_scale.max().exp(),
            opacity: p.opacity(),
            base_raw,
            base: base_raw.map(|v| v.max(0.0)),
            degenerate: p.is_degenerate(),
            depth: (p.center - eye).dot(forward),
        }
    }
}

/// Everything needed to shade pixels of one camera.
pub(crate) struct Prepared {
    pub splats: Vec<PreparedSplat>,
    pub textures: Vec<LocalTexture>,
    pub config: RenderConfig,
    pub background: [f64; 3],
}

impl Prepared {
    pub fn new(scene: &Scene, camera: &Camera, config: &RenderConfig) -> Result<Self> {
        camera.validate()?;
        let eye = camera.eye();
        let forward = camera.forward();
        let textures = if config.textures {
            scene.realize_textures(camera)?
        } else {
            vec![LocalTexture::disabled(); scene.primitives.len()]
        };
        Ok(Self {
            splats: scene
                .primitives
                .iter()
                .map(|p| PreparedSplat::new(p, &eye, &forward))
                .collect(),
            textures,
            config: config.clone(),
            background: scene.background,
        })
    }

    pub fn degenerate_count(&self) -> usize {
        self.splats.iter().filter(|s| s.degenerate).count()
    }
}

/// A non-skipped splat on a ray, with the intermediates the backward pass
/// needs.
#[derive(Clone, Debug)]
pub(crate) struct Hit {
    pub index: usize,
    pub o_l: Vec3,
    pub d_l: Vec3,
    pub cp: ContributionPoint,
    /// `α·𝒫 + α_tex` before clamping.
    pub raw_alpha: f64,
    pub response: SplatResponse,
}

fn respond(
    index: usize,
    splat: &PreparedSplat,
    texture: &LocalTexture,
    ray: &Ray,
    config: &RenderConfig,
) -> std::result::Result<Hit, Skip> {
    if splat.degenerate {
        return Err(Skip::Degenerate);
    }
    let offset = ray.origin - splat.center;
    if config.cull {
        let along = offset.dot(&ray.direction);
        let perp_sq = (offset.norm_squared() - along * along).max(0.0);
        if perp_sq > CULL_RADIUS_SQ * splat.max_scale * splat.max_scale {
            return Err(Skip::Culled);
        }
    }
    let o_l = splat.local * offset;
    let d_l = splat.local * ray.direction;
    let cp = contribution_in_local(ray, &o_l, &d_l, config.t_near);
    if config.cull && cp.local.norm_squared() > CULL_RADIUS_SQ {
        return Err(Skip::Culled);
    }
    let sample = triplane_texture_query(&cp.local, texture);
    let base_weight = splat.opacity * cp.response;
    let raw_alpha = base_weight + sample.alpha;
    let effective_alpha = raw_alpha.clamp(0.0, config.max_alpha);
    if effective_alpha < config.alpha_min {
        return Err(Skip::BelowAlphaMin);
    }
    Ok(Hit {
        index,
        o_l,
        d_l,
        cp,
        raw_alpha,
        response: SplatResponse {
            t_star: cp.t_star,
            base_color: splat.base,
            tex_color: sample.color,
            base_weight,
            tex_alpha: sample.alpha,
            effective_alpha,
        },
    })
}

/// Response of one splat to one ray, with the eye at the ray origin.
pub fn evaluate_splat_response(
    ray: &Ray,
    primitive: &GaussianPrimitive,
    texture: &LocalTexture,
    config: &RenderConfig,
) -> std::result::Result<SplatResponse, Skip> {
    let splat = PreparedSplat::new(primitive, &ray.origin, &ray.direction);
    let texture = if config.textures {
        texture
    } else {
        &LocalTexture::disabled()
    };
    respond(0, &splat, texture, ray, config).map(|h| h.response)
}

/// Sorted hits of `ray` against every prepared splat.
pub(crate) fn trace_ray(prepared: &Prepared, ray: &Ray, hits: &mut Vec<Hit>) {
    hits.clear();
    for (k, (splat, tex)) in prepared.splats.iter().zip(&prepared.textures).enumerate() {
        if let Ok(hit) = respond(k, splat, tex, ray, &prepared.config) {
            hits.push(hit);
        }
    }
    match prepared.config.ordering {
        DepthOrdering::PerRay => hits.sort_by(|a, b| {
            a.response
                .t_star
                .total_cmp(&b.response.t_star)
                .then(a.index.cmp(&b.index))
        }),
        DepthOrdering::CenterDepth => hits.sort_by(|a, b| {
            let (da, db) = (prepared.splats[a.index].depth, prepared.splats[b.index].depth);
            da.total_cmp(&db).then(a.index.cmp(&b.index))
        }),
    }
}

/// Output of front-to-back compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    /// Residual transmittance after the last contributing splat.
    pub transmittance: f64,
    /// Number of leading responses that were composited before early
    /// termination.
    pub used: usize,
}

pub(crate) fn composite_ordered<'a>(
    responses: impl IntoIterator<Item = &'a SplatResponse>,
    background: [f64; 3],
    termination: f64,
) -> Composite {
    let mut color = [0.0; 3];
    let mut t = 1.0;
    let mut used = 0;
    for r in responses {
        let a = r.effective_alpha;
        let c = r.color();
        for ch in 0..3 {
            color[ch] += c[ch] * a * t;
        }
        t *= 1.0 - a;
        used += 1;
        if t < termination {
            break;
        }
    }
    for ch in 0..3 {
        color[ch] += background[ch] * t;
    }
    Composite {
        color,
        transmittance: t,
        used,
    }
}

/// Front-to-back compositing of depth-sorted responses over `background`,
/// stopping once transmittance drops below [`TERMINATION_T`].
pub fn composite(responses: &[SplatResponse], background: [f64; 3]) -> Result<Composite> {
    if responses.windows(2).any(|w| w[1].t_star < w[0].t_star) {
        return Err(Error::ContractViolation("responses must be sorted by t*".into()));
    }
    Ok(composite_ordered(responses, background, TERMINATION_T))
}

pub(crate) fn shade(prepared: &Prepared, hits: &[Hit]) -> Composite {
    composite_ordered(
        hits.iter().map(|h| &h.response),
        prepared.background,
        prepared.config.termination,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub image: Image,
    /// Per-pixel residual transmittance, row-major.
    pub transmittance: Vec<f64>,
    pub background: [f64; 3],
    /// Splats skipped for a degenerate covariance.
    pub degenerate_skipped: usize,
}

/// Renders `scene` from `camera`. Pixels are independent, so the result
/// does not depend on the thread count.
pub fn render_image(scene: &Scene, camera: &Camera, config: &RenderConfig) -> Result<RenderedImage> {
    let prepared = Prepared::new(scene, camera, config)?;
    Ok(render_prepared(&prepared, camera))
}

pub(crate) fn render_prepared(prepared: &Prepared, camera: &Camera) -> RenderedImage {
    let (w, h) = (camera.width, camera.height);
    let mut image = Image::new(w, h);
    let mut transmittance = vec![0.0; w * h];
    image
        .data
        .par_chunks_mut(3 * w)
        .zip(transmittance.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, (pixels, trans))| {
            let mut hits = Vec::new();
            for col in 0..w {
                trace_ray(prepared, &camera.ray(row, col), &mut hits);
                let c = shade(prepared, &hits);
                pixels[3 * col..3 * col + 3].copy_from_slice(&c.color);
                trans[col] = c.transmittance;
            }
        });
    RenderedImage {
        image,
        transmittance,
        background: prepared.background,
        degenerate_skipped: prepared.degenerate_count(),
    }
}

/// Ordered contributions to one pixel, for inspection and invariant checks.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelTrace {
    /// `(primitive index, response)` in compositing order.
    pub entries: Vec<(usize, SplatResponse)>,
    /// Compositing weight `a_k·T_k` of each composited entry.
    pub weights: Vec<f64>,
    /// Transmittance before each composited entry, then the final value.
    pub transmittance: Vec<f64>,
    pub composite: Composite,
}

pub fn trace_pixel(
    scene: &Scene,
    camera: &Camera,
    config: &RenderConfig,
    row: usize,
    col: usize,
) -> Result<PixelTrace> {
    if row >= camera.height || col >= camera.width {
        return Err(Error::InvalidInput(format!("pixel ({row}, {col}) outside the image")));
    }
    let prepared = Prepared::new(scene, camera, config)?;
    let mut hits = Vec::new();
    trace_ray(&prepared, &camera.ray(row, col), &mut hits);
    let composite = shade(&prepared, &hits);
    let mut weights = Vec::new();
    let mut transmittance = vec![1.0];
    let mut t = 1.0;
    for h in hits.iter().take(composite.used) {
        weights.push(h.response.effective_alpha * t);
        t *= 1.0 - h.response.effective_alpha;
        transmittance.push(t);
    }
    Ok(PixelTrace {
        entries: hits.iter().map(|h| (h.index, h.response)).collect(),
        weights,
        transmittance,
        composite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{ray_contribution_point, GaussianPrimitive};
    use crate::texfield::TextureLayout;

    fn response(alpha: f64, color: [f64; 3], t: f64) -> SplatResponse {
        SplatResponse {
            t_star: t,
            base_color: color,
            tex_color: [0.0; 3],
            base_weight: alpha,
            tex_alpha: 0.0,
            effective_alpha: alpha,
        }
    }

    fn front_ray() -> Ray {
        Ray::new(Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, -1.0), (0, 0))
    }

    #[test]
    fn untextured_response_reduces_to_base_term() {
        let p = GaussianPrimitive::isotropic(Vec3::zeros(), 0.5, 0.5, [0.2, 0.4, 0.6]);
        let r = evaluate_splat_response(&front_ray(), &p, &LocalTexture::disabled(), &RenderConfig::default()).unwrap();
        assert!((r.effective_alpha - 0.5).abs() < 1e-15);
        assert_eq!(r.tex_color, [0.0; 3]);
        assert_eq!(r.tex_alpha, 0.0);
        assert!((r.t_star - 5.0).abs() < 1e-12);
        for (c, expect) in r.base_color.iter().zip([0.2, 0.4, 0.6]) {
            assert!((c - expect).abs() < 1e-12);
        }
    }

    fn constant_alpha_texture(alpha: f64) -> LocalTexture {
        // Every plane reads v⁰·v¹ = alpha, so the tri-plane mean is alpha.
        let mut t = LocalTexture::zeros(2, TextureLayout::Triplane);
        t.alpha
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = if (i / 2) % 2 == 0 { 1.0 } else { alpha });
        t
    }

    #[test]
    fn effective_alpha_is_clamped_both_ways() {
        // α·𝒫 = 0.7 at the center.
        let p = GaussianPrimitive::isotropic(Vec3::zeros(), 0.5, 0.7, [0.5; 3]);
        let cfg = RenderConfig::default();
        let r = evaluate_splat_response(&front_ray(), &p, &constant_alpha_texture(0.5), &cfg).unwrap();
        assert!((r.tex_alpha - 0.5).abs() < 1e-15);
        assert_eq!(r.effective_alpha, 0.99);

        let p = GaussianPrimitive::isotropic(Vec3::zeros(), 0.5, 0.3, [0.5; 3]);
        let neg = constant_alpha_texture(-0.4);
        assert_eq!(
            evaluate_splat_response(&front_ray(), &p, &neg, &cfg),
            Err(Skip::BelowAlphaMin)
        );
        let keep_all = RenderConfig { alpha_min: 0.0, ..cfg };
        let r = evaluate_splat_response(&front_ray(), &p, &neg, &keep_all).unwrap();
        assert_eq!(r.effective_alpha, 0.0);
        assert!((r.base_weight + r.tex_alpha - (-0.1)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_culled_skips() {
        let mut p = GaussianPrimitive::isotropic(Vec3::zeros(), 0.5, 0.7, [0.5; 3]);
        p.log_scale = Vec3::new(0.0, -20.0, 0.0);
        assert_eq!(
            evaluate_splat_response(&front_ray(), &p, &LocalTexture::disabled(), &RenderConfig::default()),
            Err(Skip::Degenerate)
        );
        let far = GaussianPrimitive::isotropic(Vec3::new(10.0, 0.0, 0.0), 0.5, 0.99, [0.5; 3]);
        assert_eq!(
            evaluate_splat_response(&front_ray(), &far, &LocalTexture::disabled(), &RenderConfig::default()),
            Err(Skip::Culled)
        );
        let no_cull = RenderConfig {
            cull: false,
            ..RenderConfig::default()
        };
        assert_eq!(
            evaluate_splat_response(&front_ray(), &far, &LocalTexture::disabled(), &no_cull),
            Err(Skip::BelowAlphaMin)
        );
    }

    #[test]
    fn composite_examples() {
        let one = composite(&[response(0.5, [1.0, 0.0, 0.0], 1.0)], [0.0; 3]).unwrap();
        assert_eq!(one.color, [0.5, 0.0, 0.0]);
        assert_eq!(one.transmittance, 0.5);

        let two = composite(&[response(0.5, [1.0; 3], 1.0), response(0.5, [1.0; 3], 2.0)], [0.0; 3]).unwrap();
        assert_eq!(two.color, [0.75; 3]);
        assert_eq!(two.transmittance, 0.25);

        let empty = composite(&[], [0.2, 0.3, 0.4]).unwrap();
        assert_eq!(empty.color, [0.2, 0.3, 0.4]);
        assert_eq!(empty.transmittance, 1.0);

        assert!(matches!(
            composite(&[response(0.5, [1.0; 3], 2.0), response(0.5, [1.0; 3], 1.0)], [0.0; 3]),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn compositing_terminates_early() {
        let list: Vec<_> = (0..10).map(|i| response(0.99, [1.0; 3], i as f64)).collect();
        let c = composite(&list, [0.0; 3]).unwrap();
        // 0.01² = 1e-4 is not below the threshold, 0.01³ is.
        assert_eq!(c.used, 3);
        assert!(c.transmittance < TERMINATION_T);
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = Scene::new(Vec::new(), [0.2, 0.3, 0.4]);
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), 5, 4, 0.8).unwrap();
        let out = render_image(&scene, &cam, &RenderConfig::default()).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                assert_eq!(out.image.pixel(r, c), [0.2, 0.3, 0.4]);
            }
        }
        assert!(out.transmittance.iter().all(|t| *t == 1.0));
    }

    #[test]
    fn culling_never_changes_the_image() {
        let prims = (0..6)
            .map(|i| {
                let x = i as f64 * 0.4 - 1.0;
                let mut p = GaussianPrimitive::isotropic(
                    Vec3::new(x, 0.3 * x, -0.2 * x),
                    0.15 + 0.05 * i as f64,
                    0.8,
                    [x.abs(), 0.5, 0.2],
                );
                p.log_scale[i % 3] -= 1.0;
                p.rotation = [1.0, 0.2 * x, 0.1, -0.3];
                p
            })
            .collect();
        let scene = Scene::new(prims, [0.1, 0.1, 0.1]);
        let cam = Camera::look_at(Vec3::new(0.4, 0.5, 3.0), Vec3::zeros(), Vec3::y(), 24, 20, 1.0).unwrap();
        let a = render_image(&scene, &cam, &RenderConfig::default()).unwrap();
        let b = render_image(
            &scene,
            &cam,
            &RenderConfig {
                cull: false,
                ..RenderConfig::default()
            },
        )
        .unwrap();
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn single_splat_pixel_matches_direct_formula() {
        let p = GaussianPrimitive::isotropic(Vec3::new(0.1, -0.1, 0.0), 0.4, 0.6, [0.3, 0.6, 0.9]);
        let scene = Scene::new(vec![p.clone()], [0.05, 0.1, 0.15]);
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), 9, 9, 0.8).unwrap();
        let out = render_image(&scene, &cam, &RenderConfig::default()).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                let cp = ray_contribution_point(&cam.ray(r, c), &p).unwrap();
                let a = (p.opacity() * cp.response).min(0.99);
                let px = out.image.pixel(r, c);
                for ch in 0..3 {
                    let expect = if a < ALPHA_MIN {
                        scene.background[ch]
                    } else {
                        [0.3, 0.6, 0.9][ch] * a + scene.background[ch] * (1.0 - a)
                    };
                    assert!((px[ch] - expect).abs() < 1e-12);
                }
            }
        }
    }
}
