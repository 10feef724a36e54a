//! Reverse-mode gradients of the full render-and-loss pipeline, written as
//! hand adjoints, plus a finite-difference verification harness.
//!
//! The backward pass runs in two stages. Pixels are processed in parallel
//! and accumulate per-splat adjoints of the local frame, opacity, base
//! color and realized texture factors. A sequential per-splat stage then
//! maps those onto the stored parameters: quaternion, log-scale, logit,
//! SH coefficients, direct factors or the neural field.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::View;
use crate::error::{Error, Result};
use crate::geom::{
    contribution_backward, normalize_backward, quat_to_matrix_backward, sh_basis, sh_basis_grad, Mat3, Vec3,
};
use crate::image::Image;
use crate::optim::{photometric_loss_with_grad, LossConfig, PhotometricKind};
use crate::render::{shade, trace_ray, Hit, Prepared, Reduction, RenderConfig};
use crate::scene::{ParamClass, ParameterSet, Scene};
use crate::texfield::{
    mask_to_plane, query_cells, signum0, texture_l1_norm, texture_l1_norm_backward, triplane_texture_query_backward,
    TextureMode, TextureSample, ALPHA_CHANNELS, COLOR_CHANNELS,
};

/// Components of the scalar training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub photometric: f64,
    pub sparsity: f64,
}

/// Layout of one splat's pixel-stage accumulator.
#[derive(Clone, Copy)]
struct AccumLayout {
    color_len: usize,
    alpha_len: usize,
}

const ACC_CENTER: usize = 0;
const ACC_LOCAL: usize = 3;
const ACC_OPACITY: usize = 12;
const ACC_BASE: usize = 13;
const ACC_FACTORS: usize = 16;

impl AccumLayout {
    fn stride(&self) -> usize {
        ACC_FACTORS + self.color_len + self.alpha_len
    }
}

struct ViewForward {
    prepared: Prepared,
    /// Sorted hits per pixel, row-major.
    hits: Vec<Vec<Hit>>,
    used: Vec<usize>,
    transmittance: Vec<f64>,
    image: Image,
    textures_active: bool,
}

fn textures_active(scene: &Scene, render: &RenderConfig) -> bool {
    render.textures && scene.model.textured()
}

/// Kept hits, used counts, transmittance and colors of one image row.
type ForwardRow = (Vec<Vec<Hit>>, Vec<usize>, Vec<f64>, Vec<f64>);

fn forward_view(scene: &Scene, view: &View, render: &RenderConfig) -> Result<ViewForward> {
    let camera = &view.camera;
    if view.target.width != camera.width || view.target.height != camera.height {
        return Err(Error::DimensionMismatch(format!(
            "view '{}': target does not match camera resolution",
            view.name
        )));
    }
    let prepared = Prepared::new(scene, camera, render)?;
    let (w, h) = (camera.width, camera.height);
    let rows: Vec<ForwardRow> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut hits_row = Vec::with_capacity(w);
            let mut used = Vec::with_capacity(w);
            let mut trans = Vec::with_capacity(w);
            let mut pixels = Vec::with_capacity(3 * w);
            for col in 0..w {
                let mut hits = Vec::new();
                trace_ray(&prepared, &camera.ray(row, col), &mut hits);
                let c = shade(&prepared, &hits);
                pixels.extend_from_slice(&c.color);
                used.push(c.used);
                trans.push(c.transmittance);
                hits.truncate(c.used);
                hits_row.push(hits);
            }
            (hits_row, used, trans, pixels)
        })
        .collect();
    let mut hits = Vec::with_capacity(w * h);
    let mut used = Vec::with_capacity(w * h);
    let mut transmittance = Vec::with_capacity(w * h);
    let mut data = Vec::with_capacity(3 * w * h);
    for (hr, ur, tr, pr) in rows {
        hits.extend(hr);
        used.extend(ur);
        transmittance.extend(tr);
        data.extend(pr);
    }
    Ok(ViewForward {
        prepared,
        hits,
        used,
        transmittance,
        image: Image::from_data(w, h, data)?,
        textures_active: textures_active(scene, render),
    })
}

fn sparsity_of(forward: &ViewForward) -> f64 {
    if !forward.textures_active || forward.prepared.textures.is_empty() {
        return 0.0;
    }
    let n = forward.prepared.textures.len() as f64;
    forward.prepared.textures.iter().map(texture_l1_norm).sum::<f64>() / n
}

fn view_loss(forward: &ViewForward, view: &View, loss: &LossConfig, index: usize) -> Result<(LossBreakdown, Vec<f64>)> {
    let (photometric, d_image) = photometric_loss_with_grad(&forward.image, &view.target, loss)?;
    let sparsity = sparsity_of(forward);
    let total = loss.photometric_weight * photometric + loss.sparsity_weight * sparsity;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss { view: index });
    }
    Ok((
        LossBreakdown {
            total,
            photometric,
            sparsity,
        },
        d_image,
    ))
}

fn check_views(views: &[View]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::InvalidInput("at least one view is required".into()));
    }
    Ok(())
}

/// Loss of `scene` averaged over `views`, without gradients.
pub fn evaluate_loss(scene: &Scene, views: &[View], loss: &LossConfig, render: &RenderConfig) -> Result<LossBreakdown> {
    check_views(views)?;
    let mut sum = LossBreakdown::default();
    for (i, v) in views.iter().enumerate() {
        let f = forward_view(scene, v, render)?;
        let (l, _) = view_loss(&f, v, loss, i)?;
        sum.total += l.total;
        sum.photometric += l.photometric;
        sum.sparsity += l.sparsity;
    }
    let n = views.len() as f64;
    Ok(LossBreakdown {
        total: sum.total / n,
        photometric: sum.photometric / n,
        sparsity: sum.sparsity / n,
    })
}

/// Mean over views of `photometric + sparsity_weight · sparsity`, and its
/// exact gradient with respect to every parameter of `scene`.
pub fn loss_and_gradients(
    scene: &Scene,
    views: &[View],
    loss: &LossConfig,
    render: &RenderConfig,
) -> Result<(f64, ParameterSet)> {
    let (l, g) = loss_breakdown_and_gradients(scene, views, loss, render)?;
    Ok((l.total, g))
}

pub fn loss_breakdown_and_gradients(
    scene: &Scene,
    views: &[View],
    loss: &LossConfig,
    render: &RenderConfig,
) -> Result<(LossBreakdown, ParameterSet)> {
    check_views(views)?;
    scene.validate()?;
    let mut grads = scene.parameters().zeros_like();
    let mut sum = LossBreakdown::default();
    for (i, view) in views.iter().enumerate() {
        let forward = forward_view(scene, view, render)?;
        let (l, mut d_image) = view_loss(&forward, view, loss, i)?;
        d_image.iter_mut().for_each(|g| *g *= loss.photometric_weight);
        sum.total += l.total;
        sum.photometric += l.photometric;
        sum.sparsity += l.sparsity;
        let mut view_grads = grads.zeros_like();
        backward_view(scene, view, &forward, &d_image, loss, render.reduction, &mut view_grads)?;
        grads.add_scaled(&view_grads, 1.0);
    }
    let n = views.len() as f64;
    grads.scale(1.0 / n);
    Ok((
        LossBreakdown {
            total: sum.total / n,
            photometric: sum.photometric / n,
            sparsity: sum.sparsity / n,
        },
        grads,
    ))
}

/// Adjoint of one pixel's compositing, scattered into per-splat slots via
/// `add(splat, offset, value)`.
fn backward_pixel(
    prepared: &Prepared,
    ray_origin: &Vec3,
    ray_dir: &Vec3,
    hits: &[Hit],
    transmittance_final: f64,
    d_pixel: [f64; 3],
    layout: AccumLayout,
    textures_active: bool,
    add: &mut impl FnMut(usize, usize, f64),
) {
    if hits.is_empty() || d_pixel == [0.0; 3] {
        return;
    }
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let mut t_before = Vec::with_capacity(hits.len());
    let mut t = 1.0;
    for h in hits {
        t_before.push(t);
        t *= 1.0 - h.response.effective_alpha;
    }
    let max_alpha = prepared.config.max_alpha;
    let mut suffix = dot(d_pixel, prepared.background) * transmittance_final;
    let mut d_color_factors = vec![0.0; layout.color_len];
    let mut d_alpha_factors = vec![0.0; layout.alpha_len];
    for (k, h) in hits.iter().enumerate().rev() {
        let a = h.response.effective_alpha;
        let tk = t_before[k];
        let color = h.response.color();
        let dc_dot = dot(d_pixel, color);
        let d_alpha = dc_dot * tk - suffix / (1.0 - a);
        suffix += dc_dot * a * tk;

        let splat = &prepared.splats[h.index];
        let base = h.response.base_color;
        let tex = h.response.tex_color;
        let mut d_tex = TextureSample::default();
        for c in 0..3 {
            if base[c] + tex[c] > 0.0 {
                let g = d_pixel[c] * a * tk;
                add(h.index, ACC_BASE + c, g);
                d_tex.color[c] = g;
            }
        }
        let d_raw = if h.raw_alpha > 0.0 && h.raw_alpha < max_alpha {
            d_alpha
        } else {
            0.0
        };
        d_tex.alpha = d_raw;
        add(h.index, ACC_OPACITY, d_raw * h.cp.response);
        let d_response = d_raw * splat.opacity;
        let mut d_local = h.cp.local * (-h.cp.response * d_response);
        if textures_active {
            d_color_factors.iter_mut().for_each(|v| *v = 0.0);
            d_alpha_factors.iter_mut().for_each(|v| *v = 0.0);
            let tex = &prepared.textures[h.index];
            d_local +=
                triplane_texture_query_backward(&h.cp.local, tex, &d_tex, &mut d_color_factors, &mut d_alpha_factors);
            for (i, g) in d_color_factors.iter().enumerate() {
                if *g != 0.0 {
                    add(h.index, ACC_FACTORS + i, *g);
                }
            }
            for (i, g) in d_alpha_factors.iter().enumerate() {
                if *g != 0.0 {
                    add(h.index, ACC_FACTORS + layout.color_len + i, *g);
                }
            }
        }
        let (d_o, d_d) = contribution_backward(&h.o_l, &h.d_l, &h.cp, &d_local);
        let offset = ray_origin - splat.center;
        let d_center = -(splat.local.transpose() * d_o);
        for i in 0..3 {
            add(h.index, ACC_CENTER + i, d_center[i]);
            for j in 0..3 {
                add(h.index, ACC_LOCAL + 3 * i + j, d_o[i] * offset[j] + d_d[i] * ray_dir[j]);
            }
        }
    }
}

fn atomic_add(slot: &AtomicU64, value: f64) {
    let mut cur = slot.load(Ordering::Relaxed);
    loop {
        let next = (f64::from_bits(cur) + value).to_bits();
        match slot.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => break,
            Err(actual) => cur = actual,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_view(
    scene: &Scene,
    view: &View,
    forward: &ViewForward,
    d_image: &[f64],
    loss: &LossConfig,
    reduction: Reduction,
    grads: &mut ParameterSet,
) -> Result<()> {
    let camera = &view.camera;
    let (w, h) = (camera.width, camera.height);
    let n = scene.primitives.len();
    let tau = scene.model.resolution;
    let layout = if forward.textures_active {
        AccumLayout {
            color_len: 6 * COLOR_CHANNELS * tau,
            alpha_len: 6 * ALPHA_CHANNELS * tau,
        }
    } else {
        AccumLayout {
            color_len: 0,
            alpha_len: 0,
        }
    };
    let stride = layout.stride();
    let prepared = &forward.prepared;
    let pixel_pass = |row: usize, add: &mut dyn FnMut(usize, usize, f64)| {
        let mut add = |k: usize, off: usize, v: f64| add(k, off, v);
        for col in 0..w {
            let p = row * w + col;
            let ray = camera.ray(row, col);
            let d_pixel = [d_image[3 * p], d_image[3 * p + 1], d_image[3 * p + 2]];
            backward_pixel(
                prepared,
                &ray.origin,
                &ray.direction,
                &forward.hits[p],
                forward.transmittance[p],
                d_pixel,
                layout,
                forward.textures_active,
                &mut add,
            );
        }
    };
    let acc: Vec<f64> = match reduction {
        Reduction::Reference => {
            let rows: Vec<Vec<f64>> = (0..h)
                .into_par_iter()
                .map(|row| {
                    let mut buf = vec![0.0; n * stride];
                    pixel_pass(row, &mut |k, off, v| buf[k * stride + off] += v);
                    buf
                })
                .collect();
            let mut total = vec![0.0; n * stride];
            for buf in rows {
                for (t, b) in total.iter_mut().zip(buf) {
                    *t += b;
                }
            }
            total
        }
        Reduction::Fast => {
            let slots: Vec<AtomicU64> = (0..n * stride).map(|_| AtomicU64::new(0f64.to_bits())).collect();
            (0..h).into_par_iter().for_each(|row| {
                pixel_pass(row, &mut |k, off, v| atomic_add(&slots[k * stride + off], v));
            });
            slots.into_iter().map(|s| f64::from_bits(s.into_inner())).collect()
        }
    };
    splat_backward(scene, view, forward, &acc, layout, loss, grads)
}

fn splat_backward(
    scene: &Scene,
    view: &View,
    forward: &ViewForward,
    acc: &[f64],
    layout: AccumLayout,
    loss: &LossConfig,
    grads: &mut ParameterSet,
) -> Result<()> {
    let eye = view.camera.eye();
    let n = scene.primitives.len();
    let stride = layout.stride();
    let sh_len = scene.sh_coefficients();
    let sparsity_scale = loss.sparsity_weight / n.max(1) as f64;
    let plane2d = scene.model.texture_mode == TextureMode::Plane2d;
    let neural = forward.textures_active && scene.model.neural;
    let mut d_color_planes = Vec::new();
    let mut d_alpha_planes = Vec::new();
    let mut d_color_decoder = Vec::new();
    let mut d_alpha_decoder = Vec::new();
    if neural {
        d_color_planes = vec![0.0; grads.get(ParamClass::ColorPlanes).len()];
        d_alpha_planes = vec![0.0; grads.get(ParamClass::AlphaPlanes).len()];
        d_color_decoder = vec![0.0; grads.get(ParamClass::ColorDecoder).len()];
        d_alpha_decoder = vec![0.0; grads.get(ParamClass::AlphaDecoder).len()];
    }

    for k in 0..n {
        let a = &acc[k * stride..(k + 1) * stride];
        let prim = &scene.primitives[k];
        let splat = &forward.prepared.splats[k];
        let mut d_center = Vec3::new(a[ACC_CENTER], a[ACC_CENTER + 1], a[ACC_CENTER + 2]);
        let d_local = Mat3::from_row_slice(&a[ACC_LOCAL..ACC_LOCAL + 9]);

        // A = S⁻¹Rᵀ, so A_ij = R_ji / s_i.
        let scale = prim.scale();
        let mut d_rot = Mat3::zeros();
        let mut d_log_scale = Vec3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                d_rot[(j, i)] += d_local[(i, j)] / scale[i];
                d_log_scale[i] -= d_local[(i, j)] * splat.local[(i, j)];
            }
        }

        let alpha = splat.opacity;
        grads.get_mut(ParamClass::Opacity)[k] += a[ACC_OPACITY] * alpha * (1.0 - alpha);

        let offset = prim.center - eye;
        let dist = offset.norm();
        let dir = if dist > 0.0 {
            offset / dist
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        let mut d_raw = [0.0; 3];
        for c in 0..3 {
            if splat.base_raw[c] > 0.0 {
                d_raw[c] = a[ACC_BASE + c];
            }
        }
        if d_raw != [0.0; 3] {
            let degree = prim.sh_degree();
            let basis = sh_basis(degree, &dir);
            let basis_grad = sh_basis_grad(degree, &dir);
            let sh_grads = &mut grads.get_mut(ParamClass::Sh)[3 * sh_len * k..3 * sh_len * (k + 1)];
            let mut d_dir = Vec3::zeros();
            for (j, coeff) in prim.sh.iter().enumerate() {
                for c in 0..3 {
                    sh_grads[3 * j + c] += d_raw[c] * basis[j];
                    let s = d_raw[c] * coeff[c];
                    for x in 0..3 {
                        d_dir[x] += s * basis_grad[j][x];
                    }
                }
            }
            d_center += normalize_backward(&dir, dist, &d_dir);
        }

        if forward.textures_active {
            let tex = &forward.prepared.textures[k];
            let mut d_color = a[ACC_FACTORS..ACC_FACTORS + layout.color_len].to_vec();
            let mut d_alpha = a[ACC_FACTORS + layout.color_len..].to_vec();
            texture_l1_norm_backward(tex, sparsity_scale, &mut d_color, &mut d_alpha);
            if plane2d {
                let keep = scene.plane2d_selection(k);
                mask_to_plane(&mut d_color, COLOR_CHANNELS * scene.model.resolution, keep);
                mask_to_plane(&mut d_alpha, ALPHA_CHANNELS * scene.model.resolution, keep);
            }
            if neural {
                let field = scene
                    .field
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("neural mode requires a field".into()))?;
                let query = scene.decode_query(k, &view.camera);
                let (_, trace) = field.decode_traced(&query)?;
                let g = field.decode_backward(
                    &query,
                    &trace,
                    &d_color,
                    &d_alpha,
                    &mut d_color_planes,
                    &mut d_alpha_planes,
                    &mut d_color_decoder,
                    &mut d_alpha_decoder,
                );
                d_center += g.center;
                d_center += normalize_backward(&dir, dist, &g.view_dir);
                d_rot += g.rotation;
            } else {
                let lc = layout.color_len;
                let la = layout.alpha_len;
                for (dst, src) in grads.get_mut(ParamClass::ColorFactors)[lc * k..lc * (k + 1)]
                    .iter_mut()
                    .zip(&d_color)
                {
                    *dst += src;
                }
                for (dst, src) in grads.get_mut(ParamClass::AlphaFactors)[la * k..la * (k + 1)]
                    .iter_mut()
                    .zip(&d_alpha)
                {
                    *dst += src;
                }
            }
        }

        let d_q = quat_to_matrix_backward(prim.rotation, &d_rot);
        for i in 0..3 {
            grads.get_mut(ParamClass::Center)[3 * k + i] += d_center[i];
            grads.get_mut(ParamClass::LogScale)[3 * k + i] += d_log_scale[i];
        }
        for i in 0..4 {
            grads.get_mut(ParamClass::Rotation)[4 * k + i] += d_q[i];
        }
    }
    if neural {
        for (class, src) in [
            (ParamClass::ColorPlanes, &d_color_planes),
            (ParamClass::AlphaPlanes, &d_alpha_planes),
            (ParamClass::ColorDecoder, &d_color_decoder),
            (ParamClass::AlphaDecoder, &d_alpha_decoder),
        ] {
            for (dst, s) in grads.get_mut(class).iter_mut().zip(src) {
                *dst += s;
            }
        }
    }
    Ok(())
}

/// Hash of every discrete choice the loss makes: hit lists and their
/// order, clamp states, texture cells, decoder rectifier patterns, 2-D
/// plane selections and the signs fed to absolute values. Two parameter
/// vectors with equal signatures lie on the same smooth piece of the loss.
pub fn branch_signature(scene: &Scene, views: &[View], loss: &LossConfig, render: &RenderConfig) -> Result<u64> {
    let mut hasher = DefaultHasher::new();
    for view in views {
        let f = forward_view(scene, view, render)?;
        let max_alpha = render.max_alpha;
        for (p, hits) in f.hits.iter().enumerate() {
            f.used[p].hash(&mut hasher);
            for h in hits {
                h.index.hash(&mut hasher);
                h.cp.near_clamped.hash(&mut hasher);
                let clamp_state = if h.raw_alpha <= 0.0 {
                    0u8
                } else if h.raw_alpha >= max_alpha {
                    2
                } else {
                    1
                };
                clamp_state.hash(&mut hasher);
                for c in 0..3 {
                    (h.response.base_color[c] + h.response.tex_color[c] > 0.0).hash(&mut hasher);
                }
                query_cells(&h.cp.local, &f.prepared.textures[h.index]).hash(&mut hasher);
            }
        }
        for (k, s) in f.prepared.splats.iter().enumerate() {
            s.degenerate.hash(&mut hasher);
            s.base_raw.map(|v| v > 0.0).hash(&mut hasher);
            if f.textures_active {
                if scene.model.texture_mode == TextureMode::Plane2d {
                    scene.plane2d_selection(k).hash(&mut hasher);
                }
                if scene.model.neural {
                    if let Some(field) = &scene.field {
                        let (_, trace) = field.decode_traced(&scene.decode_query(k, &view.camera))?;
                        field.trace_signature(&trace, &mut hasher);
                    }
                }
                if loss.sparsity_weight != 0.0 {
                    let tex = &f.prepared.textures[k];
                    for v in tex.color.iter().chain(&tex.alpha) {
                        (signum0(*v) as i8).hash(&mut hasher);
                    }
                }
            }
        }
        if loss.photometric == PhotometricKind::L1 && loss.photometric_weight != 0.0 {
            for (r, t) in f.image.data.iter().zip(&view.target.data) {
                (signum0(r - t) as i8).hash(&mut hasher);
            }
        }
    }
    Ok(hasher.finish())
}

/// One parameter coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Coordinate {
    pub class: ParamClass,
    pub index: usize,
}

/// Stratified sample of at least `count` coordinates (when that many
/// exist) spread evenly across the non-empty parameter classes.
pub fn sample_coordinates(params: &ParameterSet, count: usize, rng: &mut impl Rng) -> Vec<Coordinate> {
    let classes: Vec<ParamClass> = ParamClass::ALL
        .into_iter()
        .filter(|c| !params.get(*c).is_empty())
        .collect();
    let pools: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| {
            let mut idx: Vec<usize> = (0..params.get(*c).len()).collect();
            idx.shuffle(rng);
            idx
        })
        .collect();
    let mut out = Vec::new();
    let mut round = 0;
    while out.len() < count && pools.iter().any(|p| round < p.len()) {
        for (ci, pool) in pools.iter().enumerate() {
            if round < pool.len() && out.len() < count {
                out.push(Coordinate {
                    class: classes[ci],
                    index: pool[round],
                });
            }
        }
        round += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub samples: usize,
    pub max_rel_err: f64,
    pub excluded_count: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub classes: Vec<ClassReport>,
    pub samples: usize,
    pub excluded: usize,
    pub max_rel_err: f64,
    pub passed: bool,
    pub elapsed_ms: f64,
}

impl GradCheckReport {
    /// Fixed-width text table, one row per parameter class.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<15} {:>8} {:>14} {:>9} {:>9}\n",
            "class", "samples", "max_rel_err", "excluded", "failures"
        );
        for c in &self.classes {
            s += &format!(
                "{:<15} {:>8} {:>14.3e} {:>9} {:>9}\n",
                c.name, c.samples, c.max_rel_err, c.excluded_count, c.failures
            );
        }
        s += &format!(
            "total {} checked, {} excluded, max rel err {:.3e} (tol {:.1e}, h {:.1e}): {}\n",
            self.samples,
            self.excluded,
            self.max_rel_err,
            self.tol,
            self.h,
            if self.passed { "PASS" } else { "FAIL" }
        );
        s
    }
}

/// Denominator floor of the relative error, so near-zero gradients are
/// compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients with central differences
/// `(L(θ+h) − L(θ−h)) / 2h` at `coordinates`. Coordinates whose
/// perturbation changes the [`branch_signature`] straddle a kink and are
/// excluded (and counted) instead of compared.
pub fn finite_difference_check(
    scene: &Scene,
    view: &View,
    coordinates: &[Coordinate],
    h: f64,
    tol: f64,
    loss: &LossConfig,
    render: &RenderConfig,
) -> Result<GradCheckReport> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    let start = Instant::now();
    let views = std::slice::from_ref(view);
    let (_, grads) = loss_and_gradients(scene, views, loss, render)?;
    let base_sig = branch_signature(scene, views, loss, render)?;
    let params = scene.parameters();
    let mut per_class: Vec<ClassReport> = ParamClass::ALL
        .iter()
        .map(|c| ClassReport {
            name: c.name().to_string(),
            samples: 0,
            max_rel_err: 0.0,
            excluded_count: 0,
            failures: 0,
        })
        .collect();
    let mut probe = scene.clone();
    for coord in coordinates {
        let Some(&theta) = params.get(coord.class).get(coord.index) else {
            return Err(Error::InvalidInput(format!("coordinate {:?} out of range", coord)));
        };
        let mut eval = |value: f64| -> Result<(f64, u64)> {
            let mut p = params.clone();
            p.get_mut(coord.class)[coord.index] = value;
            probe.set_parameters(&p)?;
            let l = evaluate_loss(&probe, views, loss, render)?.total;
            Ok((l, branch_signature(&probe, views, loss, render)?))
        };
        let (lp, sp) = eval(theta + h)?;
        let (lm, sm) = eval(theta - h)?;
        let report = &mut per_class[coord.class.index()];
        if sp != base_sig || sm != base_sig {
            report.excluded_count += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let err = relative_error(grads.get(coord.class)[coord.index], numeric);
        report.samples += 1;
        report.max_rel_err = report.max_rel_err.max(err);
        if !(err <= tol) {
            report.failures += 1;
        }
    }
    let classes: Vec<ClassReport> = per_class
        .into_iter()
        .filter(|c| c.samples + c.excluded_count > 0)
        .collect();
    let samples = classes.iter().map(|c| c.samples).sum();
    let excluded = classes.iter().map(|c| c.excluded_count).sum();
    let max_rel_err = classes.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let passed = classes.iter().all(|c| c.failures == 0);
    Ok(GradCheckReport {
        h,
        tol,
        classes,
        samples,
        excluded,
        max_rel_err,
        passed,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
