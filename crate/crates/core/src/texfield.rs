//! Per-splat RGBA texture fields stored as rank-1 (CP) factored planes.
//!
//! Every plane is the outer product `v⁰ ⊗ v¹` of two factor vectors, one per
//! plane axis. Color factors interleave RGB per texel (`3τ` entries), alpha
//! factors hold one channel (`τ` entries). Queries interpolate each factor
//! in 1-D and multiply, which equals bilinear sampling of the materialized
//! `τ×τ` plane without ever building it.
//!
//! Local coordinates are σ-normalized; the texture covers the box
//! `[-3, 3]³` and anything outside it reads as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Half-extent of the texture box in local (σ) units.
pub const TEXTURE_HALF_EXTENT: f64 = 3.0;

pub const COLOR_CHANNELS: usize = 3;
pub const ALPHA_CHANNELS: usize = 1;

/// The three axis-aligned planes of a tri-plane, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlaneId {
    Xy,
    Xz,
    Yz,
}

impl PlaneId {
    pub const ALL: [PlaneId; 3] = [PlaneId::Xy, PlaneId::Xz, PlaneId::Yz];

    /// Local axes indexed by the `v⁰` and `v¹` factors.
    pub fn axes(self) -> (usize, usize) {
        match self {
            PlaneId::Xy => (0, 1),
            PlaneId::Xz => (0, 2),
            PlaneId::Yz => (1, 2),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Plane whose normal is `axis`.
    pub fn normal_to(axis: usize) -> PlaneId {
        match axis {
            0 => PlaneId::Yz,
            1 => PlaneId::Xz,
            _ => PlaneId::Xy,
        }
    }
}

/// Texture representation chosen for a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureMode {
    Disabled,
    Triplane3d,
    Plane2d,
}

impl TextureMode {
    pub fn code(self) -> u8 {
        match self {
            TextureMode::Disabled => 0,
            TextureMode::Triplane3d => 1,
            TextureMode::Plane2d => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TextureMode::Disabled),
            1 => Some(TextureMode::Triplane3d),
            2 => Some(TextureMode::Plane2d),
            _ => None,
        }
    }
}

impl std::str::FromStr for TextureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disabled" | "none" => Ok(TextureMode::Disabled),
            "triplane3d" | "3d" | "triplane" => Ok(TextureMode::Triplane3d),
            "plane2d" | "2d" => Ok(TextureMode::Plane2d),
            other => Err(Error::InvalidConfig(format!("unknown texture mode '{other}'"))),
        }
    }
}

/// How a realized texture is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TextureLayout {
    Disabled,
    Triplane,
    /// Only this plane is populated and it is read without averaging.
    Single(PlaneId),
}

/// CP-factored RGBA texture of one splat.
///
/// `color` holds `[v⁰_xy, v¹_xy, v⁰_xz, v¹_xz, v⁰_yz, v¹_yz]`, each of
/// length `3τ`; `alpha` holds the same six vectors of length `τ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTexture {
    pub resolution: usize,
    pub layout: TextureLayout,
    pub color: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl LocalTexture {
    pub fn zeros(resolution: usize, layout: TextureLayout) -> Self {
        Self {
            resolution,
            layout,
            color: vec![0.0; 6 * COLOR_CHANNELS * resolution],
            alpha: vec![0.0; 6 * ALPHA_CHANNELS * resolution],
        }
    }

    pub fn disabled() -> Self {
        Self {
            resolution: 0,
            layout: TextureLayout::Disabled,
            color: Vec::new(),
            alpha: Vec::new(),
        }
    }

    /// Builds a texture from factor arrays, validating every length.
    pub fn from_factors(resolution: usize, layout: TextureLayout, color: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        let tex = Self {
            resolution,
            layout,
            color,
            alpha,
        };
        tex.validate()?;
        Ok(tex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layout == TextureLayout::Disabled {
            return Ok(());
        }
        if self.resolution < 2 {
            return Err(Error::InvalidParameter(format!(
                "texture resolution must be at least 2, got {}",
                self.resolution
            )));
        }
        if self.color.len() != 6 * COLOR_CHANNELS * self.resolution
            || self.alpha.len() != 6 * ALPHA_CHANNELS * self.resolution
        {
            return Err(Error::InvalidParameter(format!(
                "factor lengths {}/{} do not match resolution {}",
                self.color.len(),
                self.alpha.len(),
                self.resolution
            )));
        }
        if self.color.iter().chain(&self.alpha).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite texture factor".into()));
        }
        Ok(())
    }

    pub fn is_disabled(&self) -> bool {
        self.layout == TextureLayout::Disabled
    }

    /// Factor `which` (0 or 1) of `plane` over `channels` channels.
    pub fn factor(&self, plane: PlaneId, which: usize, channels: usize) -> &[f64] {
        let len = channels * self.resolution;
        let start = (2 * plane.index() + which) * len;
        let data = if channels == COLOR_CHANNELS {
            &self.color
        } else {
            &self.alpha
        };
        &data[start..start + len]
    }

    /// Zeroes every plane except `keep` and switches to single-plane reads.
    pub fn restrict_to_plane(&mut self, keep: PlaneId) {
        mask_to_plane(&mut self.color, self.resolution * COLOR_CHANNELS, keep);
        mask_to_plane(&mut self.alpha, self.resolution * ALPHA_CHANNELS, keep);
        self.layout = TextureLayout::Single(keep);
    }
}

pub(crate) fn mask_to_plane(data: &mut [f64], factor_len: usize, keep: PlaneId) {
    for plane in PlaneId::ALL {
        if plane != keep {
            let start = 2 * plane.index() * factor_len;
            data[start..start + 2 * factor_len].fill(0.0);
        }
    }
}

/// Grid coordinate in `[0, τ−1]` of a local coordinate in `[-3, 3]`.
#[inline]
pub fn local_to_grid(x: f64, resolution: usize) -> f64 {
    (x + TEXTURE_HALF_EXTENT) / (2.0 * TEXTURE_HALF_EXTENT) * (resolution - 1) as f64
}

/// Interpolation cell `(i, f)` with `u = i + f`, edge-clamped so that
/// `i + 1 < τ`.
#[inline]
pub(crate) fn grid_cell(u: f64, resolution: usize) -> (usize, f64) {
    let max_cell = resolution - 2;
    let i = if u <= 0.0 {
        0
    } else {
        (u.floor() as usize).min(max_cell)
    };
    (i, u - i as f64)
}

#[inline]
fn lerp_channel(factor: &[f64], cell: (usize, f64), channel: usize, channels: usize) -> f64 {
    let (i, f) = cell;
    (1.0 - f) * factor[i * channels + channel] + f * factor[(i + 1) * channels + channel]
}

/// Samples the plane `v0 ⊗ v1` at grid coordinates `(u, v)` per channel.
///
/// `u` and `v` must lie in `[0, τ−1]`; callers discard out-of-box points
/// before getting here.
pub fn cp_plane_query(v0: &[f64], v1: &[f64], u: f64, v: f64, channels: usize) -> Vec<f64> {
    let resolution = v0.len() / channels;
    let cu = grid_cell(u, resolution);
    let cv = grid_cell(v, resolution);
    (0..channels)
        .map(|c| lerp_channel(v0, cu, c, channels) * lerp_channel(v1, cv, c, channels))
        .collect()
}

/// RGBA sample of a local texture.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TextureSample {
    pub color: [f64; 3],
    pub alpha: f64,
}

#[inline]
pub fn in_texture_box(local: &Vec3) -> bool {
    local.iter().all(|c| c.abs() <= TEXTURE_HALF_EXTENT)
}

fn planes_for(layout: TextureLayout) -> &'static [PlaneId] {
    match layout {
        TextureLayout::Disabled => &[],
        TextureLayout::Triplane => &PlaneId::ALL,
        TextureLayout::Single(PlaneId::Xy) => &[PlaneId::Xy],
        TextureLayout::Single(PlaneId::Xz) => &[PlaneId::Xz],
        TextureLayout::Single(PlaneId::Yz) => &[PlaneId::Yz],
    }
}

/// Texture value at a local point: the average of the three plane samples
/// (or the single populated plane in 2-D mode); zero outside the box.
pub fn triplane_texture_query(local: &Vec3, texture: &LocalTexture) -> TextureSample {
    let planes = planes_for(texture.layout);
    if planes.is_empty() || !in_texture_box(local) {
        return TextureSample::default();
    }
    let tau = texture.resolution;
    let weight = 1.0 / planes.len() as f64;
    let mut out = TextureSample::default();
    for &plane in planes {
        let (a0, a1) = plane.axes();
        let cu = grid_cell(local_to_grid(local[a0], tau), tau);
        let cv = grid_cell(local_to_grid(local[a1], tau), tau);
        let c0 = texture.factor(plane, 0, COLOR_CHANNELS);
        let c1 = texture.factor(plane, 1, COLOR_CHANNELS);
        for c in 0..COLOR_CHANNELS {
            out.color[c] += weight * lerp_channel(c0, cu, c, COLOR_CHANNELS) * lerp_channel(c1, cv, c, COLOR_CHANNELS);
        }
        let a0f = texture.factor(plane, 0, ALPHA_CHANNELS);
        let a1f = texture.factor(plane, 1, ALPHA_CHANNELS);
        out.alpha += weight * lerp_channel(a0f, cu, 0, 1) * lerp_channel(a1f, cv, 0, 1);
    }
    out
}

/// Interpolation cells touched by a query; used to detect kinks of the
/// piecewise-bilinear field.
pub(crate) fn query_cells(local: &Vec3, texture: &LocalTexture) -> Option<[(usize, usize); 3]> {
    if texture.is_disabled() || !in_texture_box(local) {
        return None;
    }
    let tau = texture.resolution;
    let mut cells = [(0, 0); 3];
    for (k, plane) in PlaneId::ALL.into_iter().enumerate() {
        let (a0, a1) = plane.axes();
        cells[k] = (
            grid_cell(local_to_grid(local[a0], tau), tau).0,
            grid_cell(local_to_grid(local[a1], tau), tau).0,
        );
    }
    Some(cells)
}

/// Adjoint of [`triplane_texture_query`]. Accumulates factor gradients into
/// `d_color`/`d_alpha` (same layout as the texture) and returns the
/// gradient with respect to the local point.
pub fn triplane_texture_query_backward(
    local: &Vec3,
    texture: &LocalTexture,
    d_out: &TextureSample,
    d_color: &mut [f64],
    d_alpha: &mut [f64],
) -> Vec3 {
    let mut d_local = Vec3::zeros();
    let planes = planes_for(texture.layout);
    if planes.is_empty() || !in_texture_box(local) {
        return d_local;
    }
    let tau = texture.resolution;
    let weight = 1.0 / planes.len() as f64;
    let grid_scale = (tau - 1) as f64 / (2.0 * TEXTURE_HALF_EXTENT);
    for &plane in planes {
        let (a0, a1) = plane.axes();
        let cu = grid_cell(local_to_grid(local[a0], tau), tau);
        let cv = grid_cell(local_to_grid(local[a1], tau), tau);
        let mut d_u = 0.0;
        let mut d_v = 0.0;
        let mut channel_pass = |channels: usize, factors: &[f64], grads: &mut [f64], adj: &[f64]| {
            let len = channels * tau;
            let base0 = 2 * plane.index() * len;
            let base1 = base0 + len;
            let f0 = &factors[base0..base0 + len];
            let f1 = &factors[base1..base1 + len];
            for (c, &g) in adj.iter().enumerate() {
                let g = g * weight;
                if g == 0.0 {
                    continue;
                }
                let l0 = lerp_channel(f0, cu, c, channels);
                let l1 = lerp_channel(f1, cv, c, channels);
                let (i, fu) = cu;
                let (j, fv) = cv;
                grads[base0 + i * channels + c] += g * (1.0 - fu) * l1;
                grads[base0 + (i + 1) * channels + c] += g * fu * l1;
                grads[base1 + j * channels + c] += g * (1.0 - fv) * l0;
                grads[base1 + (j + 1) * channels + c] += g * fv * l0;
                d_u += g * (f0[(i + 1) * channels + c] - f0[i * channels + c]) * l1;
                d_v += g * (f1[(j + 1) * channels + c] - f1[j * channels + c]) * l0;
            }
        };
        channel_pass(COLOR_CHANNELS, &texture.color, d_color, &d_out.color);
        channel_pass(ALPHA_CHANNELS, &texture.alpha, d_alpha, &[d_out.alpha]);
        d_local[a0] += d_u * grid_scale;
        d_local[a1] += d_v * grid_scale;
    }
    d_local
}

fn abs_sum_channel(factor: &[f64], channel: usize, channels: usize) -> f64 {
    factor.iter().skip(channel).step_by(channels).map(|v| v.abs()).sum()
}

/// `(1/τ²)·Σ_planes Σ_{u,v} ‖F(u,v)‖₁` over color and alpha planes, via
/// `Σᵢⱼ|aᵢbⱼ| = (Σ|aᵢ|)(Σ|bⱼ|)` per channel.
pub fn texture_l1_norm(texture: &LocalTexture) -> f64 {
    if texture.is_disabled() {
        return 0.0;
    }
    let tau = texture.resolution;
    let mut total = 0.0;
    for plane in PlaneId::ALL {
        for channels in [COLOR_CHANNELS, ALPHA_CHANNELS] {
            let f0 = texture.factor(plane, 0, channels);
            let f1 = texture.factor(plane, 1, channels);
            for c in 0..channels {
                total += abs_sum_channel(f0, c, channels) * abs_sum_channel(f1, c, channels);
            }
        }
    }
    total / (tau * tau) as f64
}

/// Adds `scale · ∂texture_l1_norm/∂factors` (subgradient 0 at 0).
pub fn texture_l1_norm_backward(texture: &LocalTexture, scale: f64, d_color: &mut [f64], d_alpha: &mut [f64]) {
    if texture.is_disabled() {
        return;
    }
    let tau = texture.resolution;
    let s = scale / (tau * tau) as f64;
    for plane in PlaneId::ALL {
        for (channels, factors, grads) in [
            (COLOR_CHANNELS, &texture.color, &mut *d_color),
            (ALPHA_CHANNELS, &texture.alpha, &mut *d_alpha),
        ] {
            let len = channels * tau;
            let base0 = 2 * plane.index() * len;
            let base1 = base0 + len;
            for c in 0..channels {
                let a = abs_sum_channel(&factors[base0..base0 + len], c, channels);
                let b = abs_sum_channel(&factors[base1..base1 + len], c, channels);
                for t in 0..tau {
                    let k0 = base0 + t * channels + c;
                    let k1 = base1 + t * channels + c;
                    grads[k0] += s * signum0(factors[k0]) * b;
                    grads[k1] += s * signum0(factors[k1]) * a;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Explicit `τ×τ×channels` plane `v0 ⊗ v1`, row index from `v0`.
pub fn materialize_plane(v0: &[f64], v1: &[f64], channels: usize) -> Vec<f64> {
    let tau = v0.len() / channels;
    let mut out = vec![0.0; tau * tau * channels];
    for i in 0..tau {
        for j in 0..tau {
            for c in 0..channels {
                out[(i * tau + j) * channels + c] = v0[i * channels + c] * v1[j * channels + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_texture(rng: &mut ChaCha8Rng, tau: usize) -> LocalTexture {
        let mut t = LocalTexture::zeros(tau, TextureLayout::Triplane);
        t.color.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        t.alpha.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        t
    }

    fn bilinear_materialized(plane: &[f64], tau: usize, channels: usize, u: f64, v: f64) -> Vec<f64> {
        let i = (u.floor() as usize).min(tau - 2);
        let j = (v.floor() as usize).min(tau - 2);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let at = |a: usize, b: usize, c: usize| plane[(a * tau + b) * channels + c];
        (0..channels)
            .map(|c| {
                (1.0 - fu) * (1.0 - fv) * at(i, j, c)
                    + fu * (1.0 - fv) * at(i + 1, j, c)
                    + (1.0 - fu) * fv * at(i, j + 1, c)
                    + fu * fv * at(i + 1, j + 1, c)
            })
            .collect()
    }

    #[test]
    fn constant_and_zero_factors() {
        let v0 = vec![2.0; 12];
        let v1 = vec![3.0; 12];
        for (u, v) in [(0.0, 0.0), (1.3, 2.7), (3.0, 3.0)] {
            assert_eq!(cp_plane_query(&v0, &v1, u, v, 3), vec![6.0; 3]);
        }
        let zero = vec![0.0; 12];
        assert_eq!(cp_plane_query(&v0, &zero, 1.5, 0.5, 3), vec![0.0; 3]);
    }

    #[test]
    fn factored_query_matches_materialized_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let tau = rng.gen_range(2..10);
            let channels = if rng.gen_bool(0.5) { 3 } else { 1 };
            let v0: Vec<f64> = (0..tau * channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v1: Vec<f64> = (0..tau * channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let u = rng.gen_range(0.0..=(tau - 1) as f64);
            let v = rng.gen_range(0.0..=(tau - 1) as f64);
            let plane = materialize_plane(&v0, &v1, channels);
            let a = cp_plane_query(&v0, &v1, u, v, channels);
            let b = bilinear_materialized(&plane, tau, channels, u, v);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_texture_and_out_of_box() {
        let t = LocalTexture::zeros(4, TextureLayout::Triplane);
        assert_eq!(
            triplane_texture_query(&Vec3::new(0.1, 0.2, 0.3), &t),
            TextureSample::default()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = random_texture(&mut rng, 4);
        assert_eq!(
            triplane_texture_query(&Vec3::new(4.0, 0.0, 0.0), &t),
            TextureSample::default()
        );
        assert_eq!(
            triplane_texture_query(&Vec3::new(0.0, 0.0, 0.0), &LocalTexture::disabled()),
            TextureSample::default()
        );
    }

    #[test]
    fn triplane_query_is_mean_of_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let tau = rng.gen_range(2..9);
            let t = random_texture(&mut rng, tau);
            let p = Vec3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let got = triplane_texture_query(&p, &t);
            let mut color = [0.0; 3];
            let mut alpha = 0.0;
            for plane in PlaneId::ALL {
                let (a0, a1) = plane.axes();
                let u = (p[a0] + 3.0) / 6.0 * (tau - 1) as f64;
                let v = (p[a1] + 3.0) / 6.0 * (tau - 1) as f64;
                let mc = materialize_plane(t.factor(plane, 0, 3), t.factor(plane, 1, 3), 3);
                let ma = materialize_plane(t.factor(plane, 0, 1), t.factor(plane, 1, 1), 1);
                let c = bilinear_materialized(&mc, tau, 3, u, v);
                for k in 0..3 {
                    color[k] += c[k] / 3.0;
                }
                alpha += bilinear_materialized(&ma, tau, 1, u, v)[0] / 3.0;
            }
            for k in 0..3 {
                assert!((got.color[k] - color[k]).abs() <= 1e-12);
            }
            assert!((got.alpha - alpha).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_plane_layout_reads_one_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut t = random_texture(&mut rng, 4);
        t.restrict_to_plane(PlaneId::Xz);
        for plane in [PlaneId::Xy, PlaneId::Yz] {
            assert!(t.factor(plane, 0, 3).iter().all(|v| *v == 0.0));
            assert!(t.factor(plane, 1, 1).iter().all(|v| *v == 0.0));
        }
        let p = Vec3::new(0.4, -1.0, 2.0);
        let got = triplane_texture_query(&p, &t);
        let u = local_to_grid(p.x, 4);
        let v = local_to_grid(p.z, 4);
        let expect = cp_plane_query(t.factor(PlaneId::Xz, 0, 3), t.factor(PlaneId::Xz, 1, 3), u, v, 3);
        for k in 0..3 {
            assert!((got.color[k] - expect[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn l1_norm_factored_identity() {
        // One nonzero plane/channel: v0 abs-sum A, v1 abs-sum B.
        let mut t = LocalTexture::zeros(4, TextureLayout::Triplane);
        let a = [1.0, -1.0, 0.5, 2.0];
        let b = [0.25, 0.0, -3.0, 1.0];
        t.alpha[..4].copy_from_slice(&a);
        t.alpha[4..8].copy_from_slice(&b);
        let expect = 4.5 * 4.25 / 16.0;
        assert!((texture_l1_norm(&t) - expect).abs() < 1e-15);
        assert_eq!(texture_l1_norm(&LocalTexture::zeros(4, TextureLayout::Triplane)), 0.0);
    }

    #[test]
    fn l1_norm_matches_materialized_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let tau = rng.gen_range(2..9);
            let t = random_texture(&mut rng, tau);
            let mut direct = 0.0;
            for plane in PlaneId::ALL {
                for ch in [3, 1] {
                    let m = materialize_plane(t.factor(plane, 0, ch), t.factor(plane, 1, ch), ch);
                    direct += m.iter().map(|v| v.abs()).sum::<f64>();
                }
            }
            direct /= (tau * tau) as f64;
            assert!((texture_l1_norm(&t) - direct).abs() <= 1e-10);
        }
    }

    #[test]
    fn query_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for layout in [TextureLayout::Triplane, TextureLayout::Single(PlaneId::Xy)] {
            let tau = 5;
            let mut t = random_texture(&mut rng, tau);
            t.layout = layout;
            let p = Vec3::new(0.37, -1.21, 2.02);
            let w = TextureSample {
                color: [0.3, -0.7, 1.1],
                alpha: 0.9,
            };
            let f = |t: &LocalTexture, p: &Vec3| {
                let s = triplane_texture_query(p, t);
                s.color[0] * w.color[0] + s.color[1] * w.color[1] + s.color[2] * w.color[2] + s.alpha * w.alpha
            };
            let mut dc = vec![0.0; t.color.len()];
            let mut da = vec![0.0; t.alpha.len()];
            let dp = triplane_texture_query_backward(&p, &t, &w, &mut dc, &mut da);
            let h = 1e-6;
            for k in 0..t.color.len() {
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp.color[k] += h;
                tm.color[k] -= h;
                let fd = (f(&tp, &p) - f(&tm, &p)) / (2.0 * h);
                assert!((fd - dc[k]).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
            for k in 0..t.alpha.len() {
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp.alpha[k] += h;
                tm.alpha[k] -= h;
                let fd = (f(&tp, &p) - f(&tm, &p)) / (2.0 * h);
                assert!((fd - da[k]).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
            for axis in 0..3 {
                let (mut pp, mut pm) = (p, p);
                pp[axis] += h;
                pm[axis] -= h;
                let fd = (f(&t, &pp) - f(&t, &pm)) / (2.0 * h);
                assert!((fd - dp[axis]).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn l1_norm_gradient_and_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = random_texture(&mut rng, 4);
        let mut dc = vec![0.0; t.color.len()];
        let mut da = vec![0.0; t.alpha.len()];
        texture_l1_norm_backward(&t, 1.0, &mut dc, &mut da);
        let h = 1e-7;
        for k in 0..t.color.len() {
            let mut tp = t.clone();
            let mut tm = t.clone();
            tp.color[k] += h;
            tm.color[k] -= h;
            let fd = (texture_l1_norm(&tp) - texture_l1_norm(&tm)) / (2.0 * h);
            assert!((fd - dc[k]).abs() < 1e-6);
        }
        let mut doubled = t.clone();
        doubled
            .color
            .iter_mut()
            .chain(doubled.alpha.iter_mut())
            .for_each(|v| *v *= 2.0);
        assert!((texture_l1_norm(&doubled) - 4.0 * texture_l1_norm(&t)).abs() < 1e-12);
    }

    #[test]
    fn factor_length_validation() {
        assert!(LocalTexture::from_factors(4, TextureLayout::Triplane, vec![0.0; 71], vec![0.0; 24]).is_err());
        assert!(LocalTexture::from_factors(4, TextureLayout::Triplane, vec![0.0; 72], vec![0.0; 24]).is_ok());
        assert!(LocalTexture::from_factors(1, TextureLayout::Triplane, vec![0.0; 18], vec![0.0; 6]).is_err());
    }
}
