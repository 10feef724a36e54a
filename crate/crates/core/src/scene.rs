//! Scene container: primitives, the texture model (direct factors or a
//! global neural field), flattened parameter views and optimizer state.

use std::fmt;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, RigidTransform};
use crate::error::{Error, Result};
use crate::geom::{view_direction, GaussianPrimitive, Mat3, Vec3};
use crate::neuralfield::{Aabb, DecodeQuery, FieldConfig, GlobalField};
use crate::texfield::{LocalTexture, PlaneId, TextureLayout, TextureMode, ALPHA_CHANNELS, COLOR_CHANNELS};

/// Trainable parameter groups. Each has its own learning rate and its own
/// block in a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Center,
    Rotation,
    LogScale,
    Opacity,
    Sh,
    ColorFactors,
    AlphaFactors,
    ColorPlanes,
    AlphaPlanes,
    ColorDecoder,
    AlphaDecoder,
}

impl ParamClass {
    pub const ALL: [ParamClass; 11] = [
        ParamClass::Center,
        ParamClass::Rotation,
        ParamClass::LogScale,
        ParamClass::Opacity,
        ParamClass::Sh,
        ParamClass::ColorFactors,
        ParamClass::AlphaFactors,
        ParamClass::ColorPlanes,
        ParamClass::AlphaPlanes,
        ParamClass::ColorDecoder,
        ParamClass::AlphaDecoder,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Center => "center",
            ParamClass::Rotation => "rotation",
            ParamClass::LogScale => "log_scale",
            ParamClass::Opacity => "opacity",
            ParamClass::Sh => "sh",
            ParamClass::ColorFactors => "color_factors",
            ParamClass::AlphaFactors => "alpha_factors",
            ParamClass::ColorPlanes => "color_planes",
            ParamClass::AlphaPlanes => "alpha_planes",
            ParamClass::ColorDecoder => "color_decoder",
            ParamClass::AlphaDecoder => "alpha_decoder",
        }
    }

    /// Classes that only influence the image through textures.
    pub fn is_texture(self) -> bool {
        matches!(
            self,
            ParamClass::ColorFactors
                | ParamClass::AlphaFactors
                | ParamClass::ColorPlanes
                | ParamClass::AlphaPlanes
                | ParamClass::ColorDecoder
                | ParamClass::AlphaDecoder
        )
    }
}

impl fmt::Display for ParamClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Flat views over every trainable value, one block per [`ParamClass`].
/// Gradients and optimizer moments share this shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    blocks: [Vec<f64>; 11],
}

impl ParameterSet {
    pub fn get(&self, class: ParamClass) -> &[f64] {
        &self.blocks[class.index()]
    }

    pub fn get_mut(&mut self, class: ParamClass) -> &mut Vec<f64> {
        &mut self.blocks[class.index()]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self.blocks.clone().map(|b| vec![0.0; b.len()]),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &ParameterSet) -> bool {
        self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.len() == b.len())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ParameterSet, scale: f64) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.blocks.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn max_abs_diff(&self, other: &ParameterSet) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Adaptive-moment optimizer state carried inside a scene so checkpoints
/// can resume training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub iteration: usize,
    /// Update count per parameter class (bias correction).
    pub steps: [u64; 11],
    pub m: ParameterSet,
    pub v: ParameterSet,
}

impl TrainState {
    pub fn new(shape: &ParameterSet) -> Self {
        Self {
            iteration: 0,
            steps: [0; 11],
            m: shape.zeros_like(),
            v: shape.zeros_like(),
        }
    }
}

/// Texture model of a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub texture_mode: TextureMode,
    /// Decode textures with the global field instead of optimizing
    /// per-splat factors directly.
    pub neural: bool,
    /// Local texture resolution τ.
    pub resolution: usize,
    pub field: FieldConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::disabled()
    }
}

impl ModelConfig {
    pub fn disabled() -> Self {
        Self {
            texture_mode: TextureMode::Disabled,
            neural: false,
            resolution: 4,
            field: FieldConfig::default(),
        }
    }

    pub fn neural(mode: TextureMode, field: FieldConfig) -> Self {
        Self {
            texture_mode: mode,
            neural: true,
            resolution: field.texture_resolution,
            field,
        }
    }

    pub fn direct(mode: TextureMode, resolution: usize) -> Self {
        Self {
            texture_mode: mode,
            neural: false,
            resolution,
            field: FieldConfig {
                texture_resolution: resolution,
                ..FieldConfig::default()
            },
        }
    }

    pub fn textured(&self) -> bool {
        self.texture_mode != TextureMode::Disabled
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub model: ModelConfig,
    /// Per-splat factors, populated in direct (non-neural) texture modes.
    /// Layout is always tri-plane; 2-D mode masks at realization time.
    pub direct_textures: Vec<LocalTexture>,
    pub field: Option<GlobalField>,
    pub background: [f64; 3],
    pub train_state: Option<TrainState>,
}

impl Scene {
    /// Untextured scene.
    pub fn new(primitives: Vec<GaussianPrimitive>, background: [f64; 3]) -> Self {
        Self {
            primitives,
            model: ModelConfig::disabled(),
            direct_textures: Vec::new(),
            field: None,
            background,
            train_state: None,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn sh_coefficients(&self) -> usize {
        self.primitives.first().map_or(1, |p| p.sh.len())
    }

    /// Replaces the texture model. Direct factors start with `v⁰ ≈ 1` and
    /// `v¹ = 0`; neural fields start with zero `v¹` outputs. Either way the
    /// initial textures are exactly zero. Resets optimizer state.
    pub fn install_textures(&mut self, model: ModelConfig, rng: &mut impl Rng) -> Result<()> {
        let mut model = model;
        model.field.texture_resolution = model.resolution;
        self.direct_textures.clear();
        self.field = None;
        self.train_state = None;
        if model.textured() {
            if model.resolution < 2 {
                return Err(Error::InvalidConfig("texture resolution must be at least 2".into()));
            }
            if model.neural {
                let bounds = Aabb::from_points(self.primitives.iter().map(|p| p.center), 0.1);
                self.field = Some(GlobalField::new(model.field.clone(), bounds, rng)?);
            } else {
                let tau = model.resolution;
                for _ in 0..self.primitives.len() {
                    let mut tex = LocalTexture::zeros(tau, TextureLayout::Triplane);
                    for (data, channels) in [(&mut tex.color, COLOR_CHANNELS), (&mut tex.alpha, ALPHA_CHANNELS)] {
                        let len = channels * tau;
                        for p in 0..3 {
                            for v in &mut data[2 * p * len..(2 * p + 1) * len] {
                                *v = 1.0 + rng.gen_range(-0.1..0.1);
                            }
                        }
                    }
                    self.direct_textures.push(tex);
                }
            }
        }
        self.model = model;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.sh_coefficients();
        for (i, p) in self.primitives.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "primitive {i} has non-finite parameters"
                )));
            }
            if p.sh.len() != k || !matches!(k, 1 | 4 | 9 | 16) {
                return Err(Error::InvalidParameter(format!(
                    "primitive {i} has {} SH coefficients, expected {k} (1, 4, 9 or 16)",
                    p.sh.len()
                )));
            }
        }
        let textured = self.model.textured();
        if textured && !self.model.neural {
            if self.direct_textures.len() != self.primitives.len() {
                return Err(Error::InvalidParameter(
                    "one direct texture per primitive required".into(),
                ));
            }
            for t in &self.direct_textures {
                t.validate()?;
                if t.resolution != self.model.resolution {
                    return Err(Error::InvalidParameter("direct texture resolution mismatch".into()));
                }
            }
        } else if !self.direct_textures.is_empty() {
            return Err(Error::InvalidParameter(
                "direct textures present but not in direct mode".into(),
            ));
        }
        match (&self.field, textured && self.model.neural) {
            (Some(f), true) => {
                if f.config.texture_resolution != self.model.resolution {
                    return Err(Error::InvalidParameter(
                        "field emits the wrong texture resolution".into(),
                    ));
                }
                if !f.is_finite() {
                    return Err(Error::InvalidParameter("non-finite field parameters".into()));
                }
            }
            (None, false) => {}
            (None, true) => return Err(Error::InvalidParameter("neural mode requires a field".into())),
            (Some(_), false) => return Err(Error::InvalidParameter("field present outside neural mode".into())),
        }
        Ok(())
    }

    /// Decoder inputs for primitive `k` seen from `camera`.
    pub(crate) fn decode_query(&self, k: usize, camera: &Camera) -> DecodeQuery {
        let p = &self.primitives[k];
        DecodeQuery {
            center: p.center,
            view_dir: view_direction(&p.center, &camera.eye()),
            time: camera.time,
            rotation: p.rotation_matrix(),
        }
    }

    /// Plane kept by 2-D texture mode for primitive `k`.
    pub fn plane2d_selection(&self, k: usize) -> PlaneId {
        PlaneId::normal_to(self.primitives[k].flattest_axis())
    }

    /// Textures as seen from `camera`: decoded by the field, or the direct
    /// factors, masked to one plane in 2-D mode.
    pub fn realize_textures(&self, camera: &Camera) -> Result<Vec<LocalTexture>> {
        if !self.model.textured() {
            return Ok(vec![LocalTexture::disabled(); self.primitives.len()]);
        }
        let plane2d = self.model.texture_mode == TextureMode::Plane2d;
        let mut out = Vec::with_capacity(self.primitives.len());
        for k in 0..self.primitives.len() {
            let mut tex = if self.model.neural {
                let field = self
                    .field
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("neural mode requires a field".into()))?;
                field.decode_traced(&self.decode_query(k, camera))?.0
            } else {
                self.direct_textures[k].clone()
            };
            if plane2d {
                tex.restrict_to_plane(self.plane2d_selection(k));
            }
            out.push(tex);
        }
        Ok(out)
    }

    pub fn parameters(&self) -> ParameterSet {
        let mut ps = ParameterSet::default();
        for p in &self.primitives {
            ps.get_mut(ParamClass::Center).extend(p.center.iter());
            ps.get_mut(ParamClass::Rotation).extend(p.rotation);
            ps.get_mut(ParamClass::LogScale).extend(p.log_scale.iter());
            ps.get_mut(ParamClass::Opacity).push(p.opacity_logit);
            ps.get_mut(ParamClass::Sh).extend(p.sh.iter().flatten());
        }
        for t in &self.direct_textures {
            ps.get_mut(ParamClass::ColorFactors).extend_from_slice(&t.color);
            ps.get_mut(ParamClass::AlphaFactors).extend_from_slice(&t.alpha);
        }
        if let Some(f) = &self.field {
            *ps.get_mut(ParamClass::ColorPlanes) = f.color_planes.data.clone();
            *ps.get_mut(ParamClass::AlphaPlanes) = f.alpha_planes.data.clone();
            *ps.get_mut(ParamClass::ColorDecoder) = f.color_decoder.params();
            *ps.get_mut(ParamClass::AlphaDecoder) = f.alpha_decoder.params();
        }
        ps
    }

    pub fn set_parameters(&mut self, ps: &ParameterSet) -> Result<()> {
        if !ps.same_shape(&self.parameters()) {
            return Err(Error::DimensionMismatch(
                "parameter set does not match scene layout".into(),
            ));
        }
        let k = self.sh_coefficients();
        for (i, p) in self.primitives.iter_mut().enumerate() {
            let c = &ps.get(ParamClass::Center)[3 * i..3 * i + 3];
            p.center = Vec3::new(c[0], c[1], c[2]);
            p.rotation
                .copy_from_slice(&ps.get(ParamClass::Rotation)[4 * i..4 * i + 4]);
            let s = &ps.get(ParamClass::LogScale)[3 * i..3 * i + 3];
            p.log_scale = Vec3::new(s[0], s[1], s[2]);
            p.opacity_logit = ps.get(ParamClass::Opacity)[i];
            let sh = &ps.get(ParamClass::Sh)[3 * k * i..3 * k * (i + 1)];
            for (j, coeff) in p.sh.iter_mut().enumerate() {
                coeff.copy_from_slice(&sh[3 * j..3 * j + 3]);
            }
        }
        for (i, t) in self.direct_textures.iter_mut().enumerate() {
            let (nc, na) = (t.color.len(), t.alpha.len());
            t.color
                .copy_from_slice(&ps.get(ParamClass::ColorFactors)[nc * i..nc * (i + 1)]);
            t.alpha
                .copy_from_slice(&ps.get(ParamClass::AlphaFactors)[na * i..na * (i + 1)]);
        }
        if let Some(f) = &mut self.field {
            f.color_planes.data.copy_from_slice(ps.get(ParamClass::ColorPlanes));
            f.alpha_planes.data.copy_from_slice(ps.get(ParamClass::AlphaPlanes));
            f.color_decoder.set_params(ps.get(ParamClass::ColorDecoder))?;
            f.alpha_decoder.set_params(ps.get(ParamClass::AlphaDecoder))?;
        }
        Ok(())
    }

    /// Same scene with primitive storage reordered: new slot `i` holds old
    /// primitive `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Scene> {
        let n = self.primitives.len();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidInput("order is not a permutation".into()));
        }
        let mut out = self.clone();
        out.primitives = order.iter().map(|&i| self.primitives[i].clone()).collect();
        if !self.direct_textures.is_empty() {
            out.direct_textures = order.iter().map(|&i| self.direct_textures[i].clone()).collect();
        }
        out.train_state = None;
        Ok(out)
    }

    /// Applies a rigid motion to every primitive. View-dependent color up
    /// to SH degree 1 is rotated along; neural fields are tied to their
    /// world-space box and are rejected.
    pub fn rigid_transformed(&self, rigid: &RigidTransform) -> Result<Scene> {
        if self.field.is_some() {
            return Err(Error::InvalidInput(
                "neural fields are not rigidly transformable".into(),
            ));
        }
        if self.sh_coefficients() > 4 {
            return Err(Error::InvalidInput("SH rotation is implemented up to degree 1".into()));
        }
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rigid.rotation));
        // Degree-1 basis is `C·P·d` with P: (x,y,z) ↦ (−y, z, −x).
        let p = Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0);
        let sh_rot = p * rigid.rotation * p.transpose();
        let mut out = self.clone();
        out.train_state = None;
        for prim in &mut out.primitives {
            prim.center = rigid.apply(&prim.center);
            let [w, x, y, z] = prim.rotation;
            let q = rot.quaternion() * Quaternion::new(w, x, y, z);
            prim.rotation = [q.w, q.i, q.j, q.k];
            if prim.sh.len() == 4 {
                for c in 0..3 {
                    let v = Vec3::new(prim.sh[1][c], prim.sh[2][c], prim.sh[3][c]);
                    let r = sh_rot * v;
                    prim.sh[1][c] = r.x;
                    prim.sh[2][c] = r.y;
                    prim.sh[3][c] = r.z;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{base_color, quat_to_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_scene() -> Scene {
        let mut a = GaussianPrimitive::isotropic(Vec3::new(0.1, 0.2, 0.3), 0.5, 0.6, [0.2, 0.4, 0.6]).with_sh_degree(1);
        a.rotation = [0.9, 0.1, -0.2, 0.3];
        a.sh[2] = [0.1, -0.2, 0.3];
        let b = GaussianPrimitive::isotropic(Vec3::new(-0.4, 0.0, 0.5), 0.3, 0.4, [0.7, 0.1, 0.1]).with_sh_degree(1);
        Scene::new(vec![a, b], [0.0; 3])
    }

    #[test]
    fn parameter_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for model in [
            ModelConfig::disabled(),
            ModelConfig::direct(TextureMode::Triplane3d, 4),
            ModelConfig::neural(TextureMode::Plane2d, FieldConfig::desk(4)),
        ] {
            let mut s = sample_scene();
            s.install_textures(model, &mut rng).unwrap();
            s.validate().unwrap();
            let mut ps = s.parameters();
            for class in ParamClass::ALL {
                for (i, v) in ps.get_mut(class).iter_mut().enumerate() {
                    *v += 1e-3 * (i as f64 + 1.0);
                }
            }
            let mut t = s.clone();
            t.set_parameters(&ps).unwrap();
            assert_eq!(t.parameters(), ps);
            assert!(t.set_parameters(&ParameterSet::default()).is_err() || ps.is_empty());
        }
    }

    #[test]
    fn installed_textures_start_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), 4, 4, 0.8).unwrap();
        for model in [
            ModelConfig::direct(TextureMode::Triplane3d, 4),
            ModelConfig::neural(TextureMode::Triplane3d, FieldConfig::desk(4)),
        ] {
            let mut s = sample_scene();
            s.install_textures(model, &mut rng).unwrap();
            for tex in s.realize_textures(&cam).unwrap() {
                let q = crate::texfield::triplane_texture_query(&Vec3::new(0.3, -1.0, 2.0), &tex);
                assert_eq!(q.alpha, 0.0);
                assert_eq!(q.color, [0.0; 3]);
            }
        }
    }

    #[test]
    fn plane2d_realization_keeps_flattest_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = sample_scene();
        s.primitives[0].log_scale = Vec3::new(0.0, -3.0, 0.0);
        s.install_textures(ModelConfig::direct(TextureMode::Plane2d, 4), &mut rng)
            .unwrap();
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), 4, 4, 0.8).unwrap();
        let tex = s.realize_textures(&cam).unwrap();
        assert_eq!(tex[0].layout, TextureLayout::Single(PlaneId::Xz));
        assert!(tex[0].factor(PlaneId::Xy, 0, 3).iter().all(|v| *v == 0.0));
        assert!(tex[0].factor(PlaneId::Xz, 0, 3).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn rigid_transform_moves_frames_and_color() {
        let s = sample_scene();
        let rig = RigidTransform::from_axis_angle(Vec3::new(0.3, -1.0, 0.2), 1.1, Vec3::new(1.0, 2.0, -0.5));
        let t = s.rigid_transformed(&rig).unwrap();
        for (a, b) in s.primitives.iter().zip(&t.primitives) {
            let ra = quat_to_matrix(a.rotation);
            let rb = quat_to_matrix(b.rotation);
            assert!((rig.rotation * ra - rb).abs().max() < 1e-12);
            let eye = Vec3::new(0.5, -2.0, 4.0);
            let ca = base_color(a, &eye);
            let cb = base_color(b, &rig.apply(&eye));
            for c in 0..3 {
                assert!((ca[c] - cb[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_is_checked() {
        let s = sample_scene();
        assert!(s.permuted(&[0, 0]).is_err());
        let p = s.permuted(&[1, 0]).unwrap();
        assert_eq!(p.primitives[0], s.primitives[1]);
    }
}
