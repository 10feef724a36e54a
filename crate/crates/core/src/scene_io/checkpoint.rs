//! Little-endian binary scene checkpoints with an `NTSC` magic header.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{GaussianPrimitive, Vec3};
use crate::neuralfield::{Aabb, Activation, Dense, FieldConfig, GlobalField, Mlp, TriPlaneStack};
use crate::scene::{ModelConfig, ParamClass, ParameterSet, Scene, TrainState};
use crate::texfield::{LocalTexture, TextureLayout, TextureMode, ALPHA_CHANNELS, COLOR_CHANNELS};

pub const MAGIC: &[u8; 4] = b"NTSC";
pub const VERSION: u32 = 1;

/// Upper bound on any declared element count; anything larger is treated
/// as corruption instead of an allocation request.
const MAX_LEN: u64 = 1 << 32;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn vec3(&mut self, v: &Vec3) {
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn bool(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Malformed(format!("{what}: boolean byte {b}"))),
        }
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        if v > MAX_LEN {
            return Err(Error::Malformed(format!("{what}: implausible length {v}")));
        }
        Ok(v as usize)
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.len(what)?;
        if n.checked_mul(8).is_none_or(|b| b > self.bytes.len() - self.pos) {
            return Err(Error::Truncated(format!("{what}: {n} values declared")));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }
    fn f64s_exact(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let v = self.f64s(what)?;
        if v.len() != n {
            return Err(Error::Malformed(format!(
                "{what}: expected {n} values, found {}",
                v.len()
            )));
        }
        Ok(v)
    }
    fn vec3(&mut self, what: &str) -> Result<Vec3> {
        Ok(Vec3::new(self.f64(what)?, self.f64(what)?, self.f64(what)?))
    }
}

/// Serializes `scene` (including optimizer state, if any).
pub fn checkpoint_bytes(scene: &Scene) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);

    let k = scene.sh_coefficients();
    w.len(scene.len());
    w.len(k);
    for p in &scene.primitives {
        w.vec3(&p.center);
        p.rotation.iter().for_each(|x| w.f64(*x));
        w.vec3(&p.log_scale);
        w.f64(p.opacity_logit);
        p.sh.iter().flatten().for_each(|x| w.f64(*x));
    }

    let m = &scene.model;
    w.u8(m.texture_mode.code());
    w.u8(m.neural as u8);
    w.len(m.resolution);
    scene.background.iter().for_each(|x| w.f64(*x));
    write_field_config(&mut w, &m.field);

    w.len(scene.direct_textures.len());
    for t in &scene.direct_textures {
        w.len(t.resolution);
        w.f64s(&t.color);
        w.f64s(&t.alpha);
    }

    match &scene.field {
        None => w.u8(0),
        Some(f) => {
            w.u8(1);
            write_field_config(&mut w, &f.config);
            w.vec3(&f.bounds.min);
            w.vec3(&f.bounds.max);
            for planes in [&f.color_planes, &f.alpha_planes] {
                w.len(planes.height);
                w.len(planes.width);
                w.len(planes.channels);
                w.f64s(&planes.data);
            }
            for mlp in [&f.color_decoder, &f.alpha_decoder] {
                w.u8(match mlp.activation {
                    Activation::Relu => 0,
                    Activation::Sine => 1,
                });
                w.f64(mlp.omega0);
                w.len(mlp.layers.len());
                for l in &mlp.layers {
                    w.len(l.inputs);
                    w.len(l.outputs);
                    w.f64s(&l.weights);
                    w.f64s(&l.bias);
                }
            }
        }
    }

    match &scene.train_state {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.len(s.iteration);
            s.steps.iter().for_each(|x| w.u64(*x));
            for set in [&s.m, &s.v] {
                for class in ParamClass::ALL {
                    w.f64s(set.get(class));
                }
            }
        }
    }
    w.buf
}

fn write_field_config(w: &mut Writer, c: &FieldConfig) {
    w.len(c.plane_resolution);
    w.len(c.channels);
    w.len(c.decoder_width);
    w.len(c.hidden_layers);
    w.f64(c.omega0);
    w.u8(c.view_dependent as u8);
    w.u8(c.time_dependent as u8);
    w.u8(c.rotation_input as u8);
    w.len(c.frequency_bands);
    w.len(c.texture_resolution);
}

fn read_field_config(r: &mut Reader) -> Result<FieldConfig> {
    Ok(FieldConfig {
        plane_resolution: r.len("plane resolution")?,
        channels: r.len("feature channels")?,
        decoder_width: r.len("decoder width")?,
        hidden_layers: r.len("hidden layers")?,
        omega0: r.f64("omega0")?,
        view_dependent: r.bool("view_dependent")?,
        time_dependent: r.bool("time_dependent")?,
        rotation_input: r.bool("rotation_input")?,
        frequency_bands: r.len("frequency bands")?,
        texture_resolution: r.len("texture resolution")?,
    })
}

/// Parses checkpoint bytes. Rejects wrong magic, unknown versions,
/// truncation, trailing data and inconsistent shapes.
pub fn scene_from_bytes(bytes: &[u8]) -> Result<Scene> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }

    let n = r.len("primitive count")?;
    let k = r.len("SH coefficient count")?;
    if !matches!(k, 1 | 4 | 9 | 16) {
        return Err(Error::Malformed(format!("{k} SH coefficients per splat")));
    }
    let mut primitives = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let center = r.vec3("center")?;
        let mut rotation = [0.0; 4];
        for q in &mut rotation {
            *q = r.f64("rotation")?;
        }
        let log_scale = r.vec3("log scale")?;
        let opacity_logit = r.f64("opacity")?;
        let mut sh = vec![[0.0; 3]; k];
        for c in sh.iter_mut().flatten() {
            *c = r.f64("SH")?;
        }
        primitives.push(GaussianPrimitive {
            center,
            rotation,
            log_scale,
            opacity_logit,
            sh,
        });
    }

    let code = r.u8("texture mode")?;
    let texture_mode =
        TextureMode::from_code(code).ok_or_else(|| Error::Malformed(format!("texture mode code {code}")))?;
    let neural = r.bool("neural flag")?;
    let resolution = r.len("texture resolution")?;
    let background = [r.f64("background")?, r.f64("background")?, r.f64("background")?];
    let field_config = read_field_config(&mut r)?;
    let model = ModelConfig {
        texture_mode,
        neural,
        resolution,
        field: field_config,
    };

    let count = r.len("direct texture count")?;
    let mut direct_textures = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let tau = r.len("direct texture resolution")?;
        let color = r.f64s("direct color factors")?;
        let alpha = r.f64s("direct alpha factors")?;
        direct_textures.push(
            LocalTexture::from_factors(tau, TextureLayout::Triplane, color, alpha)
                .map_err(|e| Error::Malformed(format!("direct texture: {e}")))?,
        );
    }

    let field = match r.u8("field flag")? {
        0 => None,
        1 => {
            let config = read_field_config(&mut r)?;
            let bounds = Aabb {
                min: r.vec3("bounds")?,
                max: r.vec3("bounds")?,
            };
            let mut planes = Vec::new();
            for what in ["color planes", "alpha planes"] {
                let (h, w, c) = (r.len(what)?, r.len(what)?, r.len(what)?);
                let len = 3usize
                    .checked_mul(h)
                    .and_then(|v| v.checked_mul(w))
                    .and_then(|v| v.checked_mul(c))
                    .ok_or_else(|| Error::Malformed(format!("{what}: shape overflow")))?;
                let data = r.f64s_exact(len, what)?;
                planes.push(TriPlaneStack {
                    height: h,
                    width: w,
                    channels: c,
                    data,
                });
            }
            let mut decoders = Vec::new();
            for what in ["color decoder", "alpha decoder"] {
                let activation = match r.u8(what)? {
                    0 => Activation::Relu,
                    1 => Activation::Sine,
                    b => return Err(Error::Malformed(format!("{what}: activation code {b}"))),
                };
                let omega0 = r.f64(what)?;
                let layers_n = r.len(what)?;
                let mut layers = Vec::new();
                for _ in 0..layers_n {
                    let (inputs, outputs) = (r.len(what)?, r.len(what)?);
                    let weights = r.f64s_exact(inputs.saturating_mul(outputs), what)?;
                    let bias = r.f64s_exact(outputs, what)?;
                    layers.push(Dense {
                        inputs,
                        outputs,
                        weights,
                        bias,
                    });
                }
                if layers.is_empty() || layers.windows(2).any(|p| p[0].outputs != p[1].inputs) {
                    return Err(Error::Malformed(format!("{what}: inconsistent layer shapes")));
                }
                decoders.push(Mlp {
                    activation,
                    omega0,
                    layers,
                });
            }
            let alpha_decoder = decoders.pop().unwrap();
            let color_decoder = decoders.pop().unwrap();
            let alpha_planes = planes.pop().unwrap();
            let color_planes = planes.pop().unwrap();
            let field = GlobalField {
                config,
                bounds,
                color_planes,
                alpha_planes,
                color_decoder,
                alpha_decoder,
            };
            check_field_shapes(&field)?;
            Some(field)
        }
        b => return Err(Error::Malformed(format!("field flag {b}"))),
    };

    let mut scene = Scene {
        primitives,
        model,
        direct_textures,
        field,
        background,
        train_state: None,
    };
    scene.validate().map_err(|e| Error::Malformed(e.to_string()))?;

    scene.train_state = match r.u8("train state flag")? {
        0 => None,
        1 => {
            let iteration = r.len("iteration")?;
            let mut steps = [0u64; 11];
            for s in &mut steps {
                *s = r.u64("step counts")?;
            }
            let shape = scene.parameters();
            let mut moments = Vec::new();
            for what in ["first moments", "second moments"] {
                let mut set = ParameterSet::default();
                for class in ParamClass::ALL {
                    *set.get_mut(class) = r.f64s_exact(shape.get(class).len(), what)?;
                }
                moments.push(set);
            }
            let v = moments.pop().unwrap();
            let m = moments.pop().unwrap();
            Some(TrainState { iteration, steps, m, v })
        }
        b => return Err(Error::Malformed(format!("train state flag {b}"))),
    };

    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(scene)
}

fn check_field_shapes(f: &GlobalField) -> Result<()> {
    let c = &f.config;
    c.validate().map_err(|e| Error::Malformed(e.to_string()))?;
    for p in [&f.color_planes, &f.alpha_planes] {
        if p.height != c.plane_resolution || p.width != c.plane_resolution || p.channels != c.channels {
            return Err(Error::Malformed("plane shape disagrees with field config".into()));
        }
    }
    let tau = c.texture_resolution;
    let expect = [
        (&f.color_decoder, c.color_input_len(), 6 * COLOR_CHANNELS * tau),
        (&f.alpha_decoder, c.alpha_input_len(), 6 * ALPHA_CHANNELS * tau),
    ];
    for (mlp, inputs, outputs) in expect {
        if mlp.layers[0].inputs != inputs || mlp.layers.last().unwrap().outputs != outputs {
            return Err(Error::Malformed("decoder shape disagrees with field config".into()));
        }
    }
    Ok(())
}

pub fn save_checkpoint(scene: &Scene, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Scene> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    scene_from_bytes(&bytes)
}
