//! Global tri-plane feature field and the decoders that predict each
//! splat's CP texture factors.
//!
//! Color and alpha use separate plane stacks and separate networks. The
//! color network sees `[features, center, view_dir, (time), (rotation)]`,
//! the alpha network the same list without the view direction, so alpha
//! textures never depend on the viewpoint.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::texfield::{LocalTexture, TextureLayout, ALPHA_CHANNELS, COLOR_CHANNELS};

static NON_UNIT_VIEW_DIRS: AtomicU64 = AtomicU64::new(0);

/// Number of decode calls that received a non-unit view direction and
/// normalized it.
pub fn non_unit_view_dir_count() -> u64 {
    NON_UNIT_VIEW_DIRS.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Plane height and width (`H = W`).
    pub plane_resolution: usize,
    pub channels: usize,
    pub decoder_width: usize,
    pub hidden_layers: usize,
    /// Frequency scale of the sinusoidal alpha decoder.
    pub omega0: f64,
    pub view_dependent: bool,
    pub time_dependent: bool,
    /// Append the splat's flattened rotation matrix to both decoder inputs.
    pub rotation_input: bool,
    /// Sin/cos frequency bands for position and time (0 = raw inputs).
    pub frequency_bands: usize,
    /// Local texture resolution τ the decoders emit.
    pub texture_resolution: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            plane_resolution: 192,
            channels: 16,
            decoder_width: 128,
            hidden_layers: 2,
            omega0: 30.0,
            view_dependent: true,
            time_dependent: false,
            rotation_input: false,
            frequency_bands: 0,
            texture_resolution: 4,
        }
    }
}

impl FieldConfig {
    /// Small field for desk-scale scenes.
    pub fn desk(texture_resolution: usize) -> Self {
        Self {
            plane_resolution: 16,
            channels: 4,
            decoder_width: 32,
            texture_resolution,
            ..Self::default()
        }
    }

    fn encoded_len(&self, raw: usize) -> usize {
        raw * (1 + 2 * self.frequency_bands)
    }

    pub fn color_input_len(&self) -> usize {
        3 * self.channels
            + self.encoded_len(3)
            + if self.view_dependent { 3 } else { 0 }
            + if self.time_dependent { self.encoded_len(1) } else { 0 }
            + if self.rotation_input { 9 } else { 0 }
    }

    pub fn alpha_input_len(&self) -> usize {
        3 * self.channels
            + self.encoded_len(3)
            + if self.time_dependent { self.encoded_len(1) } else { 0 }
            + if self.rotation_input { 9 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.plane_resolution < 2 || self.channels == 0 || self.decoder_width == 0 {
            return Err(Error::InvalidConfig(
                "field planes need resolution ≥ 2 and ≥ 1 channel".into(),
            ));
        }
        if self.texture_resolution < 2 {
            return Err(Error::InvalidConfig("texture resolution must be at least 2".into()));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::InvalidConfig("omega0 must be positive".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box mapping world positions into `[-1, 1]³`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Bounding box of `points` scaled by `1 + margin` about its center.
    /// Flat or single-point clouds get a small minimum extent.
    pub fn from_points(points: impl IntoIterator<Item = Vec3>, margin: f64) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        if !lo.x.is_finite() {
            lo = Vec3::repeat(-1.0);
            hi = Vec3::repeat(1.0);
        }
        let center = (lo + hi) * 0.5;
        let half = (hi - lo) * 0.5 * (1.0 + margin);
        let floor = (half.max() * 0.05).max(1e-3);
        let half = half.map(|h| h.max(floor));
        Self {
            min: center - half,
            max: center + half,
        }
    }

    /// Normalized coordinates and per-axis "was clamped" flags.
    pub fn normalize(&self, p: &Vec3) -> (Vec3, [bool; 3]) {
        let mut n = Vec3::zeros();
        let mut clamped = [false; 3];
        for i in 0..3 {
            let half = 0.5 * (self.max[i] - self.min[i]);
            let mid = 0.5 * (self.max[i] + self.min[i]);
            let v = (p[i] - mid) / half;
            if v > 1.0 {
                n[i] = 1.0;
                clamped[i] = true;
            } else if v < -1.0 {
                n[i] = -1.0;
                clamped[i] = true;
            } else {
                n[i] = v;
            }
        }
        (n, clamped)
    }

    fn inv_half(&self, axis: usize) -> f64 {
        2.0 / (self.max[axis] - self.min[axis])
    }
}

/// Three `H×W×C` feature planes `(xy, xz, yz)` stored back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct TriPlaneStack {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl TriPlaneStack {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; 3 * height * width * channels],
        }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            data: vec![value; 3 * height * width * channels],
            ..Self::zeros(height, width, channels)
        }
    }

    fn plane_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn texel(&self, plane: usize, row: usize, col: usize) -> &[f64] {
        let start = plane * self.plane_len() + (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }
}

const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct FeatureCell {
    col: usize,
    fx: f64,
    row: usize,
    fy: f64,
}

fn feature_cell(coord: f64, extent: usize) -> (usize, f64) {
    let g = (coord + 1.0) * 0.5 * (extent - 1) as f64;
    let i = if g <= 0.0 {
        0
    } else {
        (g.floor() as usize).min(extent - 2)
    };
    (i, g - i as f64)
}

fn feature_cells(normalized: &Vec3, planes: &TriPlaneStack) -> [FeatureCell; 3] {
    PLANE_AXES.map(|(a0, a1)| {
        let (col, fx) = feature_cell(normalized[a0], planes.width);
        let (row, fy) = feature_cell(normalized[a1], planes.height);
        FeatureCell { col, fx, row, fy }
    })
}

fn sample_features(planes: &TriPlaneStack, cells: &[FeatureCell; 3], out: &mut Vec<f64>) {
    for (p, cell) in cells.iter().enumerate() {
        let t00 = planes.texel(p, cell.row, cell.col);
        let t01 = planes.texel(p, cell.row, cell.col + 1);
        let t10 = planes.texel(p, cell.row + 1, cell.col);
        let t11 = planes.texel(p, cell.row + 1, cell.col + 1);
        let (fx, fy) = (cell.fx, cell.fy);
        for c in 0..planes.channels {
            out.push(
                (1.0 - fx) * (1.0 - fy) * t00[c]
                    + fx * (1.0 - fy) * t01[c]
                    + (1.0 - fx) * fy * t10[c]
                    + fx * fy * t11[c],
            );
        }
    }
}

/// Adjoint of [`sample_features`]: plane texel gradients plus the gradient
/// with respect to the normalized coordinate.
fn sample_features_backward(
    planes: &TriPlaneStack,
    cells: &[FeatureCell; 3],
    d_feat: &[f64],
    d_planes: &mut [f64],
) -> Vec3 {
    let mut d_n = Vec3::zeros();
    let ch = planes.channels;
    for (p, cell) in cells.iter().enumerate() {
        let (a0, a1) = PLANE_AXES[p];
        let base = p * planes.plane_len();
        let idx = |r: usize, c: usize| base + (r * planes.width + c) * ch;
        let (i00, i01, i10, i11) = (
            idx(cell.row, cell.col),
            idx(cell.row, cell.col + 1),
            idx(cell.row + 1, cell.col),
            idx(cell.row + 1, cell.col + 1),
        );
        let (fx, fy) = (cell.fx, cell.fy);
        let mut d_fx = 0.0;
        let mut d_fy = 0.0;
        for c in 0..ch {
            let g = d_feat[p * ch + c];
            if g == 0.0 {
                continue;
            }
            d_planes[i00 + c] += g * (1.0 - fx) * (1.0 - fy);
            d_planes[i01 + c] += g * fx * (1.0 - fy);
            d_planes[i10 + c] += g * (1.0 - fx) * fy;
            d_planes[i11 + c] += g * fx * fy;
            let t = |i: usize| planes.data[i + c];
            d_fx += g * ((1.0 - fy) * (t(i01) - t(i00)) + fy * (t(i11) - t(i10)));
            d_fy += g * ((1.0 - fx) * (t(i10) - t(i00)) + fx * (t(i11) - t(i01)));
        }
        d_n[a0] += d_fx * 0.5 * (planes.width - 1) as f64;
        d_n[a1] += d_fy * 0.5 * (planes.height - 1) as f64;
    }
    d_n
}

/// Concatenated `(xy, xz, yz)` features at `center`, length `3C`. Points
/// outside `bounds` read the boundary.
pub fn global_feature(center: &Vec3, planes: &TriPlaneStack, bounds: &Aabb) -> Vec<f64> {
    let (n, _) = bounds.normalize(center);
    let cells = feature_cells(&n, planes);
    let mut out = Vec::with_capacity(3 * planes.channels);
    sample_features(planes, &cells, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sine,
}

/// Fully connected layer `y = W x + b`, `W` row-major `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *yo += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        y
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Decoder network: hidden layers with `activation`, linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub activation: Activation,
    pub omega0: f64,
    pub layers: Vec<Dense>,
}

pub(crate) struct MlpTrace {
    /// Input to every layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "decoder has {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    fn activate(&self, x: f64) -> f64 {
        match self.activation {
            Activation::Relu => x.max(0.0),
            Activation::Sine => (self.omega0 * x).sin(),
        }
    }

    fn activate_grad(&self, x: f64) -> f64 {
        match self.activation {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sine => self.omega0 * (self.omega0 * x).cos(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).output
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> MlpTrace {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n.saturating_sub(1));
        let mut cur = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&cur);
            inputs.push(cur);
            if k + 1 < n {
                cur = z.iter().map(|&v| self.activate(v)).collect();
                pre.push(z);
            } else {
                cur = z;
            }
        }
        MlpTrace {
            inputs,
            pre,
            output: cur,
        }
    }

    /// Accumulates parameter gradients into `grad` (layout of
    /// [`Mlp::params`]) and returns the input gradient.
    pub(crate) fn backward(&self, trace: &MlpTrace, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for l in &self.layers {
            offsets.push(k);
            k += l.param_count();
        }
        let mut d_z = d_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[li];
            let off = offsets[li];
            let mut d_x = vec![0.0; layer.inputs];
            for (o, &g) in d_z.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut grad[off + o * layer.inputs..off + (o + 1) * layer.inputs];
                for i in 0..layer.inputs {
                    grow[i] += g * x[i];
                    d_x[i] += g * row[i];
                }
                grad[off + layer.weights.len() + o] += g;
            }
            if li == 0 {
                return d_x;
            }
            let z = &trace.pre[li - 1];
            d_z = d_x.iter().zip(z).map(|(g, &zv)| g * self.activate_grad(zv)).collect();
        }
        Vec::new()
    }

    /// Bit pattern of active rectifiers, for kink detection.
    pub(crate) fn activation_pattern(&self, trace: &MlpTrace) -> Vec<bool> {
        match self.activation {
            Activation::Relu => trace.pre.iter().flatten().map(|&z| z > 0.0).collect(),
            Activation::Sine => Vec::new(),
        }
    }
}

/// Global neural field: color and alpha tri-plane stacks plus decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalField {
    pub config: FieldConfig,
    pub bounds: Aabb,
    pub color_planes: TriPlaneStack,
    pub alpha_planes: TriPlaneStack,
    pub color_decoder: Mlp,
    pub alpha_decoder: Mlp,
}

fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound == 0.0 {
        0.0
    } else {
        rng.gen_range(-bound..bound)
    }
}

fn build_decoder(
    activation: Activation,
    config: &FieldConfig,
    inputs: usize,
    factor_len: usize,
    rng: &mut impl Rng,
) -> Mlp {
    let width = config.decoder_width;
    let outputs = 6 * factor_len;
    let mut layers = Vec::new();
    let mut fan_in = inputs;
    for h in 0..config.hidden_layers {
        let mut layer = Dense::zeros(fan_in, width);
        let w_bound = match activation {
            Activation::Relu => 1.0 / (fan_in as f64).sqrt(),
            Activation::Sine if h == 0 => 1.0 / fan_in as f64,
            Activation::Sine => (6.0 / fan_in as f64).sqrt() / config.omega0,
        };
        let b_bound = 1.0 / (fan_in as f64).sqrt();
        layer.weights.iter_mut().for_each(|w| *w = uniform(rng, w_bound));
        layer.bias.iter_mut().for_each(|b| *b = uniform(rng, b_bound));
        layers.push(layer);
        fan_in = width;
    }
    let mut last = Dense::zeros(fan_in, outputs);
    let bound = match activation {
        Activation::Relu => 1.0 / (fan_in as f64).sqrt(),
        Activation::Sine => (6.0 / fan_in as f64).sqrt() / config.omega0,
    };
    // v¹ rows start at zero so every texture is exactly zero initially;
    // v⁰ rows stay random so v¹ still receives gradient.
    for o in 0..outputs {
        if (o / factor_len).is_multiple_of(2) {
            for i in 0..fan_in {
                last.weights[o * fan_in + i] = uniform(rng, bound);
            }
        }
    }
    layers.push(last);
    Mlp {
        activation,
        omega0: config.omega0,
        layers,
    }
}

/// Inputs of one decode call.
#[derive(Clone, Copy, Debug)]
pub struct DecodeQuery {
    pub center: Vec3,
    pub view_dir: Vec3,
    pub time: Option<f64>,
    pub rotation: Mat3,
}

pub(crate) struct DecodeTrace {
    normalized: Vec3,
    clamped: [bool; 3],
    color_cells: [FeatureCell; 3],
    alpha_cells: [FeatureCell; 3],
    color_trace: MlpTrace,
    alpha_trace: MlpTrace,
}

/// Gradients flowing out of a decode call into non-field inputs.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct DecodeInputGrad {
    pub center: Vec3,
    pub view_dir: Vec3,
    pub rotation: Mat3,
}

fn encode(values: &[f64], bands: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(values);
    for k in 0..bands {
        let freq = (1u64 << k) as f64 * std::f64::consts::PI;
        for &v in values {
            out.push((freq * v).sin());
            out.push((freq * v).cos());
        }
    }
}

/// Adds `d enc / d values` contracted with `d_enc` into `d_values`.
fn encode_backward(values: &[f64], bands: usize, d_enc: &[f64], d_values: &mut [f64]) {
    let n = values.len();
    for i in 0..n {
        d_values[i] += d_enc[i];
    }
    let mut k = n;
    for b in 0..bands {
        let freq = (1u64 << b) as f64 * std::f64::consts::PI;
        for i in 0..n {
            let v = values[i];
            d_values[i] += d_enc[k] * freq * (freq * v).cos();
            d_values[i] -= d_enc[k + 1] * freq * (freq * v).sin();
            k += 2;
        }
    }
}

impl GlobalField {
    pub fn new(config: FieldConfig, bounds: Aabb, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (h, c) = (config.plane_resolution, config.channels);
        let mut color_planes = TriPlaneStack::zeros(h, h, c);
        let mut alpha_planes = TriPlaneStack::zeros(h, h, c);
        color_planes.data.iter_mut().for_each(|v| *v = uniform(rng, 1e-2));
        alpha_planes.data.iter_mut().for_each(|v| *v = uniform(rng, 1e-2));
        let tau = config.texture_resolution;
        let color_decoder = build_decoder(
            Activation::Relu,
            &config,
            config.color_input_len(),
            COLOR_CHANNELS * tau,
            rng,
        );
        let alpha_decoder = build_decoder(
            Activation::Sine,
            &config,
            config.alpha_input_len(),
            ALPHA_CHANNELS * tau,
            rng,
        );
        Ok(Self {
            config,
            bounds,
            color_planes,
            alpha_planes,
            color_decoder,
            alpha_decoder,
        })
    }

    pub fn param_count(&self) -> usize {
        self.color_planes.data.len()
            + self.alpha_planes.data.len()
            + self.color_decoder.param_count()
            + self.alpha_decoder.param_count()
    }

    pub fn is_finite(&self) -> bool {
        self.color_planes.data.iter().all(|v| v.is_finite())
            && self.alpha_planes.data.iter().all(|v| v.is_finite())
            && self.color_decoder.params().iter().all(|v| v.is_finite())
            && self.alpha_decoder.params().iter().all(|v| v.is_finite())
    }

    fn check_query(&self, query: &DecodeQuery) -> Result<(Vec3, Option<f64>)> {
        if !query.center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite splat center".into()));
        }
        let norm = query.view_dir.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidInput("view direction must be non-zero and finite".into()));
        }
        let view_dir = if (norm - 1.0).abs() > 1e-9 {
            NON_UNIT_VIEW_DIRS.fetch_add(1, Ordering::Relaxed);
            query.view_dir / norm
        } else {
            query.view_dir
        };
        let time = if self.config.time_dependent {
            match query.time {
                Some(t) if t.is_finite() => Some(t),
                Some(_) => return Err(Error::InvalidInput("non-finite time".into())),
                None => return Err(Error::InvalidInput("dynamic field requires a time value".into())),
            }
        } else {
            None
        };
        Ok((view_dir, time))
    }

    fn color_input(&self, feat: &[f64], n: &Vec3, view_dir: &Vec3, time: Option<f64>, rot: &Mat3) -> Vec<f64> {
        let cfg = &self.config;
        let mut x = Vec::with_capacity(cfg.color_input_len());
        x.extend_from_slice(feat);
        encode(n.as_slice(), cfg.frequency_bands, &mut x);
        if cfg.view_dependent {
            x.extend_from_slice(view_dir.as_slice());
        }
        if let Some(t) = time {
            encode(&[t], cfg.frequency_bands, &mut x);
        }
        if cfg.rotation_input {
            push_rotation(rot, &mut x);
        }
        x
    }

    fn alpha_input(&self, feat: &[f64], n: &Vec3, time: Option<f64>, rot: &Mat3) -> Vec<f64> {
        let cfg = &self.config;
        let mut x = Vec::with_capacity(cfg.alpha_input_len());
        x.extend_from_slice(feat);
        encode(n.as_slice(), cfg.frequency_bands, &mut x);
        if let Some(t) = time {
            encode(&[t], cfg.frequency_bands, &mut x);
        }
        if cfg.rotation_input {
            push_rotation(rot, &mut x);
        }
        x
    }

    pub(crate) fn decode_traced(&self, query: &DecodeQuery) -> Result<(LocalTexture, DecodeTrace)> {
        let (view_dir, time) = self.check_query(query)?;
        let (n, clamped) = self.bounds.normalize(&query.center);
        let color_cells = feature_cells(&n, &self.color_planes);
        let alpha_cells = feature_cells(&n, &self.alpha_planes);
        let mut color_feat = Vec::with_capacity(3 * self.config.channels);
        sample_features(&self.color_planes, &color_cells, &mut color_feat);
        let mut alpha_feat = Vec::with_capacity(3 * self.config.channels);
        sample_features(&self.alpha_planes, &alpha_cells, &mut alpha_feat);

        let color_in = self.color_input(&color_feat, &n, &view_dir, time, &query.rotation);
        let alpha_in = self.alpha_input(&alpha_feat, &n, time, &query.rotation);
        let color_trace = self.color_decoder.forward_trace(&color_in);
        let alpha_trace = self.alpha_decoder.forward_trace(&alpha_in);
        let texture = LocalTexture {
            resolution: self.config.texture_resolution,
            layout: TextureLayout::Triplane,
            color: color_trace.output.clone(),
            alpha: alpha_trace.output.clone(),
        };
        Ok((
            texture,
            DecodeTrace {
                normalized: n,
                clamped,
                color_cells,
                alpha_cells,
                color_trace,
                alpha_trace,
            },
        ))
    }

    /// Backpropagates factor gradients through both decoders and plane
    /// stacks. Field gradients go into the four flat buffers.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn decode_backward(
        &self,
        query: &DecodeQuery,
        trace: &DecodeTrace,
        d_color_factors: &[f64],
        d_alpha_factors: &[f64],
        d_color_planes: &mut [f64],
        d_alpha_planes: &mut [f64],
        d_color_decoder: &mut [f64],
        d_alpha_decoder: &mut [f64],
    ) -> DecodeInputGrad {
        let cfg = &self.config;
        let mut out = DecodeInputGrad::default();
        let mut d_n = [0.0; 3];
        let mut d_rot = [0.0; 9];
        let mut d_time = [0.0];
        let time = if cfg.time_dependent { query.time } else { None };

        let mut split = |d_in: &[f64], has_view: bool, d_rot: &mut [f64; 9], d_n: &mut [f64; 3]| -> (Vec<f64>, Vec3) {
            let fl = 3 * cfg.channels;
            let d_feat = d_in[..fl].to_vec();
            let mut k = fl;
            let pos_len = cfg.encoded_len(3);
            encode_backward(
                trace.normalized.as_slice(),
                cfg.frequency_bands,
                &d_in[k..k + pos_len],
                d_n,
            );
            k += pos_len;
            let mut d_view = Vec3::zeros();
            if has_view {
                d_view = Vec3::new(d_in[k], d_in[k + 1], d_in[k + 2]);
                k += 3;
            }
            if let Some(t) = time {
                let tl = cfg.encoded_len(1);
                encode_backward(&[t], cfg.frequency_bands, &d_in[k..k + tl], &mut d_time);
                k += tl;
            }
            if cfg.rotation_input {
                for i in 0..9 {
                    d_rot[i] += d_in[k + i];
                }
            }
            (d_feat, d_view)
        };

        let d_color_in = self
            .color_decoder
            .backward(&trace.color_trace, d_color_factors, d_color_decoder);
        let (d_color_feat, d_view) = split(&d_color_in, cfg.view_dependent, &mut d_rot, &mut d_n);
        let d_alpha_in = self
            .alpha_decoder
            .backward(&trace.alpha_trace, d_alpha_factors, d_alpha_decoder);
        let (d_alpha_feat, _) = split(&d_alpha_in, false, &mut d_rot, &mut d_n);

        let dn_c = sample_features_backward(&self.color_planes, &trace.color_cells, &d_color_feat, d_color_planes);
        let dn_a = sample_features_backward(&self.alpha_planes, &trace.alpha_cells, &d_alpha_feat, d_alpha_planes);
        for i in 0..3 {
            let g = d_n[i] + dn_c[i] + dn_a[i];
            if !trace.clamped[i] {
                out.center[i] = g * self.bounds.inv_half(i);
            }
        }
        out.view_dir = d_view;
        if cfg.rotation_input {
            out.rotation = Mat3::from_row_slice(&d_rot);
        }
        out
    }

    /// Discrete state of a decode call (clamps, cells, active rectifiers).
    pub(crate) fn trace_signature(&self, trace: &DecodeTrace, hasher: &mut impl std::hash::Hasher) {
        use std::hash::Hash;
        trace.clamped.hash(hasher);
        for cell in trace.color_cells.iter().chain(&trace.alpha_cells) {
            (cell.col, cell.row).hash(hasher);
        }
        self.color_decoder.activation_pattern(&trace.color_trace).hash(hasher);
    }
}

fn push_rotation(rot: &Mat3, out: &mut Vec<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            out.push(rot[(r, c)]);
        }
    }
}

/// Predicts the local texture of a splat centered at `center` seen along
/// `view_dir` (at `time` for dynamic fields). Static fields ignore `time`.
pub fn decode_texture(
    field: &GlobalField,
    center: &Vec3,
    view_dir: &Vec3,
    time: Option<f64>,
    resolution: usize,
) -> Result<LocalTexture> {
    if resolution != field.config.texture_resolution {
        return Err(Error::InvalidInput(format!(
            "field decodes τ = {}, requested {}",
            field.config.texture_resolution, resolution
        )));
    }
    let query = DecodeQuery {
        center: *center,
        view_dir: *view_dir,
        time,
        rotation: Mat3::identity(),
    };
    Ok(field.decode_traced(&query)?.0)
}
