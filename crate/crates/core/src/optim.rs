//! Losses, the adaptive-moment optimizer and the training loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_breakdown_and_gradients, LossBreakdown};
use crate::camera::{Camera, View};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::image::Image;
use crate::metrics::{dssim_with_grad, evaluate};
use crate::render::RenderConfig;
use crate::scene::{ParamClass, ParameterSet, Scene, TrainState};
use crate::scene_io::Dataset;
use crate::texfield::{signum0, texture_l1_norm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotometricKind {
    L1,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight λ of the D-SSIM term.
    pub lambda_dssim: f64,
    pub sparsity_weight: f64,
    pub photometric: PhotometricKind,
    /// Multiplier on the whole photometric term; 0 leaves only sparsity.
    pub photometric_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            sparsity_weight: 0.01,
            photometric: PhotometricKind::L1,
            photometric_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_dssim", self.lambda_dssim),
            ("sparsity_weight", self.sparsity_weight),
            ("photometric_weight", self.photometric_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative")));
            }
        }
        if self.lambda_dssim > 1.0 {
            return Err(Error::InvalidConfig("lambda_dssim must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `L1` (or MSE) plus `λ·D-SSIM`.
pub fn photometric_loss(rendered: &Image, target: &Image, config: &LossConfig) -> Result<f64> {
    Ok(photometric_loss_with_grad(rendered, target, config)?.0)
}

/// Photometric loss and its gradient with respect to `rendered`.
pub fn photometric_loss_with_grad(rendered: &Image, target: &Image, config: &LossConfig) -> Result<(f64, Vec<f64>)> {
    rendered.check_same_shape(target)?;
    let n = rendered.data.len().max(1) as f64;
    let mut grad = vec![0.0; rendered.data.len()];
    let mut value = 0.0;
    for (i, (r, t)) in rendered.data.iter().zip(&target.data).enumerate() {
        let d = r - t;
        match config.photometric {
            PhotometricKind::L1 => {
                value += d.abs();
                grad[i] = signum0(d) / n;
            }
            PhotometricKind::Mse => {
                value += d * d;
                grad[i] = 2.0 * d / n;
            }
        }
    }
    value /= n;
    if config.lambda_dssim != 0.0 {
        let (dssim, g) = dssim_with_grad(rendered, target)?;
        value += config.lambda_dssim * dssim;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += config.lambda_dssim * b;
        }
    }
    Ok((value, grad))
}

/// Mean over splats of the texture L1 norm, for textures realized as seen
/// from `camera`. Zero when textures are disabled.
pub fn sparsity_loss(scene: &Scene, camera: &Camera) -> Result<f64> {
    if !scene.model.textured() || scene.is_empty() {
        return Ok(0.0);
    }
    let textures = scene.realize_textures(camera)?;
    Ok(textures.iter().map(texture_l1_norm).sum::<f64>() / textures.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Initial center rate, multiplied by the camera extent.
    pub center: f64,
    /// Center rate reached at the final iteration (exponential decay).
    pub center_final: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh: f64,
    pub factors: f64,
    pub planes: f64,
    pub color_decoder: f64,
    /// Sinusoidal networks tolerate smaller steps than the ReLU decoder.
    pub alpha_decoder: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            center: 1.6e-4,
            center_final: 1.6e-6,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            factors: 1e-3,
            planes: 1e-3,
            color_decoder: 1e-3,
            alpha_decoder: 1e-3,
        }
    }
}

impl LearningRates {
    /// Faster rates for the short schedules of desk-scale scenes.
    pub fn desk() -> Self {
        Self {
            center: 1.6e-3,
            center_final: 1.6e-5,
            rotation: 5e-3,
            log_scale: 1e-2,
            opacity: 5e-2,
            sh: 1e-2,
            factors: 2e-2,
            planes: 1e-2,
            color_decoder: 2e-3,
            alpha_decoder: 5e-4,
        }
    }

    /// Rate of `class` at iteration `it` of `iterations`.
    pub fn rate(&self, class: ParamClass, it: usize, iterations: usize, extent: f64) -> f64 {
        match class {
            ParamClass::Center => {
                let frac = if iterations > 1 {
                    (it as f64 / (iterations - 1) as f64).min(1.0)
                } else {
                    0.0
                };
                let log = self.center.ln() * (1.0 - frac) + self.center_final.ln() * frac;
                log.exp() * extent
            }
            ParamClass::Rotation => self.rotation,
            ParamClass::LogScale => self.log_scale,
            ParamClass::Opacity => self.opacity,
            ParamClass::Sh => self.sh,
            ParamClass::ColorFactors | ParamClass::AlphaFactors => self.factors,
            ParamClass::ColorPlanes | ParamClass::AlphaPlanes => self.planes,
            ParamClass::ColorDecoder => self.color_decoder,
            ParamClass::AlphaDecoder => self.alpha_decoder,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// One adaptive-moment update of every class not in `frozen`, using
/// per-class step counts for bias correction.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut TrainState,
    adam: &AdamConfig,
    rate: impl Fn(ParamClass) -> f64,
    frozen: impl Fn(ParamClass) -> bool,
) {
    for class in ParamClass::ALL {
        if frozen(class) || params.get(class).is_empty() {
            continue;
        }
        state.steps[class.index()] += 1;
        let t = state.steps[class.index()] as i32;
        let bc1 = 1.0 - adam.beta1.powi(t);
        let bc2 = 1.0 - adam.beta2.powi(t);
        let lr = rate(class);
        let g = grads.get(class);
        let m = state.m.get_mut(class);
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = adam.beta1 * *mi + (1.0 - adam.beta1) * gi;
        }
        let v = state.v.get_mut(class);
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = adam.beta2 * *vi + (1.0 - adam.beta2) * gi * gi;
        }
        let (m, v) = (state.m.get(class), state.v.get(class));
        for ((p, mi), vi) in params.get_mut(class).iter_mut().zip(m).zip(v) {
            *p -= lr * (mi / bc1) / ((vi / bc2).sqrt() + adam.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Leading iterations with textures off and texture parameters frozen;
    /// `None` means one sixth of `iterations`.
    pub pretrain_iterations: Option<usize>,
    pub loss: LossConfig,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub seed: u64,
    pub render: RenderConfig,
    /// Evaluate held-out PSNR every this many iterations (0: only at the end).
    pub eval_every: usize,
    /// Record wall-clock time per iteration. Off keeps logs reproducible.
    pub log_wall_time: bool,
    /// Pause after this iteration count while keeping the schedule of the
    /// full run, so a checkpoint taken here resumes exactly.
    #[serde(default)]
    pub stop_after: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            pretrain_iterations: None,
            loss: LossConfig::default(),
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            seed: 0,
            render: RenderConfig::default(),
            eval_every: 0,
            log_wall_time: false,
            stop_after: None,
        }
    }
}

impl TrainConfig {
    pub fn pretrain(&self) -> usize {
        self.pretrain_iterations.unwrap_or(self.iterations / 6)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::InvalidConfig("Adam needs β₁, β₂ in [0, 1) and ε > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
    pub photometric: f64,
    pub sparsity: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s += &serde_json::to_string(r).expect("log records serialize");
            s.push('\n');
        }
        s
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn last_psnr(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.psnr)
    }
}

/// Camera spread used to scale the center learning rate: 1.1 × the
/// largest eye distance from the eyes' centroid (at least 1).
pub fn camera_extent(views: &[View]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let eyes: Vec<Vec3> = views.iter().map(|v| v.camera.eye()).collect();
    let centroid = eyes.iter().fold(Vec3::zeros(), |a, b| a + b) / eyes.len() as f64;
    let radius = eyes.iter().map(|e| (e - centroid).norm()).fold(0.0, f64::max) * 1.1;
    if radius > 0.0 {
        radius.max(1.0)
    } else {
        1.0
    }
}

/// View index used at iteration `it`: a fresh generator seeded by `seed`
/// on stream `it`, so resumed runs draw the same sequence.
pub fn sample_view(seed: u64, it: usize, count: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(it as u64);
    rng.gen_range(0..count)
}

/// Optimizes `scene` on `dataset.train`. Starts (or resumes, if the scene
/// carries optimizer state) at the stored iteration and runs until
/// `config.iterations`. A non-finite loss or update aborts with the last
/// finite scene.
pub fn train(scene: Scene, dataset: &Dataset, config: &TrainConfig) -> Result<(Scene, TrainLog)> {
    config.validate()?;
    scene.validate()?;
    let mut log = TrainLog::default();
    if config.iterations == 0 {
        return Ok((scene, log));
    }
    if dataset.train.is_empty() {
        return Err(Error::InvalidInput("training needs at least one view".into()));
    }
    let mut scene = scene;
    let shape = scene.parameters();
    let mut state = match scene.train_state.take() {
        Some(s) if s.m.same_shape(&shape) && s.v.same_shape(&shape) => s,
        _ => TrainState::new(&shape),
    };
    let extent = camera_extent(&dataset.train);
    let pretrain = config.pretrain();
    let eval_views = if dataset.test.is_empty() {
        &dataset.train
    } else {
        &dataset.test
    };
    let started = Instant::now();

    let end = config
        .stop_after
        .map_or(config.iterations, |s| s.min(config.iterations));
    for it in state.iteration..end {
        let texture_phase = it >= pretrain;
        let render = RenderConfig {
            textures: config.render.textures && texture_phase,
            ..config.render.clone()
        };
        let view = &dataset.train[sample_view(config.seed, it, dataset.train.len())];
        let (breakdown, grads) =
            match loss_breakdown_and_gradients(&scene, std::slice::from_ref(view), &config.loss, &render) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { .. }) => return Err(diverged(scene, state, it)),
                Err(e) => return Err(e),
            };
        let mut params = scene.parameters();
        let mut next_state = state.clone();
        adam_step(
            &mut params,
            &grads,
            &mut next_state,
            &config.adam,
            |c| config.lr.rate(c, it, config.iterations, extent),
            |c| c.is_texture() && !texture_phase,
        );
        if !params.is_finite() {
            return Err(diverged(scene, state, it));
        }
        scene.set_parameters(&params)?;
        scene.primitives.iter_mut().for_each(|p| p.normalize_rotation());
        state = next_state;
        state.iteration = it + 1;

        let done = it + 1 == end;
        let psnr = if done || (config.eval_every > 0 && (it + 1) % config.eval_every == 0) {
            Some(evaluate(&scene, eval_views, &render)?.mean_psnr)
        } else {
            None
        };
        log.records.push(record(
            it,
            breakdown,
            psnr,
            config.log_wall_time.then(|| started.elapsed().as_secs_f64() * 1e3),
        ));
    }
    scene.train_state = Some(state);
    Ok((scene, log))
}

fn record(it: usize, l: LossBreakdown, psnr: Option<f64>, wall_ms: Option<f64>) -> LogRecord {
    LogRecord {
        iter: it,
        loss: l.total,
        photometric: l.photometric,
        sparsity: l.sparsity,
        psnr,
        wall_ms,
    }
}

fn diverged(mut scene: Scene, state: TrainState, iteration: usize) -> Error {
    scene.train_state = Some(state);
    Error::Diverged {
        iteration,
        last_good: Box::new(scene),
    }
}
