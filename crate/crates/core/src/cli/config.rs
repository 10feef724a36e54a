//! Flat key-value run configuration with `include` support.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralfield::FieldConfig;
use crate::optim::{AdamConfig, LearningRates, LossConfig, PhotometricKind, TrainConfig};
use crate::render::{DepthOrdering, Reduction, RenderConfig};
use crate::scene::ModelConfig;
use crate::scene_io::ImageFormat;
use crate::texfield::TextureMode;

/// Every tunable of a run. Files may set any subset; `include = "path"`
/// (or a list of paths) pulls in other files first, relative to the
/// including file, and later keys win. Model keys left unset take the
/// values of the scene being trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub reference_mode: bool,

    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_iterations: Option<usize>,
    pub eval_every: usize,
    pub log_wall_time: bool,

    pub photometric: PhotometricKind,
    pub lambda_dssim: f64,
    pub sparsity_weight: f64,
    pub photometric_weight: f64,

    /// `"desk"` or `"default"`; supplies every `lr_*` key not set explicitly.
    pub lr_preset: String,
    pub lr_center: f64,
    pub lr_center_final: f64,
    pub lr_rotation: f64,
    pub lr_log_scale: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lr_factors: f64,
    pub lr_planes: f64,
    pub lr_color_decoder: f64,
    pub lr_alpha_decoder: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub texture_mode: Option<TextureMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neural: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texture_resolution: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view_dependent: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_dependent: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rotation_input: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plane_resolution: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoder_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_bands: Option<usize>,

    /// Random splats created when training a dataset without a scene.
    pub init_splats: usize,
    pub ordering: DepthOrdering,
    pub cull: bool,
    pub image_format: ImageFormat,
    /// Score 8-bit quantized renders, as exported images would be.
    pub eval_quantize: bool,

    pub gradcheck_samples: usize,
    pub gradcheck_h: f64,
    pub gradcheck_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lr = LearningRates::desk();
        let adam = AdamConfig::default();
        let loss = LossConfig::default();
        let mut cfg = Self {
            seed: 0,
            threads: 0,
            reference_mode: false,
            iterations: 1000,
            pretrain_iterations: None,
            eval_every: 0,
            log_wall_time: false,
            photometric: loss.photometric,
            lambda_dssim: loss.lambda_dssim,
            sparsity_weight: loss.sparsity_weight,
            photometric_weight: loss.photometric_weight,
            lr_preset: "desk".into(),
            lr_center: 0.0,
            lr_center_final: 0.0,
            lr_rotation: 0.0,
            lr_log_scale: 0.0,
            lr_opacity: 0.0,
            lr_sh: 0.0,
            lr_factors: 0.0,
            lr_planes: 0.0,
            lr_color_decoder: 0.0,
            lr_alpha_decoder: 0.0,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            texture_mode: None,
            neural: None,
            texture_resolution: None,
            view_dependent: None,
            time_dependent: None,
            rotation_input: None,
            plane_resolution: None,
            feature_channels: None,
            decoder_width: None,
            hidden_layers: None,
            omega0: None,
            frequency_bands: None,
            init_splats: 256,
            ordering: DepthOrdering::PerRay,
            cull: true,
            image_format: ImageFormat::Png,
            eval_quantize: true,
            gradcheck_samples: 240,
            gradcheck_h: 1e-5,
            gradcheck_tol: 1e-4,
        };
        cfg.set_learning_rates(&lr);
        cfg
    }
}

fn preset(name: &str) -> Result<LearningRates> {
    match name {
        "desk" => Ok(LearningRates::desk()),
        "default" => Ok(LearningRates::default()),
        other => Err(Error::InvalidConfig(format!(
            "unknown lr_preset '{other}' (desk, default)"
        ))),
    }
}

/// Reads `path` and its includes into one table. Keys of the including
/// file override included ones.
fn read_table(path: &Path, depth: usize) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(
        &text,
        path.parent().unwrap_or(Path::new(".")),
        &path.display().to_string(),
        depth,
    )
}

fn parse_table(text: &str, base: &Path, origin: &str, depth: usize) -> Result<toml::Table> {
    if depth > 16 {
        return Err(Error::InvalidConfig(format!("{origin}: include nesting too deep")));
    }
    let mut own: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{origin}: {e}")))?;
    let includes: Vec<PathBuf> = match own.remove("include") {
        None => Vec::new(),
        Some(toml::Value::String(s)) => vec![s.into()],
        Some(toml::Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(PathBuf::from(s)),
                _ => Err(Error::InvalidConfig("include entries must be strings".into())),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(Error::InvalidConfig("include must be a path or a list of paths".into())),
    };
    let mut merged = toml::Table::new();
    for inc in includes {
        merged.extend(read_table(&base.join(inc), depth + 1)?);
    }
    if let Some((k, _)) = own.iter().find(|(_, v)| v.is_table()) {
        return Err(Error::InvalidConfig(format!(
            "{origin}: key '{k}' is a table; the format is flat"
        )));
    }
    merged.extend(own);
    Ok(merged)
}

impl RunConfig {
    /// Defaults, overlaid with `path` (and its includes) when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(path) => Self::from_table(read_table(path, 0)?, &path.display().to_string()),
        }
    }

    /// Parses configuration text; includes resolve against the working directory.
    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text, Path::new("."), "<config>", 0)?, "<config>")
    }

    fn from_table(table: toml::Table, origin: &str) -> Result<Self> {
        let mut base = Self::default();
        if let Some(v) = table.get("lr_preset") {
            let name = v
                .as_str()
                .ok_or_else(|| Error::InvalidConfig("lr_preset must be a string".into()))?;
            base.set_learning_rates(&preset(name)?);
        }
        let mut merged = toml::Table::try_from(&base).expect("config serializes");
        merged.extend(table);
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        preset(&self.lr_preset)?;
        self.train_config().validate()?;
        if self.gradcheck_samples == 0 || !(self.gradcheck_h > 0.0) || !(self.gradcheck_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "gradcheck needs samples > 0, h > 0 and tol > 0".into(),
            ));
        }
        Ok(())
    }

    fn set_learning_rates(&mut self, lr: &LearningRates) {
        self.lr_center = lr.center;
        self.lr_center_final = lr.center_final;
        self.lr_rotation = lr.rotation;
        self.lr_log_scale = lr.log_scale;
        self.lr_opacity = lr.opacity;
        self.lr_sh = lr.sh;
        self.lr_factors = lr.factors;
        self.lr_planes = lr.planes;
        self.lr_color_decoder = lr.color_decoder;
        self.lr_alpha_decoder = lr.alpha_decoder;
    }

    pub fn learning_rates(&self) -> LearningRates {
        LearningRates {
            center: self.lr_center,
            center_final: self.lr_center_final,
            rotation: self.lr_rotation,
            log_scale: self.lr_log_scale,
            opacity: self.lr_opacity,
            sh: self.lr_sh,
            factors: self.lr_factors,
            planes: self.lr_planes,
            color_decoder: self.lr_color_decoder,
            alpha_decoder: self.lr_alpha_decoder,
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            cull: self.cull,
            ordering: self.ordering,
            reduction: if self.reference_mode || self.threads == 1 {
                Reduction::Reference
            } else {
                Reduction::Fast
            },
            ..RenderConfig::default()
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_dssim: self.lambda_dssim,
            sparsity_weight: self.sparsity_weight,
            photometric: self.photometric,
            photometric_weight: self.photometric_weight,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            pretrain_iterations: self.pretrain_iterations,
            loss: self.loss_config(),
            lr: self.learning_rates(),
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            seed: self.seed,
            render: self.render_config(),
            eval_every: self.eval_every,
            log_wall_time: self.log_wall_time && !self.reference_mode,
            stop_after: None,
        }
    }

    /// `base` with every model key this config sets applied on top.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        let mut m = base.clone();
        if let Some(v) = self.texture_mode {
            m.texture_mode = v;
        }
        if let Some(v) = self.neural {
            m.neural = v;
        }
        if let Some(v) = self.texture_resolution {
            m.resolution = v;
        }
        let f: &mut FieldConfig = &mut m.field;
        macro_rules! apply {
            ($($key:ident => $field:ident),*) => {$(
                if let Some(v) = self.$key {
                    f.$field = v;
                }
            )*};
        }
        apply!(
            view_dependent => view_dependent,
            time_dependent => time_dependent,
            rotation_input => rotation_input,
            plane_resolution => plane_resolution,
            feature_channels => channels,
            decoder_width => decoder_width,
            hidden_layers => hidden_layers,
            omega0 => omega0,
            frequency_bands => frequency_bands
        );
        f.texture_resolution = m.resolution;
        m
    }

    /// Pins every model key to `model`, so the written record is complete.
    pub fn resolve_model(&mut self, model: &ModelConfig) {
        self.texture_mode = Some(model.texture_mode);
        self.neural = Some(model.neural);
        self.texture_resolution = Some(model.resolution);
        let f = &model.field;
        self.view_dependent = Some(f.view_dependent);
        self.time_dependent = Some(f.time_dependent);
        self.rotation_input = Some(f.rotation_input);
        self.plane_resolution = Some(f.plane_resolution);
        self.feature_channels = Some(f.channels);
        self.decoder_width = Some(f.decoder_width);
        self.hidden_layers = Some(f.hidden_layers);
        self.omega0 = Some(f.omega0);
        self.frequency_bands = Some(f.frequency_bands);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("effective_config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn preset_fills_unset_rates_only() {
        let cfg = RunConfig::parse_str("lr_preset = \"default\"\nlr_sh = 0.5\n").unwrap();
        assert_eq!(cfg.lr_sh, 0.5);
        assert_eq!(cfg.lr_opacity, LearningRates::default().opacity);
        assert_eq!(cfg.lr_factors, LearningRates::default().factors);
    }

    #[test]
    fn unknown_keys_and_tables_are_rejected() {
        assert!(RunConfig::parse_str("iterashuns = 3\n").is_err());
        assert!(RunConfig::parse_str("[section]\nseed = 1\n").is_err());
        assert!(RunConfig::parse_str("lr_preset = \"fast\"\n").is_err());
    }

    #[test]
    fn includes_are_overridden_by_the_including_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.toml"), "iterations = 7\nseed = 3\n").unwrap();
        std::fs::write(dir.path().join("run.toml"), "include = \"base.toml\"\nseed = 9\n").unwrap();
        let cfg = RunConfig::load(Some(&dir.path().join("run.toml"))).unwrap();
        assert_eq!((cfg.iterations, cfg.seed), (7, 9));
    }
}
