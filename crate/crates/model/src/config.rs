//! Model presets and the TOML training configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{ModelError, Result};

/// Network architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Network input size in pixels; both multiples of 32.
    pub input_width: usize,
    pub input_height: usize,
    pub stem_channels: usize,
    /// Output widths of the four stride-2 stages (strides 4, 8, 16, 32).
    pub stage_widths: [usize; 4],
    pub stage_depths: [usize; 4],
    /// Bottleneck count of every neck and fusion block.
    pub neck_depth: usize,
    pub hidden_dim: usize,
    pub encoder_heads: usize,
    pub ffn_ratio: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    /// Sampling points per head and level.
    pub sampling_points: usize,
    pub num_queries: usize,
    pub tan_heads: usize,
    /// Cut the gradient through reference boxes between decoder layers.
    pub detach_layer_references: bool,
}

impl ModelConfig {
    /// Default desk-scale network.
    pub fn nano_desk() -> Self {
        Self {
            input_width: 640,
            input_height: 640,
            stem_channels: 32,
            stage_widths: [64, 128, 256, 256],
            stage_depths: [1, 2, 2, 1],
            neck_depth: 1,
            hidden_dim: 256,
            encoder_heads: 8,
            ffn_ratio: 4,
            decoder_layers: 6,
            decoder_heads: 8,
            sampling_points: 4,
            num_queries: 60,
            tan_heads: 8,
            detach_layer_references: true,
        }
    }

    /// Very small network for CPU training on downscaled frames.
    pub fn micro() -> Self {
        Self {
            input_width: 128,
            input_height: 128,
            stem_channels: 8,
            stage_widths: [16, 32, 48, 64],
            stage_depths: [1, 1, 1, 1],
            neck_depth: 1,
            hidden_dim: 32,
            encoder_heads: 4,
            ffn_ratio: 2,
            decoder_layers: 3,
            decoder_heads: 4,
            sampling_points: 2,
            num_queries: 30,
            tan_heads: 4,
            detach_layer_references: true,
        }
    }

    /// Smallest valid network, for gradient audits and unit tests.
    pub fn tiny() -> Self {
        Self {
            input_width: 64,
            input_height: 64,
            stem_channels: 4,
            stage_widths: [4, 8, 8, 8],
            stage_depths: [1, 1, 1, 1],
            neck_depth: 1,
            hidden_dim: 8,
            encoder_heads: 2,
            ffn_ratio: 2,
            decoder_layers: 2,
            decoder_heads: 2,
            sampling_points: 2,
            num_queries: 4,
            tan_heads: 2,
            detach_layer_references: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "nano-desk" => Ok(Self::nano_desk()),
            "micro" => Ok(Self::micro()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(ModelError::Config(format!(
                "unknown preset `{name}` (expected nano-desk, micro or tiny)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.input_width == 0 || self.input_height == 0 || self.input_width % 32 != 0 || self.input_height % 32 != 0 {
            return bad(format!(
                "model.input_width/input_height must be positive multiples of 32, got {}x{}",
                self.input_width, self.input_height
            ));
        }
        for (i, &w) in self.stage_widths.iter().enumerate() {
            if w < 2 || w % 2 != 0 {
                return bad(format!("model.stage_widths[{i}] must be even and >= 2"));
            }
        }
        if self.stem_channels == 0 {
            return bad("model.stem_channels must be positive".into());
        }
        let d = self.hidden_dim;
        if d == 0 || d % 4 != 0 {
            return bad("model.hidden_dim must be a positive multiple of 4".into());
        }
        for (key, h) in [
            ("encoder_heads", self.encoder_heads),
            ("decoder_heads", self.decoder_heads),
            ("tan_heads", self.tan_heads),
        ] {
            if h == 0 || d % h != 0 {
                return bad(format!("model.{key} must divide hidden_dim {d}"));
            }
        }
        if self.decoder_layers == 0 || self.sampling_points == 0 || self.num_queries == 0 || self.ffn_ratio == 0 {
            return bad("decoder_layers, sampling_points, num_queries and ffn_ratio must be positive".into());
        }
        for (key, v, max) in [
            ("input_width", self.input_width, 4096),
            ("input_height", self.input_height, 4096),
            ("stem_channels", self.stem_channels, 512),
            ("hidden_dim", self.hidden_dim, 1024),
            ("decoder_layers", self.decoder_layers, 16),
            ("sampling_points", self.sampling_points, 16),
            ("num_queries", self.num_queries, 1000),
            ("ffn_ratio", self.ffn_ratio, 8),
        ] {
            if v > max {
                return bad(format!("model.{key} must be at most {max}, got {v}"));
            }
        }
        if self.stage_widths.iter().any(|&w| w > 1024) {
            return bad("model.stage_widths entries must be at most 1024".into());
        }
        Ok(())
    }

    /// Feature map sizes `(h, w)` at strides 8, 16 and 32.
    pub fn level_shapes(&self) -> [(usize, usize); 3] {
        let (h, w) = (self.input_height, self.input_width);
        [(h / 8, w / 8), (h / 16, w / 16), (h / 32, w / 32)]
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::nano_desk()
    }
}

/// Loss weights and focal parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub cls_weight: f64,
    pub l1_weight: f64,
    pub giou_weight: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            cls_weight: 2.0,
            l1_weight: 5.0,
            giou_weight: 2.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

/// Query lifecycle thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Detect queries scoring above this become tracks.
    pub tau_new: f64,
    /// Tracks scoring at or below this count a miss.
    pub tau_keep: f64,
    /// Tracks scoring above this are reported.
    pub tau_emit: f64,
    /// Consecutive misses tolerated before a track is dropped;
    /// `u32::MAX` keeps tracks forever.
    pub max_misses: u32,
    /// Carry track queries between frames. Disabling clears tracks every frame.
    pub propagate: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau_new: 0.5,
            tau_keep: 0.5,
            tau_emit: 0.5,
            max_misses: 5,
            propagate: true,
        }
    }
}

/// Optimizer schedule of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub iterations: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of the schedule after which the learning rate drops.
    pub lr_drop_at: f64,
    pub lr_drop_factor: f64,
    pub grad_clip: f64,
    /// Frames per clip (stage 2 only).
    pub clip_len: usize,
    /// Largest random gap between clip frames (stage 2 only).
    pub max_stride: usize,
    /// Cut the gradient through reference boxes carried to the next frame.
    pub detach_track_references: bool,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            lr: 2e-4,
            weight_decay: 1e-4,
            lr_drop_at: 0.8,
            lr_drop_factor: 0.1,
            grad_clip: 0.1,
            clip_len: 5,
            max_stride: 3,
            detach_track_references: true,
            checkpoint_every: 0,
        }
    }
}

impl StageConfig {
    pub fn lr_at(&self, iteration: usize) -> f64 {
        if (iteration as f64) >= self.lr_drop_at * self.iterations as f64 {
            self.lr * self.lr_drop_factor
        } else {
            self.lr
        }
    }
}

/// Complete training/tracking configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Base model preset; `[model]` keys override it.
    pub preset: String,
    pub stage: u8,
    pub seed: u64,
    /// Stage-1 checkpoint that stage 2 starts from.
    pub stage1_checkpoint: Option<PathBuf>,
    /// Checkpoint to resume the current stage from.
    pub resume: Option<PathBuf>,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub tracker: TrackerConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: "nano-desk".into(),
            stage: 1,
            seed: 0,
            stage1_checkpoint: None,
            resume: None,
            model: ModelConfig::nano_desk(),
            loss: LossConfig::default(),
            tracker: TrackerConfig::default(),
            stage1: StageConfig::default(),
            stage2: StageConfig::default(),
        }
    }
}

fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ModelError::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ModelError::Config(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    // TOML literal if it parses as one, else a bare string
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(ModelError::Config(format!("`{p}` is not a section"))),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl TrainConfig {
    /// Parses a configuration document and applies dotted `key=value`
    /// overrides on top. Unknown keys anywhere are errors.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user: Table = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            set_path(&mut user, &path, value)?;
        }
        let preset = match user.get("preset") {
            None => "nano-desk".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(ModelError::Config("`preset` must be a string".into())),
        };
        let defaults = TrainConfig {
            preset: preset.clone(),
            model: ModelConfig::preset(&preset)?,
            ..TrainConfig::default()
        };
        let mut base = Table::try_from(&defaults).map_err(|e| ModelError::Config(e.to_string()))?;
        merge(&mut base, &user);
        let cfg: TrainConfig = base.try_into().map_err(|e: toml::de::Error| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            ModelError::Config(m) => ModelError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !matches!(self.stage, 1 | 2) {
            return Err(ModelError::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.stage == 2 && self.stage1_checkpoint.is_none() && self.resume.is_none() {
            return Err(ModelError::Config("stage 2 requires `stage1_checkpoint`".into()));
        }
        let t = &self.tracker;
        for (k, v) in [("tau_new", t.tau_new), ("tau_keep", t.tau_keep), ("tau_emit", t.tau_emit)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::Config(format!("tracker.{k} must lie in [0, 1]")));
            }
        }
        let l = &self.loss;
        if [l.cls_weight, l.l1_weight, l.giou_weight, l.focal_alpha, l.focal_gamma]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(ModelError::Config("loss weights must be finite and non-negative".into()));
        }
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if !(s.lr.is_finite() && s.lr > 0.0) || s.grad_clip <= 0.0 {
                return Err(ModelError::Config(format!("{name}.lr and {name}.grad_clip must be positive")));
            }
            if s.clip_len == 0 || s.max_stride == 0 {
                return Err(ModelError::Config(format!("{name}.clip_len and {name}.max_stride must be positive")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_then_overrides() {
        let cfg = TrainConfig::from_toml(
            "preset = \"micro\"\n[model]\nnum_queries = 12\n[stage1]\nlr = 1e-3\n",
            &["stage1.iterations=7".into(), "tracker.max_misses=3".into()],
        )
        .unwrap();
        assert_eq!(cfg.model.hidden_dim, 32);
        assert_eq!(cfg.model.num_queries, 12);
        assert_eq!(cfg.stage1.lr, 1e-3);
        assert_eq!(cfg.stage1.iterations, 7);
        assert_eq!(cfg.tracker.max_misses, 3);
        assert_eq!(cfg.loss.l1_weight, 5.0);
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let e = TrainConfig::from_toml("[stage1]\nlearning_rate = 1\n", &[]).unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        let e = TrainConfig::from_toml("", &["tracker.tau=0.3".into()]).unwrap_err();
        assert!(e.to_string().contains("tau"), "{e}");
        assert!(TrainConfig::from_toml("", &["novalue".into()]).is_err());
    }

    #[test]
    fn stage2_needs_stage1_checkpoint() {
        assert!(TrainConfig::from_toml("stage = 2\n", &[]).is_err());
        let ok = TrainConfig::from_toml("stage = 2\nstage1_checkpoint = \"a.qtar\"\n", &[]).unwrap();
        assert_eq!(ok.stage, 2);
    }

    #[test]
    fn resolved_snapshot_round_trips() {
        let cfg = TrainConfig::from_toml("preset = \"tiny\"\nseed = 9\n", &[]).unwrap();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(TrainConfig::from_toml("[model]\ninput_width = 100\n", &[]).is_err());
        assert!(TrainConfig::from_toml("[model]\nhidden_dim = 30\n", &[]).is_err());
        assert!(TrainConfig::from_toml("preset = \"huge\"\n", &[]).is_err());
    }
}
