use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv;
use crate::tensor::UpsampleMode;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Architecture hyperparameters and ablation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Number of encoder stages before the bottleneck.
    pub depth: usize,
    pub channel_multiplier: usize,
    /// Upper bound on any stage width.
    pub max_channels: usize,
    pub dilation_rate: usize,
    /// Encoder-side dropout inside residual blocks.
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    pub se_reduction: usize,
    pub enable_encoder_booster: bool,
    pub enable_bottleneck_enhancement: bool,
    pub enable_se: bool,
    pub upsample_mode: UpsampleMode,
    /// Sigmoid on logits before thresholding. When off, logits are clamped to [0, 1].
    pub enable_smoothing: bool,
    pub enable_adaptive_threshold: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            base_channels: 32,
            depth: 4,
            channel_multiplier: 2,
            max_channels: 256,
            dilation_rate: 2,
            dropout_rate: 0.2,
            leaky_slope: 0.01,
            se_reduction: 8,
            enable_encoder_booster: true,
            enable_bottleneck_enhancement: true,
            enable_se: true,
            upsample_mode: UpsampleMode::Bilinear,
            enable_smoothing: true,
            enable_adaptive_threshold: true,
        }
    }
}

/// Ablation stages in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Baseline,
    EncoderBooster,
    BottleneckEnhancement,
    SqueezeExcitation,
    AdaptiveThreshold,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Baseline,
        Stage::EncoderBooster,
        Stage::BottleneckEnhancement,
        Stage::SqueezeExcitation,
        Stage::AdaptiveThreshold,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Baseline => "BL",
            Stage::EncoderBooster => "BL+EB",
            Stage::BottleneckEnhancement => "BL+EB+BE",
            Stage::SqueezeExcitation => "BL+EB+BE+SE",
            Stage::AdaptiveThreshold => "BL+EB+BE+SE+AT",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl ModelConfig {
    /// Residual U-Net with every FS-Net addition switched off.
    pub fn baseline(&self) -> Self {
        ModelConfig {
            enable_encoder_booster: false,
            enable_bottleneck_enhancement: false,
            enable_se: false,
            enable_adaptive_threshold: false,
            ..self.clone()
        }
    }

    /// The cumulative configuration for one ablation stage. Smoothing stays on.
    pub fn for_stage(&self, stage: Stage) -> Self {
        let mut c = self.baseline();
        c.enable_smoothing = true;
        c.enable_encoder_booster = stage >= Stage::EncoderBooster;
        c.enable_bottleneck_enhancement = stage >= Stage::BottleneckEnhancement;
        c.enable_se = stage >= Stage::SqueezeExcitation;
        c.enable_adaptive_threshold = stage >= Stage::AdaptiveThreshold;
        c
    }

    /// Width of encoder stage `i`; `i == depth` is the bottleneck.
    pub fn width(&self, i: usize) -> usize {
        let mut w = self.base_channels;
        for _ in 0..i {
            w = w.saturating_mul(self.channel_multiplier);
        }
        w.min(self.max_channels)
    }

    /// Spatial extents must be multiples of this after padding.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 {
            return bad("in_channels must be at least 1".into());
        }
        if self.base_channels == 0 || self.max_channels == 0 {
            return bad("base_channels and max_channels must be at least 1".into());
        }
        if self.depth == 0 || self.depth > 8 {
            return bad(format!("depth must lie in 1..=8, got {}", self.depth));
        }
        if self.channel_multiplier == 0 {
            return bad("channel_multiplier must be at least 1".into());
        }
        if self.dilation_rate == 0 {
            return bad("dilation_rate must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad(format!("leaky_slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        if self.enable_se {
            if self.se_reduction == 0 {
                return bad("se_reduction must be at least 1".into());
            }
            for i in 0..=self.depth {
                let w = self.width(i);
                if w % self.se_reduction != 0 {
                    return bad(format!(
                        "se_reduction {} does not divide stage width {w}",
                        self.se_reduction
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("in_channels", self.in_channels.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("depth", self.depth.to_string()),
            ("channel_multiplier", self.channel_multiplier.to_string()),
            ("max_channels", self.max_channels.to_string()),
            ("dilation_rate", self.dilation_rate.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("se_reduction", self.se_reduction.to_string()),
            ("enable_encoder_booster", self.enable_encoder_booster.to_string()),
            ("enable_bottleneck_enhancement", self.enable_bottleneck_enhancement.to_string()),
            ("enable_se", self.enable_se.to_string()),
            ("upsample_mode", self.upsample_mode.to_string()),
            ("enable_smoothing", self.enable_smoothing.to_string()),
            ("enable_adaptive_threshold", self.enable_adaptive_threshold.to_string()),
        ]
    }

    /// Applies one key; returns false for keys this type does not own.
    pub(crate) fn apply(&mut self, key: &str, raw: &str) -> Result<bool> {
        match key {
            "in_channels" => self.in_channels = kv::value(key, raw)?,
            "base_channels" => self.base_channels = kv::value(key, raw)?,
            "depth" => self.depth = kv::value(key, raw)?,
            "channel_multiplier" => self.channel_multiplier = kv::value(key, raw)?,
            "max_channels" => self.max_channels = kv::value(key, raw)?,
            "dilation_rate" => self.dilation_rate = kv::value(key, raw)?,
            "dropout_rate" => self.dropout_rate = kv::value(key, raw)?,
            "leaky_slope" => self.leaky_slope = kv::value(key, raw)?,
            "se_reduction" => self.se_reduction = kv::value(key, raw)?,
            "enable_encoder_booster" => self.enable_encoder_booster = kv::flag(key, raw)?,
            "enable_bottleneck_enhancement" => {
                self.enable_bottleneck_enhancement = kv::flag(key, raw)?
            }
            "enable_se" => self.enable_se = kv::flag(key, raw)?,
            "upsample_mode" => {
                self.upsample_mode = raw.parse().map_err(|e| Error::Config(format!("{e}")))?
            }
            "enable_smoothing" => self.enable_smoothing = kv::flag(key, raw)?,
            "enable_adaptive_threshold" => self.enable_adaptive_threshold = kv::flag(key, raw)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Builds a config from defaults plus entries, rejecting unknown keys.
    pub fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = ModelConfig::default();
        for (k, v) in entries {
            if !c.apply(k, v)? {
                return Err(Error::Config(format!("unknown model key {k:?}")));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&kv::parse(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        kv::render(self.to_entries())
    }
}
