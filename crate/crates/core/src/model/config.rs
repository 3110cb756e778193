use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature channels `C` carried through the deep extractor.
    pub channels: usize,
    pub num_blocks: usize,
    /// Blocks per residual group.
    pub group_size: usize,
    /// One enhancement branch per dilation rate.
    pub dilations: Vec<usize>,
    /// Channels of each enhancement branch.
    pub branch_width: usize,
    /// Bottleneck width of the residual block.
    pub erb_hidden: usize,
    /// Number of 3x3 convolutions inside the residual bottleneck.
    pub erb_depth: usize,
    /// Upscale factor.
    pub scale: usize,
    pub enable_attention: bool,
    pub enable_modulation: bool,
}

/// Named architecture presets.
pub const PRESETS: [&str; 3] = ["dimosr", "dimosr-s", "toy"];

impl ModelConfig {
    /// 36 channels, 18 blocks in 3 groups of 6.
    pub fn dimosr(scale: usize) -> Self {
        ModelConfig {
            channels: 36,
            num_blocks: 18,
            group_size: 6,
            dilations: vec![4, 8, 12, 16],
            branch_width: 9,
            erb_hidden: 18,
            erb_depth: 2,
            scale,
            enable_attention: true,
            enable_modulation: true,
        }
    }

    /// 32 channels, 16 blocks in 4 groups of 4.
    pub fn dimosr_s(scale: usize) -> Self {
        ModelConfig {
            channels: 32,
            num_blocks: 16,
            group_size: 4,
            dilations: vec![4, 8, 12, 16],
            branch_width: 8,
            erb_hidden: 16,
            erb_depth: 2,
            scale,
            enable_attention: true,
            enable_modulation: true,
        }
    }

    /// Desk-scale network: 16 channels, 4 blocks in 2 groups, x2.
    pub fn toy() -> Self {
        ModelConfig {
            channels: 16,
            num_blocks: 4,
            group_size: 2,
            dilations: vec![4, 8, 12, 16],
            branch_width: 4,
            erb_hidden: 8,
            erb_depth: 2,
            scale: 2,
            enable_attention: true,
            enable_modulation: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dimosr" => Ok(Self::dimosr(4)),
            "dimosr-s" => Ok(Self::dimosr_s(4)),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected one of {PRESETS:?})"
            ))),
        }
    }

    pub fn with_scale(mut self, scale: usize) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_flags(mut self, attention: bool, modulation: bool) -> Self {
        self.enable_attention = attention;
        self.enable_modulation = modulation;
        self
    }

    pub fn num_groups(&self) -> usize {
        self.num_blocks / self.group_size
    }

    /// How many of (modulation, attention) outputs the enhancement block fuses.
    pub fn feb_outputs(&self) -> usize {
        self.enable_modulation as usize + self.enable_attention as usize
    }

    /// Channel count of the coefficient convolution: `alpha, beta` for
    /// modulation plus `gamma` for attention.
    pub fn coeff_channels(&self) -> usize {
        self.channels * (2 * self.enable_modulation as usize + self.enable_attention as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.num_blocks == 0 || self.group_size == 0 {
            return fail("channels, num_blocks and group_size must be positive".into());
        }
        if !self.num_blocks.is_multiple_of(self.group_size) {
            return fail(format!(
                "num_blocks {} is not divisible by group_size {}",
                self.num_blocks, self.group_size
            ));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return fail(format!("dilations must be non-empty and positive: {:?}", self.dilations));
        }
        if self.branch_width == 0 || self.erb_hidden == 0 {
            return fail("branch_width and erb_hidden must be positive".into());
        }
        if !(2..=4).contains(&self.scale) {
            return fail(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::dimosr(4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("edsr").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::toy();
        c.num_blocks = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.dilations.clear();
        assert!(c.validate().is_err());
        assert!(ModelConfig::toy().with_scale(5).validate().is_err());
    }

    #[test]
    fn coefficient_channels_follow_flags() {
        let c = ModelConfig::dimosr(4);
        assert_eq!(c.coeff_channels(), 108);
        assert_eq!(c.clone().with_flags(false, true).coeff_channels(), 72);
        assert_eq!(c.clone().with_flags(true, false).coeff_channels(), 36);
        assert_eq!(c.with_flags(false, false).coeff_channels(), 0);
    }
}
