use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// Every hyperparameter of a model and its training run. Serialized as TOML
/// next to the weights; the checkpoint hash covers it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Voxel bit depth of the frames the model codes.
    pub depth: u32,
    /// Encoder widths at scales 0, 1 and 2.
    pub encoder_widths: [usize; 3],
    pub bottleneck_channels: usize,
    /// Decoder widths at scales 2, 1 and 0.
    pub decoder_widths: [usize; 3],
    pub predictor_hidden: usize,
    /// IR blocks per stage.
    pub irb_blocks: usize,
    pub lambda: f64,
    pub gop: usize,
    pub seed: u64,
    /// Initial spread of the factorized priors.
    pub prior_init_scale: f64,
    /// Tail mass left outside each channel's coded support.
    pub tail_mass: f64,
    pub steps: usize,
    /// Probability that a training step predicts from the model's own intra
    /// reconstruction of the previous frame instead of the original.
    pub decoded_reference_prob: f64,
    pub adam: AdamConfig,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            depth: 10,
            encoder_widths: [32, 64, 64],
            bottleneck_channels: 8,
            decoder_widths: [64, 64, 32],
            predictor_hidden: 64,
            irb_blocks: 3,
            lambda: 4.0,
            gop: 8,
            seed: 0,
            prior_init_scale: 2.0,
            tail_mass: crate::entropy::DEFAULT_TAIL_MASS,
            steps: 2000,
            decoded_reference_prob: 0.5,
            adam: AdamConfig::default(),
        }
    }
}

impl CodecConfig {
    /// Small widths for depth-6 synthetic data; trains in minutes on a CPU.
    pub fn toy() -> Self {
        Self {
            depth: 6,
            encoder_widths: [8, 16, 16],
            bottleneck_channels: 8,
            decoder_widths: [16, 16, 8],
            predictor_hidden: 16,
            irb_blocks: 1,
            lambda: 8.0,
            gop: 4,
            steps: 2000,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(4..=21).contains(&self.depth) {
            return bad(format!("depth {} outside 4..=21", self.depth));
        }
        let widths = self.encoder_widths.iter().chain(&self.decoder_widths);
        if widths.chain([&self.predictor_hidden]).any(|&w| w < 4) {
            return bad("layer widths must be at least 4".into());
        }
        if self.bottleneck_channels == 0 || self.bottleneck_channels > 255 {
            return bad(format!("bottleneck_channels {} outside 1..=255", self.bottleneck_channels));
        }
        if self.predictor_hidden + self.bottleneck_channels < 4 {
            return bad("predictor width too small".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and non-negative", self.lambda));
        }
        if self.gop == 0 {
            return bad("gop must be at least 1".into());
        }
        if !(self.prior_init_scale > 0.0) || !(self.tail_mass > 0.0 && self.tail_mass < 0.5) {
            return bad("prior_init_scale must be positive and tail_mass in (0, 0.5)".into());
        }
        if !(0.0..=1.0).contains(&self.decoded_reference_prob) {
            return bad(format!("decoded_reference_prob {} outside [0, 1]", self.decoded_reference_prob));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for c in [CodecConfig::default(), CodecConfig::toy()] {
            c.validate().unwrap();
            assert_eq!(CodecConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
    }

    #[test]
    fn partial_files_take_defaults() {
        let c = CodecConfig::from_toml("lambda = 2.5\n[adam]\nlr = 0.001\n").unwrap();
        assert_eq!(c.lambda, 2.5);
        assert_eq!(c.adam.lr, 0.001);
        assert_eq!(c.depth, CodecConfig::default().depth);
    }

    #[test]
    fn rejects_nonsense() {
        assert!(CodecConfig::from_toml("depth = 2").is_err());
        assert!(CodecConfig::from_toml("lambda = -1.0").is_err());
        assert!(CodecConfig::from_toml("unknown_key = 1").is_err());
        assert!(CodecConfig::from_toml("gop = 0").is_err());
    }
}
