use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;
use crate::synthdata::NUM_JOINTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub feature_spatial: usize,
    pub feature_channels: usize,
    pub bottleneck_channels: usize,
    pub heatmap_size: usize,
    pub num_joints: usize,
    pub context_n: usize,
    pub gap_g: usize,
    pub k_value: usize,
    pub num_classes: usize,
    pub fc_dims: [usize; 2],
    pub classifier_conv_channels: usize,
    /// Number of 3×3×3 convolutions in the temporal module (1 to 5). Pooling,
    /// normalisation and upsampling sit in the middle once there are two or more.
    pub conv_blocks: usize,
    /// Narrowest encoder stage.
    pub encoder_min_channels: usize,
    /// Narrowest decoder stage.
    pub decoder_min_channels: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            feature_spatial: 4,
            feature_channels: 64,
            bottleneck_channels: 16,
            heatmap_size: 16,
            num_joints: NUM_JOINTS,
            context_n: 5,
            gap_g: 15,
            k_value: 1,
            num_classes: 6,
            fc_dims: [128, 64],
            classifier_conv_channels: 16,
            conv_blocks: 4,
            encoder_min_channels: 8,
            decoder_min_channels: 16,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 7,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            image_size: 256,
            feature_spatial: 8,
            feature_channels: 2048,
            bottleneck_channels: 512,
            heatmap_size: 64,
            num_classes: 15,
            fc_dims: [4096, 2048],
            classifier_conv_channels: 512,
            encoder_min_channels: 64,
            decoder_min_channels: 64,
            ..Self::desk()
        }
    }

    /// Smallest shapes the architecture admits; used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            feature_spatial: 4,
            feature_channels: 8,
            bottleneck_channels: 4,
            heatmap_size: 8,
            context_n: 3,
            num_classes: 3,
            fc_dims: [6, 5],
            classifier_conv_channels: 2,
            encoder_min_channels: 4,
            decoder_min_channels: 4,
            conv_blocks: 2,
            ..Self::desk()
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig::new(self.context_n, self.gap_g, self.k_value)
    }

    pub fn encoder_stages(&self) -> usize {
        (self.image_size / self.feature_spatial).trailing_zeros() as usize
    }

    pub fn decoder_stages(&self) -> usize {
        (self.heatmap_size / self.feature_spatial).trailing_zeros() as usize
    }

    /// Output channels of each encoder stage, ending at `feature_channels`.
    pub fn encoder_channels(&self) -> Vec<usize> {
        let n = self.encoder_stages();
        (0..n)
            .map(|i| (self.feature_channels >> (n - 1 - i)).max(self.encoder_min_channels))
            .collect()
    }

    pub fn decoder_channels(&self) -> Vec<usize> {
        (1..=self.decoder_stages())
            .map(|i| (self.feature_channels >> i).max(self.decoder_min_channels))
            .collect()
    }

    /// Whether the temporal module pools, normalises and upsamples.
    pub fn temporal_has_pool(&self) -> bool {
        self.conv_blocks >= 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let pow2 = |v: usize| v.is_power_of_two();
        if self.num_joints != NUM_JOINTS {
            return bad(format!("num_joints must be {NUM_JOINTS}, got {}", self.num_joints));
        }
        if self.feature_spatial == 0 || self.image_size % self.feature_spatial != 0 || !pow2(self.image_size / self.feature_spatial) {
            return bad(format!(
                "feature_spatial {} must divide image_size {} by a power of two",
                self.feature_spatial, self.image_size
            ));
        }
        if self.image_size == self.feature_spatial {
            return bad("the encoder needs at least one downsampling stage".into());
        }
        if self.heatmap_size % self.feature_spatial != 0 || !pow2(self.heatmap_size / self.feature_spatial) {
            return bad(format!(
                "heatmap_size {} must be feature_spatial {} times a power of two",
                self.heatmap_size, self.feature_spatial
            ));
        }
        if !(1..=5).contains(&self.conv_blocks) {
            return bad(format!("conv_blocks must be in 1..=5, got {}", self.conv_blocks));
        }
        if self.temporal_has_pool() && self.feature_spatial % 2 != 0 {
            return bad("spatial pooling needs an even feature_spatial".into());
        }
        if self.context_n == 0 || self.k_value == 0 || self.gap_g == 0 {
            return bad("context, gap and k must be positive".into());
        }
        if self.k_value > self.context_n {
            return bad(format!(
                "the temporal module reduces {} input frames to k = {}; k cannot exceed n",
                self.context_n, self.k_value
            ));
        }
        let widths = [
            self.feature_channels,
            self.bottleneck_channels,
            self.num_classes,
            self.fc_dims[0],
            self.fc_dims[1],
            self.classifier_conv_channels,
            self.encoder_min_channels,
            self.decoder_min_channels,
        ];
        if widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }
}
