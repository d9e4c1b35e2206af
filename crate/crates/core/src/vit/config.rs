// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default layer-norm epsilon, also recorded in checkpoint headers.
pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-6;

/// Architecture of a pre-norm Vision Transformer classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitConfig {
    /// Pixels per image side.
    pub image_size: usize,
    /// Pixels per patch side.
    pub patch_size: usize,
    pub channels: usize,
    /// Number of Transformer blocks (`L`).
    pub layers: usize,
    /// Residual width (`d`).
    pub hidden: usize,
    /// FFN intermediate width (`n`): neurons per layer.
    pub ffn: usize,
    pub heads: usize,
    pub classes: usize,
}

impl Default for VitConfig {
    /// The toy configuration every fixture in the repository is built on.
    fn default() -> Self {
        Self {
            image_size: 16,
            patch_size: 4,
            channels: 1,
            layers: 4,
            hidden: 32,
            ffn: 64,
            heads: 4,
            classes: 10,
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::InvalidParameter { name: "config", detail });
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "patch size {} must divide image size {}",
                self.patch_size, self.image_size
            ));
        }
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return bad(format!(
                "hidden width {} must be divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if self.layers == 0 || self.ffn == 0 || self.classes == 0 || self.channels == 0 {
            return bad("layers, ffn, classes and channels must all be >= 1".into());
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.patches_per_side() * self.patches_per_side()
    }

    /// Token count `T`: one class token plus one token per patch.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    /// Length of a flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Shape of an input image, `[channels, size, size]`.
    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_geometry() {
        let c = VitConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 16);
        assert_eq!(c.seq_len(), 17);
    }

    #[test]
    fn vit_b16_geometry() {
        let c = VitConfig {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            layers: 12,
            hidden: 768,
            ffn: 3072,
            heads: 12,
            classes: 1000,
        };
        c.validate().unwrap();
        assert_eq!(c.seq_len(), 197);
    }

    #[test]
    fn rejects_inconsistent_geometry() {
        let mut c = VitConfig::default();
        c.patch_size = 5;
        assert!(c.validate().is_err());
        let mut c = VitConfig::default();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = VitConfig::default();
        c.layers = 0;
        assert!(c.validate().is_err());
    }
}
