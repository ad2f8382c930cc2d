use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ViewSet;

/// Training-time augmentation: horizontal flip (p = 0.5), a small rotation
/// and an intensity shift, each drawn once per sample and applied to all of
/// its views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub enable_flip_h: bool,
    pub enable_rotation: bool,
    pub max_degrees: f64,
    pub enable_intensity_jitter: bool,
    pub max_delta: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enable_flip_h: true,
            enable_rotation: true,
            max_degrees: 10.0,
            enable_intensity_jitter: true,
            max_delta: 0.05,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        AugmentationConfig {
            enable_flip_h: false,
            enable_rotation: false,
            enable_intensity_jitter: false,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.enable_flip_h && !self.enable_rotation && !self.enable_intensity_jitter
    }
}

/// Applies one random draw of the configured transforms to every non-imputed
/// view of `sample`. Imputed views stay exactly zero.
pub fn augment<R: Rng + ?Sized>(sample: &ViewSet, config: &AugmentationConfig, rng: &mut R) -> ViewSet {
    if config.is_identity() {
        return sample.clone();
    }
    let flip = config.enable_flip_h && rng.gen_bool(0.5);
    let angle = if config.enable_rotation && config.max_degrees > 0.0 {
        rng.gen_range(-config.max_degrees..=config.max_degrees)
    } else {
        0.0
    };
    let delta = if config.enable_intensity_jitter && config.max_delta > 0.0 {
        rng.gen_range(-config.max_delta..=config.max_delta)
    } else {
        0.0
    };

    let mut out = sample.clone();
    for (img, &imputed) in out.views.iter_mut().zip(&sample.imputed) {
        if imputed {
            continue;
        }
        if flip {
            *img = img.flip_horizontal();
        }
        if angle != 0.0 {
            *img = img.rotate(angle);
        }
        if delta != 0.0 {
            *img = img.shift_intensity(delta);
        }
    }
    out
}
