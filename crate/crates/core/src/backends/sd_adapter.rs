use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Spatial downsampling of the SD VAE.
pub const SD_LATENT_DOWNSAMPLE: usize = 8;
/// Channels of an SD latent.
pub const SD_LATENT_CHANNELS: usize = 4;
/// UNet input channels for inpainting: latent, mask, masked-image latent.
pub const SD_INPAINT_INPUT_CHANNELS: usize = SD_LATENT_CHANNELS + 1 + SD_LATENT_CHANNELS;

/// Contract for a real SD-inpainting backend (see `docs/ADAPTER.md`).
///
/// No weights ship with this crate; an adapter built against this
/// description plugs into [`DenoiserBackend`](crate::diffusion::DenoiserBackend).
#[derive(Debug, Clone, PartialEq)]
pub struct SdAdapterSpec {
    /// Where the checkpoint lives (hub id or local path).
    pub checkpoint: String,
    /// UNet self-attention module name → layer id used by the K/V registry.
    pub attention_layers: BTreeMap<String, usize>,
    /// Classifier-free guidance scale; with an empty prompt it has no effect.
    pub guidance_scale: f64,
}

impl Default for SdAdapterSpec {
    fn default() -> Self {
        Self {
            checkpoint: "runwayml/stable-diffusion-inpainting".to_string(),
            attention_layers: BTreeMap::new(),
            guidance_scale: 1.0,
        }
    }
}

impl SdAdapterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoint.trim().is_empty() {
            return Err(Error::param("sd-adapter needs a checkpoint locator"));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 1.0) {
            return Err(Error::param("guidance scale must be ≥ 1"));
        }
        Ok(())
    }

    /// Latent `(h, w, c)` an SD VAE produces for an image.
    pub fn latent_shape(height: usize, width: usize) -> Result<(usize, usize, usize)> {
        if !height.is_multiple_of(SD_LATENT_DOWNSAMPLE)
            || !width.is_multiple_of(SD_LATENT_DOWNSAMPLE)
        {
            return Err(Error::shape(format!(
                "image {height}×{width} is not divisible by {SD_LATENT_DOWNSAMPLE}"
            )));
        }
        Ok((
            height / SD_LATENT_DOWNSAMPLE,
            width / SD_LATENT_DOWNSAMPLE,
            SD_LATENT_CHANNELS,
        ))
    }

    /// Always fails: loading checkpoints is outside this crate.
    pub fn connect(&self) -> Result<()> {
        self.validate()?;
        Err(Error::BackendUnavailable(format!(
            "no SD runtime is bundled; implement DenoiserBackend for checkpoint {}",
            self.checkpoint
        )))
    }
}
