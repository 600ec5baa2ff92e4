//! Concrete denoiser backends and the latent codec.

mod codec;
mod sd_adapter;
mod toy;

use serde::{Deserialize, Serialize};

use crate::diffusion::Latent;
use crate::error::Result;
use crate::imagemask::Image;

pub use codec::ToyLatentCodec;
pub use sd_adapter::{
    SdAdapterSpec, SD_INPAINT_INPUT_CHANNELS, SD_LATENT_CHANNELS, SD_LATENT_DOWNSAMPLE,
};
pub use toy::{ToyDenoiser, ToyDenoiserConfig};

/// Maps images to latents and back; the toy codec or a VAE behind an adapter.
pub trait LatentCodec {
    /// Latent `(h, w, c)` for an image of the given size.
    fn latent_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)>;

    fn encode(&self, image: &Image) -> Result<Latent>;

    /// Decodes and clamps to `[0, 1]`.
    fn decode(&self, z: &Latent) -> Result<Image>;
}

impl LatentCodec for ToyLatentCodec {
    fn latent_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        ToyLatentCodec::latent_shape(self, height, width)
    }

    fn encode(&self, image: &Image) -> Result<Latent> {
        ToyLatentCodec::encode(self, image)
    }

    fn decode(&self, z: &Latent) -> Result<Image> {
        ToyLatentCodec::decode(self, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Toy,
    SdAdapter,
}

impl std::str::FromStr for BackendKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toy" => Ok(BackendKind::Toy),
            "sd-adapter" => Ok(BackendKind::SdAdapter),
            other => Err(crate::Error::InvalidParameter(format!(
                "unknown backend {other:?}, expected toy or sd-adapter"
            ))),
        }
    }
}
