//! Noise schedule, DDIM steps, fixed-point inversion and the lockstep
//! multi-stream runner.

mod ddim;
mod runner;
mod schedule;

use ndarray::Array3;

use crate::attention::{AttentionLayer, AttentionRouter};
use crate::error::{Error, Result};
use crate::imagemask::BinaryMask;

pub use ddim::{ddim_denoise_step, ddim_invert_step, ddim_invert_step_with_eps, InversionStep};
pub use runner::{
    generate, invert, invert_streams, sample, Generation, GenerationResult, InversionOptions,
    InversionResult, StreamInput,
};
pub use schedule::NoiseSchedule;

/// `h×w×c` latent at a noise level (0 = clean).
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub data: Array3<f64>,
    pub level: usize,
}

impl Latent {
    pub fn new(data: Array3<f64>, level: usize) -> Self {
        Self { data, level }
    }

    pub fn clean(data: Array3<f64>) -> Self {
        Self::new(data, 0)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

/// Extra inpainting inputs: a latent-resolution mask and the masked latent.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintCond {
    mask: BinaryMask,
    masked_latent: Array3<f64>,
}

impl InpaintCond {
    pub fn new(mask: BinaryMask, masked_latent: Array3<f64>) -> Result<Self> {
        let (h, w, _) = masked_latent.dim();
        if (mask.height(), mask.width()) != (h, w) {
            return Err(Error::shape(format!(
                "inpainting mask {}×{} vs latent {h}×{w}",
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self {
            mask,
            masked_latent,
        })
    }

    /// Mask `m` with the latent zeroed where `m` is set.
    pub fn masked(latent: &Array3<f64>, mask: &BinaryMask) -> Result<Self> {
        let mut masked_latent = latent.clone();
        let (h, w, _) = latent.dim();
        if (mask.height(), mask.width()) != (h, w) {
            return Err(Error::shape(format!(
                "inpainting mask {}×{} vs latent {h}×{w}",
                mask.height(),
                mask.width()
            )));
        }
        for ((y, x, _), v) in masked_latent.indexed_iter_mut() {
            if mask.get(y, x) {
                *v = 0.0;
            }
        }
        Self::new(mask.clone(), masked_latent)
    }

    /// Nothing to inpaint: all-zero mask, full latent.
    pub fn unmasked(latent: &Array3<f64>) -> Self {
        let (h, w, _) = latent.dim();
        Self {
            mask: BinaryMask::zeros(h, w),
            masked_latent: latent.clone(),
        }
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn masked_latent(&self) -> &Array3<f64> {
        &self.masked_latent
    }
}

/// A noise predictor whose self-attention layers are routed externally.
///
/// Implementations must be deterministic for fixed inputs and must send every
/// internal self-attention call through `router`, exactly once per layer per
/// forward pass.
pub trait DenoiserBackend {
    /// `(h, w, c)` of the latents this backend accepts.
    fn latent_shape(&self) -> (usize, usize, usize);

    fn attention_layers(&self) -> Vec<AttentionLayer>;

    fn predict_noise(
        &self,
        z: &Array3<f64>,
        timestep: usize,
        cond: &InpaintCond,
        router: &mut dyn AttentionRouter,
    ) -> Result<Array3<f64>>;
}
