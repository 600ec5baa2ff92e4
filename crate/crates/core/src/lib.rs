//! Training-free texture-aware geometry transfer.
//!
//! A masked region of a source image is transplanted onto a target image and
//! re-rendered by a latent diffusion model so that its geometry (holes,
//! cracks, dents) survives while its texture is taken from the target. The
//! work happens in four stages:
//!
//! 1. [`editing`]: build the geometry image with a uniform color shift.
//! 2. [`diffusion::invert_streams`]: DDIM-invert source, target and geometry
//!    latents in lockstep, the geometry stream using texture-aligning attention.
//! 3. [`pipeline::blend_latents`]: masked select between geometry and target
//!    noisy latents.
//! 4. [`diffusion::generate`]: denoise the blend with geometry-preserving
//!    attention against the source stream.
//!
//! [`pipeline::harmonize`] runs all four.

pub mod attention;
pub mod backends;
pub mod diffusion;
pub mod editing;
mod error;
pub mod imagemask;
pub mod pipeline;
pub mod selftest;

pub use error::{Error, Result, Stage};
pub use imagemask::{AffineTransform, BinaryMask, Image};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
