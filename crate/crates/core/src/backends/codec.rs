use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::Latent;
use crate::error::{Error, Result};
use crate::imagemask::Image;

/// Exactly invertible stand-in for a VAE.
///
/// Space-to-depth by `block` followed by a seeded orthogonal channel mix, so
/// an `H×W×3` image becomes an `H/block × W/block × 3·block²` latent.
#[derive(Debug, Clone)]
pub struct ToyLatentCodec {
    block: usize,
    /// `c×c` orthogonal matrix; encode applies it, decode its transpose.
    mixer: Array2<f64>,
}

impl ToyLatentCodec {
    pub fn new(block: usize, seed: u64) -> Result<Self> {
        if block == 0 {
            return Err(Error::param("codec block must be ≥ 1"));
        }
        let c = 3 * block * block;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gaussian = DMatrix::<f64>::from_fn(c, c, |_, _| StandardNormal.sample(&mut rng));
        let q = gaussian.qr().q();
        let mixer = Array2::from_shape_fn((c, c), |(i, j)| q[(i, j)]);
        Ok(Self { block, mixer })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn channels(&self) -> usize {
        self.mixer.nrows()
    }

    pub fn mixer(&self) -> &Array2<f64> {
        &self.mixer
    }

    /// Latent `(h, w, c)` for an image of the given size.
    pub fn latent_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        if !height.is_multiple_of(self.block) || !width.is_multiple_of(self.block) {
            return Err(Error::shape(format!(
                "image {height}×{width} is not divisible by codec block {}",
                self.block
            )));
        }
        Ok((height / self.block, width / self.block, self.channels()))
    }

    pub fn encode(&self, image: &Image) -> Result<Latent> {
        let (h, w, c) = self.latent_shape(image.height(), image.width())?;
        let b = self.block;
        let px = image.pixels();
        let depth = Array2::from_shape_fn((h * w, c), |(token, ch)| {
            let (y, x) = (token / w, token % w);
            let (sub, rgb) = (ch / 3, ch % 3);
            let (dy, dx) = (sub / b, sub % b);
            px[[y * b + dy, x * b + dx, rgb]]
        });
        let mixed = depth.dot(&self.mixer.t());
        let data = mixed
            .into_shape_with_order((h, w, c))
            .map_err(|e| Error::shape(e.to_string()))?;
        Ok(Latent::clean(data))
    }

    /// Inverse of [`encode`](Self::encode) without clamping.
    pub fn decode_raw(&self, z: &Latent) -> Result<Array3<f64>> {
        let (h, w, c) = z.shape();
        if c != self.channels() {
            return Err(Error::shape(format!(
                "latent has {c} channels, codec expects {}",
                self.channels()
            )));
        }
        let b = self.block;
        let flat = z
            .data
            .to_shape((h * w, c))
            .map_err(|e| Error::shape(e.to_string()))?
            .dot(&self.mixer);
        Ok(Array3::from_shape_fn((h * b, w * b, 3), |(y, x, rgb)| {
            let token = (y / b) * w + x / b;
            let sub = (y % b) * b + x % b;
            flat[[token, sub * 3 + rgb]]
        }))
    }

    /// Inverse of [`encode`](Self::encode), clamped to `[0, 1]`.
    pub fn decode(&self, z: &Latent) -> Result<Image> {
        Image::from_unclamped(self.decode_raw(z)?)
    }
}
