use ndarray::{concatenate, Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{AttentionLayer, AttentionRouter, AttentionTensors, LayerId};
use crate::diffusion::{DenoiserBackend, InpaintCond};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyDenoiserConfig {
    /// `(h, w, c)` of the latents the denoiser accepts.
    pub latent_shape: (usize, usize, usize),
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Pooling factor between the latent grid and the first attention grid.
    pub token_stride: usize,
    pub num_train_steps: usize,
    /// Bound on the magnitude of every predicted noise value.
    pub output_scale: f64,
}

impl ToyDenoiserConfig {
    pub fn new(latent_shape: (usize, usize, usize)) -> Self {
        Self {
            latent_shape,
            hidden: 16,
            heads: 1,
            head_dim: 8,
            token_stride: 1,
            num_train_steps: 1000,
            output_scale: 1.0,
        }
    }

    pub fn with_token_stride(mut self, stride: usize) -> Self {
        self.token_stride = stride;
        self
    }

    pub fn with_num_train_steps(mut self, n: usize) -> Self {
        self.num_train_steps = n;
        self
    }

    fn validate(&self) -> Result<()> {
        let (h, w, c) = self.latent_shape;
        if c == 0
            || self.hidden == 0
            || self.heads == 0
            || self.head_dim == 0
            || self.num_train_steps == 0
        {
            return Err(Error::param("toy denoiser sizes must be positive"));
        }
        let unit = 2 * self.token_stride;
        if self.token_stride == 0 || h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(Error::shape(format!(
                "latent grid {h}×{w} must be a positive multiple of 2·token_stride = {unit}"
            )));
        }
        Ok(())
    }

    /// Token grids of the two attention layers.
    pub fn grids(&self) -> [(usize, usize); 2] {
        let (h, w, _) = self.latent_shape;
        let s = self.token_stride;
        [(h / s, w / s), (h / s / 2, w / s / 2)]
    }
}

#[derive(Debug, Clone)]
struct AttentionBlock {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
}

/// Small seeded ε-predictor with two routed self-attention layers.
///
/// Pointwise stem over the SD-inpainting input layout (latent, mask, masked
/// latent), attention at the pooled latent grid and at half that, a pointwise
/// head bounded by `tanh`. Weights are fixed at construction.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    cfg: ToyDenoiserConfig,
    stem_w: Array2<f64>,
    stem_b: Array1<f64>,
    time_embedding: Array2<f64>,
    blocks: [AttentionBlock; 2],
    head_w: Array2<f64>,
    head_b: Array1<f64>,
}

fn init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
}

fn sinusoidal_table(steps: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((steps, dim), |(t, i)| {
        let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let angle = t as f64 * freq;
        0.5 * if i % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

/// Average-pools row-major tokens on a `grid` by `factor`.
fn pool(tokens: &Array2<f64>, grid: (usize, usize), factor: usize) -> Array2<f64> {
    if factor == 1 {
        return tokens.clone();
    }
    let (gh, gw) = (grid.0 / factor, grid.1 / factor);
    let dim = tokens.ncols();
    let mut out = Array2::zeros((gh * gw, dim));
    let norm = 1.0 / (factor * factor) as f64;
    for y in 0..grid.0 {
        for x in 0..grid.1 {
            let dst = (y / factor) * gw + x / factor;
            let src = tokens.row(y * grid.1 + x);
            let mut row = out.row_mut(dst);
            row.scaled_add(norm, &src);
        }
    }
    out
}

/// Nearest-neighbour upsampling of row-major tokens on `grid` by `factor`.
fn upsample(tokens: &Array2<f64>, grid: (usize, usize), factor: usize) -> Array2<f64> {
    if factor == 1 {
        return tokens.clone();
    }
    let (h, w) = (grid.0 * factor, grid.1 * factor);
    let mut out = Array2::zeros((h * w, tokens.ncols()));
    for y in 0..h {
        for x in 0..w {
            out.row_mut(y * w + x)
                .assign(&tokens.row((y / factor) * grid.1 + x / factor));
        }
    }
    out
}

impl ToyDenoiser {
    pub fn new(cfg: ToyDenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.latent_shape.2;
        let width = cfg.heads * cfg.head_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem_w = init(&mut rng, 2 * c + 1, cfg.hidden);
        let stem_b = init(&mut rng, 1, cfg.hidden).row(0).to_owned() * 0.1;
        let mut block = || AttentionBlock {
            wq: init(&mut rng, cfg.hidden, width),
            wk: init(&mut rng, cfg.hidden, width),
            wv: init(&mut rng, cfg.hidden, width),
            wo: init(&mut rng, width, cfg.hidden) * 0.5,
        };
        let blocks = [block(), block()];
        let head_w = init(&mut rng, cfg.hidden, c);
        let head_b = init(&mut rng, 1, c).row(0).to_owned() * 0.1;
        Ok(Self {
            cfg,
            stem_w,
            stem_b,
            time_embedding: sinusoidal_table(cfg.num_train_steps, cfg.hidden),
            blocks,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &ToyDenoiserConfig {
        &self.cfg
    }

    fn attend(
        &self,
        block: usize,
        tokens: &Array2<f64>,
        router: &mut dyn AttentionRouter,
    ) -> Result<Array2<f64>> {
        let b = &self.blocks[block];
        let t = AttentionTensors::new(
            tokens.dot(&b.wq),
            tokens.dot(&b.wk),
            tokens.dot(&b.wv),
            self.cfg.heads,
        )?;
        let attended = router.attend(LayerId(block), &t)?;
        if attended.dim() != (tokens.nrows(), self.cfg.heads * self.cfg.head_dim) {
            return Err(Error::shape(format!(
                "router returned {:?} for layer {block}",
                attended.dim()
            )));
        }
        Ok(tokens + &attended.dot(&b.wo))
    }
}

impl DenoiserBackend for ToyDenoiser {
    fn latent_shape(&self) -> (usize, usize, usize) {
        self.cfg.latent_shape
    }

    fn attention_layers(&self) -> Vec<AttentionLayer> {
        self.cfg
            .grids()
            .into_iter()
            .enumerate()
            .map(|(i, grid)| AttentionLayer {
                id: LayerId(i),
                grid,
            })
            .collect()
    }

    fn predict_noise(
        &self,
        z: &Array3<f64>,
        timestep: usize,
        cond: &InpaintCond,
        router: &mut dyn AttentionRouter,
    ) -> Result<Array3<f64>> {
        let (h, w, c) = self.cfg.latent_shape;
        if z.dim() != (h, w, c) || cond.masked_latent().dim() != (h, w, c) {
            return Err(Error::shape(format!(
                "toy denoiser expects {h}×{w}×{c}, got latent {:?} and masked latent {:?}",
                z.dim(),
                cond.masked_latent().dim()
            )));
        }
        if timestep >= self.cfg.num_train_steps {
            return Err(Error::param(format!(
                "timestep {timestep} outside 0..{}",
                self.cfg.num_train_steps
            )));
        }
        let n = h * w;
        let to_tokens = |a: &Array3<f64>| a.to_shape((n, c)).map(|v| v.to_owned());
        let latent = to_tokens(z).map_err(|e| Error::shape(e.to_string()))?;
        let masked = to_tokens(cond.masked_latent()).map_err(|e| Error::shape(e.to_string()))?;
        let mask = Array2::from_shape_fn((n, 1), |(i, _)| {
            if cond.mask().get(i / w, i % w) {
                1.0
            } else {
                0.0
            }
        });
        let input = concatenate![Axis(1), latent, mask, masked];

        let bias = &self.stem_b + &self.time_embedding.row(timestep);
        let stem = (input.dot(&self.stem_w) + &bias).mapv(f64::tanh);

        let s = self.cfg.token_stride;
        let [g1, _] = self.cfg.grids();
        let coarse = pool(&stem, (h, w), s);
        let mut fine = self.attend(0, &coarse, router)?;
        let half = pool(&fine, g1, 2);
        let half_out = self.attend(1, &half, router)?;
        fine = fine + upsample(&(half_out - &half), (g1.0 / 2, g1.1 / 2), 2);
        let hidden = stem + upsample(&(fine - &coarse), g1, s);

        let eps =
            (hidden.dot(&self.head_w) + &self.head_b).mapv(|v| self.cfg.output_scale * v.tanh());
        let out = eps
            .into_shape_with_order((h, w, c))
            .map_err(|e| Error::shape(e.to_string()))?;
        Ok(out)
    }
}
