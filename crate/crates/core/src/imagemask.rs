//! Image and binary mask value types.
//!
//! Images are `H×W×3` grids of `f64` in `[0, 1]`, masks are `H×W` boolean
//! grids. Everything here is a pure function over immutable values.

use std::path::Path;

use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array3<f64>,
}

impl Image {
    /// Wraps an `H×W×3` array. Values must be finite and inside `[0, 1]`.
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::shape(format!(
                "image must be H×W×3 with H, W > 0, got {h}×{w}×{c}"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    /// Clamps every value into `[0, 1]` (non-finite values become 0).
    pub fn from_unclamped(mut pixels: Array3<f64>) -> Result<Self> {
        pixels.mapv_inplace(|v| {
            if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
        Self::new(pixels)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(Array3::from_shape_fn((height, width, 3), |(_, _, c)| {
            rgb[c]
        }))
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        Self::new(Array3::from_shape_fn((height, width, 3), |(y, x, c)| {
            f(y, x)[c]
        }))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [
            self.pixels[[y, x, 0]],
            self.pixels[[y, x, 1]],
            self.pixels[[y, x, 2]],
        ]
    }

    pub fn same_size(&self, mask: &BinaryMask) -> bool {
        self.height() == mask.height() && self.width() == mask.width()
    }

    pub(crate) fn check_mask(&self, mask: &BinaryMask, what: &str) -> Result<()> {
        if self.same_size(mask) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: mask is {}×{}, image is {}×{}",
                mask.height(),
                mask.width(),
                self.height(),
                self.width()
            )))
        }
    }

    /// `M ⊙ I`: pixels outside the mask become 0.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Image> {
        self.check_mask(mask, "masked")?;
        let mut out = self.pixels.clone();
        for ((y, x, _), v) in out.indexed_iter_mut() {
            if !mask.get(y, x) {
                *v = 0.0;
            }
        }
        Ok(Image { pixels: out })
    }

    /// `M ⊙ fg + (1 − M) ⊙ bg`, an exact per-pixel select.
    pub fn composite(fg: &Image, bg: &Image, mask: &BinaryMask) -> Result<Image> {
        fg.check_mask(mask, "composite")?;
        bg.check_mask(mask, "composite")?;
        let pixels = Array3::from_shape_fn(fg.pixels.dim(), |(y, x, c)| {
            if mask.get(y, x) {
                fg.pixels[[y, x, c]]
            } else {
                bg.pixels[[y, x, c]]
            }
        });
        Ok(Image { pixels })
    }

    /// Reads an 8-bit image and converts it to `[0, 1]` floats by `/255`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let rgb = image::open(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
        });
        Image::new(pixels)
    }

    /// Quantizes with `round(v·255)` and writes an 8-bit RGB PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            image::Rgb(p.map(quantize))
        })
    }
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// `H×W` grid of bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    bits: Array2<bool>,
}

impl BinaryMask {
    pub fn new(bits: Array2<bool>) -> Result<Self> {
        let (h, w) = bits.dim();
        if h == 0 || w == 0 {
            return Err(Error::shape(format!("mask must be non-empty, got {h}×{w}")));
        }
        Ok(Self { bits })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| false)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| true)
    }

    /// Panics on a zero dimension, like the `ndarray` constructors it wraps.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self {
            bits: Array2::from_shape_fn((height, width), |(y, x)| f(y, x)),
        }
    }

    /// Axis-aligned filled rectangle `[y0, y1) × [x0, x1)`.
    pub fn rect(height: usize, width: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> Self {
        Self::from_fn(height, width, |y, x| y >= y0 && y < y1 && x >= x0 && x < x1)
    }

    pub fn height(&self) -> usize {
        self.bits.dim().0
    }

    pub fn width(&self) -> usize {
        self.bits.dim().1
    }

    pub fn bits(&self) -> &Array2<bool> {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[[y, x]]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Row-major flattening, the token order used by attention layers.
    pub fn flat(&self) -> Vec<bool> {
        self.bits.iter().copied().collect()
    }

    fn check_same(&self, other: &BinaryMask) -> Result<()> {
        if self.bits.dim() == other.bits.dim() {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "mask sizes differ: {:?} vs {:?}",
                self.bits.dim(),
                other.bits.dim()
            )))
        }
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same(other)?;
        let bits = Zip::from(&self.bits)
            .and(&other.bits)
            .map_collect(|a, b| *a && *b);
        Ok(BinaryMask { bits })
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            bits: self.bits.mapv(|b| !b),
        }
    }

    /// Dilation by the `(2r+1)×(2r+1)` square, clipped to the frame.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let (h, w) = self.bits.dim();
        // Separable: a horizontal then a vertical sliding-window OR.
        let mut horiz = Array2::from_elem((h, w), false);
        for y in 0..h {
            let row: Vec<bool> = self.bits.row(y).to_vec();
            for (x, v) in window_any(&row, radius).into_iter().enumerate() {
                horiz[[y, x]] = v;
            }
        }
        let mut out = Array2::from_elem((h, w), false);
        for x in 0..w {
            let col: Vec<bool> = horiz.column(x).to_vec();
            for (y, v) in window_any(&col, radius).into_iter().enumerate() {
                out[[y, x]] = v;
            }
        }
        BinaryMask { bits: out }
    }

    /// Pixels within `radius` (Chebyshev) of the mask but outside it.
    pub fn boundary_ring(&self, radius: usize) -> Result<BinaryMask> {
        if radius == 0 {
            return Err(Error::param("boundary ring radius must be ≥ 1"));
        }
        let ring = self.dilate(radius).and(&self.complement())?;
        if ring.is_empty() {
            return Err(Error::EmptyRing);
        }
        Ok(ring)
    }

    /// Area-average resample to `h×w` followed by a 0.5 threshold (ties → 1).
    ///
    /// Coverage is computed in exact integer units so ties are detected exactly.
    pub fn resize_to(&self, h: usize, w: usize) -> Result<BinaryMask> {
        if h == 0 || w == 0 {
            return Err(Error::param(format!(
                "resize target must be ≥ 1×1, got {h}×{w}"
            )));
        }
        let (sh, sw) = self.bits.dim();
        if (sh, sw) == (h, w) {
            return Ok(self.clone());
        }
        let wy = overlap_table(sh, h);
        let wx = overlap_table(sw, w);
        // cell area in units where one source pixel is h×w
        let area = (sh as u128) * (sw as u128);
        let bits = Array2::from_shape_fn((h, w), |(ty, tx)| {
            let mut covered: u128 = 0;
            for &(sy, oy) in &wy[ty] {
                for &(sx, ox) in &wx[tx] {
                    if self.bits[[sy, sx]] {
                        covered += (oy as u128) * (ox as u128);
                    }
                }
            }
            2 * covered >= area
        });
        Ok(BinaryMask { bits })
    }

    /// Reads a single-channel (or RGB, converted to luma) PNG, binarized at 128.
    pub fn load_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
        let luma = image::open(path)?.to_luma8();
        let (w, h) = luma.dimensions();
        BinaryMask::new(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
            luma.get_pixel(x as u32, y as u32)[0] >= 128
        }))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::GrayImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            image::Luma([if self.get(y as usize, x as usize) {
                255
            } else {
                0
            }])
        });
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

fn window_any(line: &[bool], radius: usize) -> Vec<bool> {
    let n = line.len();
    let mut prefix = vec![0usize; n + 1];
    for (i, &b) in line.iter().enumerate() {
        prefix[i + 1] = prefix[i] + usize::from(b);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(n);
            prefix[hi] > prefix[lo]
        })
        .collect()
}

/// For each target cell, the source indices it overlaps and the overlap length.
///
/// Lengths are integers in units where a source pixel spans `dst` units and a
/// target cell spans `src` units.
fn overlap_table(src: usize, dst: usize) -> Vec<Vec<(usize, usize)>> {
    (0..dst)
        .map(|t| {
            let lo = t * src;
            let hi = (t + 1) * src;
            let first = lo / dst;
            let last = (hi - 1) / dst;
            (first..=last)
                .filter_map(|s| {
                    let a = (s * dst).max(lo);
                    let b = ((s + 1) * dst).min(hi);
                    (b > a).then_some((s, b - a))
                })
                .collect()
        })
        .collect()
}

/// Free-function form of [`BinaryMask::resize_to`].
pub fn resize_mask_to(mask: &BinaryMask, h: usize, w: usize) -> Result<BinaryMask> {
    mask.resize_to(h, w)
}

/// Shift, isotropic scale and rotation applied to a source patch.
///
/// Scale and rotation are about the center of the mask's bounding box; the
/// shift is applied afterwards. Rotation is in degrees, counterclockwise as
/// displayed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub shift_x: f64,
    pub shift_y: f64,
    pub scale: f64,
    pub rotation_deg: f64,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        shift_x: 0.0,
        shift_y: 0.0,
        scale: 1.0,
        rotation_deg: 0.0,
    };

    pub fn shift(dx: f64, dy: f64) -> Self {
        Self {
            shift_x: dx,
            shift_y: dy,
            ..Self::IDENTITY
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.shift_x, self.shift_y, self.scale, self.rotation_deg]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("transform parameters must be finite"));
        }
        if self.scale <= 0.0 {
            return Err(Error::param(format!(
                "scale must be > 0, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Maps a target-frame coordinate back into the source frame.
    fn inverse_map(&self, center: (f64, f64), x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = center;
        let dx = x - self.shift_x - cx;
        let dy = y - self.shift_y - cy;
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        // forward: R(θ)·s in a y-down frame; inverse applies R(−θ)/s
        let ux = (cos * dx - sin * dy) / self.scale;
        let uy = (sin * dx + cos * dy) / self.scale;
        (cx + ux, cy + uy)
    }
}

fn bbox_center(mask: &BinaryMask) -> Option<(f64, f64)> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((y, x), &b) in mask.bits.indexed_iter() {
        if b {
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    }
    bounds.map(|(x0, y0, x1, y1)| ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0))
}

/// Maps the patch `M ⊙ I` and the mask `M` into target coordinates.
///
/// The image is sampled bilinearly and the mask by nearest neighbour; samples
/// that land outside the source frame read as 0.
pub fn apply_transform(
    image: &Image,
    mask: &BinaryMask,
    t: &AffineTransform,
) -> Result<(Image, BinaryMask)> {
    image.check_mask(mask, "apply_transform")?;
    t.validate()?;
    let patch = image.masked(mask)?;
    if t.is_identity() {
        if mask.is_empty() {
            return Err(Error::EmptyTransformedMask);
        }
        return Ok((patch, mask.clone()));
    }
    let center = bbox_center(mask).ok_or(Error::EmptyTransformedMask)?;
    let (h, w) = (image.height(), image.width());
    let mut pixels = Array3::zeros((h, w, 3));
    let mut bits = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = t.inverse_map(center, x as f64, y as f64);
            let (nx, ny) = (sx.round(), sy.round());
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                bits[[y, x]] = mask.get(ny as usize, nx as usize);
            }
            let rgb = bilinear(&patch.pixels, sx, sy);
            for c in 0..3 {
                pixels[[y, x, c]] = rgb[c];
            }
        }
    }
    let out_mask = BinaryMask { bits };
    if out_mask.is_empty() {
        return Err(Error::EmptyTransformedMask);
    }
    Ok((Image::from_unclamped(pixels)?, out_mask))
}

fn bilinear(pixels: &Array3<f64>, x: f64, y: f64) -> [f64; 3] {
    let (h, w, _) = pixels.dim();
    if !(x > -1.0 && y > -1.0 && x < w as f64 && y < h as f64) {
        return [0.0; 3];
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let fetch = |yy: f64, xx: f64, c: usize| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy as usize >= h || xx as usize >= w {
            0.0
        } else {
            pixels[[yy as usize, xx as usize, c]]
        }
    };
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = fetch(y0, x0, c) * (1.0 - fx) + fetch(y0, x0 + 1.0, c) * fx;
        let bottom = fetch(y0 + 1.0, x0, c) * (1.0 - fx) + fetch(y0 + 1.0, x0 + 1.0, c) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}
