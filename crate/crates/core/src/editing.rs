//! Geometry-image construction: patch transplantation plus color adjustment.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagemask::{apply_transform, AffineTransform, BinaryMask, Image};

/// Mean RGB color over a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorStats {
    pub mean_rgb: [f64; 3],
}

/// Color adjustment applied to the transplanted patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    None,
    #[default]
    Shift,
    Histogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    /// Transplanted, color-adjusted patch in target coordinates (zero outside the mask).
    pub geometry_image: Image,
    pub geometry_mask: BinaryMask,
    /// Naive composite of the geometry image over the target.
    pub pasted_image: Image,
}

/// Mean color of `image` over the boundary ring of `mask`.
pub fn ring_mean_color(image: &Image, mask: &BinaryMask, radius: usize) -> Result<ColorStats> {
    image.check_mask(mask, "ring_mean_color")?;
    let ring = mask.boundary_ring(radius)?;
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for ((y, x), &b) in ring.bits().indexed_iter() {
        if b {
            let p = image.pixel(y, x);
            for c in 0..3 {
                sum[c] += p[c];
            }
            n += 1;
        }
    }
    Ok(ColorStats {
        mean_rgb: sum.map(|s| s / n as f64),
    })
}

fn check_strength(a: f64) -> Result<()> {
    if (0.0..=1.0).contains(&a) {
        Ok(())
    } else {
        Err(Error::param(format!(
            "color shift strength a must be in [0, 1], got {a}"
        )))
    }
}

/// `p + a·M·(c_tar − c_src)` without clamping.
///
/// Unmasked pixels are copied bit-exactly.
pub fn color_shift_unclamped(
    image: &Image,
    mask: &BinaryMask,
    c_src: ColorStats,
    c_tar: ColorStats,
    a: f64,
) -> Result<Array3<f64>> {
    check_strength(a)?;
    image.check_mask(mask, "color_shift")?;
    let delta: [f64; 3] = std::array::from_fn(|c| a * (c_tar.mean_rgb[c] - c_src.mean_rgb[c]));
    let mut out = image.pixels().clone();
    for ((y, x, c), v) in out.indexed_iter_mut() {
        if mask.get(y, x) {
            *v += delta[c];
        }
    }
    Ok(out)
}

/// Uniform color shift inside the mask, clamped to `[0, 1]`.
pub fn color_shift(
    image: &Image,
    mask: &BinaryMask,
    c_src: ColorStats,
    c_tar: ColorStats,
    a: f64,
) -> Result<Image> {
    Image::from_unclamped(color_shift_unclamped(image, mask, c_src, c_tar, a)?)
}

/// Per-channel CDF matching of masked pixels onto the masked reference pixels.
///
/// Each pixel is placed at its mid-rank quantile (ties share the average
/// rank) and read back from the reference's sorted values by linear
/// interpolation.
pub fn histogram_match(
    image: &Image,
    mask: &BinaryMask,
    reference: &Image,
    ref_mask: &BinaryMask,
) -> Result<Image> {
    image.check_mask(mask, "histogram_match")?;
    reference.check_mask(ref_mask, "histogram_match reference")?;
    if mask.is_empty() || ref_mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let coords: Vec<(usize, usize)> = mask
        .bits()
        .indexed_iter()
        .filter_map(|(ix, &b)| b.then_some(ix))
        .collect();
    let mut out = image.pixels().clone();
    for c in 0..3 {
        let mut reference_values: Vec<f64> = ref_mask
            .bits()
            .indexed_iter()
            .filter(|(_, &b)| b)
            .map(|((y, x), _)| reference.pixels()[[y, x, c]])
            .collect();
        reference_values.sort_by(f64::total_cmp);

        let values: Vec<f64> = coords
            .iter()
            .map(|&(y, x)| image.pixels()[[y, x, c]])
            .collect();
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));

        let n = values.len() as f64;
        let m = reference_values.len() as f64;
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && values[order[end]] == values[order[start]] {
                end += 1;
            }
            let mid_rank = (start + end - 1) as f64 / 2.0;
            let pos = ((mid_rank + 0.5) / n * m - 0.5).clamp(0.0, m - 1.0);
            let mapped = interpolate_sorted(&reference_values, pos);
            for &i in &order[start..end] {
                let (y, x) = coords[i];
                out[[y, x, c]] = mapped;
            }
            start = end;
        }
    }
    Image::from_unclamped(out)
}

fn interpolate_sorted(sorted: &[f64], pos: f64) -> f64 {
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Builds the geometry image, its mask and the pasted reference composite.
///
/// `c_src` is measured around the mask in the source frame, `c_tar` around
/// the transplanted mask in the target frame.
pub fn build_edit(
    src: &Image,
    src_mask: &BinaryMask,
    tar: &Image,
    t: &AffineTransform,
    a: f64,
    color_mode: ColorMode,
    ring_radius: usize,
) -> Result<EditResult> {
    src.check_mask(src_mask, "build_edit source")?;
    tar.check_mask(src_mask, "build_edit target")?;
    check_strength(a)?;
    let (patch, geometry_mask) = apply_transform(src, src_mask, t)?;
    let geometry_image = match color_mode {
        ColorMode::None => patch,
        ColorMode::Shift => {
            let c_src = ring_mean_color(src, src_mask, ring_radius)?;
            let c_tar = ring_mean_color(tar, &geometry_mask, ring_radius)?;
            color_shift(&patch, &geometry_mask, c_src, c_tar, a)?
        }
        ColorMode::Histogram => {
            let ring = geometry_mask.boundary_ring(ring_radius)?;
            let matched = histogram_match(&patch, &geometry_mask, tar, &ring)?;
            matched.masked(&geometry_mask)?
        }
    };
    let pasted_image = Image::composite(&geometry_image, tar, &geometry_mask)?;
    Ok(EditResult {
        geometry_image,
        geometry_mask,
        pasted_image,
    })
}
