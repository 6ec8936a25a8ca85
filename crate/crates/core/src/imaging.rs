//! Pixel operations and two-view assembly.
//!
//! Images are `f32` in `[0, 1]`, row-major with interleaved channels.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, param, Result};
use crate::geometry::{
    sample_exclusive_pair, sample_overlap_pair, sample_patch_pair, sample_random_crop, sample_region, AugSpec,
    ImageDims, Rect, RectPair,
};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(w: usize, h: usize, data: Vec<f32>) -> Result<Self> {
        if w == 0 || h == 0 || data.len() != w * h * CHANNELS {
            return Err(contract(format!("image buffer of {} values does not match {w}x{h}x3", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(param("image intensities must lie in [0, 1]"));
        }
        Ok(Image { w, h, data })
    }

    pub fn filled(w: usize, h: usize, value: f32) -> Self {
        Image { w, h, data: vec![value.clamp(0.0, 1.0); w * h * CHANNELS] }
    }

    pub fn from_fn(w: usize, h: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(w * h * CHANNELS);
        for y in 0..h {
            for x in 0..w {
                for c in 0..CHANNELS {
                    data.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        Image { w, h, data }
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn dims(&self) -> Result<ImageDims> {
        ImageDims::new(self.w, self.h)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.w + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.w + x) * CHANNELS + c] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn write_png<W: Write>(&self, out: W) -> Result<()> {
        let mut enc = png::Encoder::new(out, self.w as u32, self.h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.to_rgb8())?;
        writer.finish()?;
        Ok(())
    }
}

/// Crop `r` out of `img` and resize it to `out_size`×`out_size` with bilinear
/// interpolation. Sampling is corner-aligned: output pixel 0 maps to the first
/// source pixel of the crop and output pixel `out_size - 1` to the last.
pub fn crop_resize(img: &Image, r: &Rect, out_size: usize) -> Result<Image> {
    r.check_within(img.w, img.h)?;
    if out_size < 4 {
        return Err(param(format!("output size must be at least 4 (got {out_size})")));
    }
    let axis = |start: usize, len: usize| -> Vec<(usize, usize, f32)> {
        (0..out_size)
            .map(|j| {
                let s = if len == 1 { 0.0 } else { j as f64 * (len - 1) as f64 / (out_size - 1) as f64 };
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (start + i0, start + i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(r.x, r.w);
    let ys = axis(r.y, r.h);
    let mut data = Vec::with_capacity(out_size * out_size * CHANNELS);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..CHANNELS {
                let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
                let bottom = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
                data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image { w: out_size, h: out_size, data })
}

/// Kernel radius used for a given sigma: `ceil(3σ)`.
pub fn blur_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Normalized 1-D Gaussian kernel of length `2·ceil(3σ)+1`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = blur_radius(sigma) as isize;
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(param(format!("blur sigma must be positive (got {sigma})")));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.w as isize, img.h as isize);
    let mut tmp = vec![0f64; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sx = (x + k as isize - r).clamp(0, w - 1);
                    acc += kv * img.get(sx as usize, y as usize, c) as f64;
                }
                tmp[((y * w + x) as usize) * CHANNELS + c] = acc;
            }
        }
    }
    let mut data = vec![0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sy = (y + k as isize - r).clamp(0, h - 1);
                    acc += kv * tmp[((sy * w + x) as usize) * CHANNELS + c];
                }
                data[((y * w + x) as usize) * CHANNELS + c] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image { w: img.w, h: img.h, data })
}

/// Black out the pixels inside `r`.
pub fn apply_cutout(img: &Image, r: &Rect) -> Result<Image> {
    r.check_within(img.w, img.h)?;
    let mut out = img.clone();
    for y in r.y..r.bottom() {
        let row = (y * img.w + r.x) * CHANNELS;
        out.data[row..row + r.w * CHANNELS].fill(0.0);
    }
    Ok(out)
}

/// Replace the pixels of `img` inside `r` with the corresponding pixels of `src`.
fn composite(img: &Image, src: &Image, r: &Rect) -> Image {
    let mut out = img.clone();
    for y in r.y..r.bottom() {
        let row = (y * img.w + r.x) * CHANNELS;
        out.data[row..row + r.w * CHANNELS].copy_from_slice(&src.data[row..row + r.w * CHANNELS]);
    }
    out
}

/// Two augmented views plus the geometry they were cut from.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub v1: Image,
    pub v2: Image,
    pub geom: RectPair,
    pub spec: AugSpec,
}

fn check_cutout_ratio(size_ratio: f64) -> Result<()> {
    if !(size_ratio > 0.0 && size_ratio <= 0.5) {
        return Err(param(format!("cutout size ratio must be in (0, 0.5] (got {size_ratio})")));
    }
    Ok(())
}

/// View 1 is the image with a black region `R`; view 2 is `R` itself resized
/// to the image size.
pub fn make_cutout_pair<R: Rng + ?Sized>(rng: &mut R, img: &Image, size_ratio: f64) -> Result<ViewPair> {
    check_cutout_ratio(size_ratio)?;
    let dims = img.dims()?;
    let region = sample_region(rng, dims, size_ratio);
    Ok(ViewPair {
        v1: apply_cutout(img, &region)?,
        v2: crop_resize(img, &region, img.w)?,
        geom: RectPair::new(Rect::full(dims), region, dims)?,
        spec: AugSpec::Cutout { size_ratio },
    })
}

/// Nominal side of a cutout region, `sqrt(size_ratio · area)`.
pub fn cutout_side(dims: ImageDims, size_ratio: f64) -> f64 {
    (size_ratio * dims.area() as f64).sqrt()
}

/// Blur sigma for a cutout-blur configuration: the explicit value, or 10% of
/// the nominal region side.
pub fn cutout_blur_sigma(dims: ImageDims, size_ratio: f64, sigma: Option<f64>) -> f64 {
    sigma.unwrap_or(0.1 * cutout_side(dims, size_ratio))
}

/// Checks that the blur kernel, `2·ceil(3σ)+1` wide, fits inside the nominal
/// cutout side.
pub fn check_blur_fits(dims: ImageDims, size_ratio: f64, sigma: f64) -> Result<()> {
    let kernel = 2 * blur_radius(sigma) + 1;
    let side = cutout_side(dims, size_ratio).floor() as usize;
    if kernel > side {
        return Err(param(format!(
            "blur kernel of {kernel} px does not fit a cutout of side {side} px (sigma {sigma}, size ratio {size_ratio})"
        )));
    }
    Ok(())
}

/// View 1 is the image with region `R` replaced by the blurred image; view 2
/// is the unblurred `R` resized to the image size.
pub fn make_cutout_blur_pair<R: Rng + ?Sized>(
    rng: &mut R,
    img: &Image,
    size_ratio: f64,
    sigma: Option<f64>,
) -> Result<ViewPair> {
    check_cutout_ratio(size_ratio)?;
    let dims = img.dims()?;
    let s = cutout_blur_sigma(dims, size_ratio, sigma);
    if !(s > 0.0) {
        return Err(param(format!("blur sigma must be positive (got {s})")));
    }
    check_blur_fits(dims, size_ratio, s)?;
    let region = sample_region(rng, dims, size_ratio);
    let blurred = gaussian_blur(img, s)?;
    Ok(ViewPair {
        v1: composite(img, &blurred, &region),
        v2: crop_resize(img, &region, img.w)?,
        geom: RectPair::new(Rect::full(dims), region, dims)?,
        spec: AugSpec::CutoutBlur { size_ratio, sigma },
    })
}

/// Non-spatial augmentation applied independently to each view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotoCfg {
    pub flip_prob: f64,
    /// Brightness factor drawn from `[1 - brightness, 1 + brightness]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 - contrast, 1 + contrast]`.
    pub contrast: f64,
    pub grayscale_prob: f64,
}

impl Default for PhotoCfg {
    fn default() -> Self {
        PhotoCfg { flip_prob: 0.5, brightness: 0.4, contrast: 0.4, grayscale_prob: 0.2 }
    }
}

impl PhotoCfg {
    pub fn identity() -> Self {
        PhotoCfg { flip_prob: 0.0, brightness: 0.0, contrast: 0.0, grayscale_prob: 0.0 }
    }
}

pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            for c in 0..CHANNELS {
                out.set(x, y, c, img.get(img.w - 1 - x, y, c));
            }
        }
    }
    out
}

pub fn adjust_brightness(img: &Image, factor: f32) -> Image {
    Image { w: img.w, h: img.h, data: img.data.iter().map(|&v| (v * factor).clamp(0.0, 1.0)).collect() }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Blend with the mean luma: `m + factor·(v - m)`.
pub fn adjust_contrast(img: &Image, factor: f32) -> Image {
    let n = (img.w * img.h) as f64;
    let mean = img.data.chunks_exact(CHANNELS).map(|p| luma(p[0], p[1], p[2]) as f64).sum::<f64>() / n;
    let m = mean as f32;
    Image { w: img.w, h: img.h, data: img.data.iter().map(|&v| (m + factor * (v - m)).clamp(0.0, 1.0)).collect() }
}

pub fn to_grayscale(img: &Image) -> Image {
    let mut data = Vec::with_capacity(img.data.len());
    for p in img.data.chunks_exact(CHANNELS) {
        let l = luma(p[0], p[1], p[2]).clamp(0.0, 1.0);
        data.extend_from_slice(&[l, l, l]);
    }
    Image { w: img.w, h: img.h, data }
}

/// Flip, brightness, contrast, grayscale, in that order. Factors of exactly 1
/// leave the image untouched.
pub fn apply_photometric<R: Rng + ?Sized>(rng: &mut R, img: &Image, cfg: &PhotoCfg) -> Image {
    let mut out = img.clone();
    if cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob.min(1.0)) {
        out = flip_horizontal(&out);
    }
    if cfg.brightness > 0.0 {
        let f = rng.random_range(1.0 - cfg.brightness..=1.0 + cfg.brightness).max(0.0) as f32;
        if f != 1.0 {
            out = adjust_brightness(&out, f);
        }
    }
    if cfg.contrast > 0.0 {
        let f = rng.random_range(1.0 - cfg.contrast..=1.0 + cfg.contrast).max(0.0) as f32;
        if f != 1.0 {
            out = adjust_contrast(&out, f);
        }
    }
    if cfg.grayscale_prob > 0.0 && rng.random_bool(cfg.grayscale_prob.min(1.0)) {
        out = to_grayscale(&out);
    }
    out
}

/// Build the two views of `img` for the given spatial scheme, then apply
/// photometric augmentation to each view independently.
///
/// For schemes with a whole-image view, `geom.phi` is the distance from the
/// image center to the region center.
pub fn make_view_pair<R: Rng + ?Sized>(
    rng: &mut R,
    img: &Image,
    spec: &AugSpec,
    photo: &PhotoCfg,
    out_size: usize,
) -> Result<ViewPair> {
    spec.validate()?;
    let dims = img.dims()?;
    let from_rects = |geom: RectPair| -> Result<ViewPair> {
        Ok(ViewPair {
            v1: crop_resize(img, &geom.a, out_size)?,
            v2: crop_resize(img, &geom.b, out_size)?,
            geom,
            spec: *spec,
        })
    };
    let mut pair = match *spec {
        AugSpec::Overlap { ratio } => from_rects(sample_overlap_pair(rng, dims, ratio)?)?,
        AugSpec::Patch { ratio } => from_rects(sample_patch_pair(rng, dims, ratio)?)?,
        AugSpec::Exclusive { ratio } => from_rects(sample_exclusive_pair(rng, dims, ratio)?)?,
        AugSpec::RandomCrop { scale_min, scale_max } => {
            let a = sample_random_crop(rng, dims, scale_min, scale_max)?;
            let b = sample_random_crop(rng, dims, scale_min, scale_max)?;
            from_rects(RectPair::new(a, b, dims)?)?
        }
        AugSpec::Cutout { size_ratio } => make_cutout_pair(rng, img, size_ratio)?,
        AugSpec::CutoutBlur { size_ratio, sigma } => make_cutout_blur_pair(rng, img, size_ratio, sigma)?,
    };
    if pair.v1.w != out_size {
        pair.v1 = crop_resize(&pair.v1, &Rect::full(dims), out_size)?;
        pair.v2 = crop_resize(&pair.v2, &Rect { x: 0, y: 0, w: pair.v2.w, h: pair.v2.h }, out_size)?;
    }
    pair.v1 = apply_photometric(rng, &pair.v1, photo);
    pair.v2 = apply_photometric(rng, &pair.v2, photo);
    Ok(pair)
}
