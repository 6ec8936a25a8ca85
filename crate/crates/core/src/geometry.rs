//! Crop geometry: integer rectangles, overlap measurement and the pair samplers
//! used to build the two views of an image.
//!
//! Every sampler is a pure function of its inputs and the generator it is
//! handed. Ratio targets are met up to the rounding of integer side lengths.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, param, Result};

/// Aspect-ratio range (width / height) shared by every sampled crop.
pub const ASPECT_MIN: f64 = 3.0 / 4.0;
pub const ASPECT_MAX: f64 = 4.0 / 3.0;

/// Integer-pixel axis-aligned rectangle. `x`, `y` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(param(format!("rect must have w, h >= 1 (got {w}x{h})")));
        }
        Ok(Rect { x, y, w, h })
    }

    /// The rectangle covering a whole image.
    pub fn full(dims: ImageDims) -> Self {
        Rect { x: 0, y: 0, w: dims.w, h: dims.h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    pub fn fits(&self, dims: ImageDims) -> bool {
        self.right() <= dims.w && self.bottom() <= dims.h
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub(crate) fn check_within(&self, w: usize, h: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.right() > w || self.bottom() > h {
            return Err(contract(format!("rect {self:?} is not inside a {w}x{h} image")));
        }
        Ok(())
    }
}

/// Image size in pixels. Both sides are at least 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub w: usize,
    pub h: usize,
}

impl ImageDims {
    pub fn new(w: usize, h: usize) -> Result<Self> {
        if w < 8 || h < 8 {
            return Err(param(format!("image dims must be at least 8x8 (got {w}x{h})")));
        }
        Ok(ImageDims { w, h })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn diagonal(&self) -> f64 {
        ((self.w * self.w + self.h * self.h) as f64).sqrt()
    }
}

/// Two source rectangles plus the measurements the loss and the analysis need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectPair {
    pub a: Rect,
    pub b: Rect,
    /// Euclidean distance between the rectangle centers, in pixels.
    pub phi: f64,
    /// Intersection area over image area.
    pub overlap_ratio: f64,
}

impl RectPair {
    pub fn new(a: Rect, b: Rect, dims: ImageDims) -> Result<Self> {
        Ok(RectPair { a, b, phi: center_distance(&a, &b), overlap_ratio: overlap_ratio(&a, &b, dims)? })
    }
}

/// Spatial augmentation scheme used to build a view pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugSpec {
    /// Two crops whose intersection covers `ratio` of the image.
    Overlap { ratio: f64 },
    /// Whole image versus a patch covering `ratio` of it.
    Patch { ratio: f64 },
    /// Two disjoint crops jointly covering `ratio` of the image.
    Exclusive { ratio: f64 },
    /// Two independent random-resized-crop draws.
    RandomCrop { scale_min: f64, scale_max: f64 },
    /// Image with a black region versus the region itself.
    Cutout { size_ratio: f64 },
    /// Image with a blurred region versus the region itself.
    /// `sigma` of `None` means 10% of the nominal region side, sqrt(size_ratio · area).
    CutoutBlur { size_ratio: f64, sigma: Option<f64> },
}

impl Default for AugSpec {
    fn default() -> Self {
        AugSpec::RandomCrop { scale_min: 0.2, scale_max: 1.0 }
    }
}

impl AugSpec {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        let ok = match *self {
            AugSpec::Overlap { ratio } | AugSpec::Patch { ratio } => open_unit(ratio),
            AugSpec::Exclusive { ratio } => ratio > 0.0 && ratio <= 0.8,
            AugSpec::RandomCrop { scale_min, scale_max } => {
                scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0
            }
            AugSpec::Cutout { size_ratio } => size_ratio > 0.0 && size_ratio <= 0.5,
            AugSpec::CutoutBlur { size_ratio, sigma } => {
                size_ratio > 0.0 && size_ratio <= 0.5 && sigma.is_none_or(|s| s > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(param(format!("augmentation parameters out of range: {self:?}")))
        }
    }

    /// Short stable name, used in file names and CSV rows.
    pub fn name(&self) -> &'static str {
        match self {
            AugSpec::Overlap { .. } => "overlap",
            AugSpec::Patch { .. } => "patch",
            AugSpec::Exclusive { .. } => "exclusive",
            AugSpec::RandomCrop { .. } => "random_crop",
            AugSpec::Cutout { .. } => "cutout",
            AugSpec::CutoutBlur { .. } => "cutout_blur",
        }
    }
}

/// Intersection of two rectangles; edge-touching rectangles are disjoint.
pub fn intersect(a: &Rect, b: &Rect) -> Option<Rect> {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = a.right().min(b.right());
    let y1 = a.bottom().min(b.bottom());
    (x1 > x0 && y1 > y0).then(|| Rect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
}

/// `area(a ∩ b) / area(image)`.
pub fn overlap_ratio(a: &Rect, b: &Rect, dims: ImageDims) -> Result<f64> {
    a.check_within(dims.w, dims.h)?;
    b.check_within(dims.w, dims.h)?;
    let inter = intersect(a, b).map_or(0, |r| r.area());
    Ok(inter as f64 / dims.area() as f64)
}

/// Euclidean distance between rectangle centers, in pixels.
pub fn center_distance(a: &Rect, b: &Rect) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

fn sample_aspect<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(ASPECT_MIN.ln()..=ASPECT_MAX.ln()).exp()
}

/// Integer side lengths with product close to `area`, aspect close to
/// `aspect`, and each side bounded by `max_w` / `max_h`.
///
/// When nothing clamps, `|w*h - area| <= w/2`.
fn fit_sides(area: f64, aspect: f64, max_w: usize, max_h: usize) -> (usize, usize) {
    let mut w = ((area * aspect).sqrt().round() as usize).clamp(1, max_w);
    let h = ((area / w as f64).round() as usize).clamp(1, max_h);
    if h == max_h {
        w = ((area / h as f64).round() as usize).clamp(1, max_w);
    }
    (w, h)
}

fn check_ratio(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(param(format!("{name} must be in [{lo}, {hi}] (got {v})")));
    }
    Ok(())
}

/// Two crops sharing an overlap rectangle `O` whose area is `target` of the image.
///
/// `O` is placed first; the crops grow away from it toward opposite corners,
/// so `a ∩ b == O` by construction.
pub fn sample_overlap_pair<R: Rng + ?Sized>(rng: &mut R, dims: ImageDims, target: f64) -> Result<RectPair> {
    check_ratio("overlap target", target, 0.05, 0.95)?;
    let area = target * dims.area() as f64;
    let (ow, oh) = fit_sides(area, sample_aspect(rng), dims.w, dims.h);
    let ox = rng.random_range(0..=dims.w - ow);
    let oy = rng.random_range(0..=dims.h - oh);

    // Which diagonal, and which crop takes the left end of it.
    let diagonal_main = rng.random_bool(0.5);
    let a_left = rng.random_bool(0.5);

    let grow_left = rng.random_range(0..=ox);
    let grow_right = rng.random_range(0..=dims.w - ox - ow);
    let grow_up = rng.random_range(0..=oy);
    let grow_down = rng.random_range(0..=dims.h - oy - oh);

    let left = Rect { x: ox - grow_left, y: 0, w: ow + grow_left, h: 0 };
    let right = Rect { x: ox, y: 0, w: ow + grow_right, h: 0 };
    let (up_y, up_h) = (oy - grow_up, oh + grow_up);
    let (down_y, down_h) = (oy, oh + grow_down);

    // Main diagonal: left crop grows up, right crop grows down.
    let (left_v, right_v) =
        if diagonal_main { ((up_y, up_h), (down_y, down_h)) } else { ((down_y, down_h), (up_y, up_h)) };
    let l = Rect { y: left_v.0, h: left_v.1, ..left };
    let r = Rect { y: right_v.0, h: right_v.1, ..right };
    let (a, b) = if a_left { (l, r) } else { (r, l) };
    RectPair::new(a, b, dims)
}

/// The whole image paired with a uniformly placed patch covering `patch_ratio` of it.
pub fn sample_patch_pair<R: Rng + ?Sized>(rng: &mut R, dims: ImageDims, patch_ratio: f64) -> Result<RectPair> {
    check_ratio("patch ratio", patch_ratio, 0.05, 0.95)?;
    let patch = sample_region(rng, dims, patch_ratio);
    RectPair::new(Rect::full(dims), patch, dims)
}

/// Two disjoint crops of equal target area whose combined area is `excl_ratio`
/// of the image.
///
/// The image is split by a random axis-aligned line with room for one crop on
/// each side. Each crop is limited to half the image along the split axis, so
/// large ratios produce crops elongated beyond the usual aspect range.
pub fn sample_exclusive_pair<R: Rng + ?Sized>(rng: &mut R, dims: ImageDims, excl_ratio: f64) -> Result<RectPair> {
    if !(excl_ratio > 0.0 && excl_ratio <= 0.8) {
        return Err(param(format!("exclusive ratio must be in (0, 0.8] (got {excl_ratio})")));
    }
    let vertical_split = rng.random_bool(0.5);
    // Work in a frame where the split line is vertical, then transpose back.
    let (len, across) = if vertical_split { (dims.w, dims.h) } else { (dims.h, dims.w) };
    let each = excl_ratio / 2.0 * dims.area() as f64;
    let half = len / 2;
    let (wa, ha) = fit_sides(each, sample_aspect(rng), half, across);
    let (wb, hb) = fit_sides(each, sample_aspect(rng), half, across);

    let split = rng.random_range(wa..=len - wb);
    let xa = rng.random_range(0..=split - wa);
    let xb = rng.random_range(split..=len - wb);
    let ya = rng.random_range(0..=across - ha);
    let yb = rng.random_range(0..=across - hb);

    let orient = |x: usize, y: usize, w: usize, h: usize| {
        if vertical_split {
            Rect { x, y, w, h }
        } else {
            Rect { x: y, y: x, w: h, h: w }
        }
    };
    let (a, b) = (orient(xa, ya, wa, ha), orient(xb, yb, wb, hb));
    let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
    RectPair::new(a, b, dims)
}

/// A uniformly placed rectangle covering about `ratio` of the image, with an
/// aspect drawn from the usual range.
pub(crate) fn sample_region<R: Rng + ?Sized>(rng: &mut R, dims: ImageDims, ratio: f64) -> Rect {
    let (w, h) = fit_sides(ratio * dims.area() as f64, sample_aspect(rng), dims.w, dims.h);
    let x = rng.random_range(0..=dims.w - w);
    let y = rng.random_range(0..=dims.h - h);
    Rect { x, y, w, h }
}

/// Random-resized-crop geometry: area in `[scale_min, scale_max]` of the image,
/// aspect in `[3/4, 4/3]`, position uniform. Falls back to the full image after
/// ten infeasible draws.
pub fn sample_random_crop<R: Rng + ?Sized>(
    rng: &mut R,
    dims: ImageDims,
    scale_min: f64,
    scale_max: f64,
) -> Result<Rect> {
    if !(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0) {
        return Err(param(format!("crop scale range [{scale_min}, {scale_max}] is invalid")));
    }
    let total = dims.area() as f64;
    for _ in 0..10 {
        let area = rng.random_range(scale_min..=scale_max) * total;
        let aspect = sample_aspect(rng);
        let w = (area * aspect).sqrt().round() as usize;
        let h = (area / aspect).sqrt().round() as usize;
        if w == 0 || h == 0 || w > dims.w || h > dims.h {
            continue;
        }
        let scale = (w * h) as f64 / total;
        let ratio = w as f64 / h as f64;
        if scale < scale_min || scale > scale_max || !(ASPECT_MIN..=ASPECT_MAX).contains(&ratio) {
            continue;
        }
        let x = rng.random_range(0..=dims.w - w);
        let y = rng.random_range(0..=dims.h - h);
        return Ok(Rect { x, y, w, h });
    }
    Ok(Rect::full(dims))
}
