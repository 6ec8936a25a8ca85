//! PNG previews of augmentation pairs.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{param, Result};
use crate::geometry::{Rect, RectPair};
use crate::harness::config::RunConfig;
use crate::imaging::{crop_resize, make_view_pair, Image};
use crate::seeds::{rng_for, stream};

/// Upscaling factor of every panel.
pub const PREVIEW_SCALE: usize = 4;
const GAP: usize = 4;

fn upscale(img: &Image, s: usize) -> Image {
    Image::from_fn(img.width() * s, img.height() * s, |x, y, c| img.get(x / s, y / s, c))
}

/// Draw the one-pixel outline of `r` (in source pixels) scaled by `s`,
/// saturating channel `c`.
fn outline(canvas: &mut Image, r: &Rect, s: usize, c: usize) {
    let (x0, y0, x1, y1) = (r.x * s, r.y * s, (r.x + r.w) * s - 1, (r.y + r.h) * s - 1);
    for x in x0..=x1 {
        canvas.set(x, y0, c, 1.0);
        canvas.set(x, y1, c, 1.0);
    }
    for y in y0..=y1 {
        canvas.set(x0, y, c, 1.0);
        canvas.set(x1, y, c, 1.0);
    }
}

/// Three panels side by side: the dimmed source with the first rectangle
/// outlined in red and the second in blue, then view 1 and view 2. Dimming
/// keeps image pixels below full intensity so the outlines stay recoverable.
pub fn compose_preview(src: &Image, geom: &RectPair, v1: &Image, v2: &Image) -> Result<Image> {
    let s = PREVIEW_SCALE;
    let mut base = upscale(&Image::from_fn(src.width(), src.height(), |x, y, c| src.get(x, y, c) * 0.5), s);
    outline(&mut base, &geom.a, s, 0);
    outline(&mut base, &geom.b, s, 2);
    let side = base.height();
    let fit = |v: &Image| -> Result<Image> {
        let full = Rect { x: 0, y: 0, w: v.width(), h: v.height() };
        Ok(upscale(&crop_resize(v, &full, src.width())?, s))
    };
    let panels = [base, fit(v1)?, fit(v2)?];
    let width = 3 * side + 2 * GAP;
    let mut canvas = Image::filled(width, side, 1.0);
    for (i, p) in panels.iter().enumerate() {
        let off = i * (side + GAP);
        for y in 0..side {
            for x in 0..side {
                for c in 0..3 {
                    canvas.set(off + x, y, c, p.get(x, y, c));
                }
            }
        }
    }
    Ok(canvas)
}

/// File name carrying the pair's geometry.
pub fn preview_name(index: usize, aug: &str, geom: &RectPair) -> String {
    format!("pair{index:04}_{aug}_phi{:.3}_overlap{:.4}.png", geom.phi, geom.overlap_ratio)
}

/// Write `n` annotated view pairs of the configured dataset into `out_dir`.
/// Image `i` of the preview uses dataset image `i mod len`.
pub fn cmd_augment_preview(cfg: &RunConfig, n: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.aug.validate()?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let ds = cfg.dataset.load()?;
    if ds.is_empty() {
        return Err(param("dataset is empty"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(n);
    for i in 0..n {
        let img = &ds.images[i % ds.len()];
        let mut rng = rng_for(&[cfg.seed, stream::PREVIEW, i as u64]);
        let pair = make_view_pair(&mut rng, img, &cfg.aug, &cfg.photo, img.width())?;
        let canvas = compose_preview(img, &pair.geom, &pair.v1, &pair.v2)?;
        let path = out_dir.join(preview_name(i, cfg.aug.name(), &pair.geom));
        canvas.write_png(BufWriter::new(File::create(&path)?))?;
        written.push(path);
    }
    Ok(written)
}
