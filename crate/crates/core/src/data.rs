//! Datasets: the CIFAR-10 binary format and procedurally generated
//! object-centric / scene-centric shape images.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::Rect;
use crate::imaging::{Image, CHANNELS};
use crate::seeds::{self, stream};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;
/// One label byte followed by the R, G and B planes.
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_PLANE;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;
pub const CIFAR_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR_CLASSES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

/// Images with optional labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Option<Vec<u8>>,
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Option<Vec<u8>>, class_names: Option<Vec<String>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != images.len() {
                return Err(param(format!("{} labels for {} images", l.len(), images.len())));
            }
            if let Some(names) = &class_names {
                if let Some(&bad) = l.iter().find(|&&c| c as usize >= names.len()) {
                    return Err(param(format!("label {bad} outside {} classes", names.len())));
                }
            }
        }
        Ok(Dataset { images, labels, class_names })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        match (&self.class_names, &self.labels) {
            (Some(n), _) => n.len(),
            (None, Some(l)) => l.iter().map(|&c| c as usize + 1).max().unwrap_or(0),
            _ => 0,
        }
    }

    /// Per-channel mean and standard deviation over every pixel.
    pub fn channel_stats(&self) -> ([f64; 3], [f64; 3]) {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut n = 0usize;
        for img in &self.images {
            for px in img.data().chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    let v = px[c] as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [0f64; 3];
        for c in 0..CHANNELS {
            std[c] = (sq[c] / n - mean[c] * mean[c]).max(1e-12).sqrt();
        }
        (mean, std)
    }

    /// Write `NNNNN.png` files plus `labels.csv` (`index,file,label,class`).
    pub fn export_png_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = csv::Writer::from_path(dir.join("labels.csv"))?;
        index.write_record(["index", "file", "label", "class"])?;
        for (i, img) in self.images.iter().enumerate() {
            let file = format!("{i:05}.png");
            img.write_png(std::io::BufWriter::new(fs::File::create(dir.join(&file))?))?;
            let label = self.labels.as_ref().map(|l| l[i]);
            let class = label
                .and_then(|l| self.class_names.as_ref().map(|n| n[l as usize].clone()))
                .unwrap_or_default();
            index.write_record([i.to_string(), file, label.map(|l| l.to_string()).unwrap_or_default(), class])?;
        }
        index.flush()?;
        Ok(())
    }
}

fn ingest(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingest { path: path.to_path_buf(), msg: msg.into() }
}

/// Parse a CIFAR-10 binary batch. `path` is only used in error messages.
pub fn parse_cifar_batch(bytes: &[u8], path: &Path) -> Result<(Vec<Image>, Vec<u8>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(ingest(
            path,
            format!(
                "truncated record at byte offset {offset}: {} of {CIFAR_RECORD} bytes present",
                bytes.len() - offset
            ),
        ));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(ingest(
                path,
                format!("record {i} (byte offset {}) has label {label}, expected 0..=9", i * CIFAR_RECORD),
            ));
        }
        let planes = &rec[1..];
        let mut data = Vec::with_capacity(3 * CIFAR_PLANE);
        for pix in 0..CIFAR_PLANE {
            for c in 0..CHANNELS {
                data.push(planes[c * CIFAR_PLANE + pix] as f32 / 255.0);
            }
        }
        images.push(Image::new(CIFAR_SIDE, CIFAR_SIDE, data)?);
        labels.push(label);
    }
    Ok((images, labels))
}

/// Serialize one image back to a CIFAR-10 record.
pub fn encode_cifar_record(img: &Image, label: u8) -> Result<Vec<u8>> {
    if img.width() != CIFAR_SIDE || img.height() != CIFAR_SIDE {
        return Err(param("CIFAR-10 records are 32x32"));
    }
    let mut out = vec![0u8; CIFAR_RECORD];
    out[0] = label;
    let rgb = img.to_rgb8();
    for pix in 0..CIFAR_PLANE {
        for c in 0..CHANNELS {
            out[1 + c * CIFAR_PLANE + pix] = rgb[pix * CHANNELS + c];
        }
    }
    Ok(out)
}

/// Read one batch file. With `expect_records`, the record count is checked too.
pub fn read_cifar_batch(path: &Path, expect_records: Option<usize>) -> Result<(Vec<Image>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| ingest(path, format!("cannot read: {e}")))?;
    if let Some(n) = expect_records {
        if bytes.len() != n * CIFAR_RECORD {
            return Err(ingest(
                path,
                format!("expected {n} records ({} bytes), found {} bytes", n * CIFAR_RECORD, bytes.len()),
            ));
        }
    }
    parse_cifar_batch(&bytes, path)
}

fn cifar_dataset(files: &[PathBuf]) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (i, l) = read_cifar_batch(f, Some(CIFAR_RECORDS_PER_FILE))?;
        images.extend(i);
        labels.extend(l);
    }
    Dataset::new(images, Some(labels), Some(CIFAR_CLASSES.iter().map(|s| s.to_string()).collect()))
}

/// Load the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train: Vec<PathBuf> = CIFAR_TRAIN_FILES.iter().map(|f| dir.join(f)).collect();
    let test = dir.join(CIFAR_TEST_FILE);
    for f in train.iter().chain(std::iter::once(&test)) {
        if !f.is_file() {
            return Err(ingest(f, "missing CIFAR-10 batch file"));
        }
    }
    Ok((cifar_dataset(&train)?, cifar_dataset(&[test])?))
}

/// Shape classes of the synthetic datasets, in label order.
pub const SHAPE_CLASSES: [&str; 4] = ["circle", "square", "triangle", "cross"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// One large shape per image, labeled by its class.
    ObjectCentric,
    /// Two to four shapes of distinct classes in disjoint cells; unlabeled.
    SceneCentric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCfg {
    pub mode: SynthMode,
    pub n_samples: usize,
    pub seed: u64,
    pub image_size: usize,
    /// Shape area as a fraction of the image (object-centric) or of its cell (scene-centric).
    pub scale_range: (f64, f64),
    /// Amplitude of the uniform background noise.
    pub noise_amp: f64,
}

impl Default for SynthCfg {
    fn default() -> Self {
        SynthCfg {
            mode: SynthMode::ObjectCentric,
            n_samples: 4000,
            seed: 0,
            image_size: 32,
            scale_range: (0.4, 0.7),
            noise_amp: 0.08,
        }
    }
}

impl SynthCfg {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if self.image_size < 16 || !(0.05 <= lo && lo <= hi && hi <= 0.7) || !(0.0..=0.5).contains(&self.noise_amp) {
            return Err(param(format!("synthetic dataset settings out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Per-shape record produced alongside each synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeInfo {
    pub class: u8,
    pub bbox: Rect,
    pub mask_pixels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    class: u8,
    cx: f64,
    cy: f64,
    /// Half extent of the bounding box.
    half: f64,
}

const CROSS_ARM: f64 = 0.35;

impl Shape {
    /// Area of the continuous shape with half extent 1.
    fn unit_area(class: u8) -> f64 {
        match class {
            0 => std::f64::consts::PI,
            1 => 4.0,
            2 => 2.0,
            _ => 8.0 * CROSS_ARM - 4.0 * CROSS_ARM * CROSS_ARM,
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy, a) = (px - self.cx, py - self.cy, self.half);
        match self.class {
            0 => dx * dx + dy * dy <= a * a,
            1 => dx.abs() <= a && dy.abs() <= a,
            // Apex on top, base at the bottom of the box.
            2 => dy >= -a && dy <= a && dx.abs() <= (dy + a) / 2.0,
            _ => {
                let t = CROSS_ARM * a;
                (dx.abs() <= t && dy.abs() <= a) || (dy.abs() <= t && dx.abs() <= a)
            }
        }
    }

    /// Pixel-center rasterization restricted to `area`.
    fn mask(&self, area: &Rect) -> Vec<(usize, usize)> {
        let mut px = Vec::new();
        for y in area.y..area.bottom() {
            for x in area.x..area.right() {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    px.push((x, y));
                }
            }
        }
        px
    }

    fn bbox(&self, area: &Rect) -> Rect {
        let x0 = ((self.cx - self.half).floor().max(area.x as f64)) as usize;
        let y0 = ((self.cy - self.half).floor().max(area.y as f64)) as usize;
        let x1 = ((self.cx + self.half).ceil() as usize).min(area.right());
        let y1 = ((self.cy + self.half).ceil() as usize).min(area.bottom());
        Rect { x: x0, y: y0, w: (x1 - x0).max(1), h: (y1 - y0).max(1) }
    }
}

/// Sample a shape of `class` whose rasterized area over `cell` is inside
/// `[lo, hi]` of the cell area.
fn place_shape<R: Rng + ?Sized>(rng: &mut R, class: u8, cell: &Rect, lo: f64, hi: f64) -> (Shape, Vec<(usize, usize)>) {
    let side = cell.w.min(cell.h) as f64;
    let cell_area = cell.area() as f64;
    // Largest fraction that still fits inside the cell, with a little slack.
    let target_hi = (Shape::unit_area(class) * (side / 2.0).powi(2) / cell_area * 0.97).clamp(lo, hi);
    loop {
        let frac = rng.random_range(lo..=target_hi);
        let mut half = (frac * cell_area / Shape::unit_area(class)).sqrt().min(side / 2.0);
        for _ in 0..4 {
            let cx = rng.random_range(cell.x as f64 + half..=cell.right() as f64 - half);
            let cy = rng.random_range(cell.y as f64 + half..=cell.bottom() as f64 - half);
            let shape = Shape { class, cx, cy, half };
            let mask = shape.mask(cell);
            let got = mask.len() as f64 / cell_area;
            if (lo..=hi).contains(&got) {
                return (shape, mask);
            }
            // Nudge the size toward the target and try again.
            half = (half * (frac / got.max(1e-3)).sqrt()).min(side / 2.0);
        }
    }
}

/// Random color whose luma differs from `bg` by at least 0.3.
fn shape_color<R: Rng + ?Sized>(rng: &mut R, bg: f64) -> [f32; 3] {
    loop {
        let c: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let luma = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
        if (luma - bg).abs() >= 0.3 {
            return c.map(|v| v as f32);
        }
    }
}

fn render<R: Rng + ?Sized>(
    rng: &mut R,
    side: usize,
    noise_amp: f64,
    shapes: &[(Vec<(usize, usize)>, [f32; 3])],
    bg: f64,
) -> Image {
    let mut img = Image::from_fn(side, side, |_, _, _| {
        let n = if noise_amp > 0.0 { rng.random_range(-noise_amp..=noise_amp) } else { 0.0 };
        (bg + n) as f32
    });
    for (mask, color) in shapes {
        for &(x, y) in mask {
            for c in 0..CHANNELS {
                img.set(x, y, c, color[c]);
            }
        }
    }
    img
}

/// Generate a synthetic dataset together with per-image shape records.
pub fn gen_synthetic_with_info(cfg: &SynthCfg) -> Result<(Dataset, Vec<Vec<ShapeInfo>>)> {
    cfg.validate()?;
    let side = cfg.image_size;
    let (lo, hi) = cfg.scale_range;
    let mut images = Vec::with_capacity(cfg.n_samples);
    let mut infos = Vec::with_capacity(cfg.n_samples);
    let mut labels = Vec::with_capacity(cfg.n_samples);
    let half = side / 2;
    let cells = [
        Rect { x: 0, y: 0, w: half, h: half },
        Rect { x: half, y: 0, w: side - half, h: half },
        Rect { x: 0, y: half, w: half, h: side - half },
        Rect { x: half, y: half, w: side - half, h: side - half },
    ];
    let full = Rect { x: 0, y: 0, w: side, h: side };
    for i in 0..cfg.n_samples {
        let mut rng = seeds::rng_for(&[cfg.seed, stream::DATA, i as u64]);
        let bg = rng.random_range(0.15..=0.85);
        let placed: Vec<(u8, Rect)> = match cfg.mode {
            SynthMode::ObjectCentric => vec![((i % SHAPE_CLASSES.len()) as u8, full)],
            SynthMode::SceneCentric => {
                let k = rng.random_range(2..=4);
                let mut classes: Vec<u8> = (0..SHAPE_CLASSES.len() as u8).collect();
                classes.shuffle(&mut rng);
                let mut cell_ids: Vec<usize> = (0..cells.len()).collect();
                cell_ids.shuffle(&mut rng);
                (0..k).map(|j| (classes[j], cells[cell_ids[j]])).collect()
            }
        };
        let mut rendered = Vec::new();
        let mut info = Vec::new();
        for (class, cell) in placed {
            let (shape, mask) = place_shape(&mut rng, class, &cell, lo, hi);
            info.push(ShapeInfo { class, bbox: shape.bbox(&cell), mask_pixels: mask.len() });
            rendered.push((mask, shape_color(&mut rng, bg)));
        }
        images.push(render(&mut rng, side, cfg.noise_amp, &rendered, bg));
        if cfg.mode == SynthMode::ObjectCentric {
            labels.push(info[0].class);
        }
        infos.push(info);
    }
    let (labels, names) = match cfg.mode {
        SynthMode::ObjectCentric => (Some(labels), Some(SHAPE_CLASSES.iter().map(|s| s.to_string()).collect())),
        SynthMode::SceneCentric => (None, None),
    };
    Ok((Dataset::new(images, labels, names)?, infos))
}

pub fn gen_synthetic(cfg: &SynthCfg) -> Result<Dataset> {
    Ok(gen_synthetic_with_info(cfg)?.0)
}

/// Index batches for one epoch: a permutation seeded by `(seed, epoch)`,
/// with the final partial batch dropped.
pub fn batch_iter(n: usize, seed: u64, epoch: usize, batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(param(format!("batch size must be at least 2 (got {batch_size})")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng_for(&[seed, stream::SHUFFLE, epoch as u64]));
    Ok(order.chunks_exact(batch_size).map(|c| c.to_vec()).collect())
}

/// Write a CIFAR-10 batch file from images and labels.
pub fn write_cifar_batch(path: &Path, images: &[Image], labels: &[u8]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (img, &l) in images.iter().zip(labels) {
        out.write_all(&encode_cifar_record(img, l)?)?;
    }
    out.flush()?;
    Ok(())
}
