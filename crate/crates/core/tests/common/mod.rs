//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamaug_core::geometry::{ImageDims, Rect};
use siamaug_core::imaging::Image;
use siamaug_core::loss::{simsiam_loss, MarginSpec};
use siamaug_core::model::{backward, forward, init_params, ArchCfg, Mode, ModelParams, PARAM_NAMES};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Overlap area by counting the pixels covered by both rectangles.
pub fn pixel_overlap(a: &Rect, b: &Rect, dims: ImageDims) -> usize {
    let mut n = 0;
    for y in 0..dims.h {
        for x in 0..dims.w {
            let in_a = x >= a.x && x < a.x + a.w && y >= a.y && y < a.y + a.h;
            let in_b = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
            n += (in_a && in_b) as usize;
        }
    }
    n
}

pub fn random_rect<R: Rng>(rng: &mut R, dims: ImageDims) -> Rect {
    let w = rng.random_range(1..=dims.w);
    let h = rng.random_range(1..=dims.h);
    Rect { x: rng.random_range(0..=dims.w - w), y: rng.random_range(0..=dims.h - h), w, h }
}

pub fn noise_image(seed: u64, side: usize) -> Image {
    let mut r = rng(seed);
    Image::from_fn(side, side, |_, _, _| r.random::<f32>())
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)`, measured as vector norms.
pub fn norm_rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Analytic vs numeric gradient of the two-term loss w.r.t. both predictions.
/// The projections are held fixed, as the stop-gradient prescribes.
pub fn loss_grad_error(p1: &[f64], z1: &[f64], p2: &[f64], z2: &[f64], spec: &MarginSpec, phi: f64) -> f64 {
    let d = p1.len();
    let out = simsiam_loss(p1, z1, p2, z2, spec, phi).unwrap();
    let x: Vec<f64> = p1.iter().chain(p2).copied().collect();
    let num = numeric_grad(&x, 1e-5, |v| simsiam_loss(&v[..d], z1, &v[d..], z2, spec, phi).unwrap().value);
    let ana: Vec<f64> = out.grad_p1.iter().chain(&out.grad_p2).copied().collect();
    norm_rel_err(&ana, &num)
}

/// One sampled parameter entry of a network gradient check.
#[derive(Debug, Clone)]
pub struct GradSample {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// Relative error, or absolute error for entries that are essentially zero.
    pub fn error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        let diff = (self.analytic - self.numeric).abs();
        if scale < 1e-7 {
            diff
        } else {
            diff / scale
        }
    }
}

/// Batch-mean loss of two views with the targets `z` frozen at `targets`.
fn network_loss(
    params: &ModelParams<f64>,
    v1: &[&Image],
    v2: &[&Image],
    targets: (&[f64], &[f64]),
    spec: &MarginSpec,
    phi: &[f64],
) -> f64 {
    let d = params.arch.proj_dim;
    let o1 = forward(params, v1, Mode::Train).unwrap();
    let o2 = forward(params, v2, Mode::Train).unwrap();
    let b = v1.len();
    let mut total = 0.0;
    for j in 0..b {
        let r = |v: &[f64]| v[j * d..(j + 1) * d].to_vec();
        total += simsiam_loss(&r(&o1.p), &r(targets.0), &r(&o2.p), &r(targets.1), spec, phi[j]).unwrap().value;
    }
    total / b as f64
}

/// Finite-difference check of the full network (encoder, projector,
/// predictor, loss) in double precision. Samples `per_tensor` entries of every
/// trainable tensor.
pub fn network_grad_check(seed: u64, batch: usize, spec: &MarginSpec, per_tensor: usize, step: f64) -> Vec<GradSample> {
    let arch = ArchCfg::default();
    let mut params: ModelParams<f64> = init_params(&mut rng(seed), &arch).unwrap();
    // Non-trivial normalization parameters so their gradients are exercised.
    let mut r = rng(seed + 1);
    for bn in [&mut params.proj_bn, &mut params.pred_bn] {
        bn.gamma.iter_mut().for_each(|g| *g = r.random_range(0.5..1.5));
        bn.beta.iter_mut().for_each(|b| *b = r.random_range(-0.2..0.2));
    }
    for t in [&mut params.proj_fc1.b, &mut params.proj_fc2.b, &mut params.pred_fc1.b, &mut params.pred_fc2.b] {
        t.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
    }
    for conv in params.conv.iter_mut() {
        conv.b.iter_mut().for_each(|b| *b = r.random_range(-0.05..0.05));
    }

    let imgs1: Vec<Image> = (0..batch as u64).map(|i| noise_image(seed * 100 + i, arch.input_size)).collect();
    let imgs2: Vec<Image> = (0..batch as u64).map(|i| noise_image(seed * 100 + 50 + i, arch.input_size)).collect();
    let v1: Vec<&Image> = imgs1.iter().collect();
    let v2: Vec<&Image> = imgs2.iter().collect();
    let phi: Vec<f64> = (0..batch).map(|i| 2.0 + i as f64).collect();

    let d = arch.proj_dim;
    let o1 = forward(&params, &v1, Mode::Train).unwrap();
    let o2 = forward(&params, &v2, Mode::Train).unwrap();
    let (mut gp1, mut gp2) = (vec![0.0; batch * d], vec![0.0; batch * d]);
    for j in 0..batch {
        let rw = |v: &[f64]| v[j * d..(j + 1) * d].to_vec();
        let out = simsiam_loss(&rw(&o1.p), &rw(&o1.z), &rw(&o2.p), &rw(&o2.z), spec, phi[j]).unwrap();
        for c in 0..d {
            gp1[j * d + c] = out.grad_p1[c] / batch as f64;
            gp2[j * d + c] = out.grad_p2[c] / batch as f64;
        }
    }
    let grads = backward(&params, [&o1.cache, &o2.cache], &gp1, &gp2).unwrap();
    let targets = (o1.z.as_slice(), o2.z.as_slice());

    let mut samples = Vec::new();
    for (ti, name) in PARAM_NAMES.iter().enumerate() {
        let len = params.trainable()[ti].len();
        for _ in 0..per_tensor.min(len) {
            let index = r.random_range(0..len);
            let orig = params.trainable()[ti][index];
            params.trainable_mut()[ti][index] = orig + step;
            let up = network_loss(&params, &v1, &v2, targets, spec, &phi);
            params.trainable_mut()[ti][index] = orig - step;
            let down = network_loss(&params, &v1, &v2, targets, spec, &phi);
            params.trainable_mut()[ti][index] = orig;
            samples.push(GradSample {
                tensor: name,
                index,
                analytic: grads.tensors[ti][index],
                numeric: (up - down) / (2.0 * step),
            });
        }
    }
    samples
}

/// Reads one CIFAR-10 record straight from the byte layout: label byte, then
/// red, green and blue planes of 1024 bytes each, row-major.
pub fn cifar_reference_pixel(bytes: &[u8], record: usize, x: usize, y: usize) -> (u8, [u8; 3]) {
    let base = record * 3073;
    let label = bytes[base];
    let px = |c: usize| bytes[base + 1 + c * 1024 + y * 32 + x];
    (label, [px(0), px(1), px(2)])
}
