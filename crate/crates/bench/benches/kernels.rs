use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamaug_core::geometry::{sample_exclusive_pair, sample_overlap_pair, sample_patch_pair, sample_random_crop};
use siamaug_core::imaging::gaussian_blur;
use siamaug_core::model::{backward, forward, init_params, Mode, ModelParams};
use siamaug_core::{ArchCfg, Image, ImageDims};

fn noise(seed: u64, side: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(side, side, |_, _, _| rng.random::<f32>())
}

fn samplers(c: &mut Criterion) {
    let mut g = c.benchmark_group("samplers");
    for side in [32, 64] {
        let dims = ImageDims::new(side, side).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        g.bench_function(format!("overlap_0.5_{side}"), |b| b.iter(|| sample_overlap_pair(&mut rng, dims, 0.5).unwrap()));
        g.bench_function(format!("patch_0.3_{side}"), |b| b.iter(|| sample_patch_pair(&mut rng, dims, 0.3).unwrap()));
        g.bench_function(format!("exclusive_0.3_{side}"), |b| {
            b.iter(|| sample_exclusive_pair(&mut rng, dims, 0.3).unwrap())
        });
        g.bench_function(format!("random_crop_{side}"), |b| {
            b.iter(|| sample_random_crop(&mut rng, dims, 0.2, 1.0).unwrap())
        });
    }
    g.finish();
}

fn blur(c: &mut Criterion) {
    let img = noise(2, 32);
    let mut g = c.benchmark_group("blur");
    for sigma in [1.0, 3.0] {
        g.bench_function(format!("sigma_{sigma}"), |b| b.iter(|| gaussian_blur(black_box(&img), sigma).unwrap()));
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let arch = ArchCfg::default();
    let params: ModelParams<f32> = init_params(&mut ChaCha8Rng::seed_from_u64(3), &arch).unwrap();
    let imgs: Vec<Image> = (0..128).map(|i| noise(100 + i, arch.input_size)).collect();
    let batch: Vec<&Image> = imgs.iter().collect();
    let d = arch.proj_dim;
    let grad = vec![1e-3f32; batch.len() * d];

    let mut g = c.benchmark_group("network_b128");
    g.sample_size(10);
    g.bench_function("forward_train", |b| b.iter(|| forward(&params, black_box(&batch), Mode::Train).unwrap()));
    g.bench_function("forward_backward", |b| {
        b.iter(|| {
            let o1 = forward(&params, &batch, Mode::Train).unwrap();
            let o2 = forward(&params, &batch, Mode::Train).unwrap();
            backward(&params, [&o1.cache, &o2.cache], &grad, &grad).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, samplers, blur, network);
criterion_main!(benches);
