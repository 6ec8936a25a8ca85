//! Miniature SimSiam network (encoder, projector, predictor) with hand-written
//! backward passes and an SGD optimizer.

pub mod checkpoint;
pub mod network;
pub mod ops;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use network::{
    backward, backward_view, collapse_monitor, embed, forward, init_params, ArchCfg, ForwardCache, ForwardOutput,
    Mode, ModelParams, ParamGrads, PARAM_NAMES,
};
pub use ops::Scalar;
pub use optim::{sgd_step, OptCfg, OptState};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(seed: u64, side: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(side, side, |_, _, _| rng.random::<f32>())
    }

    fn params(seed: u64) -> ModelParams<f32> {
        init_params(&mut ChaCha8Rng::seed_from_u64(seed), &ArchCfg::default()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_he_scaled() {
        assert_eq!(params(1), params(1));
        assert_ne!(params(1), params(2));
        let p = params(3);
        let w = &p.conv[0].w;
        assert_eq!(w.len(), 16 * 27);
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let target = (2.0f64 / 27.0).sqrt();
        assert!((std - target).abs() / target < 0.2, "{std} vs {target}");
        for (name, t) in PARAM_NAMES.iter().zip(p.trainable()) {
            if name.ends_with("bias") || name.ends_with("beta") {
                assert!(t.iter().all(|&v| v == 0.0), "{name}");
            }
            if name.ends_with("gamma") {
                assert!(t.iter().all(|&v| v == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn forward_shapes_and_symmetry() {
        let p = params(4);
        let (a, b) = (noise(1, 32), noise(2, 32));
        let out = forward(&p, &[&a, &b, &a], Mode::Train).unwrap();
        assert_eq!(out.z.len(), 3 * 64);
        assert_eq!(out.p.len(), 3 * 64);
        assert_eq!(&out.z[..64], &out.z[128..]);
        assert_eq!(&out.p[..64], &out.p[128..]);

        let bright = Image::from_fn(32, 32, |x, y, c| (a.get(x, y, c) * 2.0).min(1.0));
        let e1 = embed(&p, &[&a]).unwrap();
        let e2 = embed(&p, &[&bright]).unwrap();
        assert_ne!(e1, e2);
    }

    #[test]
    fn forward_rejects_bad_batches() {
        let p = params(5);
        let a = noise(1, 32);
        assert!(matches!(forward(&p, &[&a], Mode::Train), Err(crate::Error::Param(_))));
        assert!(forward(&p, &[&a], Mode::Eval).is_ok());
        let small = noise(1, 16);
        assert!(matches!(forward(&p, &[&small, &small], Mode::Train), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = params(6);
        let imgs: Vec<Image> = (0..4).map(|s| noise(s, 32)).collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let o1 = forward(&p, &refs, Mode::Train).unwrap();
        let o2 = forward(&p, &refs, Mode::Train).unwrap();
        let zeros = vec![0.0f32; 4 * 64];
        let g = backward(&p, [&o1.cache, &o2.cache], &zeros, &zeros).unwrap();
        assert!(g.is_zero());
        assert!(matches!(
            backward(&p, [&o1.cache, &o2.cache], &zeros[..64], &zeros),
            Err(crate::Error::Contract(_))
        ));
        let eval = forward(&p, &refs, Mode::Eval).unwrap();
        let mut grads = ParamGrads::zeros_like(&p);
        assert!(backward_view(&p, &eval.cache, &zeros, &mut grads).is_err());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut p = params(7);
        let imgs: Vec<Image> = (0..4).map(|s| noise(s + 10, 32)).collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let out = forward(&p, &refs, Mode::Train).unwrap();
        p.update_running_stats(&out.cache).unwrap();
        assert!(p.proj_bn.running_mean.iter().any(|&m| m != 0.0));
        assert!(p.proj_bn.running_var.iter().all(|&v| v > 0.0));
        let eval = forward(&p, &refs, Mode::Eval).unwrap();
        assert!(p.update_running_stats(&eval.cache).is_err());
    }

    fn tiny_params() -> ModelParams<f64> {
        let mut p: ModelParams<f64> = init_params(&mut ChaCha8Rng::seed_from_u64(9), &ArchCfg::default()).unwrap();
        for t in p.trainable_mut() {
            t.iter_mut().enumerate().for_each(|(i, v)| *v = ((i % 7) as f64 - 3.0) * 0.01);
        }
        p
    }

    #[test]
    fn sgd_formulas() {
        let cfg = OptCfg { lr: Some(0.1), momentum: 0.9, weight_decay: 0.0, cosine_decay: false };
        let start = tiny_params();

        let mut p = start.clone();
        let mut st = OptState::new(&p);
        sgd_step(&mut p, &ParamGrads::zeros_like(&start), 0.1, &cfg, &mut st).unwrap();
        assert_eq!(p, start);

        let wd = OptCfg { weight_decay: 0.01, ..cfg };
        let mut g = ParamGrads::zeros_like(&start);
        g.tensors.iter_mut().flatten().for_each(|v| *v = 0.5);
        let mut p = start.clone();
        let mut st = OptState::new(&p);
        sgd_step(&mut p, &g, 0.1, &wd, &mut st).unwrap();
        for (after, before) in p.trainable().iter().zip(start.trainable()) {
            for (&a, &b) in after.iter().zip(before) {
                assert!((a - (b - 0.1 * (0.5 + 0.01 * b))).abs() < 1e-15);
            }
        }

        // Two steps with a constant gradient: the second moves by lr·(1+μ)·g.
        let mut p = start.clone();
        let mut st = OptState::new(&p);
        sgd_step(&mut p, &g, 0.1, &cfg, &mut st).unwrap();
        let mid = p.clone();
        sgd_step(&mut p, &g, 0.1, &cfg, &mut st).unwrap();
        for (after, before) in p.trainable().iter().zip(mid.trainable()) {
            for (&a, &b) in after.iter().zip(before) {
                assert!((b - a - 0.1 * 1.9 * 0.5).abs() < 1e-12);
            }
        }
        assert_eq!(st.step, 2);
    }

    #[test]
    fn lr_schedule() {
        let cfg = OptCfg::default();
        assert!((cfg.base_lr(128) - 0.015).abs() < 1e-15);
        assert!((cfg.lr_at(128, 0, 100) - 0.015).abs() < 1e-15);
        assert!(cfg.lr_at(128, 100, 100).abs() < 1e-15);
        assert!((cfg.lr_at(128, 50, 100) - 0.0075).abs() < 1e-12);
    }

    #[test]
    fn collapse_monitor_examples() {
        let d = 64;
        let same: Vec<f64> = (0..10).flat_map(|_| (0..d).map(|j| j as f64 - 3.0)).collect();
        assert!(collapse_monitor(&same, d).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z: Vec<f64> = (0..4096 * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let m = collapse_monitor(&z, d);
        let expect = 1.0 / (d as f64).sqrt();
        assert!((m - expect).abs() / expect < 0.02, "{m} vs {expect}");

        let scaled: Vec<f64> = z
            .chunks_exact(d)
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |v| v * (1.0 + i as f64)))
            .collect();
        assert!((collapse_monitor(&scaled, d) - m).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = params(13);
        let ck = Checkpoint::new(5, 2, p.clone(), OptState::new(&p));
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        let bad = Checkpoint { version: 99, ..ck };
        bad.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(crate::Error::Schema(_))));
    }
}
