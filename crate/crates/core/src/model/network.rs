use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{
    col2im3, gemm, gemm_tr, im2row3, im2col3, maxpool2, maxpool2_backward, relu_backward_inplace, relu_inplace, MapShape, Mat, Scalar,
};
use crate::error::{contract, param, Result};
use crate::imaging::{Image, CHANNELS};

/// Network shape and the fixed input standardization.
///
/// Encoder: three 3x3 conv + ReLU blocks (max-pool after the first two,
/// global average pool after the last). Projector: FC + BN + ReLU + FC.
/// Predictor: FC + BN + ReLU + FC back to the projection size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchCfg {
    pub input_size: usize,
    pub conv_channels: [usize; 3],
    pub proj_dim: usize,
    pub pred_hidden: usize,
    /// Weight kept on the running statistics at each update.
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub input_mean: [f64; 3],
    pub input_std: [f64; 3],
}

impl Default for ArchCfg {
    fn default() -> Self {
        ArchCfg {
            input_size: 32,
            conv_channels: [16, 32, 64],
            proj_dim: 64,
            pred_hidden: 32,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            input_mean: [0.5; 3],
            input_std: [0.25; 3],
        }
    }
}

impl ArchCfg {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 8 || self.input_size % 4 != 0 {
            return Err(param(format!("input size must be a multiple of 4 and >= 8 (got {})", self.input_size)));
        }
        if self.conv_channels.contains(&0) || self.proj_dim == 0 || self.pred_hidden == 0 {
            return Err(param("layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(param("batch-norm momentum must be in [0, 1) and eps positive"));
        }
        if self.input_std.iter().any(|&s| !(s > 0.0)) {
            return Err(param("input standardization std must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv<T> {
    pub cin: usize,
    pub cout: usize,
    /// `[cout][cin·9]`, tap order `(ci, ky, kx)`.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub din: usize,
    pub dout: usize,
    /// `[dout][din]`.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm<T> {
    pub dim: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// All weights of encoder, projector and predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub arch: ArchCfg,
    pub conv: [Conv<T>; 3],
    pub proj_fc1: Linear<T>,
    pub proj_bn: BatchNorm<T>,
    pub proj_fc2: Linear<T>,
    pub pred_fc1: Linear<T>,
    pub pred_bn: BatchNorm<T>,
    pub pred_fc2: Linear<T>,
}

/// Names of the trainable tensors, in [`ModelParams::trainable`] order.
pub const PARAM_NAMES: [&str; 18] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "projector.fc1.weight",
    "projector.fc1.bias",
    "projector.bn.gamma",
    "projector.bn.beta",
    "projector.fc2.weight",
    "projector.fc2.bias",
    "predictor.fc1.weight",
    "predictor.fc1.bias",
    "predictor.bn.gamma",
    "predictor.bn.beta",
    "predictor.fc2.weight",
    "predictor.fc2.bias",
];

/// Gradients aligned with [`ModelParams::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        ParamGrads { tensors: params.trainable().iter().map(|t| vec![T::ZERO; t.len()]).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&g| g == T::ZERO)
    }

    pub fn add_assign(&mut self, other: &ParamGrads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }
}

fn he_normal<R: Rng + ?Sized, T: Scalar>(rng: &mut R, fan_in: usize, n: usize) -> Vec<T> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()
}

fn linear<R: Rng + ?Sized, T: Scalar>(rng: &mut R, din: usize, dout: usize) -> Linear<T> {
    Linear { din, dout, w: he_normal(rng, din, din * dout), b: vec![T::ZERO; dout] }
}

fn batch_norm<T: Scalar>(dim: usize) -> BatchNorm<T> {
    BatchNorm {
        dim,
        gamma: vec![T::ONE; dim],
        beta: vec![T::ZERO; dim],
        running_mean: vec![T::ZERO; dim],
        running_var: vec![T::ONE; dim],
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`), zero biases, identity batch norms.
pub fn init_params<R: Rng + ?Sized, T: Scalar>(rng: &mut R, arch: &ArchCfg) -> Result<ModelParams<T>> {
    arch.validate()?;
    let [c1, c2, c3] = arch.conv_channels;
    let mut conv = |cin: usize, cout: usize| Conv {
        cin,
        cout,
        w: he_normal(rng, cin * 9, cout * cin * 9),
        b: vec![T::ZERO; cout],
    };
    let convs = [conv(CHANNELS, c1), conv(c1, c2), conv(c2, c3)];
    Ok(ModelParams {
        arch: arch.clone(),
        conv: convs,
        proj_fc1: linear(rng, c3, arch.proj_dim),
        proj_bn: batch_norm(arch.proj_dim),
        proj_fc2: linear(rng, arch.proj_dim, arch.proj_dim),
        pred_fc1: linear(rng, arch.proj_dim, arch.pred_hidden),
        pred_bn: batch_norm(arch.pred_hidden),
        pred_fc2: linear(rng, arch.pred_hidden, arch.proj_dim),
    })
}

/// Whether batch norms use batch statistics (training) or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    mode: Mode,
    batch: usize,
    conv_in: [MapShape; 3],
    /// Inputs of the three convolutions.
    inputs: [Vec<T>; 3],
    act: [Vec<T>; 3],
    argmax: [Vec<u32>; 2],
    pooled: Vec<T>,
    proj_bn: BnCache<T>,
    proj_act: Vec<T>,
    z: Vec<T>,
    pred_bn: BnCache<T>,
    pred_act: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Projections `z` and predictions `p`, both `[B][proj_dim]` row-major.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub z: Vec<T>,
    pub p: Vec<T>,
    pub cache: ForwardCache<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn trainable(&self) -> [&[T]; 18] {
        let [c1, c2, c3] = &self.conv;
        [
            &c1.w,
            &c1.b,
            &c2.w,
            &c2.b,
            &c3.w,
            &c3.b,
            &self.proj_fc1.w,
            &self.proj_fc1.b,
            &self.proj_bn.gamma,
            &self.proj_bn.beta,
            &self.proj_fc2.w,
            &self.proj_fc2.b,
            &self.pred_fc1.w,
            &self.pred_fc1.b,
            &self.pred_bn.gamma,
            &self.pred_bn.beta,
            &self.pred_fc2.w,
            &self.pred_fc2.b,
        ]
    }

    pub fn trainable_mut(&mut self) -> [&mut Vec<T>; 18] {
        let [c1, c2, c3] = &mut self.conv;
        [
            &mut c1.w,
            &mut c1.b,
            &mut c2.w,
            &mut c2.b,
            &mut c3.w,
            &mut c3.b,
            &mut self.proj_fc1.w,
            &mut self.proj_fc1.b,
            &mut self.proj_bn.gamma,
            &mut self.proj_bn.beta,
            &mut self.proj_fc2.w,
            &mut self.proj_fc2.b,
            &mut self.pred_fc1.w,
            &mut self.pred_fc1.b,
            &mut self.pred_bn.gamma,
            &mut self.pred_bn.beta,
            &mut self.pred_fc2.w,
            &mut self.pred_fc2.b,
        ]
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.trainable().iter().all(|t| t.iter().all(|v| v.to_f64().is_finite()))
    }

    /// Convert every tensor to another element type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::from_f64(a.to_f64())).collect::<Vec<U>>();
        let lin = |l: &Linear<T>| Linear { din: l.din, dout: l.dout, w: v(&l.w), b: v(&l.b) };
        let bn = |n: &BatchNorm<T>| BatchNorm {
            dim: n.dim,
            gamma: v(&n.gamma),
            beta: v(&n.beta),
            running_mean: v(&n.running_mean),
            running_var: v(&n.running_var),
        };
        let conv = |c: &Conv<T>| Conv { cin: c.cin, cout: c.cout, w: v(&c.w), b: v(&c.b) };
        ModelParams {
            arch: self.arch.clone(),
            conv: [conv(&self.conv[0]), conv(&self.conv[1]), conv(&self.conv[2])],
            proj_fc1: lin(&self.proj_fc1),
            proj_bn: bn(&self.proj_bn),
            proj_fc2: lin(&self.proj_fc2),
            pred_fc1: lin(&self.pred_fc1),
            pred_bn: bn(&self.pred_bn),
            pred_fc2: lin(&self.pred_fc2),
        }
    }

    /// Fold the batch statistics of a training-mode forward pass into the
    /// running statistics (unbiased variance).
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) -> Result<()> {
        if cache.mode != Mode::Train {
            return Err(contract("running statistics can only be updated from a training-mode pass"));
        }
        let mom = T::from_f64(self.arch.bn_momentum);
        let rest = T::ONE - mom;
        let unbias = T::from_f64(cache.batch as f64 / (cache.batch as f64 - 1.0));
        for (bn, c) in [(&mut self.proj_bn, &cache.proj_bn), (&mut self.pred_bn, &cache.pred_bn)] {
            for j in 0..bn.dim {
                bn.running_mean[j] = mom * bn.running_mean[j] + rest * c.batch_mean[j];
                bn.running_var[j] = mom * bn.running_var[j] + rest * c.batch_var[j] * unbias;
            }
        }
        Ok(())
    }
}

fn linear_forward<T: Scalar>(l: &Linear<T>, x: &[T], batch: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * l.dout);
    for _ in 0..batch {
        y.extend_from_slice(&l.b);
    }
    gemm(Mat::new(x, batch, l.din), Mat::new(&l.w, l.dout, l.din).t(), T::ONE, &mut y);
    y
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn linear_backward<T: Scalar>(
    l: &Linear<T>,
    x: &[T],
    g: &[T],
    batch: usize,
    dw: &mut [T],
    db: &mut [T],
    need_input: bool,
) -> Vec<T> {
    gemm(Mat::new(g, batch, l.dout).t(), Mat::new(x, batch, l.din), T::ONE, dw);
    for row in g.chunks_exact(l.dout) {
        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
    }
    if !need_input {
        return Vec::new();
    }
    let mut gx = vec![T::ZERO; batch * l.din];
    gemm(Mat::new(g, batch, l.dout), Mat::new(&l.w, l.dout, l.din), T::ZERO, &mut gx);
    gx
}

fn bn_forward<T: Scalar>(bn: &BatchNorm<T>, x: &[T], batch: usize, mode: Mode, eps: f64) -> (Vec<T>, BnCache<T>) {
    let d = bn.dim;
    let (mean, var) = match mode {
        Mode::Train => {
            let nb = T::from_f64(batch as f64);
            let mut mean = vec![T::ZERO; d];
            for row in x.chunks_exact(d) {
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m = *m / nb);
            let mut var = vec![T::ZERO; d];
            for row in x.chunks_exact(d) {
                for j in 0..d {
                    let c = row[j] - mean[j];
                    var[j] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v = *v / nb);
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let eps = T::from_f64(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks_exact(d) {
        for j in 0..d {
            let h = (row[j] - mean[j]) * inv_std[j];
            xhat.push(h);
            y.push(bn.gamma[j] * h + bn.beta[j]);
        }
    }
    (y, BnCache { xhat, inv_std, batch_mean: mean, batch_var: var })
}

/// Backward through a batch-statistics normalization.
fn bn_backward<T: Scalar>(
    bn: &BatchNorm<T>,
    c: &BnCache<T>,
    g: &[T],
    batch: usize,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let d = bn.dim;
    let mut sum_g = vec![T::ZERO; d];
    let mut sum_gx = vec![T::ZERO; d];
    for (grow, xrow) in g.chunks_exact(d).zip(c.xhat.chunks_exact(d)) {
        for j in 0..d {
            sum_g[j] += grow[j];
            sum_gx[j] += grow[j] * xrow[j];
        }
    }
    for j in 0..d {
        dgamma[j] += sum_gx[j];
        dbeta[j] += sum_g[j];
    }
    let nb = T::from_f64(batch as f64);
    let mut gx = Vec::with_capacity(g.len());
    for (grow, xrow) in g.chunks_exact(d).zip(c.xhat.chunks_exact(d)) {
        for j in 0..d {
            let scale = bn.gamma[j] * c.inv_std[j] / nb;
            gx.push(scale * (nb * grow[j] - sum_g[j] - xrow[j] * sum_gx[j]));
        }
    }
    gx
}

fn conv_forward<T: Scalar>(conv: &Conv<T>, input: &[T], s: MapShape, cols: &mut Vec<T>) -> Vec<T> {
    let n = s.h * s.w;
    let one = MapShape { b: 1, ..s };
    let k = conv.cin * 9;
    let mut y = Vec::with_capacity(s.b * conv.cout * n);
    for img in input.chunks_exact(s.c * n) {
        im2col3(img, one, cols);
        let start = y.len();
        for &b in &conv.b {
            y.extend(std::iter::repeat_n(b, n));
        }
        gemm(Mat::new(&conv.w, conv.cout, k), Mat::new(cols, k, n), T::ONE, &mut y[start..]);
    }
    relu_inplace(&mut y);
    y
}

/// Convert images to the standardized `[B][C][H][W]` input map.
fn input_map<T: Scalar>(arch: &ArchCfg, images: &[&Image]) -> Result<Vec<T>> {
    let side = arch.input_size;
    let plane = side * side;
    let b = images.len();
    let mut x = vec![T::ZERO; CHANNELS * b * plane];
    for (bi, img) in images.iter().enumerate() {
        if img.width() != side || img.height() != side {
            return Err(contract(format!(
                "model expects {side}x{side} inputs, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        for (pix, rgb) in img.data().chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                let v = (rgb[c] as f64 - arch.input_mean[c]) / arch.input_std[c];
                x[(bi * CHANNELS + c) * plane + pix] = T::from_f64(v);
            }
        }
    }
    Ok(x)
}

/// Forward pass over a batch of images.
pub fn forward<T: Scalar>(params: &ModelParams<T>, images: &[&Image], mode: Mode) -> Result<ForwardOutput<T>> {
    let arch = &params.arch;
    let batch = images.len();
    if batch == 0 {
        return Err(param("empty batch"));
    }
    if mode == Mode::Train && batch < 2 {
        return Err(param("training-mode batch normalization needs a batch of at least 2"));
    }
    let x0 = input_map::<T>(arch, images)?;
    let side = arch.input_size;
    let [c1, c2, c3] = arch.conv_channels;
    let shapes = [
        MapShape { c: CHANNELS, b: batch, h: side, w: side },
        MapShape { c: c1, b: batch, h: side / 2, w: side / 2 },
        MapShape { c: c2, b: batch, h: side / 4, w: side / 4 },
    ];

    let mut cols = Vec::new();
    let mut argmax: [Vec<u32>; 2] = Default::default();
    let a1 = conv_forward(&params.conv[0], &x0, shapes[0], &mut cols);
    let mut p1 = Vec::new();
    maxpool2(&a1, MapShape { c: c1, ..shapes[0] }, &mut p1, &mut argmax[0]);
    let a2 = conv_forward(&params.conv[1], &p1, shapes[1], &mut cols);
    let mut p2 = Vec::new();
    maxpool2(&a2, MapShape { c: c2, ..shapes[1] }, &mut p2, &mut argmax[1]);
    let a3 = conv_forward(&params.conv[2], &p2, shapes[2], &mut cols);

    // Global average pool to [B][c3].
    let hw = shapes[2].h * shapes[2].w;
    let inv_hw = T::from_f64(1.0 / hw as f64);
    let mut pooled = vec![T::ZERO; batch * c3];
    for (i, plane) in a3.chunks_exact(hw).enumerate() {
        let mut acc = T::ZERO;
        for &v in plane {
            acc += v;
        }
        pooled[i] = acc * inv_hw;
    }

    let u = linear_forward(&params.proj_fc1, &pooled, batch);
    let (mut proj_act, proj_bn) = bn_forward(&params.proj_bn, &u, batch, mode, arch.bn_eps);
    relu_inplace(&mut proj_act);
    let z = linear_forward(&params.proj_fc2, &proj_act, batch);

    let q = linear_forward(&params.pred_fc1, &z, batch);
    let (mut pred_act, pred_bn) = bn_forward(&params.pred_bn, &q, batch, mode, arch.bn_eps);
    relu_inplace(&mut pred_act);
    let p = linear_forward(&params.pred_fc2, &pred_act, batch);

    let cache = ForwardCache {
        mode,
        batch,
        conv_in: shapes,
        inputs: [x0, p1, p2],
        act: [a1, a2, a3],
        argmax,
        pooled,
        proj_bn,
        proj_act,
        z: z.clone(),
        pred_bn,
        pred_act,
    };
    Ok(ForwardOutput { z, p, cache })
}

/// Projector outputs for inference (running statistics), `[B][proj_dim]`.
pub fn embed<T: Scalar>(params: &ModelParams<T>, images: &[&Image]) -> Result<Vec<T>> {
    Ok(forward(params, images, Mode::Eval)?.z)
}

fn conv_backward<T: Scalar>(
    conv: &Conv<T>,
    input: &[T],
    g: &[T],
    s: MapShape,
    dw: &mut [T],
    db: &mut [T],
    need_input: bool,
) -> Vec<T> {
    let n = s.h * s.w;
    let one = MapShape { b: 1, ..s };
    let k = conv.cin * 9;
    let mut rows = Vec::new();
    let mut gcols = vec![T::ZERO; if need_input { k * n } else { 0 }];
    let mut gin = vec![T::ZERO; if need_input { s.len() } else { 0 }];
    for (bi, (img, gb)) in input.chunks_exact(s.c * n).zip(g.chunks_exact(conv.cout * n)).enumerate() {
        // dWᵀ = rowsᵀ·gᵀ; this orientation packs far faster than g·colsᵀ.
        im2row3(img, s.c, s.h, s.w, &mut rows);
        gemm_tr(Mat::new(&rows, n, k).t(), Mat::new(gb, conv.cout, n).t(), T::ONE, dw);
        for (co, d) in db.iter_mut().enumerate() {
            for &v in &gb[co * n..(co + 1) * n] {
                *d += v;
            }
        }
        if need_input {
            gemm(Mat::new(&conv.w, conv.cout, k).t(), Mat::new(gb, conv.cout, n), T::ZERO, &mut gcols);
            col2im3(&gcols, one, &mut gin[bi * s.c * n..(bi + 1) * s.c * n]);
        }
    }
    gin
}

/// Weight and bias gradient slots of layer `i` (bias follows weight).
fn wb<T>(g: &mut [Vec<T>], i: usize) -> (&mut [T], &mut [T]) {
    let (w, b) = g.split_at_mut(i + 1);
    (&mut w[i], &mut b[0])
}

/// Backward pass of one view: accumulates into `grads` the gradient of a
/// scalar loss whose derivative w.r.t. the predictions `p` is `grad_p`.
///
/// The projections are treated as constants by the loss, so the only path
/// into the network is through `p`. That path still runs through the
/// projector and encoder because the predictor consumes this view's `z`.
pub fn backward_view<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    grad_p: &[T],
    grads: &mut ParamGrads<T>,
) -> Result<()> {
    let arch = &params.arch;
    let batch = cache.batch;
    if cache.mode != Mode::Train {
        return Err(contract("backward needs a training-mode forward cache"));
    }
    if grad_p.len() != batch * arch.proj_dim {
        return Err(contract(format!(
            "gradient has {} entries, cache expects {}x{}",
            grad_p.len(),
            batch,
            arch.proj_dim
        )));
    }
    if grads.tensors.len() != PARAM_NAMES.len() {
        return Err(contract("gradient buffer does not match the parameter layout"));
    }
    let g = &mut grads.tensors;

    // Predictor.
    let (dw, db) = wb(g, 16);
    let mut gs = linear_backward(&params.pred_fc2, &cache.pred_act, grad_p, batch, dw, db, true);
    relu_backward_inplace(&mut gs, &cache.pred_act);
    let (dgam, dbet) = wb(g, 14);
    let gq = bn_backward(&params.pred_bn, &cache.pred_bn, &gs, batch, dgam, dbet);
    let (dw, db) = wb(g, 12);
    let gz = linear_backward(&params.pred_fc1, &cache.z, &gq, batch, dw, db, true);

    // Projector.
    let (dw, db) = wb(g, 10);
    let mut gr = linear_backward(&params.proj_fc2, &cache.proj_act, &gz, batch, dw, db, true);
    relu_backward_inplace(&mut gr, &cache.proj_act);
    let (dgam, dbet) = wb(g, 8);
    let gu = bn_backward(&params.proj_bn, &cache.proj_bn, &gr, batch, dgam, dbet);
    let (dw, db) = wb(g, 6);
    let gh = linear_backward(&params.proj_fc1, &cache.pooled, &gu, batch, dw, db, true);

    // Encoder.
    let [c1, c2, c3] = arch.conv_channels;
    let s3 = cache.conv_in[2];
    let hw = s3.h * s3.w;
    let inv_hw = T::from_f64(1.0 / hw as f64);
    let mut g3 = vec![T::ZERO; c3 * batch * hw];
    for (plane, &v) in g3.chunks_exact_mut(hw).zip(&gh) {
        plane.fill(v * inv_hw);
    }
    relu_backward_inplace(&mut g3, &cache.act[2]);
    let (dw, db) = wb(g, 4);
    let gp2 = conv_backward(&params.conv[2], &cache.inputs[2], &g3, s3, dw, db, true);

    let mut g2 = vec![T::ZERO; c2 * cache.conv_in[1].plane()];
    maxpool2_backward(&gp2, &cache.argmax[1], &mut g2);
    relu_backward_inplace(&mut g2, &cache.act[1]);
    let (dw, db) = wb(g, 2);
    let gp1 = conv_backward(&params.conv[1], &cache.inputs[1], &g2, cache.conv_in[1], dw, db, true);

    let mut g1 = vec![T::ZERO; c1 * cache.conv_in[0].plane()];
    maxpool2_backward(&gp1, &cache.argmax[0], &mut g1);
    relu_backward_inplace(&mut g1, &cache.act[0]);
    let (dw, db) = wb(g, 0);
    conv_backward(&params.conv[0], &cache.inputs[0], &g1, cache.conv_in[0], dw, db, false);
    Ok(())
}

/// Parameter gradients for a two-view step: the sum of both views' backward passes.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    caches: [&ForwardCache<T>; 2],
    grad_p1: &[T],
    grad_p2: &[T],
) -> Result<ParamGrads<T>> {
    if caches[0].batch != caches[1].batch {
        return Err(contract("view caches come from batches of different sizes"));
    }
    let mut grads = ParamGrads::zeros_like(params);
    backward_view(params, caches[0], grad_p1, &mut grads)?;
    backward_view(params, caches[1], grad_p2, &mut grads)?;
    Ok(grads)
}

/// Mean over dimensions of the per-dimension standard deviation of the
/// L2-normalized rows of `z` (`[B][d]`). Zero for a collapsed batch; about
/// `1/sqrt(d)` for directions spread uniformly on the sphere.
pub fn collapse_monitor<T: Scalar>(z: &[T], d: usize) -> f64 {
    if d == 0 || z.len() < d {
        return 0.0;
    }
    let rows: Vec<Vec<f64>> = z
        .chunks_exact(d)
        .map(|r| {
            let n = r.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt();
            r.iter().map(|v| if n > 0.0 { v.to_f64() / n } else { 0.0 }).collect()
        })
        .collect();
    let b = rows.len() as f64;
    let mut total = 0.0;
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / b;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / b;
        total += var.sqrt();
    }
    total / d as f64
}
