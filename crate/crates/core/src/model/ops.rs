//! Dense kernels behind the network: GEMM, 3x3 im2col / col2im, 2x2 max
//! pooling. The network stores feature maps image-major as `[B][C][H][W]` and
//! unfolds one image at a time, which keeps the unfolded matrix in cache.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Floating-point element type of the network (`f32` for training, `f64` for
/// gradient checks).
pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;

    /// `C = alpha·A·B + beta·C` with explicit row/column strides.
    ///
    /// # Safety
    /// The strides must address memory inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub struct Mat<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a, T: Scalar> Mat<'a, T> {
    /// A `rows × cols` row-major matrix.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size");
        Mat { data, rows, cols, transposed: false }
    }

    pub fn t(self) -> Self {
        Mat { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a·b + beta·out`, where `out` is row-major `m × n`.
pub fn gemm<T: Scalar>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, out: &mut [T]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions");
    assert_eq!(out.len(), m * n, "output buffer size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: shapes were checked against the buffer lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::ONE,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = (a·b)ᵀ + beta·out`, where `out` is row-major `n × m`.
pub fn gemm_tr<T: Scalar>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, out: &mut [T]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions");
    assert_eq!(out.len(), m * n, "output buffer size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: shapes were checked against the buffer lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::ONE,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

/// Geometry of a feature map, read by the unfolding kernels as `[C][B][H][W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
}

impl MapShape {
    pub fn plane(&self) -> usize {
        self.b * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unfold 3x3 neighbourhoods (zero padding 1) into a `[C·9] × [B·H·W]` matrix.
pub fn im2col3<T: Scalar>(input: &[T], s: MapShape, cols: &mut Vec<T>) {
    let n = s.plane();
    cols.clear();
    cols.resize(s.c * 9 * n, T::ZERO);
    let (h, w) = (s.h, s.w);
    for ci in 0..s.c {
        let src = &input[ci * n..(ci + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * n..][..n];
                for b in 0..s.b {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut row[(b * h + y) * w..][..w];
                        let src_row = &src[(b * h + sy as usize) * w..][..w];
                        match kx {
                            0 => dst[1..].copy_from_slice(&src_row[..w - 1]),
                            1 => dst.copy_from_slice(src_row),
                            _ => dst[..w - 1].copy_from_slice(&src_row[1..]),
                        }
                    }
                }
            }
        }
    }
}

/// Transposed unfolding of a single `[C][H][W]` map: row `y·W + x` holds the
/// `C·9` taps of pixel `(x, y)` in the column order of [`im2col3`].
pub fn im2row3<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, rows: &mut Vec<T>) {
    let k = c * 9;
    let plane = h * w;
    rows.clear();
    rows.resize(plane * k, T::ZERO);
    for y in 0..h {
        for x in 0..w {
            let row = &mut rows[(y * w + x) * k..][..k];
            let interior = x > 0 && x + 1 < w;
            for ci in 0..c {
                let src = &input[ci * plane..][..plane];
                for ky in 0..3 {
                    // Source row is y + ky - 1.
                    if y + ky == 0 || y + ky > h {
                        continue;
                    }
                    let src_row = &src[(y + ky - 1) * w..][..w];
                    let dst = &mut row[ci * 9 + ky * 3..][..3];
                    if interior {
                        dst.copy_from_slice(&src_row[x - 1..x + 2]);
                    } else {
                        for (kx, d) in dst.iter_mut().enumerate() {
                            if x + kx >= 1 && x + kx <= w {
                                *d = src_row[x + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: fold column gradients back onto the input map.
pub fn col2im3<T: Scalar>(cols: &[T], s: MapShape, out: &mut [T]) {
    let n = s.plane();
    assert_eq!(out.len(), s.len());
    out.fill(T::ZERO);
    let (h, w) = (s.h, s.w);
    for ci in 0..s.c {
        let dst = &mut out[ci * n..(ci + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * n..][..n];
                for b in 0..s.b {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[(b * h + y) * w..][..w];
                        let d = &mut dst[(b * h + sy as usize) * w..][..w];
                        match kx {
                            0 => d[..w - 1].iter_mut().zip(&src[1..]).for_each(|(o, &g)| *o += g),
                            1 => d.iter_mut().zip(src).for_each(|(o, &g)| *o += g),
                            _ => d[1..].iter_mut().zip(&src[..w - 1]).for_each(|(o, &g)| *o += g),
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2. Records the flat input index of each maximum.
pub fn maxpool2<T: Scalar>(input: &[T], s: MapShape, out: &mut Vec<T>, argmax: &mut Vec<u32>) {
    let (oh, ow) = (s.h / 2, s.w / 2);
    let total = s.c * s.b * oh * ow;
    out.clear();
    argmax.clear();
    out.reserve(total);
    argmax.reserve(total);
    for cb in 0..s.c * s.b {
        let base = cb * s.h * s.w;
        for y in 0..oh {
            for x in 0..ow {
                let i0 = base + (2 * y) * s.w + 2 * x;
                let mut best = i0;
                for i in [i0 + 1, i0 + s.w, i0 + s.w + 1] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                argmax.push(best as u32);
            }
        }
    }
}

pub fn maxpool2_backward<T: Scalar>(grad_out: &[T], argmax: &[u32], grad_in: &mut [T]) {
    grad_in.fill(T::ZERO);
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i as usize] += g;
    }
}

pub fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::ZERO {
            *x = T::ZERO;
        }
    }
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward_inplace<T: Scalar>(grad: &mut [T], activ: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activ) {
        if !(a > T::ZERO) {
            *g = T::ZERO;
        }
    }
}
