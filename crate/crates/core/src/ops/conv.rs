//! Dense, pointwise and depthwise 2-D convolutions with their vector-Jacobian
//! products.
//!
//! All reductions accumulate in `f64`. Work is split over whole output planes
//! so each value is produced by exactly one task with a fixed summation order,
//! which keeps results bitwise identical for any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero padding with output extent `ceil(h / stride)`.
    Same,
    /// No padding.
    Valid,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}

/// Weights of a convolution. Dense kernels are `[out, in, kh, kw]`;
/// depthwise kernels are `[channels, 1, kh, kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvParams {
    pub fn new(kernel: Tensor, bias: Tensor, stride: usize, padding: Padding) -> Result<Self> {
        let (out_c, _, kh, kw) = kernel.dims4()?;
        if bias.shape() != [out_c] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {out_c} output channels",
                bias.shape()
            )));
        }
        check_stride_padding(kh, kw, stride, padding)?;
        Ok(ConvParams {
            kernel,
            bias,
            stride,
            padding,
        })
    }

    /// Zero-initialized parameters of the given kernel shape.
    pub fn zeros(kernel_shape: [usize; 4], stride: usize, padding: Padding) -> Result<Self> {
        Self::new(
            Tensor::zeros(&kernel_shape),
            Tensor::zeros(&[kernel_shape[0]]),
            stride,
            padding,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_hw(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }
}

fn check_stride_padding(kh: usize, kw: usize, stride: usize, padding: Padding) -> Result<()> {
    if stride != 1 && stride != 2 {
        return Err(Error::shape(format!("stride must be 1 or 2, got {stride}")));
    }
    if padding == Padding::Same && (kh.is_multiple_of(2) || kw.is_multiple_of(2)) {
        return Err(Error::shape(format!(
            "\"same\" padding needs odd kernel extents, got {kh}x{kw}"
        )));
    }
    Ok(())
}

/// Spatial bookkeeping shared by the forward and backward kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Geometry {
    pub fn new(
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        check_stride_padding(kh, kw, stride, padding)?;
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let out_h = h.div_ceil(stride);
                let out_w = w.div_ceil(stride);
                let total_h = ((out_h - 1) * stride + kh).saturating_sub(h);
                let total_w = ((out_w - 1) * stride + kw).saturating_sub(w);
                (out_h, out_w, total_h / 2, total_w / 2)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::shape(format!(
                        "input {h}x{w} is smaller than kernel {kh}x{kw}"
                    )));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(Geometry {
            h,
            w,
            kh,
            kw,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    /// Output indices `o` in `[lo, hi)` for which `o * stride + tap - pad`
    /// falls inside `[0, extent)`.
    fn valid_range(
        extent: usize,
        out_extent: usize,
        stride: usize,
        tap: usize,
        pad: usize,
    ) -> (usize, usize) {
        let offset = tap as isize - pad as isize;
        let lo = if offset >= 0 {
            0
        } else {
            ((-offset) as usize).div_ceil(stride)
        };
        let last = extent as isize - 1 - offset;
        if last < 0 {
            return (0, 0);
        }
        let hi = (last as usize / stride + 1).min(out_extent);
        (lo.min(hi), hi)
    }

    fn rows(&self, i: usize) -> (usize, usize) {
        Self::valid_range(self.h, self.out_h, self.stride, i, self.pad_top)
    }

    fn cols(&self, j: usize) -> (usize, usize) {
        Self::valid_range(self.w, self.out_w, self.stride, j, self.pad_left)
    }

    fn src_index(&self, y: usize, x: usize, i: usize, j: usize) -> usize {
        let sy = y * self.stride + i - self.pad_top;
        let sx = x * self.stride + j - self.pad_left;
        sy * self.w + sx
    }

    pub fn in_plane(&self) -> usize {
        self.h * self.w
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// `acc[y, x] += weight * src[y*s + i - pt, x*s + j - pl]` over valid taps.
fn gather_axpy(acc: &mut [f64], src: &[f32], g: &Geometry, i: usize, j: usize, weight: f64) {
    let (y0, y1) = g.rows(i);
    let (x0, x1) = g.cols(j);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let out_row = &mut acc[y * g.out_w + x0..y * g.out_w + x1];
        let start = g.src_index(y, x0, i, j);
        if g.stride == 1 {
            let src_row = &src[start..start + (x1 - x0)];
            for (a, &v) in out_row.iter_mut().zip(src_row) {
                *a += weight * v as f64;
            }
        } else {
            for (k, a) in out_row.iter_mut().enumerate() {
                *a += weight * src[start + k * g.stride] as f64;
            }
        }
    }
}

/// `dst[y*s + i - pt, x*s + j - pl] += weight * grad[y, x]`, the transpose of
/// [`gather_axpy`].
fn scatter_axpy(dst: &mut [f64], grad: &[f32], g: &Geometry, i: usize, j: usize, weight: f64) {
    let (y0, y1) = g.rows(i);
    let (x0, x1) = g.cols(j);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let grad_row = &grad[y * g.out_w + x0..y * g.out_w + x1];
        let start = g.src_index(y, x0, i, j);
        if g.stride == 1 {
            let dst_row = &mut dst[start..start + (x1 - x0)];
            for (d, &v) in dst_row.iter_mut().zip(grad_row) {
                *d += weight * v as f64;
            }
        } else {
            for (k, &v) in grad_row.iter().enumerate() {
                dst[start + k * g.stride] += weight * v as f64;
            }
        }
    }
}

/// `sum_{y,x} grad[y, x] * src[y*s + i - pt, x*s + j - pl]`.
fn correlate(grad: &[f32], src: &[f32], g: &Geometry, i: usize, j: usize) -> f64 {
    let (y0, y1) = g.rows(i);
    let (x0, x1) = g.cols(j);
    let mut sum = 0.0f64;
    if x0 >= x1 {
        return sum;
    }
    for y in y0..y1 {
        let grad_row = &grad[y * g.out_w + x0..y * g.out_w + x1];
        let start = g.src_index(y, x0, i, j);
        if g.stride == 1 {
            let src_row = &src[start..start + (x1 - x0)];
            for (&a, &b) in grad_row.iter().zip(src_row) {
                sum += a as f64 * b as f64;
            }
        } else {
            for (k, &a) in grad_row.iter().enumerate() {
                sum += a as f64 * src[start + k * g.stride] as f64;
            }
        }
    }
    sum
}

fn narrow(acc: &[f64], out: &mut [f32]) {
    for (o, &a) in out.iter_mut().zip(acc) {
        *o = a as f32;
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Dense 2-D convolution (cross-correlation) with zero padding.
pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let (out_c, in_c, kh, kw) = params.kernel.dims4()?;
    if in_c != c {
        return Err(Error::shape(format!(
            "conv2d kernel expects {in_c} input channels, input has {c}"
        )));
    }
    let g = Geometry::new(h, w, kh, kw, params.stride, params.padding)?;
    let kernel = params.kernel.data();
    let bias = params.bias.data();
    let x = input.data();
    let mut out = vec![0.0f32; n * out_c * g.out_plane()];
    out.par_chunks_mut(g.out_plane())
        .enumerate()
        .for_each(|(plane, out_plane)| {
            let (b, o) = (plane / out_c, plane % out_c);
            let mut acc = vec![bias[o] as f64; g.out_plane()];
            for ci in 0..c {
                let src = &x[(b * c + ci) * g.in_plane()..(b * c + ci + 1) * g.in_plane()];
                for i in 0..kh {
                    for j in 0..kw {
                        let wv = kernel[((o * c + ci) * kh + i) * kw + j];
                        gather_axpy(&mut acc, src, &g, i, j, wv as f64);
                    }
                }
            }
            narrow(&acc, out_plane);
        });
    Tensor::new(vec![n, out_c, g.out_h, g.out_w], out)?.ensure_finite("conv2d")
}

/// Vector-Jacobian product of [`conv2d`] for the output cotangent `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (n, c, h, w) = input.dims4()?;
    let (out_c, _, kh, kw) = params.kernel.dims4()?;
    let g = Geometry::new(h, w, kh, kw, params.stride, params.padding)?;
    if grad_out.shape() != [n, out_c, g.out_h, g.out_w] {
        return Err(Error::shape(format!(
            "conv2d cotangent shape {:?} does not match output [{n}, {out_c}, {}, {}]",
            grad_out.shape(),
            g.out_h,
            g.out_w
        )));
    }
    let kernel = params.kernel.data();
    let x = input.data();
    let dy = grad_out.data();
    let op = g.out_plane();
    let ip = g.in_plane();

    let mut dx = vec![0.0f32; input.len()];
    dx.par_chunks_mut(ip).enumerate().for_each(|(plane, dx_plane)| {
        let (b, ci) = (plane / c, plane % c);
        let mut acc = vec![0.0f64; ip];
        for o in 0..out_c {
            let gy = &dy[(b * out_c + o) * op..(b * out_c + o + 1) * op];
            for i in 0..kh {
                for j in 0..kw {
                    let wv = kernel[((o * c + ci) * kh + i) * kw + j];
                    scatter_axpy(&mut acc, gy, &g, i, j, wv as f64);
                }
            }
        }
        narrow(&acc, dx_plane);
    });

    let per_out = c * kh * kw;
    let mut dk = vec![0.0f32; out_c * per_out];
    dk.par_chunks_mut(per_out).enumerate().for_each(|(o, dk_o)| {
        for ci in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let mut sum = 0.0f64;
                    for b in 0..n {
                        let gy = &dy[(b * out_c + o) * op..(b * out_c + o + 1) * op];
                        let src = &x[(b * c + ci) * ip..(b * c + ci + 1) * ip];
                        sum += correlate(gy, src, &g, i, j);
                    }
                    dk_o[(ci * kh + i) * kw + j] = sum as f32;
                }
            }
        }
    });

    let db = channel_sums(dy, n, out_c, op);
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        kernel: Tensor::new(params.kernel.shape().to_vec(), dk)?,
        bias: Tensor::new(vec![out_c], db)?,
    })
}

/// Per-channel sums of an NCHW buffer over N, H and W.
pub(crate) fn channel_sums(data: &[f32], n: usize, c: usize, plane: usize) -> Vec<f32> {
    (0..c)
        .map(|ch| {
            let mut sum = 0.0f64;
            for b in 0..n {
                let start = (b * c + ch) * plane;
                sum += data[start..start + plane].iter().map(|&v| v as f64).sum::<f64>();
            }
            sum as f32
        })
        .collect()
}

fn check_depthwise(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let (_, c, _, _) = input.dims4()?;
    let (kc, one, kh, kw) = kernel.dims4()?;
    if kc != c || one != 1 {
        return Err(Error::shape(format!(
            "depthwise kernel shape {:?} does not match {c} input channels",
            kernel.shape()
        )));
    }
    if bias.shape() != [c] {
        return Err(Error::shape(format!(
            "depthwise bias shape {:?} does not match {c} channels",
            bias.shape()
        )));
    }
    Ok((kh, kw))
}

/// Per-channel spatial convolution: channel `c` of the output depends only on
/// channel `c` of the input.
pub fn depthwise_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let (kh, kw) = check_depthwise(input, kernel, bias)?;
    let (n, c, h, w) = input.dims4()?;
    let g = Geometry::new(h, w, kh, kw, stride, padding)?;
    let k = kernel.data();
    let bias = bias.data();
    let x = input.data();
    let mut out = vec![0.0f32; n * c * g.out_plane()];
    out.par_chunks_mut(g.out_plane())
        .enumerate()
        .for_each(|(plane, out_plane)| {
            let ci = plane % c;
            let src = &x[plane * g.in_plane()..(plane + 1) * g.in_plane()];
            let mut acc = vec![bias[ci] as f64; g.out_plane()];
            for i in 0..kh {
                for j in 0..kw {
                    gather_axpy(&mut acc, src, &g, i, j, k[(ci * kh + i) * kw + j] as f64);
                }
            }
            narrow(&acc, out_plane);
        });
    Tensor::new(vec![n, c, g.out_h, g.out_w], out)?.ensure_finite("depthwise_conv2d")
}

/// Vector-Jacobian product of [`depthwise_conv2d`].
pub fn depthwise_conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (n, c, h, w) = input.dims4()?;
    let (_, _, kh, kw) = kernel.dims4()?;
    let g = Geometry::new(h, w, kh, kw, stride, padding)?;
    if grad_out.shape() != [n, c, g.out_h, g.out_w] {
        return Err(Error::shape(format!(
            "depthwise cotangent shape {:?} does not match output [{n}, {c}, {}, {}]",
            grad_out.shape(),
            g.out_h,
            g.out_w
        )));
    }
    let k = kernel.data();
    let x = input.data();
    let dy = grad_out.data();
    let (ip, op) = (g.in_plane(), g.out_plane());

    let mut dx = vec![0.0f32; input.len()];
    dx.par_chunks_mut(ip).enumerate().for_each(|(plane, dx_plane)| {
        let ci = plane % c;
        let gy = &dy[plane * op..(plane + 1) * op];
        let mut acc = vec![0.0f64; ip];
        for i in 0..kh {
            for j in 0..kw {
                scatter_axpy(&mut acc, gy, &g, i, j, k[(ci * kh + i) * kw + j] as f64);
            }
        }
        narrow(&acc, dx_plane);
    });

    let mut dk = vec![0.0f32; c * kh * kw];
    dk.par_chunks_mut(kh * kw).enumerate().for_each(|(ci, dk_c)| {
        for i in 0..kh {
            for j in 0..kw {
                let mut sum = 0.0f64;
                for b in 0..n {
                    let plane = b * c + ci;
                    sum += correlate(
                        &dy[plane * op..(plane + 1) * op],
                        &x[plane * ip..(plane + 1) * ip],
                        &g,
                        i,
                        j,
                    );
                }
                dk_c[i * kw + j] = sum as f32;
            }
        }
    });

    let db = channel_sums(dy, n, c, op);
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), dk)?,
        bias: Tensor::new(vec![c], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct quadruple-sum reference with explicit zero padding.
    fn naive_conv(input: &Tensor, p: &ConvParams) -> Vec<f64> {
        let (n, c, h, w) = input.dims4().unwrap();
        let (oc, _, kh, kw) = p.kernel.dims4().unwrap();
        let g = Geometry::new(h, w, kh, kw, p.stride, p.padding).unwrap();
        let at = |b: usize, ci: usize, y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                input.data()[((b * c + ci) * h + y as usize) * w + x as usize] as f64
            }
        };
        let mut out = Vec::new();
        for b in 0..n {
            for o in 0..oc {
                for y in 0..g.out_h {
                    for x in 0..g.out_w {
                        let mut s = p.bias.data()[o] as f64;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let yy = (y * p.stride + i) as isize - g.pad_top as isize;
                                    let xx = (x * p.stride + j) as isize - g.pad_left as isize;
                                    s += p.kernel.data()[((o * c + ci) * kh + i) * kw + j] as f64
                                        * at(b, ci, yy, xx);
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn two_by_two_valid_example() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = ConvParams::new(k, Tensor::zeros(&[1]), 1, Padding::Valid).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 1, 5, 7], &mut rng);
        let p = ConvParams::new(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, Padding::Same)
            .unwrap();
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (stride, padding) in [
            (1, Padding::Same),
            (2, Padding::Same),
            (1, Padding::Valid),
            (2, Padding::Valid),
        ] {
            let x = random(&[1, 3, 8, 8], &mut rng);
            let p = ConvParams::new(
                random(&[4, 3, 3, 3], &mut rng),
                random(&[4], &mut rng),
                stride,
                padding,
            )
            .unwrap();
            let y = conv2d(&x, &p).unwrap();
            let reference = naive_conv(&x, &p);
            assert_eq!(y.len(), reference.len());
            for (a, b) in y.data().iter().zip(&reference) {
                let rel = (*a as f64 - b).abs() / b.abs().max(1.0);
                assert!(rel < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn same_padding_geometry() {
        let g = Geometry::new(512, 512, 7, 7, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (256, 2));
        let g = Geometry::new(4, 4, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (2, 2, 0));
        let g = Geometry::new(5, 5, 3, 3, 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (5, 1));
        assert!(Geometry::new(4, 4, 2, 2, 1, Padding::Same).is_err());
        assert!(Geometry::new(4, 4, 3, 3, 3, Padding::Same).is_err());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let p = ConvParams::zeros([1, 3, 3, 3], 1, Padding::Same).unwrap();
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape(_))));
        let k = Tensor::zeros(&[3, 1, 3, 3]);
        assert!(depthwise_conv2d(&x, &k, &Tensor::zeros(&[3]), 1, Padding::Same).is_err());
    }

    #[test]
    fn depthwise_scales_channels_independently() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[1, 2, 3, 3], &mut rng);
        let k = Tensor::new(vec![2, 1, 1, 1], vec![2.0, 3.0]).unwrap();
        let y = depthwise_conv2d(&x, &k, &Tensor::zeros(&[2]), 1, Padding::Same).unwrap();
        for i in 0..9 {
            assert_eq!(y.data()[i], 2.0 * x.data()[i]);
            assert_eq!(y.data()[9 + i], 3.0 * x.data()[9 + i]);
        }
    }

    #[test]
    fn depthwise_zero_kernel_and_stride_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[1, 1, 4, 4], &mut rng);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let y = depthwise_conv2d(&x, &k, &b, 1, Padding::Same).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = depthwise_conv2d(&x, &k, &b, 2, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
    }

    #[test]
    fn depthwise_matches_grouped_dense_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[2, 3, 6, 6], &mut rng);
        let k = random(&[3, 1, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let y = depthwise_conv2d(&x, &k, &b, 2, Padding::Same).unwrap();
        // Equivalent dense kernel: block-diagonal across channels.
        let mut dense = Tensor::zeros(&[3, 3, 3, 3]);
        for c in 0..3 {
            for t in 0..9 {
                dense.data_mut()[(c * 3 + c) * 9 + t] = k.data()[c * 9 + t];
            }
        }
        let p = ConvParams::new(dense, b, 2, Padding::Same).unwrap();
        let reference = conv2d(&x, &p).unwrap();
        assert!(y.max_abs_diff(&reference) < 1e-6);
    }
}
