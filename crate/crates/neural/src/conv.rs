//! 2-D convolution and transposed convolution (no padding, no dilation)
//! over single `[channels, height, width]` samples, lowered to GEMM via
//! im2col.

use rand::Rng;

use crate::error::{NeuralError, Result};
use crate::linalg::gemm;
use crate::param::{Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `floor((input - kernel) / stride) + 1`; rejects inputs smaller than the kernel.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(NeuralError::Geometry(format!(
            "kernel {kernel} and stride {stride} must be positive"
        )));
    }
    if input < kernel {
        return Err(NeuralError::Geometry(format!(
            "input extent {input} is smaller than kernel {kernel}"
        )));
    }
    Ok((input - kernel) / stride + 1)
}

/// `(input - 1) * stride + kernel`.
pub fn conv_transpose_output_size(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let (k, s) = (g.kernel, g.stride);
    let spatial = g.out_h * g.out_w;
    let mut cols = vec![T::zero(); g.channels * k * k * spatial];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.out_h {
                    let src = &plane[(oy * s + ki) * g.width..];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        *d = src[ox * s + kj];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry) -> Vec<T> {
    let (k, s) = (g.kernel, g.stride);
    let spatial = g.out_h * g.out_w;
    let mut x = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.out_h {
                    let base = (oy * s + ki) * g.width + kj;
                    for ox in 0..g.out_w {
                        plane[base + ox * s] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
    x
}

fn expect_chw<T: Scalar>(x: &Tensor<T>, channels: usize, context: &'static str) -> Result<(usize, usize)> {
    match x.shape() {
        [c, h, w] if *c == channels => Ok((*h, *w)),
        other => Err(NeuralError::ShapeMismatch {
            context,
            left: other.to_vec(),
            right: vec![channels, 0, 0],
        }),
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar = f32> {
    /// `[out_channels, in_channels, k, k]`
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
}

/// What `Conv2d::backward` needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T: Scalar = f32> {
    cols: Vec<T>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel_size * kernel_size) as f64;
        let bound = T::lit((6.0 / fan_in).sqrt());
        Self {
            kernel: Param::new(Tensor::uniform(
                &[out_channels, in_channels, kernel_size, kernel_size],
                bound,
                rng,
            )),
            bias: Param::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel_size,
            stride,
        }
    }

    fn geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        Ok(Geometry {
            channels: self.in_channels,
            height: h,
            width: w,
            kernel: self.kernel_size,
            stride: self.stride,
            out_h: conv_output_size(h, self.kernel_size, self.stride)?,
            out_w: conv_output_size(w, self.kernel_size, self.stride)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (h, w) = expect_chw(x, self.in_channels, "conv2d input")?;
        let g = self.geometry(h, w)?;
        let cols = im2col(x.data(), &g);
        let spatial = g.out_h * g.out_w;
        let ckk = self.in_channels * self.kernel_size * self.kernel_size;
        let mut out = Vec::with_capacity(self.out_channels * spatial);
        for &b in self.bias.data() {
            out.extend(std::iter::repeat_n(b, spatial));
        }
        gemm(
            false,
            false,
            self.out_channels,
            spatial,
            ckk,
            T::one(),
            self.kernel.data(),
            &cols,
            T::one(),
            &mut out,
        );
        let y = Tensor::new(vec![self.out_channels, g.out_h, g.out_w], out)?;
        Ok((
            y,
            ConvCache {
                cols,
                in_h: h,
                in_w: w,
                out_h: g.out_h,
                out_w: g.out_w,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let want = vec![self.out_channels, cache.out_h, cache.out_w];
        if grad_out.shape() != want.as_slice() {
            return Err(NeuralError::ShapeMismatch {
                context: "conv2d grad",
                left: grad_out.shape().to_vec(),
                right: want,
            });
        }
        let spatial = cache.out_h * cache.out_w;
        let ckk = self.in_channels * self.kernel_size * self.kernel_size;
        let g = grad_out.data();
        gemm(
            false,
            true,
            self.out_channels,
            ckk,
            spatial,
            T::one(),
            g,
            &cache.cols,
            T::one(),
            &mut self.kernel.grad,
        );
        for (c, b) in self.bias.grad.iter_mut().enumerate() {
            *b += g[c * spatial..(c + 1) * spatial].iter().copied().sum::<T>();
        }
        let mut dcols = vec![T::zero(); ckk * spatial];
        gemm(
            true,
            false,
            ckk,
            spatial,
            self.out_channels,
            T::one(),
            self.kernel.data(),
            g,
            T::zero(),
            &mut dcols,
        );
        let geo = self.geometry(cache.in_h, cache.in_w)?;
        Tensor::new(
            vec![self.in_channels, cache.in_h, cache.in_w],
            col2im(&dcols, &geo),
        )
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("kernel".into(), &self.kernel), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("kernel".into(), &mut self.kernel),
            ("bias".into(), &mut self.bias),
        ]
    }
}

/// Transposed convolution; the adjoint of [`Conv2d`] geometry.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T: Scalar = f32> {
    /// `[in_channels, out_channels, k, k]`
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    /// Extra rows/columns appended to the output; they receive only the bias.
    pub output_padding: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let overlap = (kernel_size as f64 / stride as f64).powi(2);
        let bound = T::lit((6.0 / (in_channels as f64 * overlap)).sqrt());
        Self {
            kernel: Param::new(Tensor::uniform(
                &[in_channels, out_channels, kernel_size, kernel_size],
                bound,
                rng,
            )),
            bias: Param::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel_size,
            stride,
            output_padding: 0,
        }
    }

    pub fn with_output_padding(mut self, padding: usize) -> Self {
        self.output_padding = padding;
        self
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        Geometry {
            channels: self.out_channels,
            height: conv_transpose_output_size(h, self.kernel_size, self.stride) + self.output_padding,
            width: conv_transpose_output_size(w, self.kernel_size, self.stride) + self.output_padding,
            kernel: self.kernel_size,
            stride: self.stride,
            out_h: h,
            out_w: w,
        }
    }

    /// The cache is the input itself.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = expect_chw(x, self.in_channels, "conv_transpose2d input")?;
        if h == 0 || w == 0 {
            return Err(NeuralError::Geometry("empty transposed-conv input".into()));
        }
        let g = self.geometry(h, w);
        let spatial = h * w;
        let okk = self.out_channels * self.kernel_size * self.kernel_size;
        let mut cols = vec![T::zero(); okk * spatial];
        gemm(
            true,
            false,
            okk,
            spatial,
            self.in_channels,
            T::one(),
            self.kernel.data(),
            x.data(),
            T::zero(),
            &mut cols,
        );
        let mut out = col2im(&cols, &g);
        let plane = g.height * g.width;
        for (c, &b) in self.bias.data().iter().enumerate() {
            out[c * plane..(c + 1) * plane]
                .iter_mut()
                .for_each(|v| *v += b);
        }
        Tensor::new(vec![self.out_channels, g.height, g.width], out)
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = expect_chw(x, self.in_channels, "conv_transpose2d input")?;
        let g = self.geometry(h, w);
        let want = vec![self.out_channels, g.height, g.width];
        if grad_out.shape() != want.as_slice() {
            return Err(NeuralError::ShapeMismatch {
                context: "conv_transpose2d grad",
                left: grad_out.shape().to_vec(),
                right: want,
            });
        }
        let spatial = h * w;
        let okk = self.out_channels * self.kernel_size * self.kernel_size;
        let gcols = im2col(grad_out.data(), &g);
        gemm(
            false,
            true,
            self.in_channels,
            okk,
            spatial,
            T::one(),
            x.data(),
            &gcols,
            T::one(),
            &mut self.kernel.grad,
        );
        let plane = g.height * g.width;
        for (c, b) in self.bias.grad.iter_mut().enumerate() {
            *b += grad_out.data()[c * plane..(c + 1) * plane]
                .iter()
                .copied()
                .sum::<T>();
        }
        let mut dx = vec![T::zero(); self.in_channels * spatial];
        gemm(
            false,
            false,
            self.in_channels,
            spatial,
            okk,
            T::one(),
            self.kernel.data(),
            &gcols,
            T::zero(),
            &mut dx,
        );
        Tensor::new(vec![self.in_channels, h, w], dx)
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2d<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("kernel".into(), &self.kernel), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("kernel".into(), &mut self.kernel),
            ("bias".into(), &mut self.bias),
        ]
    }
}
