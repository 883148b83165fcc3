//! Dense feature-map and weight containers.
//!
//! Both containers keep the channel dimension fastest so that every spatial
//! position owns one contiguous run of channels (and, for kernels, one
//! contiguous `C x N` weight matrix per tap). The untangled GEMM paths rely on
//! this to copy input rows and read weight slices with unit stride.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Axis, Error, Result};

/// How a freshly constructed tensor is populated.
#[derive(Debug, Clone, PartialEq)]
pub enum Fill {
    Zeros,
    /// Flat index order `0, 1, 2, ...`.
    Sequential,
    Values(Vec<f32>),
}

fn checked_len(field: &'static str, dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::Overflow { field })
}

fn fill_data(field: &'static str, len: usize, fill: Fill) -> Result<Vec<f32>> {
    match fill {
        Fill::Zeros => Ok(vec![0.0; len]),
        Fill::Sequential => Ok((0..len).map(|i| i as f32).collect()),
        Fill::Values(values) => {
            if values.len() != len {
                return Err(Error::LengthMismatch {
                    field,
                    expected: len,
                    actual: values.len(),
                });
            }
            Ok(values)
        }
    }
}

fn nonzero(field: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::ZeroDimension { field })
    } else {
        Ok(())
    }
}

/// Rank-3 feature map `H x W x C`; element `(h, w, c)` lives at
/// `(h * W + w) * C + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(height: usize, width: usize, channels: usize, fill: Fill) -> Result<Self> {
        nonzero("height", height)?;
        nonzero("width", width)?;
        nonzero("channels", channels)?;
        let len = checked_len("tensor", &[height, width, channels])?;
        let data = fill_data("data", len, fill)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, Fill::Zeros)
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(height, width, channels, Fill::Values(data))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `[H, W, C]`.
    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        debug_assert!(h < self.height && w < self.width && c < self.channels);
        (h * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> f32 {
        self.data[self.index(h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, value: f32) {
        let i = self.index(h, w, c);
        self.data[i] = value;
    }

    /// The channel run at spatial position `(h, w)`.
    #[inline]
    pub fn pixel(&self, h: usize, w: usize) -> &[f32] {
        let start = (h * self.width + w) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Copies the `rows x cols` window whose top-left corner sits at the
    /// (possibly negative) coordinate `(row_start, col_start)`; positions
    /// outside the tensor read as zero. This is how padding and cropping are
    /// both expressed.
    pub fn window(
        &self,
        row_start: isize,
        rows: usize,
        col_start: isize,
        cols: usize,
    ) -> Result<Self> {
        let mut out = Self::zeros(rows, cols, self.channels)?;
        let c = self.channels;
        let (r0, r1) = clip(row_start, rows, self.height);
        let (c0, c1) = clip(col_start, cols, self.width);
        if c0 >= c1 {
            return Ok(out);
        }
        let run = (c1 - c0) * c;
        for src_r in r0..r1 {
            let dst_r = (src_r as isize - row_start) as usize;
            let dst_c = (c0 as isize - col_start) as usize;
            let src = (src_r * self.width + c0) * c;
            let dst = (dst_r * cols + dst_c) * c;
            out.data[dst..dst + run].copy_from_slice(&self.data[src..src + run]);
        }
        Ok(out)
    }

    /// Symmetric zero padding.
    pub fn padded(&self, pad_h: usize, pad_w: usize) -> Result<Self> {
        self.window(
            -(pad_h as isize),
            self.height + 2 * pad_h,
            -(pad_w as isize),
            self.width + 2 * pad_w,
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

/// Intersection of `[start, start + len)` with `[0, limit)`, as source indices.
fn clip(start: isize, len: usize, limit: usize) -> (usize, usize) {
    let lo = start.max(0) as usize;
    let hi = (start + len as isize).clamp(0, limit as isize) as usize;
    (lo.min(hi), hi)
}

/// Builds a tensor from dimensions and a fill rule.
pub fn make_tensor(height: usize, width: usize, channels: usize, fill: Fill) -> Result<Tensor3> {
    Tensor3::new(height, width, channels, fill)
}

/// `true` iff the shapes match and `|a_i - b_i| <= atol + rtol * |b_i|`
/// everywhere.
pub fn tensors_close(a: &Tensor3, b: &Tensor3, atol: f32, rtol: f32) -> bool {
    a.dims() == b.dims() && slices_close(&a.data, &b.data, atol, rtol)
}

pub fn kernels_close(a: &Kernel4, b: &Kernel4, atol: f32, rtol: f32) -> bool {
    a.dims() == b.dims() && slices_close(&a.data, &b.data, atol, rtol)
}

fn slices_close(a: &[f32], b: &[f32], atol: f32, rtol: f32) -> bool {
    a.iter()
        .zip(b)
        .all(|(&x, &y)| (x - y).abs() <= atol + rtol * y.abs())
}

/// Largest elementwise absolute difference; `None` on shape mismatch.
pub fn max_abs_diff(a: &[f32], b: &[f32]) -> Option<f32> {
    if a.len() != b.len() {
        return None;
    }
    Some(
        a.iter()
            .zip(b)
            .fold(0.0f32, |m, (&x, &y)| m.max((x - y).abs())),
    )
}

/// Rank-4 weights `R x S x C x N`; element `(m, n, c, k)` lives at
/// `((m * S + n) * C + c) * N + k`. Weights are stored un-flipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4 {
    rows: usize,
    cols: usize,
    in_channels: usize,
    out_channels: usize,
    data: Vec<f32>,
}

impl Kernel4 {
    pub fn new(
        rows: usize,
        cols: usize,
        in_channels: usize,
        out_channels: usize,
        fill: Fill,
    ) -> Result<Self> {
        nonzero("rows", rows)?;
        nonzero("cols", cols)?;
        nonzero("in_channels", in_channels)?;
        nonzero("out_channels", out_channels)?;
        let len = checked_len("kernel", &[rows, cols, in_channels, out_channels])?;
        let data = fill_data("data", len, fill)?;
        Ok(Self {
            rows,
            cols,
            in_channels,
            out_channels,
            data,
        })
    }

    pub fn zeros(
        rows: usize,
        cols: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        Self::new(rows, cols, in_channels, out_channels, Fill::Zeros)
    }

    pub fn from_vec(
        rows: usize,
        cols: usize,
        in_channels: usize,
        out_channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        Self::new(rows, cols, in_channels, out_channels, Fill::Values(data))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// `[R, S, C, N]`.
    pub fn dims(&self) -> [usize; 4] {
        [self.rows, self.cols, self.in_channels, self.out_channels]
    }

    #[inline]
    pub fn index(&self, m: usize, n: usize, c: usize, k: usize) -> usize {
        debug_assert!(
            m < self.rows && n < self.cols && c < self.in_channels && k < self.out_channels
        );
        ((m * self.cols + n) * self.in_channels + c) * self.out_channels + k
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, c: usize, k: usize) -> f32 {
        self.data[self.index(m, n, c, k)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, c: usize, k: usize, value: f32) {
        let i = self.index(m, n, c, k);
        self.data[i] = value;
    }

    /// The `C x N` weight matrix of tap `(m, n)`, row-major over `c`.
    #[inline]
    pub fn tap(&self, m: usize, n: usize) -> &[f32] {
        let len = self.in_channels * self.out_channels;
        let start = (m * self.cols + n) * len;
        &self.data[start..start + len]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Spatial 180 degree rotation: `out[m, n] = self[R-1-m, S-1-n]`.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        let tap_len = self.in_channels * self.out_channels;
        for m in 0..self.rows {
            for n in 0..self.cols {
                let dst = (m * self.cols + n) * tap_len;
                out.data[dst..dst + tap_len]
                    .copy_from_slice(self.tap(self.rows - 1 - m, self.cols - 1 - n));
            }
        }
        out
    }
}

/// Stride, padding and output padding of one transposed-convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeconvConfig {
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_pad_h: usize,
    pub out_pad_w: usize,
}

impl DeconvConfig {
    pub fn new(
        stride: (usize, usize),
        pad: (usize, usize),
        out_pad: (usize, usize),
    ) -> Result<Self> {
        let cfg = Self {
            stride_h: stride.0,
            stride_w: stride.1,
            pad_h: pad.0,
            pad_w: pad.1,
            out_pad_h: out_pad.0,
            out_pad_w: out_pad.1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Unit stride, no padding.
    pub fn unit() -> Self {
        Self {
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
            out_pad_h: 0,
            out_pad_w: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        nonzero("stride_h", self.stride_h)?;
        nonzero("stride_w", self.stride_w)?;
        if self.out_pad_h >= self.stride_h {
            return Err(Error::OutPadTooLarge {
                axis: Axis::Height,
                out_pad: self.out_pad_h,
                stride: self.stride_h,
            });
        }
        if self.out_pad_w >= self.stride_w {
            return Err(Error::OutPadTooLarge {
                axis: Axis::Width,
                out_pad: self.out_pad_w,
                stride: self.stride_w,
            });
        }
        Ok(())
    }

    /// Output spatial dims `s * (H - 1) + R - 2p + out_pad` per axis, after
    /// checking channel agreement and the `pad <= R - 1` constraint.
    pub fn output_dims(&self, input: [usize; 3], kernel: [usize; 4]) -> Result<(usize, usize)> {
        self.validate()?;
        let [h, w, c] = input;
        let [r, s, kc, _] = kernel;
        if c != kc {
            return Err(Error::ChannelMismatch {
                input: c,
                kernel: kc,
            });
        }
        let oh = transposed_extent(
            Axis::Height,
            h,
            r,
            self.stride_h,
            self.pad_h,
            self.out_pad_h,
        )?;
        let ow = transposed_extent(Axis::Width, w, s, self.stride_w, self.pad_w, self.out_pad_w)?;
        Ok((oh, ow))
    }
}

fn transposed_extent(
    axis: Axis,
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<usize> {
    if pad > k - 1 {
        return Err(Error::PadTooLarge {
            axis,
            pad,
            limit: k - 1,
        });
    }
    let size = (stride * (len - 1) + k + out_pad) as i64 - 2 * pad as i64;
    if size <= 0 {
        return Err(Error::NonPositiveOutput { axis, size });
    }
    Ok(size as usize)
}

/// Output extent of a (possibly dilated, strided) valid correlation over an
/// already padded axis.
pub(crate) fn correlation_extent(
    axis: Axis,
    padded_len: usize,
    k: usize,
    stride: usize,
    dilation: usize,
) -> Result<usize> {
    let extent = (k - 1) * dilation + 1;
    if extent > padded_len {
        return Err(Error::KernelTooLarge {
            axis,
            extent,
            available: padded_len,
        });
    }
    Ok((padded_len - extent) / stride + 1)
}
